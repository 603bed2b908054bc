//! Experiment runner for the streaming multi-view clustering engine.
//!
//! Three subcommands cover the usual protocol shapes:
//!
//! * `run` — one fit over a dataset, with per-pass (or per-chunk) records,
//! * `sweep-alpha` — the same fit repeated over a ridge-strength grid,
//! * `block-study` — the same fit repeated over a chunk-size grid.
//!
//! Every record lands in a CSV whose columns are
//! `pass,chunk,nmi,ac,avg_loss,wall_ms` (sweeps prepend the swept value).
//! All randomness is seeded, so identical invocations produce identical
//! output apart from the wall-clock column. Sweep members may run
//! concurrently (capped by `OPIMC_THREADS`); each member is internally
//! single-threaded.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rayon::prelude::*;

use opimc_core::data::{
    load_dataset, shuffle_instances, simulate_missing, zero_fill_absent, DatasetManifest,
    InMemorySource,
};
use opimc_core::metrics;
use opimc_core::model::{PresenceMask, SolverConfig};
use opimc_core::solver::{self, ChunkEvent, PassEvent, RunObserver};

fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let outcome = match Cli::parse().command {
        Command::Run(args) => cmd_run(&args),
        Command::SweepAlpha(args) => cmd_sweep_alpha(&args),
        Command::BlockStudy(args) => cmd_block_study(&args),
    };
    match outcome {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::ExitCode::FAILURE
        }
    }
}

#[derive(Parser)]
#[command(
    name = "opimc",
    version,
    about = "Streaming clustering of incomplete multi-view data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one configuration and record per-pass metrics.
    Run(CommonOpts),
    /// Repeat the fit across a grid of ridge strengths.
    SweepAlpha(SweepAlphaOpts),
    /// Repeat the fit across a grid of chunk sizes (10 passes each by default).
    BlockStudy(BlockStudyOpts),
}

#[derive(Args, Debug, Clone)]
struct CommonOpts {
    /// TOML file supplying any of the other options; explicit flags win.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Feature-by-instance matrix for one view (repeat per view; CSV or MVC1 binary).
    #[arg(long = "views", value_name = "FILE")]
    views: Vec<PathBuf>,
    /// Presence mask CSV (views x instances of 0/1). Omit for complete data.
    #[arg(long, value_name = "FILE")]
    mask: Option<PathBuf>,
    /// Reference labels (one integer per line) for NMI/AC scoring.
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Number of clusters to fit.
    #[arg(long, value_name = "K")]
    clusters: Option<usize>,
    /// Ridge strength on the center matrices.
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Instances per streamed chunk.
    #[arg(long, value_name = "S")]
    chunk_size: Option<usize>,
    /// Passes over the stream.
    #[arg(long, value_name = "P")]
    passes: Option<usize>,
    /// Seed for initialization, simulated missingness and shuffling.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Simulate this missing rate per view (requires omitting --mask).
    #[arg(long, value_name = "RATE")]
    missing_rate: Option<f64>,
    /// Refill degenerate centers (on) or leave them as computed (off).
    #[arg(long, value_name = "on|off", value_parser = parse_switch)]
    fill_degenerate: Option<bool>,
    /// Shuffle instance order before streaming (seeded by --seed).
    #[arg(long)]
    shuffle: bool,
    /// Record metrics after every chunk instead of once per pass.
    #[arg(long)]
    eval_every_chunk: bool,
    /// Output CSV path.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write the final label per instance to this file.
    #[arg(long, value_name = "FILE")]
    labels_out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SweepAlphaOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Ridge strengths to sweep (comma-separated).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    alphas: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
struct BlockStudyOpts {
    #[command(flatten)]
    common: CommonOpts,
    /// Chunk sizes to study (comma-separated).
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    chunk_sizes: Vec<usize>,
}

fn parse_switch(raw: &str) -> Result<bool, String> {
    match raw {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected 'on' or 'off', got '{other}'")),
    }
}

// ---------------------------------------------------------------------------
// Settings: config file + flags -> one resolved configuration
// ---------------------------------------------------------------------------

/// Optional mirror of the command-line options, loadable from TOML.
#[derive(Debug, Clone, Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    views: Option<Vec<PathBuf>>,
    mask: Option<PathBuf>,
    labels: Option<PathBuf>,
    clusters: Option<usize>,
    alpha: Option<f64>,
    chunk_size: Option<usize>,
    passes: Option<usize>,
    seed: Option<u64>,
    missing_rate: Option<f64>,
    fill_degenerate: Option<bool>,
    shuffle: Option<bool>,
    eval_every_chunk: Option<bool>,
    out: Option<PathBuf>,
    labels_out: Option<PathBuf>,
    alphas: Option<Vec<f64>>,
    chunk_sizes: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
struct Settings {
    views: Vec<PathBuf>,
    mask: Option<PathBuf>,
    labels: Option<PathBuf>,
    clusters: usize,
    alpha: f64,
    chunk_size: usize,
    passes: usize,
    seed: u64,
    missing_rate: Option<f64>,
    fill_degenerate: bool,
    shuffle: bool,
    eval_every_chunk: bool,
    out: PathBuf,
    labels_out: Option<PathBuf>,
    alphas: Vec<f64>,
    chunk_sizes: Vec<usize>,
}

const DEFAULT_ALPHA: f64 = 0.01;
const DEFAULT_CHUNK_SIZE: usize = 50;
/// Standard ridge grid spanning seven decades.
const DEFAULT_ALPHA_GRID: [f64; 8] = [1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3];
/// Standard chunk-size grid for block studies.
const DEFAULT_BLOCK_GRID: [usize; 6] = [2, 5, 10, 50, 100, 250];

fn resolve(opts: &CommonOpts) -> Result<Settings> {
    let file = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config file {}", path.display()))?;
            toml::from_str::<FileConfig>(&text)
                .with_context(|| format!("cannot parse config file {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let views = if opts.views.is_empty() {
        file.views.clone().unwrap_or_default()
    } else {
        opts.views.clone()
    };
    if views.is_empty() {
        bail!("no view files given: pass --views at least once or list them in --config");
    }
    let clusters = opts
        .clusters
        .or(file.clusters)
        .context("missing --clusters (or `clusters` in --config)")?;
    let out = opts
        .out
        .clone()
        .or(file.out.clone())
        .context("missing --out (or `out` in --config)")?;
    let mask = opts.mask.clone().or(file.mask.clone());
    let missing_rate = opts.missing_rate.or(file.missing_rate);
    if mask.is_some() && missing_rate.is_some() {
        bail!("--mask and --missing-rate are mutually exclusive: the mask file already fixes the missingness");
    }
    if let Some(rate) = missing_rate {
        if !(0.0..1.0).contains(&rate) {
            bail!("--missing-rate must lie in [0, 1), got {rate}");
        }
    }
    Ok(Settings {
        views,
        mask,
        labels: opts.labels.clone().or(file.labels.clone()),
        clusters,
        alpha: opts.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
        chunk_size: opts
            .chunk_size
            .or(file.chunk_size)
            .unwrap_or(DEFAULT_CHUNK_SIZE),
        passes: opts.passes.or(file.passes).unwrap_or(1),
        seed: opts.seed.or(file.seed).unwrap_or(0),
        missing_rate,
        fill_degenerate: opts.fill_degenerate.or(file.fill_degenerate).unwrap_or(true),
        shuffle: opts.shuffle || file.shuffle.unwrap_or(false),
        eval_every_chunk: opts.eval_every_chunk || file.eval_every_chunk.unwrap_or(false),
        out,
        labels_out: opts.labels_out.clone().or(file.labels_out.clone()),
        alphas: file.alphas.unwrap_or_default(),
        chunk_sizes: file.chunk_sizes.unwrap_or_default(),
    })
}

// ---------------------------------------------------------------------------
// Dataset preparation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Dataset {
    views: Vec<Array2<f64>>,
    mask: PresenceMask,
    truth: Option<Vec<usize>>,
}

/// Loads the views (zero-filling against the mask), simulates missingness
/// when requested, optionally shuffles the instance order, and projects all
/// present columns onto the unit sphere — the preprocessing every fit
/// shares.
fn prepare_dataset(settings: &Settings) -> Result<Dataset> {
    let manifest = DatasetManifest {
        view_paths: settings.views.clone(),
        mask_path: settings.mask.clone(),
        labels_path: settings.labels.clone(),
        n_clusters: settings.clusters,
    };
    let loaded = load_dataset(&manifest)?;
    let mut views = loaded.views;
    let mut mask = loaded.mask;
    let mut truth = loaded.labels;

    if let Some(rate) = settings.missing_rate {
        mask = simulate_missing(views.len(), views[0].ncols(), rate, settings.seed)?;
        zero_fill_absent(&mut views, &mask);
    }
    if settings.shuffle {
        shuffle_instances(&mut views, &mut mask, truth.as_mut(), settings.seed);
    }
    opimc_core::data::normalize_dataset(&mut views, &mask)?;
    if truth.is_none() {
        log::warn!("no reference labels supplied; the nmi and ac columns will be empty");
    }
    Ok(Dataset { views, mask, truth })
}

// ---------------------------------------------------------------------------
// Fitting and records
// ---------------------------------------------------------------------------

/// One evaluation point of one fit, plus the configuration that produced it.
#[derive(Debug, Clone)]
struct RunRecord {
    pass: usize,
    chunk: usize,
    nmi: Option<f64>,
    ac: Option<f64>,
    avg_loss: f64,
    /// Milliseconds since the fit started.
    wall_ms: u128,
    alpha: f64,
    chunk_size: usize,
}

const CSV_HEADER: &str = "pass,chunk,nmi,ac,avg_loss,wall_ms";

impl RunRecord {
    fn csv_row(&self) -> String {
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.pass,
            self.chunk,
            fmt(self.nmi),
            fmt(self.ac),
            self.avg_loss,
            self.wall_ms
        )
    }
}

struct Recorder {
    truth: Option<Vec<usize>>,
    eval_every_chunk: bool,
    final_chunk: usize,
    alpha: f64,
    chunk_size: usize,
    started: Instant,
    records: Vec<RunRecord>,
}

impl Recorder {
    fn push(&mut self, pass: usize, chunk: usize, labels: &[usize], scanned: usize, avg: f64) {
        // During the first pass only the scanned prefix holds real labels.
        let (nmi, ac) = match &self.truth {
            Some(truth) => (
                Some(metrics::nmi(&labels[..scanned], &truth[..scanned]).expect("matched lengths")),
                Some(
                    metrics::accuracy(&labels[..scanned], &truth[..scanned])
                        .expect("matched lengths"),
                ),
            ),
            None => (None, None),
        };
        self.records.push(RunRecord {
            pass,
            chunk,
            nmi,
            ac,
            avg_loss: avg,
            wall_ms: self.started.elapsed().as_millis(),
            alpha: self.alpha,
            chunk_size: self.chunk_size,
        });
    }
}

impl RunObserver for Recorder {
    fn on_chunk(&mut self, event: &ChunkEvent<'_>) {
        if self.eval_every_chunk {
            self.push(
                event.pass,
                event.chunk_index,
                event.labels,
                event.scanned,
                event.report.average_loss,
            );
        }
    }

    fn on_pass_end(&mut self, event: &PassEvent<'_>) {
        if !self.eval_every_chunk {
            self.push(
                event.pass,
                self.final_chunk,
                event.labels,
                event.labels.len(),
                event.report.average_loss,
            );
        }
    }
}

/// Fits one configuration on an already-prepared dataset.
fn execute_fit(dataset: &Dataset, settings: &Settings) -> Result<(Vec<RunRecord>, Vec<usize>)> {
    let cfg = SolverConfig::new(settings.alpha, settings.chunk_size)
        .with_passes(settings.passes)
        .with_seed(settings.seed)
        .with_fill_degenerate(settings.fill_degenerate);
    let n = dataset.views[0].ncols();
    let mut source = InMemorySource::new(
        dataset.views.clone(),
        dataset.mask.clone(),
        settings.clusters,
        settings.chunk_size,
    )?;
    let mut recorder = Recorder {
        truth: dataset.truth.clone(),
        eval_every_chunk: settings.eval_every_chunk,
        final_chunk: n.div_ceil(settings.chunk_size).saturating_sub(1),
        alpha: settings.alpha,
        chunk_size: settings.chunk_size,
        started: Instant::now(),
        records: Vec::new(),
    };
    let output = solver::run(&mut source, &cfg, &mut recorder)?;
    Ok((recorder.records, output.assignments.into_labels()))
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut out = fs::File::create(path)
        .with_context(|| format!("cannot create output file {}", path.display()))?;
    writeln!(out, "{header}")?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    Ok(())
}

/// Builds a rayon pool sized by `OPIMC_THREADS` (unset or 0 means one
/// thread per core) for the sweep subcommands.
fn sweep_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("OPIMC_THREADS") {
        Ok(raw) => match raw.parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                log::warn!("ignoring unparsable OPIMC_THREADS={raw:?}");
                0
            }
        },
        Err(_) => 0,
    };
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_run(opts: &CommonOpts) -> Result<()> {
    let settings = resolve(opts)?;
    let dataset = prepare_dataset(&settings)?;
    let (records, labels) = execute_fit(&dataset, &settings)?;
    let rows: Vec<String> = records.iter().map(RunRecord::csv_row).collect();
    write_csv(&settings.out, CSV_HEADER, &rows)?;
    if let Some(path) = &settings.labels_out {
        opimc_core::data::write_labels(path, &labels)?;
    }
    println!(
        "run: alpha={} chunk_size={} passes={} seed={} -> {} records -> {}",
        settings.alpha,
        settings.chunk_size,
        settings.passes,
        settings.seed,
        rows.len(),
        settings.out.display()
    );
    Ok(())
}

/// Drops duplicate grid values, preserving first-seen order.
fn dedupe_grid<T: PartialEq + Copy + std::fmt::Display>(grid: &[T], what: &str) -> Vec<T> {
    let mut unique: Vec<T> = Vec::new();
    for &value in grid {
        if unique.contains(&value) {
            log::warn!("duplicate {what} {value} in grid; keeping the first occurrence");
        } else {
            unique.push(value);
        }
    }
    unique
}

fn cmd_sweep_alpha(opts: &SweepAlphaOpts) -> Result<()> {
    if opts.common.alpha.is_some() {
        bail!("--alpha conflicts with sweep-alpha; list grid values with --alphas");
    }
    let settings = resolve(&opts.common)?;
    let grid = if !opts.alphas.is_empty() {
        opts.alphas.clone()
    } else if !settings.alphas.is_empty() {
        settings.alphas.clone()
    } else {
        DEFAULT_ALPHA_GRID.to_vec()
    };
    let grid = dedupe_grid(&grid, "alpha");
    if grid.is_empty() {
        bail!("the alpha grid is empty");
    }
    let dataset = prepare_dataset(&settings)?;

    let members: Vec<Vec<RunRecord>> = sweep_pool()?.install(|| {
        grid.par_iter()
            .map(|&alpha| {
                let member = Settings {
                    alpha,
                    ..settings.clone()
                };
                execute_fit(&dataset, &member).map(|(records, _)| records)
            })
            .collect::<Result<_>>()
    })?;

    let rows: Vec<String> = members
        .iter()
        .flatten()
        .map(|r| format!("{},{}", r.alpha, r.csv_row()))
        .collect();
    write_csv(&settings.out, &format!("alpha,{CSV_HEADER}"), &rows)?;
    println!(
        "sweep-alpha: {} grid values -> {} records -> {}",
        grid.len(),
        rows.len(),
        settings.out.display()
    );
    Ok(())
}

fn cmd_block_study(opts: &BlockStudyOpts) -> Result<()> {
    if opts.common.chunk_size.is_some() {
        bail!("--chunk-size conflicts with block-study; list grid values with --chunk-sizes");
    }
    let mut settings = resolve(&opts.common)?;
    if opts.common.passes.is_none() {
        // Multi-pass trajectories are the point of a block study.
        settings.passes = 10;
    }
    let grid = if !opts.chunk_sizes.is_empty() {
        opts.chunk_sizes.clone()
    } else if !settings.chunk_sizes.is_empty() {
        settings.chunk_sizes.clone()
    } else {
        DEFAULT_BLOCK_GRID.to_vec()
    };
    let grid = dedupe_grid(&grid, "chunk size");
    if grid.is_empty() {
        bail!("the chunk-size grid is empty");
    }
    if let Some(&bad) = grid.iter().find(|&&s| s == 0) {
        bail!("chunk sizes must be >= 1, got {bad}");
    }
    let dataset = prepare_dataset(&settings)?;

    let members: Vec<Vec<RunRecord>> = sweep_pool()?.install(|| {
        grid.par_iter()
            .map(|&chunk_size| {
                let member = Settings {
                    chunk_size,
                    ..settings.clone()
                };
                execute_fit(&dataset, &member).map(|(records, _)| records)
            })
            .collect::<Result<_>>()
    })?;

    let rows: Vec<String> = members
        .iter()
        .flatten()
        .map(|r| format!("{},{}", r.chunk_size, r.csv_row()))
        .collect();
    write_csv(&settings.out, &format!("chunk_size,{CSV_HEADER}"), &rows)?;
    println!(
        "block-study: {} grid values x {} passes -> {} records -> {}",
        grid.len(),
        settings.passes,
        rows.len(),
        settings.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_opts() -> CommonOpts {
        CommonOpts {
            config: None,
            views: vec![PathBuf::from("a.csv")],
            mask: None,
            labels: None,
            clusters: Some(3),
            alpha: None,
            chunk_size: None,
            passes: None,
            seed: None,
            missing_rate: None,
            fill_degenerate: None,
            shuffle: false,
            eval_every_chunk: false,
            out: Some(PathBuf::from("out.csv")),
            labels_out: None,
        }
    }

    #[test]
    fn switch_parser_accepts_only_on_off() {
        assert_eq!(parse_switch("on"), Ok(true));
        assert_eq!(parse_switch("off"), Ok(false));
        assert!(parse_switch("true").is_err());
    }

    #[test]
    fn defaults_fill_unset_options() {
        let settings = resolve(&minimal_opts()).unwrap();
        assert_eq!(settings.alpha, DEFAULT_ALPHA);
        assert_eq!(settings.chunk_size, DEFAULT_CHUNK_SIZE);
        assert_eq!(settings.passes, 1);
        assert_eq!(settings.seed, 0);
        assert!(settings.fill_degenerate);
        assert!(!settings.shuffle);
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("cfg.toml");
        fs::write(
            &config,
            "views = [\"v0.csv\", \"v1.csv\"]\nclusters = 5\nalpha = 2.5\nout = \"file.csv\"\nseed = 9\n",
        )
        .unwrap();
        let mut opts = minimal_opts();
        opts.config = Some(config);
        opts.views = Vec::new(); // fall back to the config's list
        opts.clusters = None;
        opts.out = None;
        opts.alpha = Some(0.5); // explicit flag wins over the file's 2.5
        let settings = resolve(&opts).unwrap();
        assert_eq!(settings.views.len(), 2);
        assert_eq!(settings.clusters, 5);
        assert_eq!(settings.alpha, 0.5);
        assert_eq!(settings.seed, 9);
        assert_eq!(settings.out, PathBuf::from("file.csv"));
    }

    #[test]
    fn mask_and_simulated_missingness_conflict() {
        let mut opts = minimal_opts();
        opts.mask = Some(PathBuf::from("mask.csv"));
        opts.missing_rate = Some(0.3);
        assert!(resolve(&opts).is_err());
    }

    #[test]
    fn grid_deduplication_keeps_first_occurrences() {
        assert_eq!(dedupe_grid(&[0.1, 1.0, 0.1, 10.0], "alpha"), vec![0.1, 1.0, 10.0]);
        assert_eq!(dedupe_grid(&[5usize, 5, 5], "chunk size"), vec![5]);
    }

    #[test]
    fn records_render_empty_cells_for_missing_metrics() {
        let record = RunRecord {
            pass: 3,
            chunk: 7,
            nmi: None,
            ac: None,
            avg_loss: -1.25,
            wall_ms: 42,
            alpha: 0.1,
            chunk_size: 50,
        };
        assert_eq!(record.csv_row(), "3,7,,,-1.25,42");
        let scored = RunRecord {
            nmi: Some(0.5),
            ac: Some(0.75),
            ..record
        };
        assert_eq!(scored.csv_row(), "3,7,0.5,0.75,-1.25,42");
    }
}
