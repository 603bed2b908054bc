//! End-to-end tests of the `opimc` binary: every subcommand is exercised
//! through a real process, and the output files are checked byte-for-byte
//! where the contract demands it.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use opimc_core::data::{load_dataset, make_synthetic, write_labels, write_view_csv, DatasetManifest};
use opimc_core::model::SolverConfig;
use opimc_core::offline::imc_fit;

fn opimc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opimc"))
        .args(args)
        .current_dir(dir)
        .env("OPIMC_THREADS", "2")
        .output()
        .expect("the opimc binary should spawn")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .expect("output file should exist")
        .lines()
        .map(str::to_owned)
        .collect()
}

/// Writes a well-separated two-view dataset and its reference labels,
/// returning the paths in flag order.
fn write_blobs(dir: &Path, n_clusters: usize, n: usize, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let (views, labels) = make_synthetic(n_clusters, &[3, 4], n, 8.0, 0.5, seed).unwrap();
    let v0 = dir.join("view0.csv");
    let v1 = dir.join("view1.csv");
    let truth = dir.join("labels.txt");
    write_view_csv(&v0, &views[0]).unwrap();
    write_view_csv(&v1, &views[1]).unwrap();
    write_labels(&truth, &labels).unwrap();
    (v0, v1, truth)
}

#[test]
fn run_emits_the_pinned_header_and_one_record_per_pass() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 3, 90, 1);
    let out = opimc(
        dir.path(),
        &[
            "run",
            "--views", "view0.csv",
            "--views", "view1.csv",
            "--labels", "labels.txt",
            "--clusters", "3",
            "--chunk-size", "30",
            "--passes", "4",
            "--seed", "2",
            "--out", "records.csv",
        ],
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let lines = read_lines(&dir.path().join("records.csv"));
    assert_eq!(lines[0], "pass,chunk,nmi,ac,avg_loss,wall_ms");
    assert_eq!(lines.len(), 5, "one record per pass plus the header");
    for (pass, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 6, "line {line:?}");
        assert_eq!(fields[0], pass.to_string());
        assert_eq!(fields[1], "2", "three chunks of 30 cover 90 instances");
        for metric in &fields[2..5] {
            metric.parse::<f64>().expect("numeric cell");
        }
        fields[5].parse::<u128>().expect("wall-clock cell");
    }
}

#[test]
fn single_full_width_pass_matches_the_offline_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (v0, v1, _) = write_blobs(dir.path(), 3, 60, 7);
    let out = opimc(
        dir.path(),
        &[
            "run",
            "--views", "view0.csv",
            "--views", "view1.csv",
            "--clusters", "3",
            "--alpha", "0.05",
            "--chunk-size", "60",
            "--passes", "1",
            "--seed", "3",
            "--out", "records.csv",
            "--labels-out", "fit.txt",
        ],
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let cli_labels: Vec<usize> = read_lines(&dir.path().join("fit.txt"))
        .iter()
        .map(|l| l.parse().unwrap())
        .collect();

    // Reproduce the binary's preprocessing in-process and fit offline.
    let manifest = DatasetManifest {
        view_paths: vec![v0, v1],
        mask_path: None,
        labels_path: None,
        n_clusters: 3,
    };
    let loaded = load_dataset(&manifest).unwrap();
    let mut views = loaded.views;
    opimc_core::data::normalize_dataset(&mut views, &loaded.mask).unwrap();
    let cfg = SolverConfig::new(0.05, 60).with_seed(3);
    let fit = imc_fit(&views, &loaded.mask, 3, &cfg).unwrap();
    assert_eq!(cli_labels, fit.assignments.labels());
}

#[test]
fn identical_invocations_agree_byte_for_byte_outside_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 3, 90, 5);
    let args = |out: &str| {
        vec![
            "run".to_owned(),
            "--views".into(), "view0.csv".into(),
            "--views".into(), "view1.csv".into(),
            "--labels".into(), "labels.txt".into(),
            "--clusters".into(), "3".into(),
            "--chunk-size".into(), "20".into(),
            "--passes".into(), "3".into(),
            "--seed".into(), "11".into(),
            "--missing-rate".into(), "0.3".into(),
            "--shuffle".into(),
            "--eval-every-chunk".into(),
            "--out".into(), out.to_owned(),
        ]
    };
    for out_name in ["first.csv", "second.csv"] {
        let argv: Vec<String> = args(out_name);
        let argv: Vec<&str> = argv.iter().map(String::as_str).collect();
        let out = opimc(dir.path(), &argv);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    }
    let strip_wall = |path: &Path| -> Vec<String> {
        read_lines(path)
            .into_iter()
            .map(|line| line.rsplit_once(',').unwrap().0.to_owned())
            .collect()
    };
    assert_eq!(
        strip_wall(&dir.path().join("first.csv")),
        strip_wall(&dir.path().join("second.csv")),
        "identical flags and seed must reproduce every cell except wall time"
    );
}

#[test]
fn alpha_sweep_deduplicates_the_grid_and_prefixes_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 2, 40, 9);
    let out = opimc(
        dir.path(),
        &[
            "sweep-alpha",
            "--views", "view0.csv",
            "--views", "view1.csv",
            "--labels", "labels.txt",
            "--clusters", "2",
            "--chunk-size", "20",
            "--passes", "2",
            "--alphas", "0.1,0.01,0.1,1",
            "--out", "sweep.csv",
        ],
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("duplicate alpha"),
        "a repeated grid value must be called out"
    );
    let lines = read_lines(&dir.path().join("sweep.csv"));
    assert_eq!(lines[0], "alpha,pass,chunk,nmi,ac,avg_loss,wall_ms");
    let alphas: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(
        alphas,
        vec!["0.1", "0.1", "0.01", "0.01", "1", "1"],
        "three unique grid values, two passes each, in grid order"
    );
}

#[test]
fn block_study_defaults_to_six_sizes_and_ten_passes() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 3, 120, 13);
    let out = opimc(
        dir.path(),
        &[
            "block-study",
            "--views", "view0.csv",
            "--views", "view1.csv",
            "--labels", "labels.txt",
            "--clusters", "3",
            "--out", "blocks.csv",
        ],
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let lines = read_lines(&dir.path().join("blocks.csv"));
    assert_eq!(lines[0], "chunk_size,pass,chunk,nmi,ac,avg_loss,wall_ms");
    assert_eq!(lines.len(), 1 + 6 * 10, "six default sizes, ten passes each");
    let mut sizes: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap())
        .collect();
    sizes.dedup();
    assert_eq!(sizes, vec!["2", "5", "10", "50", "100", "250"]);
}

#[test]
fn missing_reference_labels_leave_metric_cells_empty() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 2, 40, 17);
    let out = opimc(
        dir.path(),
        &[
            "run",
            "--views", "view0.csv",
            "--views", "view1.csv",
            "--clusters", "2",
            "--out", "records.csv",
        ],
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("nmi and ac columns will be empty"),
        "silently dropping metrics would mislead"
    );
    let lines = read_lines(&dir.path().join("records.csv"));
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields[2], "");
    assert_eq!(fields[3], "");
    fields[4].parse::<f64>().expect("loss is always recorded");
}

#[test]
fn bad_flags_and_conflicting_sources_fail_loudly() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 2, 40, 19);

    let unknown = opimc(dir.path(), &["run", "--views", "view0.csv", "--bogus"]);
    assert!(!unknown.status.success());

    let conflict = opimc(
        dir.path(),
        &[
            "run",
            "--views", "view0.csv",
            "--views", "view1.csv",
            "--clusters", "2",
            "--mask", "mask.csv",
            "--missing-rate", "0.2",
            "--out", "x.csv",
        ],
    );
    assert!(!conflict.status.success());
    assert!(stderr_of(&conflict).contains("mutually exclusive"));

    let underspecified = opimc(dir.path(), &["run", "--views", "view0.csv", "--out", "x.csv"]);
    assert!(!underspecified.status.success());
    assert!(stderr_of(&underspecified).contains("--clusters"));

    let fixed_alpha_in_sweep = opimc(
        dir.path(),
        &[
            "sweep-alpha",
            "--views", "view0.csv",
            "--clusters", "2",
            "--alpha", "0.5",
            "--out", "x.csv",
        ],
    );
    assert!(!fixed_alpha_in_sweep.status.success());
    assert!(stderr_of(&fixed_alpha_in_sweep).contains("--alphas"));
}

#[test]
fn config_files_supply_settings_that_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 3, 90, 23);
    std::fs::write(
        dir.path().join("experiment.toml"),
        concat!(
            "views = [\"view0.csv\", \"view1.csv\"]\n",
            "labels = \"labels.txt\"\n",
            "clusters = 3\n",
            "chunk_size = 30\n",
            "passes = 2\n",
            "seed = 4\n",
            "out = \"from_config.csv\"\n",
        ),
    )
    .unwrap();

    let from_config = opimc(dir.path(), &["run", "--config", "experiment.toml"]);
    assert!(from_config.status.success(), "stderr: {}", stderr_of(&from_config));
    assert_eq!(read_lines(&dir.path().join("from_config.csv")).len(), 3);

    let overridden = opimc(
        dir.path(),
        &["run", "--config", "experiment.toml", "--passes", "5", "--out", "override.csv"],
    );
    assert!(overridden.status.success(), "stderr: {}", stderr_of(&overridden));
    assert_eq!(
        read_lines(&dir.path().join("override.csv")).len(),
        6,
        "the explicit --passes flag must beat the config file"
    );
}

#[test]
fn simulated_missingness_still_recovers_separated_clusters() {
    let dir = tempfile::tempdir().unwrap();
    write_blobs(dir.path(), 3, 150, 29);
    let out = opimc(
        dir.path(),
        &[
            "run",
            "--views", "view0.csv",
            "--views", "view1.csv",
            "--labels", "labels.txt",
            "--clusters", "3",
            "--chunk-size", "25",
            "--passes", "2",
            "--seed", "6",
            "--missing-rate", "0.4",
            "--shuffle",
            "--out", "records.csv",
        ],
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let lines = read_lines(&dir.path().join("records.csv"));
    let last: Vec<&str> = lines.last().unwrap().split(',').collect();
    let nmi: f64 = last[2].parse().unwrap();
    let ac: f64 = last[3].parse().unwrap();
    assert!(nmi > 0.9, "well-separated blobs should survive 40% missingness, nmi={nmi}");
    assert!(ac > 0.9, "ac={ac}");
}
