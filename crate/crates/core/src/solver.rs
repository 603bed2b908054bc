//! Streaming alternating minimizer.
//!
//! The fitter minimizes, over center matrices `U^(v)` and a shared 1-of-K
//! indicator `V`,
//!
//! ```text
//!   sum_v { sum_t ||(X_t^(v) - U^(v) V_t^T) W_t^(v)||_F^2 } + alpha * sum_v ||U^(v)||_F^2
//! ```
//!
//! where `W_t^(v)` zeroes the residual of instances absent from view `v`.
//! Chunks arrive one at a time; for each chunk the solver alternates
//!
//! 1. a closed-form ridge update of every center column — because the
//!    indicator product is diagonal, each column is the accumulated feature
//!    sum divided by its effective count plus `alpha`,
//! 2. a repair step refilling columns whose cluster has no presence yet,
//! 3. a nearest-center reassignment of the chunk's instances,
//!
//! until the labels stop changing or an iteration cap is hit. The running
//! accumulators in [`GlobalStats`] capture everything previous chunks
//! contribute to the update, so a chunk can be processed — and on later
//! passes re-processed — without touching earlier data.

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{
    Assignments, ChunkSource, FactorSet, GlobalStats, MultiViewChunk, SolverConfig,
};

/// Effective denominators at or below this are treated as degenerate: the
/// cluster has no presence and no ridge mass, so the quotient is meaningless.
pub const EPS_DENOMINATOR: f64 = 1e-12;

/// Squared distances from each chunk instance to each center, summed over
/// the views where the instance is present (rows: instances, columns:
/// clusters). A row that is present nowhere is all zeros.
#[derive(Debug, Clone)]
pub struct ChunkDistanceMatrix {
    distances: Array2<f64>,
}

impl ChunkDistanceMatrix {
    /// Instances x clusters distance table.
    pub fn values(&self) -> &Array2<f64> {
        &self.distances
    }

    /// Number of instances covered.
    pub fn n_instances(&self) -> usize {
        self.distances.nrows()
    }
}

/// Result of one closed-form center update.
#[derive(Debug, Clone)]
pub struct FactorUpdate {
    /// Updated centers (already denominator-guarded).
    pub factors: FactorSet,
    /// `degenerate[v][k]`: the effective denominator of column (v, k) was at
    /// or below [`EPS_DENOMINATOR`].
    pub degenerate: Vec<Vec<bool>>,
    /// Present instances of this chunk assigned to each (view, cluster).
    pub chunk_counts: Vec<Vec<u64>>,
}

/// Converged state of one chunk's alternation.
#[derive(Debug, Clone)]
pub struct ChunkOutcome {
    pub factors: FactorSet,
    pub labels: Vec<usize>,
    /// Alternating iterations actually executed.
    pub inner_iters: usize,
}

/// One recorded alternation step (used by the traced fitter).
#[derive(Debug, Clone)]
pub struct InnerIteration {
    /// Chunk objective right after the center update (and repair, when one
    /// fired), evaluated at the pre-update labels.
    pub objective_after_update: f64,
    /// Chunk objective after the reassignment.
    pub objective_after_assign: f64,
    /// Whether degenerate columns were refilled this iteration. Repairs
    /// overwrite the optimal update, so monotonicity is not guaranteed
    /// across them.
    pub repaired: bool,
    pub factors: FactorSet,
    pub labels: Vec<usize>,
}

/// Per-iteration record of one chunk's alternation.
#[derive(Debug, Clone)]
pub struct ChunkTrace {
    /// Chunk objective at the starting centers and labels.
    pub initial_objective: f64,
    pub iterations: Vec<InnerIteration>,
}

/// Loss summary over everything scanned so far.
#[derive(Debug, Clone)]
pub struct LossReport {
    /// Full objective value: the present-pair count (the constant part of
    /// the squared residual under unit-norm columns) plus the quadratic
    /// terms below.
    pub objective: f64,
    /// Quadratic terms averaged over the scanned instances. Typically
    /// negative: it omits the constant.
    pub average_loss: f64,
    /// Instances the average is taken over.
    pub scanned: usize,
    /// Per view: `trace(U^T R)`, the alignment between centers and
    /// accumulated cluster sums.
    pub per_view_alignment: Vec<f64>,
    /// Per view: `trace(U^T U T)`, center energy weighted by cluster
    /// presence counts.
    pub per_view_energy: Vec<f64>,
}

/// Final state of a streaming fit.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub factors: FactorSet,
    pub assignments: Assignments,
    /// One loss report per processed chunk, across all passes.
    pub trace: Vec<LossReport>,
    /// Largest observed resident footprint of accumulators + centers + one
    /// chunk, in bytes. Excludes the O(N) label arrays.
    pub peak_state_bytes: usize,
}

/// Snapshot handed to observers after every chunk.
#[derive(Debug)]
pub struct ChunkEvent<'a> {
    pub pass: usize,
    pub chunk_index: usize,
    /// Instances the report's average runs over.
    pub scanned: usize,
    pub report: &'a LossReport,
    /// Full label array; on the first pass, entries past `scanned` still
    /// hold their zero placeholder.
    pub labels: &'a [usize],
    pub factors: &'a FactorSet,
}

/// Snapshot handed to observers at the end of every pass.
#[derive(Debug)]
pub struct PassEvent<'a> {
    pub pass: usize,
    /// Report of the pass's final chunk.
    pub report: &'a LossReport,
    pub labels: &'a [usize],
    pub factors: &'a FactorSet,
}

/// Hooks into a streaming fit. All methods default to no-ops.
pub trait RunObserver {
    fn on_chunk(&mut self, _event: &ChunkEvent<'_>) {}
    fn on_pass_end(&mut self, _event: &PassEvent<'_>) {}
}

/// The silent observer.
impl RunObserver for () {}

/// Draws the starting centers (uniform in `[0, 1)`) and uniform random
/// labels for the very first chunk. Deterministic in the seed: identical
/// configurations yield identical draws.
pub fn init_first_chunk(
    chunk: &MultiViewChunk,
    n_clusters: usize,
    cfg: &SolverConfig,
) -> Result<(FactorSet, Vec<usize>)> {
    cfg.validate()?;
    if n_clusters == 0 {
        return Err(Error::InvalidConfig("cluster count must be >= 1".into()));
    }
    if chunk.present_pairs() == 0 {
        return Err(Error::InvalidData(
            "the first chunk holds no present instance in any view".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut centers = Vec::with_capacity(chunk.n_views());
    for v in 0..chunk.n_views() {
        let d = chunk.view(v).nrows();
        let mut u = Array2::zeros((d, n_clusters));
        for f in 0..d {
            for k in 0..n_clusters {
                u[(f, k)] = rng.random::<f64>();
            }
        }
        centers.push(u);
    }
    let labels: Vec<usize> = (0..chunk.width())
        .map(|_| rng.random_range(0..n_clusters))
        .collect();
    Ok((FactorSet::new(centers)?, labels))
}

/// Closed-form ridge update of every center column given the chunk's
/// current labels: column `k` of view `v` becomes the accumulated feature
/// sum (prior statistics plus this chunk) divided by the cluster's effective
/// presence count plus `alpha`. Denominators at or below
/// [`EPS_DENOMINATOR`] are clamped and the column flagged degenerate.
///
/// `stats` must exclude this chunk's own contribution.
pub fn update_factors(
    stats: &GlobalStats,
    chunk: &MultiViewChunk,
    labels: &[usize],
    alpha: f64,
) -> FactorUpdate {
    let k = stats.n_clusters();
    assert_eq!(labels.len(), chunk.width(), "label count must match chunk width");
    assert!(labels.iter().all(|&l| l < k), "labels must lie in 0..{k}");

    let n_views = chunk.n_views();
    let mut centers = Vec::with_capacity(n_views);
    let mut degenerate = vec![vec![false; k]; n_views];
    let mut chunk_counts = vec![vec![0u64; k]; n_views];

    for v in 0..n_views {
        let data = chunk.view(v);
        let mut r = stats.r(v).clone();
        for (i, &label) in labels.iter().enumerate() {
            if chunk.mask().is_present(v, i) {
                chunk_counts[v][label] += 1;
                let mut col = r.column_mut(label);
                col += &data.column(i);
            }
        }
        let mut u = r; // reuse the accumulated sums buffer for the centers
        for j in 0..k {
            let tau = (stats.t(v)[j] + chunk_counts[v][j]) as f64 + alpha;
            degenerate[v][j] = tau <= EPS_DENOMINATOR;
            let denom = tau.max(EPS_DENOMINATOR);
            u.column_mut(j).mapv_inplace(|x| x / denom);
        }
        debug_assert!(u.iter().all(|x| x.is_finite()));
        centers.push(u);
    }
    FactorUpdate {
        factors: FactorSet::new(centers).expect("guarded division keeps entries finite"),
        degenerate,
        chunk_counts,
    }
}

/// Squared instance-to-center distances summed over the views where each
/// instance is present, via the expansion `||x||^2 - 2 x.u + ||u||^2` with
/// one matrix product per view. Tiny negative round-off is clamped to zero.
pub fn compute_distances(chunk: &MultiViewChunk, factors: &FactorSet) -> ChunkDistanceMatrix {
    let s = chunk.width();
    let k = factors.n_clusters();
    let mut distances = Array2::<f64>::zeros((s, k));
    for v in 0..chunk.n_views() {
        let x = chunk.view(v);
        let u = factors.view(v);
        let cross = x.t().dot(u); // s x k
        let center_norms: Array1<f64> = u.map_axis(Axis(0), |col| col.dot(&col));
        let instance_norms: Array1<f64> = x.map_axis(Axis(0), |col| col.dot(&col));
        for i in 0..s {
            if !chunk.mask().is_present(v, i) {
                continue;
            }
            let xx = instance_norms[i];
            for j in 0..k {
                distances[(i, j)] += xx - 2.0 * cross[(i, j)] + center_norms[j];
            }
        }
    }
    distances.mapv_inplace(|x| x.max(0.0));
    ChunkDistanceMatrix { distances }
}

/// Nearest-center labels from a distance table. Ties keep the previous
/// label when it attains the minimum, otherwise the lowest index wins; an
/// instance present nowhere (all-zero row) therefore keeps its previous
/// label.
pub fn assign_chunk(distances: &ChunkDistanceMatrix, prev_labels: Option<&[usize]>) -> Vec<usize> {
    let d = &distances.distances;
    let k = d.ncols();
    if let Some(prev) = prev_labels {
        assert_eq!(prev.len(), d.nrows(), "previous labels must match chunk width");
    }
    (0..d.nrows())
        .map(|i| {
            let row = d.row(i);
            let min = row.iter().copied().fold(f64::INFINITY, f64::min);
            if let Some(prev) = prev_labels {
                if prev[i] < k && row[prev[i]] == min {
                    return prev[i];
                }
            }
            row.iter().position(|&x| x == min).expect("row is nonempty")
        })
        .collect()
}

/// Refills degenerate center columns. On the very first chunk a flagged
/// column becomes the average of the chunk's present columns in that view —
/// a neutral starting point when a cluster has no members yet; a view with
/// no present instance at all keeps its random initialization (with a
/// warning). On every later chunk a flagged column is restored to its
/// pre-update value, carrying the last informative estimate forward.
pub fn repair_degenerate_centers(
    mut factors: FactorSet,
    degenerate: &[Vec<bool>],
    chunk: &MultiViewChunk,
    prev_factors: &FactorSet,
    first_chunk: bool,
) -> FactorSet {
    for v in 0..factors.n_views() {
        if !degenerate[v].iter().any(|&b| b) {
            continue;
        }
        let fill = if first_chunk {
            let data = chunk.view(v);
            let mut mean = Array1::<f64>::zeros(data.nrows());
            let mut count = 0usize;
            for i in 0..chunk.width() {
                if chunk.mask().is_present(v, i) {
                    mean += &data.column(i);
                    count += 1;
                }
            }
            if count == 0 {
                log::warn!(
                    "view {v} has no present instance in the first chunk; \
                     degenerate centers keep their random initialization"
                );
                None
            } else {
                mean /= count as f64;
                Some(mean)
            }
        } else {
            None
        };
        for k in 0..factors.n_clusters() {
            if !degenerate[v][k] {
                continue;
            }
            match (&fill, first_chunk) {
                (Some(mean), true) => factors.view_mut(v).column_mut(k).assign(mean),
                _ => factors
                    .view_mut(v)
                    .column_mut(k)
                    .assign(&prev_factors.view(v).column(k)),
            }
        }
    }
    factors
}

/// Objective restricted to one chunk plus the quadratic influence of the
/// prior statistics — the quantity the within-chunk alternation decreases:
///
/// ```text
///   sum_v [ -2 tr(U^T R) + tr(U^T U T) + sum_{i present} ||x_i - u_{l(i)}||^2
///           + alpha ||U||_F^2 ]
/// ```
///
/// `stats` must exclude the chunk itself. Constant terms of already-scanned
/// data are dropped; comparisons across iterations are unaffected.
pub fn chunk_objective(
    stats: &GlobalStats,
    factors: &FactorSet,
    chunk: &MultiViewChunk,
    labels: &[usize],
    alpha: f64,
) -> f64 {
    let mut total = 0.0;
    for v in 0..chunk.n_views() {
        let u = factors.view(v);
        let r = stats.r(v);
        let cross: f64 = u.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
        let energy: f64 = (0..u.ncols())
            .map(|k| stats.t(v)[k] as f64 * u.column(k).dot(&u.column(k)))
            .sum();
        let data = chunk.view(v);
        let mut residual = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if !chunk.mask().is_present(v, i) {
                continue;
            }
            residual += data
                .column(i)
                .iter()
                .zip(u.column(label).iter())
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>();
        }
        let ridge: f64 = alpha * u.iter().map(|x| x * x).sum::<f64>();
        total += -2.0 * cross + energy + residual + ridge;
    }
    total
}

fn alternate(
    stats: &GlobalStats,
    init_factors: FactorSet,
    init_labels: Vec<usize>,
    chunk: &MultiViewChunk,
    cfg: &SolverConfig,
    first_chunk: bool,
    mut trace: Option<&mut ChunkTrace>,
) -> Result<ChunkOutcome> {
    cfg.validate()?;
    if let Some(t) = trace.as_deref_mut() {
        t.initial_objective = chunk_objective(stats, &init_factors, chunk, &init_labels, cfg.alpha);
    }
    let mut factors = init_factors;
    let mut labels = init_labels;
    let mut inner_iters = 0;
    for _ in 0..cfg.max_inner_iters {
        inner_iters += 1;
        let before = factors;
        let update = update_factors(stats, chunk, &labels, cfg.alpha);
        let mut flags = update.degenerate;
        if first_chunk {
            // With no prior statistics, a cluster that received no present
            // instance of a view has an empty column regardless of alpha.
            for v in 0..flags.len() {
                for k in 0..flags[v].len() {
                    if update.chunk_counts[v][k] == 0 {
                        flags[v][k] = true;
                    }
                }
            }
        }
        let needs_repair = flags.iter().flatten().any(|&b| b);
        let repaired = cfg.fill_degenerate && needs_repair;
        factors = if repaired {
            repair_degenerate_centers(update.factors, &flags, chunk, &before, first_chunk)
        } else {
            update.factors
        };

        let distances = compute_distances(chunk, &factors);
        let new_labels = assign_chunk(&distances, Some(&labels));
        let converged = new_labels == labels;
        if let Some(t) = trace.as_deref_mut() {
            t.iterations.push(InnerIteration {
                objective_after_update: chunk_objective(stats, &factors, chunk, &labels, cfg.alpha),
                objective_after_assign: chunk_objective(
                    stats,
                    &factors,
                    chunk,
                    &new_labels,
                    cfg.alpha,
                ),
                repaired,
                factors: factors.clone(),
                labels: new_labels.clone(),
            });
        }
        labels = new_labels;
        if converged {
            break;
        }
    }
    Ok(ChunkOutcome {
        factors,
        labels,
        inner_iters,
    })
}

fn start_state(
    stats: &GlobalStats,
    factors: Option<&FactorSet>,
    chunk: &MultiViewChunk,
    cfg: &SolverConfig,
    prev_labels: Option<&[usize]>,
) -> Result<(FactorSet, Vec<usize>, bool)> {
    match factors {
        None => {
            let (f, l) = init_first_chunk(chunk, stats.n_clusters(), cfg)?;
            Ok((f, l, true))
        }
        Some(f) => {
            let distances = compute_distances(chunk, f);
            let labels = assign_chunk(&distances, prev_labels);
            Ok((f.clone(), labels, false))
        }
    }
}

/// Runs one chunk's alternation to convergence (labels unchanged) or the
/// iteration cap.
///
/// `stats` must exclude this chunk's contribution; the caller folds the
/// returned labels in afterwards. `factors` is `None` only for the very
/// first chunk a fit ever sees, which starts from seeded random centers and
/// labels; every other chunk starts from a nearest-center assignment under
/// the incoming factors (`prev_labels`, when given, breaks its ties —
/// typically the labels this chunk received on the previous pass).
pub fn process_chunk(
    stats: &GlobalStats,
    factors: Option<&FactorSet>,
    chunk: &MultiViewChunk,
    cfg: &SolverConfig,
    prev_labels: Option<&[usize]>,
) -> Result<ChunkOutcome> {
    let (f, l, first) = start_state(stats, factors, chunk, cfg, prev_labels)?;
    alternate(stats, f, l, chunk, cfg, first, None)
}

/// [`process_chunk`] with a per-iteration record of objectives, repairs,
/// centers and labels.
pub fn process_chunk_traced(
    stats: &GlobalStats,
    factors: Option<&FactorSet>,
    chunk: &MultiViewChunk,
    cfg: &SolverConfig,
    prev_labels: Option<&[usize]>,
) -> Result<(ChunkOutcome, ChunkTrace)> {
    let (f, l, first) = start_state(stats, factors, chunk, cfg, prev_labels)?;
    let mut trace = ChunkTrace {
        initial_objective: 0.0,
        iterations: Vec::new(),
    };
    let outcome = alternate(stats, f, l, chunk, cfg, first, Some(&mut trace))?;
    Ok((outcome, trace))
}

/// Runs the alternation from an explicit starting point instead of the
/// seeded or nearest-center defaults. `first_chunk` selects the repair
/// policy for degenerate columns.
pub fn process_chunk_from(
    stats: &GlobalStats,
    init_factors: FactorSet,
    init_labels: Vec<usize>,
    chunk: &MultiViewChunk,
    cfg: &SolverConfig,
    first_chunk: bool,
) -> Result<ChunkOutcome> {
    alternate(stats, init_factors, init_labels, chunk, cfg, first_chunk, None)
}

/// Loss summary at the current accumulators and centers.
///
/// The quadratic core per view is `-2 tr(U^T R) + tr(U^T U T) +
/// alpha ||U||_F^2`; dividing its sum by `scanned` gives the average loss,
/// and adding the accumulated present-pair count (each present unit-norm
/// column contributes exactly 1 to the residual's constant term) gives the
/// full objective.
pub fn objective(
    stats: &GlobalStats,
    factors: &FactorSet,
    alpha: f64,
    scanned: usize,
) -> Result<LossReport> {
    if scanned == 0 {
        return Err(Error::InvalidData(
            "loss is undefined before any instance is scanned".into(),
        ));
    }
    assert_eq!(stats.n_views(), factors.n_views(), "view count mismatch");
    assert_eq!(stats.n_clusters(), factors.n_clusters(), "cluster count mismatch");
    let mut per_view_alignment = Vec::with_capacity(stats.n_views());
    let mut per_view_energy = Vec::with_capacity(stats.n_views());
    let mut core = 0.0;
    for v in 0..stats.n_views() {
        let u = factors.view(v);
        let alignment: f64 = u.iter().zip(stats.r(v).iter()).map(|(a, b)| a * b).sum();
        let energy: f64 = (0..u.ncols())
            .map(|k| stats.t(v)[k] as f64 * u.column(k).dot(&u.column(k)))
            .sum();
        let ridge: f64 = alpha * u.iter().map(|x| x * x).sum::<f64>();
        core += -2.0 * alignment + energy + ridge;
        per_view_alignment.push(alignment);
        per_view_energy.push(energy);
    }
    Ok(LossReport {
        objective: stats.scanned_present_pairs() as f64 + core,
        average_loss: core / scanned as f64,
        scanned,
        per_view_alignment,
        per_view_energy,
    })
}

/// Streams every chunk through the alternation for `cfg.n_passes` passes
/// and returns the final centers, the full label array, the per-chunk loss
/// trace and the peak working-set footprint.
///
/// On revisits (pass two onward) the chunk's stale contribution is removed
/// from the statistics before its alternation and the fresh labels are
/// folded back in afterwards, so each pass replaces rather than
/// double-counts. A stream that ends before `meta.n_instances` aborts the
/// fit with an error.
pub fn run<S: ChunkSource, O: RunObserver>(
    source: &mut S,
    cfg: &SolverConfig,
    observer: &mut O,
) -> Result<RunOutput> {
    cfg.validate()?;
    let meta = source.meta().clone();
    let mut stats = GlobalStats::new(&meta);
    let mut factors: Option<FactorSet> = None;
    let mut labels_all = vec![0usize; meta.n_instances];
    let mut trace = Vec::new();
    let mut peak_state_bytes = 0usize;

    for pass in 0..cfg.n_passes {
        source.reset()?;
        let mut offset = 0usize;
        let mut next_index = 0usize;
        while let Some(chunk) = source.next_chunk()? {
            if chunk.chunk_index() != next_index {
                return Err(Error::InvalidData(format!(
                    "chunk stream skipped from index {next_index} to {}",
                    chunk.chunk_index()
                )));
            }
            next_index += 1;
            for v in 0..meta.n_views {
                if chunk.view(v).nrows() != meta.dims[v] {
                    return Err(Error::ShapeMismatch(format!(
                        "chunk {} view {v} has {} features, dataset declares {}",
                        chunk.chunk_index(),
                        chunk.view(v).nrows(),
                        meta.dims[v]
                    )));
                }
            }
            let width = chunk.width();
            if offset + width > meta.n_instances {
                return Err(Error::ShapeMismatch(format!(
                    "stream yields more than the declared {} instances",
                    meta.n_instances
                )));
            }

            let prior = stats.contribution(chunk.chunk_index()).map(<[usize]>::to_vec);
            let outcome = match prior {
                Some(prev_labels) => {
                    let snapshot = stats.without_chunk(&chunk);
                    process_chunk(&snapshot, factors.as_ref(), &chunk, cfg, Some(&prev_labels))?
                }
                None => process_chunk(&stats, factors.as_ref(), &chunk, cfg, None)?,
            };
            stats.apply_chunk(&chunk, &outcome.labels);
            labels_all[offset..offset + width].copy_from_slice(&outcome.labels);
            offset += width;
            let current = factors.insert(outcome.factors);

            let scanned = if pass == 0 { offset } else { meta.n_instances };
            let report = objective(&stats, current, cfg.alpha, scanned)?;
            peak_state_bytes = peak_state_bytes.max(
                stats.core_state_bytes() + current.state_bytes() + chunk.state_bytes(),
            );
            observer.on_chunk(&ChunkEvent {
                pass,
                chunk_index: chunk.chunk_index(),
                scanned,
                report: &report,
                labels: &labels_all,
                factors: current,
            });
            trace.push(report);
        }
        if offset != meta.n_instances {
            return Err(Error::StreamTruncated {
                expected: meta.n_instances,
                got: offset,
            });
        }
        let report = trace.last().expect("a nonempty pass was just completed");
        observer.on_pass_end(&PassEvent {
            pass,
            report,
            labels: &labels_all,
            factors: factors.as_ref().expect("factors exist after a pass"),
        });
    }

    let factors = factors.ok_or(Error::StreamTruncated {
        expected: meta.n_instances,
        got: 0,
    })?;
    Ok(RunOutput {
        factors,
        assignments: Assignments::new(labels_all, meta.n_clusters)?,
        trace,
        peak_state_bytes,
    })
}
