//! Offline reference fitter.
//!
//! Runs the exact same alternation as the streaming solver, but on the whole
//! dataset held in memory as a single chunk. With nothing accumulated before
//! that chunk, the chunk objective *is* the batch objective, so the recorded
//! trace tracks the classic alternating-minimization curve. By construction
//! the result is bit-identical to a streaming fit whose chunk size covers the
//! full dataset in one pass — a property the tests pin down.

use ndarray::Array2;

use crate::data::chunk_dataset;
use crate::error::{Error, Result};
use crate::model::{Assignments, DatasetMeta, FactorSet, GlobalStats, PresenceMask, SolverConfig};
use crate::solver::process_chunk_traced;

/// Result of a whole-dataset fit.
#[derive(Debug, Clone)]
pub struct ImcFit {
    pub factors: FactorSet,
    pub assignments: Assignments,
    /// Batch objective at the start and after every alternation iteration.
    pub objective_trace: Vec<f64>,
}

/// Fits centers and labels on the full dataset at once.
///
/// `views` holds one feature-by-instance matrix per view with absent columns
/// zeroed; `mask` marks presence. The alternation starts from the seeded
/// random initialization in `cfg` and stops when labels stabilize or the
/// iteration cap is reached.
pub fn imc_fit(
    views: &[Array2<f64>],
    mask: &PresenceMask,
    n_clusters: usize,
    cfg: &SolverConfig,
) -> Result<ImcFit> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidData("at least one view is required".into()));
    }
    let n = views[0].ncols();
    if n_clusters > n {
        return Err(Error::InvalidConfig(format!(
            "cannot split {n} instances into {n_clusters} clusters"
        )));
    }
    let dims: Vec<usize> = views.iter().map(Array2::nrows).collect();
    let meta = DatasetMeta::new(dims, n, n_clusters, mask.missing_ratio())?;
    let chunk = chunk_dataset(views, mask, n)?
        .pop()
        .expect("a nonempty dataset yields one full-width chunk");
    let stats = GlobalStats::new(&meta);
    let (outcome, trace) = process_chunk_traced(&stats, None, &chunk, cfg, None)?;
    let mut objective_trace = vec![trace.initial_objective];
    objective_trace.extend(trace.iterations.iter().map(|it| it.objective_after_assign));
    Ok(ImcFit {
        factors: outcome.factors,
        assignments: Assignments::new(outcome.labels, n_clusters)?,
        objective_trace,
    })
}
