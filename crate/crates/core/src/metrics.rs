//! External clustering quality measures.
//!
//! Both scores compare a predicted hard labeling against a reference
//! labeling of the same instances and are invariant to how either side
//! numbers its clusters:
//!
//! * [`nmi`] — mutual information between the two labelings, normalized by
//!   the geometric mean of their entropies (natural logarithms).
//! * [`accuracy`] — fraction of instances correctly labeled under the best
//!   one-to-one cluster-to-class matching.

use ndarray::Array2;
use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::error::{Error, Result};

/// Joint count table of two labelings: `counts[(i, j)]` is the number of
/// instances placed in predicted cluster `i` and reference class `j`.
#[derive(Debug, Clone)]
pub struct Contingency {
    counts: Array2<u64>,
    pred_sizes: Vec<u64>,
    truth_sizes: Vec<u64>,
    n: usize,
}

impl Contingency {
    /// Tabulates two labelings over the same instances.
    pub fn from_labels(pred: &[usize], truth: &[usize]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "labelings cover {} and {} instances",
                pred.len(),
                truth.len()
            )));
        }
        if pred.is_empty() {
            return Err(Error::InvalidData("cannot score an empty labeling".into()));
        }
        let n_pred = pred.iter().max().unwrap() + 1;
        let n_truth = truth.iter().max().unwrap() + 1;
        let mut counts = Array2::<u64>::zeros((n_pred, n_truth));
        for (&p, &t) in pred.iter().zip(truth) {
            counts[(p, t)] += 1;
        }
        let pred_sizes = (0..n_pred).map(|i| counts.row(i).sum()).collect();
        let truth_sizes = (0..n_truth).map(|j| counts.column(j).sum()).collect();
        Ok(Self {
            counts,
            pred_sizes,
            truth_sizes,
            n: pred.len(),
        })
    }

    /// Joint counts (predicted clusters x reference classes).
    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    /// Number of instances tabulated.
    pub fn n(&self) -> usize {
        self.n
    }
}

/// Entropy of a cluster-size histogram, in nats.
fn entropy(sizes: &[u64], n: usize) -> f64 {
    let n = n as f64;
    sizes
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information between two labelings.
///
/// Uses natural logarithms and normalizes by `sqrt(H(pred) * H(truth))`.
/// Degenerate cases: when both labelings are constant they carry the same
/// (empty) information, so the score is 1; when exactly one is constant no
/// agreement beyond chance is measurable and the score is 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = Contingency::from_labels(pred, truth)?;
    let h_pred = entropy(&table.pred_sizes, table.n);
    let h_truth = entropy(&table.truth_sizes, table.n);
    if h_pred == 0.0 && h_truth == 0.0 {
        return Ok(1.0);
    }
    if h_pred == 0.0 || h_truth == 0.0 {
        return Ok(0.0);
    }
    let n = table.n as f64;
    let mut mi = 0.0;
    for i in 0..table.pred_sizes.len() {
        for j in 0..table.truth_sizes.len() {
            let c = table.counts[(i, j)];
            if c == 0 {
                continue;
            }
            // Counts fit in f64 exactly (n <= 2^26 in any realistic run),
            // so the log argument is formed from exact integer products.
            let joint = c as f64 * n;
            let marginal = (table.pred_sizes[i] * table.truth_sizes[j]) as f64;
            mi += (c as f64 / n) * (joint / marginal).ln();
        }
    }
    Ok(mi / (h_pred * h_truth).sqrt())
}

/// Clustering accuracy: the fraction of instances whose predicted cluster
/// maps to their reference class under the best one-to-one matching between
/// clusters and classes (computed by the Kuhn–Munkres algorithm on the
/// contingency table, zero-padded to square when the sides disagree).
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let table = Contingency::from_labels(pred, truth)?;
    let (rows, cols) = table.counts.dim();
    let side = rows.max(cols);
    let weights: Vec<Vec<i64>> = (0..side)
        .map(|i| {
            (0..side)
                .map(|j| {
                    if i < rows && j < cols {
                        table.counts[(i, j)] as i64
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    let weights = Matrix::from_rows(weights)
        .expect("padded contingency rows share one length");
    let (matched, _) = kuhn_munkres(&weights);
    Ok(matched as f64 / table.n as f64)
}
