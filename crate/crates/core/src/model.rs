//! Core data model: dataset descriptions, presence masks, streamed chunks,
//! factor matrices, cluster assignments and the running sufficient
//! statistics that make single-pass fitting possible.
//!
//! Each view `X^(v)` (features x instances) is factorized as `U^(v) V^T`
//! where `V` is a 1-of-K indicator matrix over instances shared by every
//! view. Everything the factor update needs from already-scanned data is
//! captured by two small accumulators per view:
//!
//! * `R^(v) = sum_i x_i * v_i^T`, a `d_v x K` matrix of per-cluster feature
//!   sums (absent instances are zero-filled, so they contribute nothing),
//! * `T^(v) = sum_i v_i^T * w_i * v_i`, per-cluster counts of *present*
//!   instances. Because every `v_i` is one-hot this product is diagonal and
//!   is stored as a length-K vector of integers.
//!
//! [`GlobalStats`] owns both, plus the per-chunk assignment record needed to
//! replace a chunk's contribution when a later pass revisits it.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Shape description of a multi-view dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    /// Number of views.
    pub n_views: usize,
    /// Number of instances shared by all views.
    pub n_instances: usize,
    /// Feature dimensionality of each view.
    pub dims: Vec<usize>,
    /// Number of clusters `K`.
    pub n_clusters: usize,
    /// Fraction of (view, instance) pairs that are absent.
    pub missing_ratio: f64,
}

impl DatasetMeta {
    /// Validates and builds a dataset description.
    pub fn new(
        dims: Vec<usize>,
        n_instances: usize,
        n_clusters: usize,
        missing_ratio: f64,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidConfig("dataset needs at least one view".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("every view needs at least one feature".into()));
        }
        if n_instances == 0 {
            return Err(Error::InvalidConfig("dataset needs at least one instance".into()));
        }
        if n_clusters == 0 || n_clusters > n_instances {
            return Err(Error::InvalidConfig(format!(
                "cluster count must satisfy 1 <= K <= {n_instances}, got {n_clusters}"
            )));
        }
        if !(0.0..=1.0).contains(&missing_ratio) {
            return Err(Error::InvalidConfig(format!(
                "missing ratio must lie in [0, 1], got {missing_ratio}"
            )));
        }
        Ok(Self {
            n_views: dims.len(),
            n_instances,
            dims,
            n_clusters,
            missing_ratio,
        })
    }
}

/// Binary presence indicators: `mask[(v, i)]` is true when instance `i` was
/// observed in view `v`. Every instance is observed in at least one view.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceMask {
    bits: Array2<bool>,
}

impl PresenceMask {
    /// Builds a mask from raw indicator bits, rejecting any instance that is
    /// absent from every view.
    pub fn new(bits: Array2<bool>) -> Result<Self> {
        for i in 0..bits.ncols() {
            if !bits.column(i).iter().any(|&b| b) {
                return Err(Error::InvalidData(format!(
                    "instance {i} is absent from every view"
                )));
            }
        }
        Ok(Self { bits })
    }

    /// A mask with every instance present in every view.
    pub fn complete(n_views: usize, n_instances: usize) -> Self {
        Self {
            bits: Array2::from_elem((n_views, n_instances), true),
        }
    }

    /// Number of views.
    pub fn n_views(&self) -> usize {
        self.bits.nrows()
    }

    /// Number of instances.
    pub fn n_instances(&self) -> usize {
        self.bits.ncols()
    }

    /// Whether instance `i` is present in view `v`.
    pub fn is_present(&self, view: usize, instance: usize) -> bool {
        self.bits[(view, instance)]
    }

    /// Presence row of one view.
    pub fn view_row(&self, view: usize) -> ArrayView1<'_, bool> {
        self.bits.row(view)
    }

    /// Raw indicator matrix (views x instances).
    pub fn bits(&self) -> ArrayView2<'_, bool> {
        self.bits.view()
    }

    /// Number of present instances in one view.
    pub fn present_in_view(&self, view: usize) -> usize {
        self.bits.row(view).iter().filter(|&&b| b).count()
    }

    /// Fraction of (view, instance) pairs that are absent.
    pub fn missing_ratio(&self) -> f64 {
        let total = self.bits.len();
        let present: usize = (0..self.n_views()).map(|v| self.present_in_view(v)).sum();
        1.0 - present as f64 / total as f64
    }

    /// Copies out the mask columns `start..end` (used when slicing chunks).
    pub fn slice_instances(&self, start: usize, end: usize) -> Self {
        Self {
            bits: self.bits.slice(ndarray::s![.., start..end]).to_owned(),
        }
    }

    /// Reorders instances by `indices` (column `j` of the result is column
    /// `indices[j]` of the original). Whole columns move together, so the
    /// at-least-one-view invariant survives.
    pub fn select_instances(&self, indices: &[usize]) -> Self {
        Self {
            bits: self.bits.select(ndarray::Axis(1), indices),
        }
    }
}

/// One streamed block of instances: a dense `d_v x s_t` matrix per view plus
/// the matching presence mask. Absent columns are exactly zero.
#[derive(Debug, Clone)]
pub struct MultiViewChunk {
    chunk_index: usize,
    data: Vec<Array2<f64>>,
    mask: PresenceMask,
}

impl MultiViewChunk {
    /// Validates shapes and the zero-fill convention, then builds a chunk.
    pub fn new(chunk_index: usize, data: Vec<Array2<f64>>, mask: PresenceMask) -> Result<Self> {
        if data.len() != mask.n_views() {
            return Err(Error::ShapeMismatch(format!(
                "chunk has {} views but mask has {}",
                data.len(),
                mask.n_views()
            )));
        }
        let width = mask.n_instances();
        if width == 0 {
            return Err(Error::InvalidData("chunk holds no instances".into()));
        }
        for (v, view) in data.iter().enumerate() {
            if view.ncols() != width {
                return Err(Error::ShapeMismatch(format!(
                    "view {v} holds {} instances but mask expects {width}",
                    view.ncols()
                )));
            }
            for i in 0..width {
                let col = view.column(i);
                if mask.is_present(v, i) {
                    if col.iter().any(|x| !x.is_finite()) {
                        return Err(Error::InvalidData(format!(
                            "non-finite value in present column {i} of view {v}"
                        )));
                    }
                } else if col.iter().any(|&x| x != 0.0) {
                    return Err(Error::InvalidData(format!(
                        "absent column {i} of view {v} is not zero-filled"
                    )));
                }
            }
        }
        Ok(Self {
            chunk_index,
            data,
            mask,
        })
    }

    /// Position of this chunk in the stream (0-based, stable across passes).
    pub fn chunk_index(&self) -> usize {
        self.chunk_index
    }

    /// Number of instances in the chunk.
    pub fn width(&self) -> usize {
        self.mask.n_instances()
    }

    /// Number of views.
    pub fn n_views(&self) -> usize {
        self.data.len()
    }

    /// Data matrix of one view (`d_v x s_t`).
    pub fn view(&self, view: usize) -> &Array2<f64> {
        &self.data[view]
    }

    /// Presence mask restricted to this chunk.
    pub fn mask(&self) -> &PresenceMask {
        &self.mask
    }

    /// Total number of present (view, instance) pairs in the chunk.
    pub fn present_pairs(&self) -> usize {
        (0..self.n_views()).map(|v| self.mask.present_in_view(v)).sum()
    }

    /// Approximate heap footprint of the chunk buffers in bytes.
    pub fn state_bytes(&self) -> usize {
        let data: usize = self.data.iter().map(|m| m.len() * 8).sum();
        data + self.mask.bits.len()
    }
}

/// Per-view center matrices `U^(v)` of shape `d_v x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    centers: Vec<Array2<f64>>,
}

impl FactorSet {
    /// Builds a factor set, requiring one matrix per view with a shared
    /// cluster count and finite entries.
    pub fn new(centers: Vec<Array2<f64>>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::ShapeMismatch("factor set needs at least one view".into()));
        }
        let k = centers[0].ncols();
        for (v, m) in centers.iter().enumerate() {
            if m.ncols() != k {
                return Err(Error::ShapeMismatch(format!(
                    "view {v} has {} clusters, expected {k}",
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite center entry in view {v}"
                )));
            }
        }
        Ok(Self { centers })
    }

    /// Number of views.
    pub fn n_views(&self) -> usize {
        self.centers.len()
    }

    /// Number of clusters.
    pub fn n_clusters(&self) -> usize {
        self.centers[0].ncols()
    }

    /// Center matrix of one view.
    pub fn view(&self, view: usize) -> &Array2<f64> {
        &self.centers[view]
    }

    /// Mutable center matrix of one view.
    pub fn view_mut(&mut self, view: usize) -> &mut Array2<f64> {
        &mut self.centers[view]
    }

    /// Approximate heap footprint in bytes.
    pub fn state_bytes(&self) -> usize {
        self.centers.iter().map(|m| m.len() * 8).sum()
    }
}

/// Hard cluster assignments for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Assignments {
    /// Validates that every label lies in `0..n_clusters`.
    pub fn new(labels: Vec<usize>, n_clusters: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_clusters) {
            return Err(Error::InvalidData(format!(
                "label {bad} out of range for {n_clusters} clusters"
            )));
        }
        Ok(Self { labels, n_clusters })
    }

    /// Number of labeled instances.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Whether no instances are labeled.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of clusters the labels range over.
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Label slice.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Consumes the assignments, returning the raw label vector.
    pub fn into_labels(self) -> Vec<usize> {
        self.labels
    }
}

/// Solver configuration shared by the streaming and offline fitters.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Ridge penalty on the center matrices; must be finite and >= 0.
    pub alpha: f64,
    /// Instances per streamed chunk; >= 1.
    pub chunk_size: usize,
    /// Cap on alternating iterations within one chunk.
    pub max_inner_iters: usize,
    /// Number of passes over the stream.
    pub n_passes: usize,
    /// Seed for center/label initialization.
    pub rng_seed: u64,
    /// Whether degenerate (empty-cluster) center columns are refilled.
    pub fill_degenerate: bool,
}

impl SolverConfig {
    /// Builds a configuration with the default iteration cap (20), a single
    /// pass, seed 0 and degenerate-center filling enabled.
    pub fn new(alpha: f64, chunk_size: usize) -> Self {
        Self {
            alpha,
            chunk_size,
            max_inner_iters: 20,
            n_passes: 1,
            rng_seed: 0,
            fill_degenerate: true,
        }
    }

    /// Sets the number of passes over the stream.
    pub fn with_passes(mut self, n_passes: usize) -> Self {
        self.n_passes = n_passes;
        self
    }

    /// Sets the initialization seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Sets the inner iteration cap.
    pub fn with_max_inner_iters(mut self, iters: usize) -> Self {
        self.max_inner_iters = iters;
        self
    }

    /// Enables or disables degenerate-center filling.
    pub fn with_fill_degenerate(mut self, fill: bool) -> Self {
        self.fill_degenerate = fill;
        self
    }

    /// Checks every field against its documented range.
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if self.chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk size must be >= 1".into()));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::InvalidConfig("inner iteration cap must be >= 1".into()));
        }
        if self.n_passes == 0 {
            return Err(Error::InvalidConfig("pass count must be >= 1".into()));
        }
        Ok(())
    }
}

/// A replayable stream of dataset chunks.
///
/// Implementations must honor a replay contract: after [`reset`], the source
/// yields exactly the same chunk sequence — same indices, widths, masks and
/// data — as the previous pass. Multi-pass fitting replaces each chunk's
/// statistics contribution by recomputing what was added last time from the
/// re-read data, which is only correct when replays are faithful.
///
/// [`reset`]: ChunkSource::reset
pub trait ChunkSource {
    /// Shape of the full dataset behind the stream.
    fn meta(&self) -> &DatasetMeta;

    /// Rewinds the stream to the first chunk.
    fn reset(&mut self) -> Result<()>;

    /// Yields the next chunk, or `None` at the end of the pass.
    fn next_chunk(&mut self) -> Result<Option<MultiViewChunk>>;
}

/// Running sufficient statistics of everything scanned so far, together with
/// the per-chunk assignment record needed to replace stale contributions on
/// later passes.
#[derive(Debug, Clone)]
pub struct GlobalStats {
    /// Per-view `d_v x K` cluster feature sums.
    r: Vec<Array2<f64>>,
    /// Per-view, per-cluster counts of present instances.
    t: Vec<Vec<u64>>,
    /// Labels last applied for each chunk index.
    contribs: Vec<Option<Vec<usize>>>,
    n_clusters: usize,
}

impl GlobalStats {
    /// Zero-initialized statistics for a dataset shape.
    pub fn new(meta: &DatasetMeta) -> Self {
        Self {
            r: meta
                .dims
                .iter()
                .map(|&d| Array2::zeros((d, meta.n_clusters)))
                .collect(),
            t: vec![vec![0; meta.n_clusters]; meta.n_views],
            contribs: Vec::new(),
            n_clusters: meta.n_clusters,
        }
    }

    /// Number of views.
    pub fn n_views(&self) -> usize {
        self.r.len()
    }

    /// Number of clusters.
    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Cluster feature sums of one view.
    pub fn r(&self, view: usize) -> &Array2<f64> {
        &self.r[view]
    }

    /// Per-cluster present-instance counts of one view.
    pub fn t(&self, view: usize) -> &[u64] {
        &self.t[view]
    }

    /// Labels last applied for a chunk, if any.
    pub fn contribution(&self, chunk_index: usize) -> Option<&[usize]> {
        self.contribs
            .get(chunk_index)
            .and_then(|c| c.as_deref())
    }

    /// Total present (view, instance) pairs currently accumulated.
    pub fn scanned_present_pairs(&self) -> u64 {
        self.t.iter().flatten().sum()
    }

    /// Folds a chunk's contribution into the statistics.
    ///
    /// When the chunk index was applied before (a later pass revisiting the
    /// stream) the previous contribution is first subtracted, so the call
    /// *replaces* rather than double-counts. Revisits must present the same
    /// chunk data as the original visit; when the labels are also unchanged
    /// the call leaves the statistics bit-for-bit untouched.
    ///
    /// # Panics
    ///
    /// Panics when `labels` disagrees with the chunk width, a label falls
    /// outside `0..K`, or the chunk shape disagrees with the statistics —
    /// all caller contract violations.
    pub fn apply_chunk(&mut self, chunk: &MultiViewChunk, labels: &[usize]) {
        assert_eq!(
            labels.len(),
            chunk.width(),
            "label count must match chunk width"
        );
        assert!(
            labels.iter().all(|&l| l < self.n_clusters),
            "labels must lie in 0..{}",
            self.n_clusters
        );
        assert_eq!(chunk.n_views(), self.r.len(), "view count mismatch");

        #[cfg(debug_assertions)]
        self.debug_check_indicator_gram(chunk, labels);

        let idx = chunk.chunk_index();
        if idx >= self.contribs.len() {
            self.contribs.resize(idx + 1, None);
        }
        if let Some(old) = self.contribs[idx].take() {
            assert_eq!(
                old.len(),
                chunk.width(),
                "revisited chunk {idx} changed width"
            );
            if old == labels {
                // Identical contribution: subtract-then-add would only
                // round; keep the stored values exactly.
                self.contribs[idx] = Some(old);
                return;
            }
            self.accumulate(chunk, &old, -1.0);
        }
        self.accumulate(chunk, labels, 1.0);
        self.contribs[idx] = Some(labels.to_vec());
    }

    fn accumulate(&mut self, chunk: &MultiViewChunk, labels: &[usize], sign: f64) {
        for v in 0..chunk.n_views() {
            let data = chunk.view(v);
            for (i, &label) in labels.iter().enumerate() {
                if !chunk.mask().is_present(v, i) {
                    // Absent columns are zero-filled: they add nothing to R
                    // and are excluded from the presence counts.
                    continue;
                }
                if sign > 0.0 {
                    self.t[v][label] += 1;
                } else {
                    assert!(
                        self.t[v][label] > 0,
                        "presence count underflow for view {v}, cluster {label}"
                    );
                    self.t[v][label] -= 1;
                }
                let mut col = self.r[v].column_mut(label);
                if sign > 0.0 {
                    col += &data.column(i);
                } else {
                    col -= &data.column(i);
                }
            }
        }
    }

    /// Statistics with one chunk's stored contribution removed, leaving the
    /// accumulators in the state "everything scanned except this chunk".
    /// The per-chunk record is not carried over; the copy is a snapshot for
    /// factor updates during a revisit, not a replacement accumulator.
    pub fn without_chunk(&self, chunk: &MultiViewChunk) -> GlobalStats {
        let mut snap = GlobalStats {
            r: self.r.clone(),
            t: self.t.clone(),
            contribs: Vec::new(),
            n_clusters: self.n_clusters,
        };
        if let Some(labels) = self.contribution(chunk.chunk_index()) {
            let labels = labels.to_vec();
            snap.accumulate(chunk, &labels, -1.0);
        }
        snap
    }

    /// Approximate heap footprint of the accumulators in bytes (the
    /// per-chunk label record is excluded; it scales with the dataset, not
    /// with the working set).
    pub fn core_state_bytes(&self) -> usize {
        let r: usize = self.r.iter().map(|m| m.len() * 8).sum();
        let t: usize = self.t.iter().map(|v| v.len() * 8).sum();
        r + t
    }

    /// On small inputs, rebuilds the full K x K indicator product with dense
    /// loops and checks it is diagonal with the per-cluster present counts
    /// on the diagonal — the structural fact that lets `T` live in a vector.
    #[cfg(debug_assertions)]
    fn debug_check_indicator_gram(&self, chunk: &MultiViewChunk, labels: &[usize]) {
        let k = self.n_clusters;
        if chunk.width() > 64 || k > 16 {
            return;
        }
        for v in 0..chunk.n_views() {
            let mut gram = vec![vec![0u64; k]; k];
            for (i, &label) in labels.iter().enumerate() {
                let w = u64::from(chunk.mask().is_present(v, i));
                // One-hot row: only the (label, label) entry receives weight.
                for a in 0..k {
                    for b in 0..k {
                        let va = u64::from(a == label);
                        let vb = u64::from(b == label);
                        gram[a][b] += va * w * vb;
                    }
                }
            }
            let mut diag_counts = vec![0u64; k];
            for (i, &label) in labels.iter().enumerate() {
                if chunk.mask().is_present(v, i) {
                    diag_counts[label] += 1;
                }
            }
            for a in 0..k {
                for b in 0..k {
                    let expected = if a == b { diag_counts[a] } else { 0 };
                    debug_assert_eq!(
                        gram[a][b], expected,
                        "indicator product must be diagonal (view {v})"
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn meta(dims: &[usize], n: usize, k: usize) -> DatasetMeta {
        DatasetMeta::new(dims.to_vec(), n, k, 0.0).unwrap()
    }

    /// Chunk with explicit mask bits; absent columns are zeroed here so the
    /// constructor's zero-fill check passes.
    fn chunk_from(
        index: usize,
        mut views: Vec<Array2<f64>>,
        bits: Array2<bool>,
    ) -> MultiViewChunk {
        for (v, view) in views.iter_mut().enumerate() {
            for i in 0..view.ncols() {
                if !bits[(v, i)] {
                    view.column_mut(i).fill(0.0);
                }
            }
        }
        MultiViewChunk::new(index, views, PresenceMask::new(bits).unwrap()).unwrap()
    }

    #[test]
    fn meta_rejects_bad_shapes() {
        assert!(DatasetMeta::new(vec![], 10, 2, 0.0).is_err());
        assert!(DatasetMeta::new(vec![3, 0], 10, 2, 0.0).is_err());
        assert!(DatasetMeta::new(vec![3], 0, 1, 0.0).is_err());
        assert!(DatasetMeta::new(vec![3], 10, 0, 0.0).is_err());
        assert!(DatasetMeta::new(vec![3], 10, 11, 0.0).is_err());
        assert!(DatasetMeta::new(vec![3], 10, 2, 1.5).is_err());
        assert!(DatasetMeta::new(vec![3, 4], 10, 2, 0.25).is_ok());
    }

    #[test]
    fn mask_rejects_fully_absent_instance() {
        let bits = arr2(&[[true, false], [true, false]]);
        let err = PresenceMask::new(bits).unwrap_err();
        assert!(err.to_string().contains("instance 1"));
    }

    #[test]
    fn mask_missing_ratio_is_exact() {
        let bits = arr2(&[[true, false, true, true], [true, true, false, true]]);
        let mask = PresenceMask::new(bits).unwrap();
        assert_eq!(mask.missing_ratio(), 2.0 / 8.0);
        assert_eq!(mask.present_in_view(0), 3);
    }

    #[test]
    fn complete_mask_has_zero_missing_ratio() {
        let mask = PresenceMask::complete(3, 7);
        assert_eq!(mask.missing_ratio(), 0.0);
        assert!(mask.is_present(2, 6));
    }

    #[test]
    fn chunk_rejects_unzeroed_absent_column() {
        let bits = arr2(&[[true, false], [true, true]]);
        let views = vec![
            arr2(&[[1.0, 0.5], [0.0, 0.0]]), // column 1 absent but nonzero
            arr2(&[[2.0, 3.0]]),
        ];
        let err = MultiViewChunk::new(0, views, PresenceMask::new(bits).unwrap()).unwrap_err();
        assert!(err.to_string().contains("not zero-filled"));
    }

    #[test]
    fn chunk_rejects_non_finite_present_entry() {
        let bits = arr2(&[[true, true]]);
        let views = vec![arr2(&[[1.0, f64::NAN], [0.0, 0.0]])];
        assert!(MultiViewChunk::new(0, views, PresenceMask::new(bits).unwrap()).is_err());
    }

    #[test]
    fn factor_set_rejects_mismatched_cluster_counts() {
        let centers = vec![Array2::zeros((3, 2)), Array2::zeros((4, 3))];
        assert!(FactorSet::new(centers).is_err());
    }

    #[test]
    fn assignments_reject_out_of_range_labels() {
        assert!(Assignments::new(vec![0, 2], 2).is_err());
        let a = Assignments::new(vec![0, 1, 1], 2).unwrap();
        assert_eq!(a.labels(), &[0, 1, 1]);
    }

    #[test]
    fn config_validation_covers_every_field() {
        assert!(SolverConfig::new(0.1, 8).validate().is_ok());
        assert!(SolverConfig::new(-1.0, 8).validate().is_err());
        assert!(SolverConfig::new(f64::NAN, 8).validate().is_err());
        assert!(SolverConfig::new(0.1, 0).validate().is_err());
        assert!(SolverConfig::new(0.1, 8).with_passes(0).validate().is_err());
        assert!(SolverConfig::new(0.1, 8)
            .with_max_inner_iters(0)
            .validate()
            .is_err());
    }

    #[test]
    fn fresh_stats_are_zero() {
        let stats = GlobalStats::new(&meta(&[3, 5], 10, 4));
        assert_eq!(stats.r(0).shape(), &[3, 4]);
        assert_eq!(stats.r(1).shape(), &[5, 4]);
        assert!(stats.r(0).iter().all(|&x| x == 0.0));
        assert!(stats.r(1).iter().all(|&x| x == 0.0));
        assert_eq!(stats.t(0), &[0, 0, 0, 0]);
        assert_eq!(stats.t(1), &[0, 0, 0, 0]);
        assert_eq!(stats.scanned_present_pairs(), 0);
    }

    #[test]
    fn single_present_instance_lands_in_its_cluster_column() {
        let mut stats = GlobalStats::new(&meta(&[2], 4, 2));
        let chunk = chunk_from(
            0,
            vec![arr2(&[[0.6], [0.8]])],
            arr2(&[[true]]),
        );
        stats.apply_chunk(&chunk, &[1]);
        assert_eq!(stats.r(0), &arr2(&[[0.0, 0.6], [0.0, 0.8]]));
        assert_eq!(stats.t(0), &[0, 1]);
        assert_eq!(stats.contribution(0), Some(&[1][..]));
    }

    #[test]
    fn absent_instance_contributes_nothing() {
        // One instance present in view 0 only; view 1 stays untouched.
        let mut stats = GlobalStats::new(&meta(&[2, 2], 4, 2));
        let chunk = chunk_from(
            0,
            vec![arr2(&[[0.6], [0.8]]), arr2(&[[9.0], [9.0]])],
            arr2(&[[true], [false]]),
        );
        stats.apply_chunk(&chunk, &[0]);
        assert_eq!(stats.t(1), &[0, 0]);
        assert!(stats.r(1).iter().all(|&x| x == 0.0));
        assert_eq!(stats.t(0), &[1, 0]);
    }

    #[test]
    fn reapplying_identical_labels_is_bitwise_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let views = vec![Array2::from_shape_fn((3, 6), |_| rng.random::<f64>())];
        let chunk = chunk_from(2, views, Array2::from_elem((1, 6), true));
        let labels = vec![0, 1, 2, 0, 1, 2];

        let mut stats = GlobalStats::new(&meta(&[3], 6, 3));
        stats.apply_chunk(&chunk, &labels);
        let r_before = stats.r(0).clone();
        let t_before = stats.t(0).to_vec();

        stats.apply_chunk(&chunk, &labels);
        assert_eq!(stats.r(0), &r_before);
        assert_eq!(stats.t(0), &t_before[..]);
    }

    #[test]
    fn replacement_matches_a_fresh_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (d, s, k) = (
                rng.random_range(1..5usize),
                rng.random_range(1..9usize),
                rng.random_range(1..4usize),
            );
            let views = vec![Array2::from_shape_fn((d, s), |_| rng.random::<f64>() - 0.5)];
            let mut bits = Array2::from_shape_fn((1, s), |_| rng.random::<f64>() < 0.7);
            for i in 0..s {
                if !bits[(0, i)] {
                    bits[(0, i)] = true; // single view: keep every instance
                }
            }
            let chunk = chunk_from(0, views, bits);
            let first: Vec<usize> = (0..s).map(|_| rng.random_range(0..k)).collect();
            let second: Vec<usize> = (0..s).map(|_| rng.random_range(0..k)).collect();

            let m = meta(&[d], s, k);
            let mut replayed = GlobalStats::new(&m);
            replayed.apply_chunk(&chunk, &first);
            replayed.apply_chunk(&chunk, &second);

            let mut fresh = GlobalStats::new(&m);
            fresh.apply_chunk(&chunk, &second);

            assert_eq!(replayed.t(0), fresh.t(0));
            let diff = (replayed.r(0) - fresh.r(0))
                .iter()
                .map(|x| x.abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-12, "replacement drifted by {diff}");
        }
    }

    #[test]
    fn accumulators_match_dense_recomputation() {
        // Oracle: rebuild R = X * V and the indicator product from scratch
        // with dense loops and compare against the running accumulators.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..10 {
            let n_views = rng.random_range(1..4usize);
            let k = rng.random_range(1..5usize);
            let n_chunks = rng.random_range(1..4usize);
            let dims: Vec<usize> = (0..n_views).map(|_| rng.random_range(1..5)).collect();

            let total: usize = 6 * n_chunks;
            let m = meta(&dims, total, k);
            let mut stats = GlobalStats::new(&m);

            let mut all_cols: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_views]; // [view][instance][feature]
            let mut all_present: Vec<Vec<bool>> = vec![Vec::new(); n_views];
            let mut all_labels: Vec<usize> = Vec::new();

            for c in 0..n_chunks {
                let s = 6;
                let views: Vec<Array2<f64>> = dims
                    .iter()
                    .map(|&d| Array2::from_shape_fn((d, s), |_| rng.random::<f64>() * 2.0 - 1.0))
                    .collect();
                let mut bits = Array2::from_shape_fn((n_views, s), |_| rng.random::<f64>() < 0.6);
                for i in 0..s {
                    if !(0..n_views).any(|v| bits[(v, i)]) {
                        bits[(rng.random_range(0..n_views), i)] = true;
                    }
                }
                let chunk = chunk_from(c, views, bits);
                let labels: Vec<usize> = (0..s).map(|_| rng.random_range(0..k)).collect();
                for v in 0..n_views {
                    for i in 0..s {
                        all_cols[v].push(chunk.view(v).column(i).to_vec());
                        all_present[v].push(chunk.mask().is_present(v, i));
                    }
                }
                all_labels.extend_from_slice(&labels);
                stats.apply_chunk(&chunk, &labels);
            }

            for v in 0..n_views {
                let mut r_oracle = Array2::<f64>::zeros((dims[v], k));
                let mut t_oracle = vec![0u64; k];
                for (i, &label) in all_labels.iter().enumerate() {
                    if all_present[v][i] {
                        t_oracle[label] += 1;
                    }
                    // Absent columns were zero-filled, so X * V sums them
                    // as zeros; add unconditionally like the dense product.
                    for (f, &x) in all_cols[v][i].iter().enumerate() {
                        r_oracle[(f, label)] += x;
                    }
                }
                assert_eq!(stats.t(v), &t_oracle[..]);
                let diff = (stats.r(v) - &r_oracle)
                    .iter()
                    .map(|x| x.abs())
                    .fold(0.0, f64::max);
                assert!(diff <= 1e-10, "R drifted from dense recomputation: {diff}");
            }
        }
    }

    #[test]
    fn without_chunk_restores_the_pre_chunk_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = meta(&[3], 12, 2);
        let mk = |idx: usize, rng: &mut ChaCha8Rng| {
            let views = vec![Array2::from_shape_fn((3, 6), |_| rng.random::<f64>())];
            chunk_from(idx, views, Array2::from_elem((1, 6), true))
        };
        let c0 = mk(0, &mut rng);
        let c1 = mk(1, &mut rng);

        let mut stats = GlobalStats::new(&m);
        stats.apply_chunk(&c0, &[0, 0, 1, 1, 0, 1]);
        let r_only_c0 = stats.r(0).clone();
        let t_only_c0 = stats.t(0).to_vec();
        stats.apply_chunk(&c1, &[1, 1, 1, 0, 0, 0]);

        let snap = stats.without_chunk(&c1);
        assert_eq!(snap.t(0), &t_only_c0[..]);
        let diff = (snap.r(0) - &r_only_c0)
            .iter()
            .map(|x| x.abs())
            .fold(0.0, f64::max);
        assert!(diff <= 1e-12);
        // The snapshot carries no per-chunk records.
        assert_eq!(snap.contribution(0), None);
    }

    #[test]
    #[should_panic(expected = "labels must lie in")]
    fn out_of_range_label_is_a_contract_violation() {
        let mut stats = GlobalStats::new(&meta(&[2], 4, 2));
        let chunk = chunk_from(0, vec![arr2(&[[1.0], [0.0]])], arr2(&[[true]]));
        stats.apply_chunk(&chunk, &[2]);
    }

    #[test]
    #[should_panic(expected = "label count")]
    fn wrong_label_length_is_a_contract_violation() {
        let mut stats = GlobalStats::new(&meta(&[2], 4, 2));
        let chunk = chunk_from(0, vec![arr2(&[[1.0], [0.0]])], arr2(&[[true]]));
        stats.apply_chunk(&chunk, &[0, 1]);
    }
}
