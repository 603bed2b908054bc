//! Dataset handling: file formats, per-instance normalization, missingness
//! simulation, shuffling, synthetic generators and chunk sources.
//!
//! On disk a dataset is one matrix file per view (text CSV or the `MVC1`
//! binary layout, both feature-rows x instance-columns), an optional 0/1
//! presence mask (views x instances) and an optional reference label file
//! (one integer per line). In memory the loading pipeline is:
//!
//! 1. read each view and the mask,
//! 2. zero every column the mask marks absent (the mask wins over whatever
//!    the file holds),
//! 3. scale every present column to unit Euclidean norm,
//! 4. optionally shuffle instances, then cut the columns into chunks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, Axis};
use rand::prelude::*;
use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ChunkSource, DatasetMeta, MultiViewChunk, PresenceMask};

/// Magic bytes opening the binary view format.
const BINARY_MAGIC: &[u8; 4] = b"MVC1";

// ---------------------------------------------------------------------------
// View matrices
// ---------------------------------------------------------------------------

/// Loads one view matrix (features x instances), sniffing the format from
/// the file's first bytes: the `MVC1` magic selects the binary layout,
/// anything else is parsed as CSV.
pub fn load_view(path: &Path) -> Result<Array2<f64>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 4];
    let got = read_up_to(&mut file, &mut magic)?;
    if got == 4 && &magic == BINARY_MAGIC {
        load_view_binary_body(path, file)
    } else {
        drop(file);
        load_view_csv(path)
    }
}

fn read_up_to(file: &mut File, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = file.read(&mut buf[filled..])?;
        if n == 0 {
            break;
        }
        filled += n;
    }
    Ok(filled)
}

/// Parses a headerless numeric CSV with one feature per row and one
/// instance per column.
pub fn load_view_csv(path: &Path) -> Result<Array2<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let display = path.display().to_string();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for token in line.split(',') {
            let token = token.trim();
            row.push(token.parse::<f64>().map_err(|_| Error::Parse {
                path: display.clone(),
                line: line_no + 1,
                msg: format!("expected a number, found {token:?}"),
            })?);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{display}: row {} holds {} values, expected {}",
                    line_no + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidData(format!("{display}: no rows")));
    }
    let (d, n) = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((d, n), flat).expect("row-major reshape"))
}

fn load_view_binary_body(path: &Path, mut file: File) -> Result<Array2<f64>> {
    let display = path.display().to_string();
    let mut header = [0u8; 16];
    file.read_exact(&mut header).map_err(|_| Error::Parse {
        path: display.clone(),
        line: 0,
        msg: "binary header truncated".into(),
    })?;
    let d = u64::from_le_bytes(header[0..8].try_into().unwrap());
    let n = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let entries = d.checked_mul(n).ok_or_else(|| Error::Parse {
        path: display.clone(),
        line: 0,
        msg: format!("implausible dimensions {d} x {n}"),
    })? as usize;
    let mut body = vec![0u8; entries * 8];
    file.read_exact(&mut body).map_err(|_| Error::Parse {
        path: display.clone(),
        line: 0,
        msg: format!("binary body shorter than {d} x {n} doubles"),
    })?;
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(Error::Parse {
            path: display,
            line: 0,
            msg: "binary body longer than the declared dimensions".into(),
        });
    }
    let flat: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((d as usize, n as usize), flat).expect("row-major reshape"))
}

/// Writes a view matrix as headerless CSV (shortest round-tripping decimal
/// form per entry).
pub fn write_view_csv(path: &Path, view: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in view.rows() {
        let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a view matrix in the `MVC1` binary layout: the 4 magic bytes, the
/// two dimensions as little-endian u64, then row-major little-endian f64.
pub fn write_view_binary(path: &Path, view: &Array2<f64>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(BINARY_MAGIC)?;
    out.write_all(&(view.nrows() as u64).to_le_bytes())?;
    out.write_all(&(view.ncols() as u64).to_le_bytes())?;
    for row in view.rows() {
        for &x in row {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Masks and labels
// ---------------------------------------------------------------------------

/// Loads a presence mask: a views x instances CSV of 0/1 flags.
pub fn load_mask(path: &Path) -> Result<PresenceMask> {
    let display = path.display().to_string();
    let raw = load_view_csv(path)?;
    let mut bits = Array2::from_elem(raw.dim(), false);
    for ((idx, &x), bit) in raw.indexed_iter().zip(bits.iter_mut()) {
        *bit = match x {
            x if x == 0.0 => false,
            x if x == 1.0 => true,
            other => {
                return Err(Error::Parse {
                    path: display,
                    line: idx.0 + 1,
                    msg: format!("mask entries must be 0 or 1, found {other}"),
                })
            }
        };
    }
    PresenceMask::new(bits)
}

/// Writes a presence mask as a views x instances CSV of 0/1 flags.
pub fn write_mask_csv(path: &Path, mask: &PresenceMask) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for v in 0..mask.n_views() {
        let line: Vec<&str> = mask
            .view_row(v)
            .iter()
            .map(|&b| if b { "1" } else { "0" })
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Loads reference labels (one integer per line) and remaps the distinct
/// values, in ascending order, onto `0..n_classes`.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let display = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    let mut raw = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line?;
        let token = line.trim();
        if token.is_empty() {
            continue;
        }
        raw.push(token.parse::<i64>().map_err(|_| Error::Parse {
            path: display.clone(),
            line: line_no + 1,
            msg: format!("expected an integer label, found {token:?}"),
        })?);
    }
    if raw.is_empty() {
        return Err(Error::InvalidData(format!("{display}: no labels")));
    }
    let mut values: Vec<i64> = raw.clone();
    values.sort_unstable();
    values.dedup();
    Ok(raw
        .into_iter()
        .map(|x| values.binary_search(&x).expect("value came from the list"))
        .collect())
}

/// Writes labels, one integer per line.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for &l in labels {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// In-memory transforms
// ---------------------------------------------------------------------------

/// Overwrites every masked-absent column with zeros. The mask is
/// authoritative: whatever the file held in those columns is discarded.
pub fn zero_fill_absent(views: &mut [Array2<f64>], mask: &PresenceMask) {
    for (v, view) in views.iter_mut().enumerate() {
        for i in 0..view.ncols() {
            if !mask.is_present(v, i) {
                view.column_mut(i).fill(0.0);
            }
        }
    }
}

/// Scales every present column of one view to unit Euclidean norm. Absent
/// columns are left untouched (they are zero by convention). A present
/// column with zero norm cannot be normalized and is reported as an error.
pub fn normalize_view(view: &mut Array2<f64>, present: &[bool]) -> Result<()> {
    assert_eq!(present.len(), view.ncols(), "mask row must match view width");
    for i in 0..view.ncols() {
        if !present[i] {
            continue;
        }
        let norm = view.column(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidData(format!(
                "instance {i} is present but has zero norm; it cannot be \
                 scaled to the unit sphere"
            )));
        }
        view.column_mut(i).mapv_inplace(|x| x / norm);
    }
    Ok(())
}

/// Normalizes every view of a dataset against its mask row.
pub fn normalize_dataset(views: &mut [Array2<f64>], mask: &PresenceMask) -> Result<()> {
    for (v, view) in views.iter_mut().enumerate() {
        let present: Vec<bool> = mask.view_row(v).iter().copied().collect();
        normalize_view(view, &present).map_err(|e| match e {
            Error::InvalidData(msg) => Error::InvalidData(format!("view {v}: {msg}")),
            other => other,
        })?;
    }
    Ok(())
}

/// Draws a presence mask with exactly `round(rate * n)` absent instances per
/// view, chosen uniformly and independently per view, then repairs any
/// instance left absent everywhere: one uniformly chosen view gets the
/// instance back, and to keep that view's absent count intact a randomly
/// chosen other instance (one that remains present elsewhere) is dropped
/// from it when such an instance exists.
pub fn simulate_missing(
    n_views: usize,
    n_instances: usize,
    rate: f64,
    seed: u64,
) -> Result<PresenceMask> {
    if n_views == 0 || n_instances == 0 {
        return Err(Error::InvalidConfig("mask needs at least one view and instance".into()));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "missing rate must lie in [0, 1], got {rate}"
        )));
    }
    let absent_per_view = (rate * n_instances as f64).round() as usize;
    // Every instance must keep one view, so across views at most
    // (n_views - 1) * n slots can be absent.
    if n_views * absent_per_view > (n_views - 1) * n_instances {
        return Err(Error::InvalidConfig(format!(
            "missing rate {rate} removes {absent_per_view} of {n_instances} \
             instances from each of {n_views} views, leaving some instance \
             with no view at all"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = Array2::from_elem((n_views, n_instances), true);
    for v in 0..n_views {
        for idx in sample(&mut rng, n_instances, absent_per_view) {
            bits[(v, idx)] = false;
        }
    }

    let view_count = |bits: &Array2<bool>, i: usize| (0..n_views).filter(|&v| bits[(v, i)]).count();
    for i in 0..n_instances {
        if view_count(&bits, i) > 0 {
            continue;
        }
        let v = rng.random_range(0..n_views);
        bits[(v, i)] = true;
        // Keep view v's absent count intact by dropping an instance that
        // stays covered elsewhere, when one exists.
        let candidates: Vec<usize> = (0..n_instances)
            .filter(|&j| j != i && bits[(v, j)] && view_count(&bits, j) >= 2)
            .collect();
        if let Some(&j) = candidates.choose(&mut rng) {
            bits[(v, j)] = false;
        }
    }
    PresenceMask::new(bits)
}

/// Applies one shared random permutation to the instances of every view,
/// the mask and (when given) the labels. Returns the permutation, where
/// `perm[new_position] = old_position`.
pub fn shuffle_instances(
    views: &mut [Array2<f64>],
    mask: &mut PresenceMask,
    labels: Option<&mut Vec<usize>>,
    seed: u64,
) -> Vec<usize> {
    let n = mask.n_instances();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for view in views.iter_mut() {
        *view = view.select(Axis(1), &perm);
    }
    *mask = mask.select_instances(&perm);
    if let Some(labels) = labels {
        *labels = perm.iter().map(|&old| labels[old]).collect();
    }
    perm
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Draws per-view cluster centers uniformly in direction: standard normal
/// vectors scaled onto the sphere of radius `separation`.
fn draw_centers(
    dims: &[usize],
    n_clusters: usize,
    separation: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Array2<f64>>> {
    dims.iter()
        .map(|&d| {
            let mut centers = Array2::zeros((d, n_clusters));
            for k in 0..n_clusters {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::InvalidData("degenerate center draw".into()));
                }
                for (f, &x) in dir.iter().enumerate() {
                    centers[(f, k)] = separation * x / norm;
                }
            }
            Ok(centers)
        })
        .collect()
}

/// Balanced class sizes: the first `n % k` classes take one extra instance.
fn balanced_label(i: usize, n: usize, k: usize) -> usize {
    let base = n / k;
    let rem = n % k;
    let fat = (base + 1) * rem; // instances covered by the larger classes
    if i < fat {
        i / (base + 1)
    } else {
        rem + (i - fat) / base
    }
}

/// Generates a complete multi-view Gaussian mixture: per view, `n_clusters`
/// centers on the sphere of radius `separation`, instances drawn as their
/// class center plus `noise`-scaled Gaussian coordinates, every column then
/// scaled to unit norm. Labels are shared across views, balanced, and
/// emitted in class-sorted order (class 0 first); shuffle afterwards for a
/// randomized stream.
pub fn make_synthetic(
    n_clusters: usize,
    dims: &[usize],
    n_instances: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    if n_clusters == 0 || n_clusters > n_instances {
        return Err(Error::InvalidConfig(format!(
            "cluster count must satisfy 1 <= K <= {n_instances}, got {n_clusters}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = draw_centers(dims, n_clusters, separation, &mut rng)?;
    let labels: Vec<usize> = (0..n_instances)
        .map(|i| balanced_label(i, n_instances, n_clusters))
        .collect();
    let mut views = Vec::with_capacity(dims.len());
    for (v, &d) in dims.iter().enumerate() {
        let mut view = Array2::zeros((d, n_instances));
        for (i, &label) in labels.iter().enumerate() {
            let mut norm2 = 0.0;
            for f in 0..d {
                let x = centers[v][(f, label)] + noise * rng.sample::<f64, _>(StandardNormal);
                view[(f, i)] = x;
                norm2 += x * x;
            }
            if norm2 == 0.0 {
                return Err(Error::InvalidData(format!(
                    "synthetic instance {i} in view {v} landed exactly on \
                     the origin and cannot be normalized; use a nonzero \
                     separation or noise"
                )));
            }
            let norm = norm2.sqrt();
            view.column_mut(i).mapv_inplace(|x| x / norm);
        }
        views.push(view);
    }
    Ok((views, labels))
}

// ---------------------------------------------------------------------------
// Manifests and loading
// ---------------------------------------------------------------------------

/// File-system description of a dataset.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    /// One matrix file per view.
    pub view_paths: Vec<PathBuf>,
    /// Optional presence mask; absent means the data is complete.
    pub mask_path: Option<PathBuf>,
    /// Optional reference labels for scoring.
    pub labels_path: Option<PathBuf>,
    /// Number of clusters to fit.
    pub n_clusters: usize,
}

/// A dataset read into memory: zero-filled against its mask but not yet
/// normalized.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub views: Vec<Array2<f64>>,
    pub mask: PresenceMask,
    pub labels: Option<Vec<usize>>,
    pub meta: DatasetMeta,
}

/// Reads every file in a manifest, checks shapes against each other,
/// zero-fills absent columns and rejects non-finite values in present
/// columns.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<LoadedDataset> {
    if manifest.view_paths.is_empty() {
        return Err(Error::InvalidConfig("manifest lists no views".into()));
    }
    let mut views = Vec::with_capacity(manifest.view_paths.len());
    for path in &manifest.view_paths {
        views.push(load_view(path)?);
    }
    let n = views[0].ncols();
    for (v, view) in views.iter().enumerate() {
        if view.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "view {v} holds {} instances, view 0 holds {n}",
                view.ncols()
            )));
        }
    }
    let mask = match &manifest.mask_path {
        Some(path) => {
            let mask = load_mask(path)?;
            if mask.n_views() != views.len() || mask.n_instances() != n {
                return Err(Error::ShapeMismatch(format!(
                    "mask is {} x {}, dataset is {} views x {n} instances",
                    mask.n_views(),
                    mask.n_instances(),
                    views.len()
                )));
            }
            mask
        }
        None => PresenceMask::complete(views.len(), n),
    };
    zero_fill_absent(&mut views, &mask);
    for (v, view) in views.iter().enumerate() {
        for i in 0..n {
            if mask.is_present(v, i) && view.column(i).iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "non-finite value in present instance {i} of view {v}"
                )));
            }
        }
    }
    let labels = match &manifest.labels_path {
        Some(path) => {
            let labels = load_labels(path)?;
            if labels.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {n} instances",
                    labels.len()
                )));
            }
            Some(labels)
        }
        None => None,
    };
    let dims: Vec<usize> = views.iter().map(|v| v.nrows()).collect();
    let meta = DatasetMeta::new(dims, n, manifest.n_clusters, mask.missing_ratio())?;
    Ok(LoadedDataset {
        views,
        mask,
        labels,
        meta,
    })
}

// ---------------------------------------------------------------------------
// Chunk sources
// ---------------------------------------------------------------------------

/// Cuts an in-memory dataset into consecutive chunks of `chunk_size`
/// instances (the last chunk may be narrower).
pub fn chunk_dataset(
    views: &[Array2<f64>],
    mask: &PresenceMask,
    chunk_size: usize,
) -> Result<Vec<MultiViewChunk>> {
    if chunk_size == 0 {
        return Err(Error::InvalidConfig("chunk size must be >= 1".into()));
    }
    let n = mask.n_instances();
    let mut chunks = Vec::with_capacity(n.div_ceil(chunk_size));
    for (index, start) in (0..n).step_by(chunk_size).enumerate() {
        let end = (start + chunk_size).min(n);
        let data: Vec<Array2<f64>> = views
            .iter()
            .map(|v| v.slice(ndarray::s![.., start..end]).to_owned())
            .collect();
        chunks.push(MultiViewChunk::new(
            index,
            data,
            mask.slice_instances(start, end),
        )?);
    }
    Ok(chunks)
}

/// Chunk source over a dataset held in memory.
#[derive(Debug, Clone)]
pub struct InMemorySource {
    views: Vec<Array2<f64>>,
    mask: PresenceMask,
    meta: DatasetMeta,
    chunk_size: usize,
    cursor: usize,
}

impl InMemorySource {
    /// Wraps normalized, zero-filled views into a replayable chunk stream.
    pub fn new(
        views: Vec<Array2<f64>>,
        mask: PresenceMask,
        n_clusters: usize,
        chunk_size: usize,
    ) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk size must be >= 1".into()));
        }
        let dims: Vec<usize> = views.iter().map(|v| v.nrows()).collect();
        let n = mask.n_instances();
        for (v, view) in views.iter().enumerate() {
            if view.ncols() != n {
                return Err(Error::ShapeMismatch(format!(
                    "view {v} holds {} instances, mask holds {n}",
                    view.ncols()
                )));
            }
        }
        let meta = DatasetMeta::new(dims, n, n_clusters, mask.missing_ratio())?;
        Ok(Self {
            views,
            mask,
            meta,
            chunk_size,
            cursor: 0,
        })
    }
}

impl ChunkSource for InMemorySource {
    fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    fn reset(&mut self) -> Result<()> {
        self.cursor = 0;
        Ok(())
    }

    fn next_chunk(&mut self) -> Result<Option<MultiViewChunk>> {
        let n = self.meta.n_instances;
        if self.cursor >= n {
            return Ok(None);
        }
        let start = self.cursor;
        let end = (start + self.chunk_size).min(n);
        self.cursor = end;
        let data: Vec<Array2<f64>> = self
            .views
            .iter()
            .map(|v| v.slice(ndarray::s![.., start..end]).to_owned())
            .collect();
        Ok(Some(MultiViewChunk::new(
            start / self.chunk_size,
            data,
            self.mask.slice_instances(start, end),
        )?))
    }
}

/// Chunk source that synthesizes a Gaussian-mixture stream on the fly, so
/// arbitrarily long streams cost only one chunk of memory at a time.
///
/// Instances carry interleaved balanced labels (`i mod K`); every chunk is
/// derived from a counter-keyed RNG, so replays are bit-identical without
/// storing anything per instance. Missingness is Bernoulli per (view,
/// instance) at the requested rate, with an instance left absent everywhere
/// reassigned to one uniformly drawn view.
#[derive(Debug, Clone)]
pub struct StreamingSyntheticSource {
    meta: DatasetMeta,
    centers: Vec<Array2<f64>>,
    noise: f64,
    missing_rate: f64,
    chunk_size: usize,
    seed: u64,
    cursor: usize,
}

impl StreamingSyntheticSource {
    /// Builds the stream; centers are drawn once from the seed.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_clusters: usize,
        dims: &[usize],
        n_instances: usize,
        separation: f64,
        noise: f64,
        missing_rate: f64,
        chunk_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&missing_rate) {
            return Err(Error::InvalidConfig(format!(
                "missing rate must lie in [0, 1), got {missing_rate}"
            )));
        }
        let meta = DatasetMeta::new(dims.to_vec(), n_instances, n_clusters, missing_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = draw_centers(dims, n_clusters, separation, &mut rng)?;
        Ok(Self {
            meta,
            centers,
            noise,
            missing_rate,
            chunk_size,
            seed,
            cursor: 0,
        })
    }

    /// Reference label of one instance.
    pub fn true_label(&self, instance: usize) -> usize {
        instance % self.meta.n_clusters
    }

    /// Stable per-chunk RNG: the chunk index is mixed into the seed with a
    /// splitmix64 round so replays regenerate identical bytes.
    fn chunk_rng(&self, chunk_index: usize) -> ChaCha8Rng {
        let mut z = self
            .seed
            .wrapping_add((chunk_index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
    }
}

impl ChunkSource for StreamingSyntheticSource {
    fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    fn reset(&mut self) -> Result<()> {
        self.cursor = 0;
        Ok(())
    }

    fn next_chunk(&mut self) -> Result<Option<MultiViewChunk>> {
        let n = self.meta.n_instances;
        if self.cursor >= n {
            return Ok(None);
        }
        let start = self.cursor;
        let end = (start + self.chunk_size).min(n);
        let width = end - start;
        let index = start / self.chunk_size;
        self.cursor = end;

        let n_views = self.meta.n_views;
        let mut rng = self.chunk_rng(index);
        let mut bits = Array2::from_elem((n_views, width), false);
        for c in 0..width {
            for v in 0..n_views {
                bits[(v, c)] = rng.random::<f64>() >= self.missing_rate;
            }
            if (0..n_views).all(|v| !bits[(v, c)]) {
                bits[(rng.random_range(0..n_views), c)] = true;
            }
        }
        let mut data: Vec<Array2<f64>> = self
            .meta
            .dims
            .iter()
            .map(|&d| Array2::zeros((d, width)))
            .collect();
        for c in 0..width {
            let label = self.true_label(start + c);
            for v in 0..n_views {
                if !bits[(v, c)] {
                    continue;
                }
                let d = self.meta.dims[v];
                let mut norm2 = 0.0;
                for f in 0..d {
                    let x = self.centers[v][(f, label)]
                        + self.noise * rng.sample::<f64, _>(StandardNormal);
                    data[v][(f, c)] = x;
                    norm2 += x * x;
                }
                if norm2 == 0.0 {
                    return Err(Error::InvalidData(
                        "synthetic instance landed exactly on the origin".into(),
                    ));
                }
                let norm = norm2.sqrt();
                data[v].column_mut(c).mapv_inplace(|x| x / norm);
            }
        }
        Ok(Some(MultiViewChunk::new(
            index,
            data,
            PresenceMask::new(bits)?,
        )?))
    }
}
