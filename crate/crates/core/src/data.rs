//! Datasets, file formats and the synthetic benchmark.
//!
//! Embedding matrices are read from either
//!
//! * CSV: a header `dim_0,…,dim_{d-1}` then one sample per line, or
//! * binary: `OBLV`, `u32` version (= 1), `u64` rows, `u64` cols, then
//!   `rows·cols` little-endian `f64` values in row-major order.
//!
//! Label files are single-column CSV with header `label` and non-negative
//! integers, densely remapped to `0..c` in ascending order of raw value.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::linalg::QR;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kernels::{one_hot_features, FeatureMatrix, Variable};
use crate::rng::{derive_seed, rng_from};
use crate::{Error, Matrix, Result};

pub const MAGIC: &[u8; 4] = b"OBLV";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Categorical labels dense in `0..classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    values: Vec<usize>,
    classes: usize,
}

impl Labels {
    /// Class count is inferred as `max + 1`.
    pub fn new(values: Vec<usize>) -> Self {
        let classes = values.iter().max().map_or(0, |m| m + 1);
        Self { values, classes }
    }

    pub fn with_classes(values: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|&&v| v >= classes) {
            return Err(Error::LabelOutOfRange { label: bad, classes });
        }
        Ok(Self { values, classes })
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Majority-class frequency, `NaN` when empty.
    pub fn majority_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return f64::NAN;
        }
        let max = self.counts().into_iter().max().unwrap_or(0);
        max as f64 / self.values.len() as f64
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &v in &self.values {
            counts[v] += 1;
        }
        counts
    }

    pub fn one_hot(&self) -> Result<FeatureMatrix> {
        Ok(one_hot_features(&self.values, self.classes)?.with_provenance(Variable::Unspecified))
    }

    /// Subset in the given order; keeps the class count.
    pub fn select(&self, idx: &[usize]) -> Labels {
        Labels {
            values: idx.iter().map(|&i| self.values[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Representations paired with attribute labels and optional task labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    pub x: Matrix,
    pub s: Labels,
    pub y: Option<Labels>,
}

impl EmbeddingDataset {
    pub fn new(x: Matrix, s: Labels, y: Option<Labels>) -> Result<Self> {
        let n = x.nrows();
        if s.len() != n {
            return Err(Error::SampleCountMismatch { left: n, right: s.len() });
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::SampleCountMismatch { left: n, right: y.len() });
            }
        }
        Ok(Self { x, s, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, idx: &[usize]) -> EmbeddingDataset {
        EmbeddingDataset {
            x: select_rows(&self.x, idx),
            s: self.s.select(idx),
            y: self.y.as_ref().map(|y| y.select(idx)),
        }
    }
}

pub fn select_rows(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.15, test: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random partition of `0..n`.
pub fn split_indices(n: usize, fractions: SplitFractions, seed: u64) -> Result<Split> {
    let SplitFractions { train, val, test } = fractions;
    if [train, val, test].iter().any(|f| !(f.is_finite() && *f >= 0.0))
        || (train + val + test - 1.0).abs() > 1e-9
        || train <= 0.0
        || test <= 0.0
    {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to 1, got {train}/{val}/{test}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let n_train = ((n as f64) * train).round() as usize;
    let n_val = (((n as f64) * val).round() as usize).min(n - n_train);
    let mut train_idx = order[..n_train].to_vec();
    let mut val_idx = order[n_train..n_train + n_val].to_vec();
    let mut test_idx = order[n_train + n_val..].to_vec();
    if train_idx.len() < 2 || test_idx.is_empty() {
        return Err(Error::TooFewRows { needed: 4, got: n });
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok(Split { train: train_idx, val: val_idx, test: test_idx })
}

// ---------------------------------------------------------------------------
// Embedding files

/// Reads a `.csv` file as CSV and anything else as the binary format.
pub fn read_embeddings(path: &Path) -> Result<Matrix> {
    if is_csv(path) {
        read_embeddings_csv(path)
    } else {
        decode_binary(&fs::read(path)?)
    }
}

pub fn write_embeddings(path: &Path, m: &Matrix) -> Result<()> {
    if is_csv(path) {
        write_embeddings_csv(path, m)
    } else {
        fs::write(path, encode_binary(m))?;
        Ok(())
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn encode_binary(m: &Matrix) -> Vec<u8> {
    let (rows, cols) = m.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let payload = (bytes.len() - HEADER_LEN) as u64;
    let expected = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::ShapeMismatch(format!("{rows}x{cols} overflows")))?;
    if payload < expected {
        return Err(Error::TruncatedFile { expected, found: payload });
    }
    if payload > expected {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after a {rows}x{cols} payload",
            payload - expected
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let data = &bytes[HEADER_LEN..];
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        let at = (i * cols + j) * 8;
        f64::from_le_bytes(data[at..at + 8].try_into().expect("8 bytes"))
    }))
}

pub fn read_embeddings_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let width = reader.headers()?.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = k + 2;
        if record.len() != width {
            return Err(Error::RaggedCsv { line, expected: width, found: record.len() });
        }
        for field in record.iter() {
            let v: f64 = field.trim().parse().map_err(|_| Error::BadNumber {
                line,
                value: field.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(Matrix::from_row_slice(rows, width, &values))
}

/// Values are written in shortest round-trip form, so reading back is exact.
pub fn write_embeddings_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("dim_{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Label files

/// Labels read from disk with the raw-value → dense-index mapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelColumn {
    pub labels: Labels,
    pub mapping: BTreeMap<u64, usize>,
}

pub fn read_labels(path: &Path) -> Result<LabelColumn> {
    parse_labels(&fs::read_to_string(path)?)
}

pub fn parse_labels(text: &str) -> Result<LabelColumn> {
    let mut raw = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let field = line.trim();
        if k == 0 && field.eq_ignore_ascii_case("label") {
            continue;
        }
        if field.is_empty() {
            continue;
        }
        let v: u64 = field.parse().map_err(|_| Error::NonIntegerLabel {
            line: k + 1,
            value: field.to_string(),
        })?;
        raw.push(v);
    }
    let mapping: BTreeMap<u64, usize> = {
        let mut distinct: Vec<u64> = raw.clone();
        distinct.sort_unstable();
        distinct.dedup();
        distinct.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
    };
    let values = raw.iter().map(|v| mapping[v]).collect();
    Ok(LabelColumn {
        labels: Labels::with_classes(values, mapping.len())?,
        mapping,
    })
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::from("label\n");
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

/// Generative recipe for the synthetic benchmark.
///
/// Binary `y` and `s` are drawn (with `corr(y, s) = rho`). A latent vector
/// holds a y-signal block, an s-signal block and a Gaussian noise block; it
/// passes through `depth` rounds of random rotation followed by elementwise
/// `tanh`, then a final random rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    /// Standard deviation of the additive Gaussian noise on every latent.
    pub noise: f64,
    pub depth: usize,
    pub rho: f64,
    /// Class offset along the signal direction of each block.
    pub signal: f64,
    /// Offset of the y block when it should differ from `signal`.
    pub y_signal: Option<f64>,
    /// Width of each signal block.
    pub block: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 6000,
            d: 64,
            noise: 1.0,
            depth: 1,
            rho: 0.0,
            signal: 2.5,
            y_signal: None,
            block: 8,
            seed: 0,
        }
    }
}

fn random_rotation<R: Rng>(d: usize, rng: &mut R) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = QR::new(g);
    let (q, r) = qr.unpack();
    // Sign fix makes the draw Haar-distributed.
    let mut q = q;
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

fn unit_vector<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..len).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<EmbeddingDataset> {
    if spec.n < 100 || spec.d < 8 {
        return Err(Error::InvalidArgument(format!(
            "synthetic data needs n >= 100 and d >= 8, got n={} d={}",
            spec.n, spec.d
        )));
    }
    if !(-1.0..=1.0).contains(&spec.rho) || spec.noise < 0.0 || spec.block == 0 || 2 * spec.block > spec.d {
        return Err(Error::InvalidArgument(
            "rho must be in [-1, 1], noise >= 0 and 2·block <= d".into(),
        ));
    }
    let mut rng = rng_from(derive_seed(spec.seed, 0x5157));
    let (n, d, b) = (spec.n, spec.d, spec.block);
    let u_y = unit_vector(b, &mut rng);
    let u_s = unit_vector(b, &mut rng);
    let rotations: Vec<Matrix> = (0..=spec.depth).map(|_| random_rotation(d, &mut rng)).collect();

    let mut y = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let keep = 0.5 * (1.0 + spec.rho);
    let mut latent = Matrix::zeros(n, d);
    for i in 0..n {
        let yi = usize::from(rng.random_bool(0.5));
        let si = if rng.random_bool(keep) { yi } else { 1 - yi };
        y.push(yi);
        s.push(si);
        let y_signal = spec.y_signal.unwrap_or(spec.signal);
        let sy = if yi == 1 { y_signal } else { -y_signal };
        let ss = if si == 1 { spec.signal } else { -spec.signal };
        for j in 0..d {
            let eps: f64 = StandardNormal.sample(&mut rng);
            let base = if j < b {
                sy * u_y[j]
            } else if j < 2 * b {
                ss * u_s[j - b]
            } else {
                0.0
            };
            latent[(i, j)] = base + spec.noise * eps;
        }
    }
    let mut h = latent;
    for rot in &rotations[..spec.depth] {
        h = (&h * rot).map(f64::tanh);
    }
    let x = &h * &rotations[spec.depth];
    EmbeddingDataset::new(x, Labels::with_classes(s, 2)?, Some(Labels::with_classes(y, 2)?))
}
