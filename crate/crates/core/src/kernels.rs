//! Kernel matrices and the finite feature maps that stand in for them.
//!
//! Continuous representations use an RBF kernel `exp(-‖x−y‖²/(2σ²))`,
//! approximated by paired cos/sin random Fourier features so that
//! `φ(x)ᵀφ(x) = 1` exactly. Categorical labels use one-hot features, whose
//! linear kernel is the delta kernel `1{a = b}`.

use rand::seq::index::sample;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{all_finite, center_columns, max_asymmetry, sym_eigen_desc};
use crate::rng::rng_from;
use crate::{Error, Matrix, Result};

/// Rows above this count are subsampled before taking the median distance.
pub const MEDIAN_SUBSAMPLE_CAP: usize = 2000;
/// Relative eigenvalue cut-off used by [`factor_kernel`] by default.
pub const FACTOR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    LinearOneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    MedianHeuristic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
    pub rff_dim: usize,
    pub seed: u64,
}

impl KernelSpec {
    pub fn rbf(bandwidth: Bandwidth, rff_dim: usize, seed: u64) -> Result<Self> {
        if let Bandwidth::Fixed(s) = bandwidth {
            check_sigma(s)?;
        }
        check_rff_dim(rff_dim)?;
        Ok(Self {
            family: KernelFamily::Rbf,
            bandwidth,
            rff_dim,
            seed,
        })
    }

    pub fn one_hot() -> Self {
        Self {
            family: KernelFamily::LinearOneHot,
            bandwidth: Bandwidth::Fixed(1.0),
            rff_dim: 2,
            seed: 0,
        }
    }

    /// σ for `rows`, running the median heuristic when requested.
    pub fn resolve_bandwidth(&self, rows: &Matrix) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Fixed(s) => Ok(s),
            Bandwidth::MedianHeuristic => median_heuristic(rows),
        }
    }

    /// Builds the random feature map for continuous `rows`.
    pub fn rff_map(&self, rows: &Matrix) -> Result<RffMap> {
        if self.family != KernelFamily::Rbf {
            return Err(Error::Config(
                "one-hot kernels apply to categorical labels only".into(),
            ));
        }
        let sigma = self.resolve_bandwidth(rows)?;
        RffMap::new(rows.ncols(), self.rff_dim, sigma, self.seed)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("bandwidth must be positive, got {sigma}")))
    }
}

fn check_rff_dim(dim: usize) -> Result<()> {
    if dim >= 2 && dim % 2 == 0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "random feature dimension must be even and >= 2, got {dim}"
        )))
    }
}

/// Which random variable a feature matrix encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variable {
    /// The original representation X.
    Original,
    /// The current encoder input X^i.
    Current,
    /// The encoder output Z^i.
    Encoded,
    /// Task labels Y.
    Target,
    /// Protected attribute S.
    Attribute,
    Unspecified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Matrix,
    pub centered: bool,
    pub provenance: Variable,
}

impl FeatureMatrix {
    pub fn new(data: Matrix, provenance: Variable) -> Self {
        Self {
            data,
            centered: false,
            provenance,
        }
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn with_provenance(mut self, provenance: Variable) -> Self {
        self.provenance = provenance;
        self
    }

    /// Centered copy (no-op clone when already centered).
    pub fn centered(&self) -> FeatureMatrix {
        if self.centered {
            self.clone()
        } else {
            center_features(self)
        }
    }
}

/// Median of pairwise Euclidean distances between rows.
pub fn median_heuristic(rows: &Matrix) -> Result<f64> {
    median_heuristic_with(rows, MEDIAN_SUBSAMPLE_CAP, 0)
}

/// [`median_heuristic`] with an explicit subsample cap and seed.
pub fn median_heuristic_with(rows: &Matrix, cap: usize, seed: u64) -> Result<f64> {
    let n = rows.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    if !all_finite(rows) {
        return Err(Error::NonFiniteInput("median heuristic"));
    }
    let picked: Vec<usize> = if n > cap.max(2) {
        let mut idx = sample(&mut rng_from(seed), n, cap.max(2)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let d = rows.ncols();
    let packed: Vec<f64> = picked
        .iter()
        .flat_map(|&i| (0..d).map(move |j| rows[(i, j)]))
        .collect();
    let m = picked.len();
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        let a = &packed[i * d..(i + 1) * d];
        for j in (i + 1)..m {
            let b = &packed[j * d..(j + 1) * d];
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            dists.push(sq.sqrt());
        }
    }
    let median = median_of(&mut dists);
    if median > 0.0 {
        return Ok(median);
    }
    // A zero median with some non-zero distance: fall back to the median of
    // the non-zero distances so duplicated rows do not collapse σ.
    dists.retain(|&v| v > 0.0);
    if dists.is_empty() {
        Err(Error::AllRowsIdentical)
    } else {
        Ok(median_of(&mut dists))
    }
}

fn median_of(values: &mut [f64]) -> f64 {
    let len = values.len();
    let mid = len / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Exact RBF Gram matrix `K_ij = exp(−‖x_i − x_j‖² / (2σ²))`.
pub fn rbf_kernel_matrix(rows: &Matrix, sigma: f64) -> Result<Matrix> {
    check_sigma(sigma)?;
    if !all_finite(rows) {
        return Err(Error::NonFiniteInput("rbf kernel matrix"));
    }
    let n = rows.nrows();
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let mut k = Matrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let sq = (rows.row(i) - rows.row(j)).norm_squared();
            let v = (-gamma * sq).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Paired cos/sin random Fourier feature map for the RBF kernel.
///
/// `φ(x) = √(2/D)·[cos(Ωᵀx); sin(Ωᵀx)]` with Ω of shape `d × D/2` drawn from
/// `N(0, σ⁻²)`, so that `E[φ(x)ᵀφ(y)] = exp(−‖x−y‖²/(2σ²))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    frequencies: Matrix,
    sigma: f64,
    seed: u64,
}

impl RffMap {
    pub fn new(input_dim: usize, feature_dim: usize, sigma: f64, seed: u64) -> Result<Self> {
        check_sigma(sigma)?;
        check_rff_dim(feature_dim)?;
        let half = feature_dim / 2;
        let mut rng = rng_from(seed);
        let mut frequencies = Matrix::zeros(input_dim, half);
        // Column by column so a map is a prefix-stable function of its seed.
        for j in 0..half {
            for i in 0..input_dim {
                let w: f64 = StandardNormal.sample(&mut rng);
                frequencies[(i, j)] = w / sigma;
            }
        }
        Ok(Self {
            frequencies,
            sigma,
            seed,
        })
    }

    /// Rebuilds a map from stored frequencies (used when loading a saved chain).
    pub fn from_frequencies(frequencies: Matrix, sigma: f64, seed: u64) -> Result<Self> {
        check_sigma(sigma)?;
        if frequencies.ncols() == 0 || !all_finite(&frequencies) {
            return Err(Error::InvalidArgument("invalid frequency matrix".into()));
        }
        Ok(Self {
            frequencies,
            sigma,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.frequencies.ncols()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frequencies(&self) -> &Matrix {
        &self.frequencies
    }

    /// `√(2/D)`, the per-feature scale.
    pub fn scale(&self) -> f64 {
        (2.0 / self.feature_dim() as f64).sqrt()
    }

    /// Projections `Ωᵀx` for every row (n × D/2).
    pub fn project(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: rows.ncols(),
            });
        }
        Ok(rows * &self.frequencies)
    }

    /// Feature matrix from precomputed projections.
    pub fn features_from_projection(&self, proj: &Matrix) -> Matrix {
        let (n, half) = proj.shape();
        let scale = self.scale();
        let mut out = Matrix::zeros(n, 2 * half);
        for j in 0..half {
            for i in 0..n {
                let (s, c) = proj[(i, j)].sin_cos();
                out[(i, j)] = scale * c;
                out[(i, j + half)] = scale * s;
            }
        }
        out
    }

    pub fn features(&self, rows: &Matrix) -> Result<FeatureMatrix> {
        let proj = self.project(rows)?;
        Ok(FeatureMatrix::new(
            self.features_from_projection(&proj),
            Variable::Unspecified,
        ))
    }
}

/// Applies `map` to `rows`; the result is uncentered.
pub fn rff_features(map: &RffMap, rows: &Matrix) -> Result<FeatureMatrix> {
    map.features(rows)
}

/// n×c indicator matrix for categorical labels.
pub fn one_hot_features(labels: &[usize], num_classes: usize) -> Result<FeatureMatrix> {
    let mut data = Matrix::zeros(labels.len(), num_classes);
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: num_classes,
            });
        }
        data[(i, l)] = 1.0;
    }
    Ok(FeatureMatrix::new(data, Variable::Unspecified))
}

/// Subtracts column means (`H·F` without forming `H`).
pub fn center_features(features: &FeatureMatrix) -> FeatureMatrix {
    FeatureMatrix {
        data: center_columns(&features.data),
        centered: true,
        provenance: features.provenance,
    }
}

/// Truncated eigen-factorisation `K ≈ J·Jᵀ`, keeping eigenvalues above
/// `tol·λ_max`.
pub fn factor_kernel(k: &Matrix, tol: f64) -> Result<Matrix> {
    if !k.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "kernel must be square, got {}x{}",
            k.nrows(),
            k.ncols()
        )));
    }
    let scale = k.amax().max(f64::MIN_POSITIVE);
    let asym = max_asymmetry(k);
    if asym > 1e-8 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let (values, vectors) = sym_eigen_desc(&crate::linalg::symmetrize(k))?;
    let n = k.nrows();
    let lambda_max = values.first().copied().unwrap_or(0.0);
    if lambda_max <= 0.0 {
        if let Some(&worst) = values.last() {
            if worst < 0.0 {
                return Err(Error::NotPsd(worst));
            }
        }
        return Ok(Matrix::zeros(n, 0));
    }
    if let Some(&worst) = values.last() {
        if worst < -tol * lambda_max {
            return Err(Error::NotPsd(worst));
        }
    }
    let rank = values.iter().take_while(|&&v| v > tol * lambda_max).count();
    let mut j = vectors.columns(0, rank).into_owned();
    for (c, mut col) in j.column_iter_mut().enumerate() {
        col *= values[c].sqrt();
    }
    Ok(j)
}
