//! RKHS disentanglement.
//!
//! Given encoder output Z, finds directions `v` in the random-feature space
//! of Z that maximise
//!
//! ```text
//! vᵀ Qᵀ (Ĉ_{x^i z}ᵀĈ_{x^i z} + τ_x Ĉ_{xz}ᵀĈ_{xz} + τ_y Ĉ_{yz}ᵀĈ_{yz}) Q v
//! ```
//!
//! where Q spans the nullspace of the attribute cross-covariance `Ĉ_{sz}`.
//! The next representation is `L_z·Q·V`, which by construction has zero
//! empirical cross-covariance with the attribute's one-hot features.

use crate::data::Labels;
use crate::encoder::{median_rff_map, LossWeights};
use crate::kernels::{FeatureMatrix, RffMap, Variable};
use crate::linalg::{all_finite, at_b, frobenius_sq, normalize_rows, orthogonal_complement, right_singular, sym_eigen_desc, symmetrize};
use crate::rng::{derive_seed, stream};
use crate::{Error, Matrix, Result};

/// Relative singular-value cut-off for the attribute nullspace.
pub const NULLSPACE_TOL: f64 = 1e-8;

/// `(1/n)(HΦa)ᵀ(HΦb)` with the variables it relates.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCov {
    pub matrix: Matrix,
    pub left: Variable,
    pub right: Variable,
}

impl CrossCov {
    pub fn frobenius_norm(&self) -> f64 {
        self.matrix.norm()
    }
}

pub fn cross_covariance(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<CrossCov> {
    if a.nrows() != b.nrows() {
        return Err(Error::SampleCountMismatch { left: a.nrows(), right: b.nrows() });
    }
    let n = a.nrows().max(1) as f64;
    let ac = a.centered();
    let matrix = at_b(&ac.data, &b.centered().data) / n;
    if !all_finite(&matrix) {
        return Err(Error::NonFiniteInput("cross-covariance"));
    }
    Ok(CrossCov { matrix, left: a.provenance, right: b.provenance })
}

/// Orthonormal basis (q×k) of `{v : Cv = 0}`, treating singular values
/// below `tol·σ_max` as zero.
pub fn nullspace_basis(c: &Matrix, tol: f64) -> Result<Matrix> {
    let (values, vectors) = right_singular(c)?;
    let sigma_max = values.first().copied().unwrap_or(0.0);
    let rank = if sigma_max > 0.0 {
        values.iter().take_while(|&&s| s > tol * sigma_max).count()
    } else {
        0
    };
    Ok(orthogonal_complement(&vectors.columns(0, rank).into_owned()))
}

/// Cross-covariances of Z's features with the utility variables.
#[derive(Debug, Clone)]
pub struct EvpCovariances {
    pub current: CrossCov,
    pub original: CrossCov,
    pub target: Option<CrossCov>,
}

/// `A = Qᵀ(Σ τ·ĈᵀĈ)Q`, symmetrised. The target term is skipped when absent.
pub fn build_evp_matrix(covs: &EvpCovariances, q: &Matrix, w: &LossWeights) -> Result<Matrix> {
    let k = q.ncols();
    let mut a = Matrix::zeros(k, k);
    let terms = [
        (w.tau_xi, Some(&covs.current)),
        (w.tau_x, Some(&covs.original)),
        (w.tau_y, covs.target.as_ref()),
    ];
    for (tau, cov) in terms {
        let Some(cov) = cov else { continue };
        if tau == 0.0 {
            continue;
        }
        if cov.matrix.ncols() != q.nrows() {
            return Err(Error::DimensionMismatch { expected: q.nrows(), got: cov.matrix.ncols() });
        }
        // (CQ)ᵀ(CQ) keeps every term PSD.
        let cq = &cov.matrix * q;
        a += at_b(&cq, &cq) * tau;
    }
    Ok(symmetrize(&a))
}

/// Settings for one disentanglement step.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangleConfig {
    pub rff_dim: usize,
    pub weights: LossWeights,
    pub eig_threshold: f64,
    pub nullspace_tol: f64,
    pub seed: u64,
}

impl Default for DisentangleConfig {
    fn default() -> Self {
        Self {
            rff_dim: 1500,
            weights: LossWeights::evp_supervised(),
            eig_threshold: 1e-4,
            nullspace_tol: NULLSPACE_TOL,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DisentangleResult {
    /// Orthonormal nullspace basis, D×k.
    pub q: Matrix,
    /// Selected eigenvectors, k×m.
    pub v: Matrix,
    /// All eigenvalues of the constrained problem, descending.
    pub eigenvalues: Vec<f64>,
    /// Uncentered random features of Z.
    pub features: FeatureMatrix,
    /// The feature map that produced [`Self::features`].
    pub z_map: RffMap,
    pub threshold_used: f64,
    /// `‖Ĉ_{sz}‖_F`, reference scale for the constraint residual.
    pub attribute_cov_norm: f64,
}

impl DisentangleResult {
    pub fn selected(&self) -> usize {
        self.v.ncols()
    }

    /// `Q·V`, the D×m map from Z's features to the next representation.
    pub fn projection(&self) -> Matrix {
        &self.q * &self.v
    }
}

/// Number of eigenvalues kept: all with `λ/λ_max ≥ threshold`, at least one.
pub fn select_count(eigenvalues: &[f64], threshold: f64) -> usize {
    let Some(&top) = eigenvalues.first() else { return 0 };
    if top <= 0.0 {
        return 1;
    }
    eigenvalues.iter().take_while(|&&l| l / top >= threshold).count().max(1)
}

/// Builds features, cross-covariances, the nullspace basis and the
/// constrained eigenproblem, and selects the leading eigenvectors.
pub fn solve_disentangle(
    z: &Matrix,
    original: &Matrix,
    current: &Matrix,
    target: Option<&Labels>,
    attribute: &Labels,
    config: &DisentangleConfig,
) -> Result<DisentangleResult> {
    if !(config.eig_threshold > 0.0 && config.eig_threshold < 1.0) {
        return Err(Error::Config(format!(
            "eig_threshold must be in (0, 1), got {}",
            config.eig_threshold
        )));
    }
    config.weights.validate()?;
    let n = z.nrows();
    for other in [original.nrows(), current.nrows(), attribute.len()]
        .into_iter()
        .chain(target.map(|t| t.len()))
    {
        if other != n {
            return Err(Error::SampleCountMismatch { left: n, right: other });
        }
    }
    if config.weights.tau_y > 0.0 && target.is_none() {
        return Err(Error::MissingTargetFeatures);
    }
    let seed = config.seed;
    let z_map = median_rff_map(z, config.rff_dim, derive_seed(seed, stream::RFF_EVP_Z))?;
    let phi_z = z_map.features(z)?.with_provenance(Variable::Encoded);
    let phi_x = median_rff_map(original, config.rff_dim, derive_seed(seed, stream::RFF_EVP_X))?
        .features(original)?
        .with_provenance(Variable::Original);
    let phi_xi = median_rff_map(current, config.rff_dim, derive_seed(seed, stream::RFF_EVP_XI))?
        .features(current)?
        .with_provenance(Variable::Current);
    let phi_s = attribute.one_hot()?.with_provenance(Variable::Attribute);

    let z_centered = phi_z.centered();
    let c_sz = cross_covariance(&phi_s, &z_centered)?;
    let q = nullspace_basis(&c_sz.matrix, config.nullspace_tol)?;
    if q.ncols() == 0 {
        return Err(Error::DegenerateNullspace);
    }
    let covs = EvpCovariances {
        current: cross_covariance(&phi_xi, &z_centered)?,
        original: cross_covariance(&phi_x, &z_centered)?,
        target: match target {
            Some(t) if config.weights.tau_y > 0.0 => Some(cross_covariance(
                &t.one_hot()?.with_provenance(Variable::Target),
                &z_centered,
            )?),
            _ => None,
        },
    };
    let a = build_evp_matrix(&covs, &q, &config.weights)?;
    let (eigenvalues, vectors) = sym_eigen_desc(&a)?;
    let m = select_count(&eigenvalues, config.eig_threshold);
    Ok(DisentangleResult {
        q,
        v: vectors.columns(0, m).into_owned(),
        eigenvalues,
        features: phi_z,
        z_map,
        threshold_used: config.eig_threshold,
        attribute_cov_norm: c_sz.frobenius_norm(),
    })
}

/// `L_z·Q·V` before sample-wise normalisation.
pub fn project_raw(result: &DisentangleResult) -> Matrix {
    &result.features.data * result.projection()
}

/// Next representation `L_z·Q·V`, rows scaled to unit norm.
pub fn project_next(result: &DisentangleResult) -> Matrix {
    normalize_rows(&project_raw(result)).0
}

/// Relative constraint residual `‖Ĉ_{s,raw}‖_F / ‖Ĉ_{sz}‖_F` of a raw
/// projected representation, using its coordinates as linear features.
pub fn constraint_residual(raw: &Matrix, attribute: &Labels, attribute_cov_norm: f64) -> Result<f64> {
    let c = cross_covariance(
        &attribute.one_hot()?,
        &FeatureMatrix::new(raw.clone(), Variable::Current),
    )?;
    let num = frobenius_sq(&c.matrix).sqrt();
    Ok(if attribute_cov_norm > 0.0 { num / attribute_cov_norm } else { num })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_nullspace() {
        let c = Matrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let q = nullspace_basis(&c, NULLSPACE_TOL).unwrap();
        assert_eq!(q.shape(), (3, 2));
        assert!((&c * &q).norm() < 1e-15);
        assert!(q.row(0).norm() < 1e-15);
    }

    #[test]
    fn zero_matrix_has_full_nullspace() {
        let q = nullspace_basis(&Matrix::zeros(2, 4), NULLSPACE_TOL).unwrap();
        assert_eq!(q.shape(), (4, 4));
        assert!((q.transpose() * &q - Matrix::identity(4, 4)).norm() < 1e-14);
    }

    #[test]
    fn selection_rule() {
        assert_eq!(select_count(&[1.0, 1e-3, 1e-9], 1e-4), 2);
        assert_eq!(select_count(&[1.0, 1e-9], 0.5), 1);
        assert_eq!(select_count(&[0.0, 0.0], 1e-4), 1);
    }

    #[test]
    fn zero_covariances_give_zero_matrix() {
        let zero = |p| CrossCov { matrix: Matrix::zeros(p, 3), left: Variable::Original, right: Variable::Encoded };
        let covs = EvpCovariances { current: zero(2), original: zero(4), target: Some(zero(2)) };
        let a = build_evp_matrix(&covs, &Matrix::identity(3, 3), &LossWeights::evp_supervised()).unwrap();
        assert_eq!(a, Matrix::zeros(3, 3));
    }

    #[test]
    fn cross_covariance_examples() {
        let col = FeatureMatrix::new(Matrix::from_column_slice(2, 1, &[-1.0, 1.0]), Variable::Original);
        assert!((cross_covariance(&col, &col).unwrap().matrix[(0, 0)] - 1.0).abs() < 1e-15);
        let constant = FeatureMatrix::new(Matrix::from_element(2, 3, 7.0), Variable::Attribute);
        assert!(cross_covariance(&constant, &col).unwrap().matrix.iter().all(|&v| v == 0.0));
    }
}
