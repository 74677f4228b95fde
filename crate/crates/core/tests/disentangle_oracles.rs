//! Constrained eigenproblem: Rayleigh optimality against random probing and
//! an independent Jacobi eigensolver, nullspace properties against the
//! normal-equations projector, and the attribute constraint on real steps.

use kerase::data::{generate_synthetic, Labels, SynthSpec};
use kerase::disentangle::{
    build_evp_matrix, cross_covariance, nullspace_basis, project_raw, select_count, solve_disentangle, CrossCov,
    DisentangleConfig, EvpCovariances, NULLSPACE_TOL,
};
use kerase::encoder::{encoder_forward, Activation, EncoderParams, LossWeights};
use kerase::kernels::{FeatureMatrix, Variable};
use kerase::linalg::sym_eigen_desc;
use kerase::rng::rng_from;
use kerase::Matrix;

mod common;
use common::{gaussian, jacobi_eigenvalues};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn cov(m: Matrix) -> CrossCov {
    CrossCov { matrix: m, left: Variable::Unspecified, right: Variable::Encoded }
}

struct EvpInstance {
    c_sz: Matrix,
    covs: EvpCovariances,
    weights: LossWeights,
}

fn instance(seed: u64, d: usize, attribute_rank: usize) -> EvpInstance {
    EvpInstance {
        c_sz: gaussian(attribute_rank, d, seed),
        covs: EvpCovariances {
            current: cov(gaussian(5, d, seed + 1)),
            original: cov(gaussian(7, d, seed + 2)),
            target: Some(cov(gaussian(3, d, seed + 3))),
        },
        weights: LossWeights::evp_supervised(),
    }
}

#[test]
fn top_eigenvalue_dominates_random_rayleigh_quotients() {
    let inst = instance(1, 14, 2);
    let q = nullspace_basis(&inst.c_sz, NULLSPACE_TOL).unwrap();
    assert_eq!(q.ncols(), 12);
    let a = build_evp_matrix(&inst.covs, &q, &inst.weights).unwrap();
    let (eig, vecs) = sym_eigen_desc(&a).unwrap();
    let top = eig[0];
    let mut rng = rng_from(99);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..100_000 {
        let v: nalgebra::DVector<f64> = nalgebra::DVector::from_fn(12, |_, _| StandardNormal.sample(&mut rng));
        let v = &v / v.norm();
        let r = (v.transpose() * &a * &v)[(0, 0)];
        assert!(r <= top * (1.0 + 1e-12), "quotient {r} exceeds top eigenvalue {top}");
        best = best.max(r);
    }
    assert!(best > 0.0);
    // The returned eigenvector attains the maximum.
    let v0 = vecs.column(0);
    let attained = (v0.transpose() * &a * v0)[(0, 0)];
    assert!((attained - top).abs() <= 1e-12 * top);
}

#[test]
fn eigenvalues_agree_with_jacobi_oracle() {
    for seed in 0..10u64 {
        let k_rank = 1 + (seed as usize % 4);
        let inst = instance(100 + seed * 5, 8 + k_rank + (seed as usize % 5), k_rank);
        let q = nullspace_basis(&inst.c_sz, NULLSPACE_TOL).unwrap();
        assert!(q.ncols() <= 12);
        let a = build_evp_matrix(&inst.covs, &q, &inst.weights).unwrap();
        let (lib, _) = sym_eigen_desc(&a).unwrap();
        let oracle = jacobi_eigenvalues(&a);
        let scale = oracle[0].abs();
        assert!((lib[0] - oracle[0]).abs() <= 1e-9 * scale, "top {} vs {}", lib[0], oracle[0]);
        for (l, o) in lib.iter().zip(&oracle) {
            assert!((l - o).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn constrained_maximum_matches_quotients_in_the_nullspace() {
    // Unconstrained operator M = Σ τ·CᵀC restricted to directions orthogonal
    // to the attribute rows: the EVP top eigenvalue is its constrained max.
    let inst = instance(7, 10, 3);
    let q = nullspace_basis(&inst.c_sz, NULLSPACE_TOL).unwrap();
    let a = build_evp_matrix(&inst.covs, &q, &inst.weights).unwrap();
    let top = sym_eigen_desc(&a).unwrap().0[0];
    let w = inst.weights;
    let m = inst.covs.current.matrix.transpose() * &inst.covs.current.matrix * w.tau_xi
        + inst.covs.original.matrix.transpose() * &inst.covs.original.matrix * w.tau_x
        + inst.covs.target.as_ref().unwrap().matrix.transpose() * &inst.covs.target.as_ref().unwrap().matrix * w.tau_y;
    let c = &inst.c_sz;
    let proj = Matrix::identity(10, 10) - c.transpose() * (c * c.transpose()).try_inverse().unwrap() * c;
    let mut rng = rng_from(3);
    for _ in 0..20_000 {
        let u: nalgebra::DVector<f64> = nalgebra::DVector::from_fn(10, |_, _| StandardNormal.sample(&mut rng));
        let v = &proj * u;
        let r = (v.transpose() * &m * &v)[(0, 0)] / v.norm_squared();
        assert!(r <= top * (1.0 + 1e-10));
    }
}

#[test]
fn nullspace_projector_matches_normal_equations() {
    for seed in 0..20u64 {
        let rows = 1 + (seed as usize % 3);
        let cols = rows + 2 + (seed as usize % 6);
        let c = gaussian(rows, cols, 40 + seed);
        let q = nullspace_basis(&c, NULLSPACE_TOL).unwrap();
        assert_eq!(q.ncols(), cols - rows);
        let gram = q.transpose() * &q;
        assert!((gram - Matrix::identity(cols - rows, cols - rows)).amax() <= 1e-10);
        assert!((&c * &q).amax() <= 1e-12 * c.amax());
        let oracle = Matrix::identity(cols, cols) - c.transpose() * (&c * c.transpose()).try_inverse().unwrap() * &c;
        assert!((&q * q.transpose() - oracle).amax() <= 1e-10);
    }
}

#[test]
fn rank_deficient_attribute_covariance() {
    // Two identical rows: rank one, so the nullspace has q − 1 columns.
    let row = gaussian(1, 6, 8);
    let c = Matrix::from_fn(2, 6, |_, j| row[(0, j)]);
    let q = nullspace_basis(&c, NULLSPACE_TOL).unwrap();
    assert_eq!(q.ncols(), 5);
    let zero = Matrix::zeros(2, 4);
    assert_eq!(nullspace_basis(&zero, NULLSPACE_TOL).unwrap().ncols(), 4);
}

#[test]
fn selection_examples() {
    assert_eq!(select_count(&[1.0, 0.5, 1e-5], 1e-4), 2);
    assert_eq!(select_count(&[2.0, 2e-4, 1.9e-4], 1e-4), 2);
    assert_eq!(select_count(&[0.0, 0.0], 1e-4), 1);
    assert_eq!(select_count(&[3.0], 0.5), 1);
}

fn step_on_synthetic(seed: u64, with_target: bool) {
    let data = generate_synthetic(&SynthSpec { n: 400, d: 16, block: 4, seed, ..Default::default() }).unwrap();
    let params = EncoderParams::init(16, 32, 1, 16, Activation::Silu, seed).unwrap();
    let z = encoder_forward(&params, &data.x).unwrap();
    let xi = data.x.map(|v| v * 0.5);
    let config = DisentangleConfig {
        rff_dim: 128,
        weights: if with_target { LossWeights::evp_supervised() } else { LossWeights::evp_unsupervised() },
        seed,
        ..Default::default()
    };
    let target = if with_target { data.y.as_ref() } else { None };
    let result = solve_disentangle(&z, &data.x, &xi, target, &data.s, &config).unwrap();
    let k = result.q.ncols();
    assert_eq!(k, 128 - 1, "binary attribute removes one direction");
    let qtq = (result.q.transpose() * &result.q - Matrix::identity(k, k)).amax();
    assert!(qtq <= 1e-10, "QᵀQ error {qtq:e}");
    assert!(result.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    assert!(result.eigenvalues.iter().all(|&l| l >= -1e-12 * result.eigenvalues[0]));
    let raw = project_raw(&result);
    let s_feat: FeatureMatrix = data.s.one_hot().unwrap();
    let c = cross_covariance(&s_feat, &FeatureMatrix::new(raw.clone(), Variable::Current)).unwrap();
    assert!(c.matrix.amax() <= 1e-8, "attribute cross-covariance {}", c.matrix.amax());
    assert!(c.frobenius_norm() <= 1e-6 * result.attribute_cov_norm);
    assert!(result.selected() >= 1 && result.selected() <= k);
}

#[test]
fn projected_representation_is_linearly_decorrelated_from_attribute() {
    step_on_synthetic(1, true);
    step_on_synthetic(2, false);
}

#[test]
fn multiclass_attribute_removes_classes_minus_one_directions() {
    let x = gaussian(300, 5, 4);
    let s = Labels::new((0..300).map(|i| i % 4).collect());
    let config = DisentangleConfig { rff_dim: 64, weights: LossWeights::evp_unsupervised(), ..Default::default() };
    let result = solve_disentangle(&x, &x, &x, None, &s, &config).unwrap();
    assert_eq!(result.q.ncols(), 64 - 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn evp_matrix_is_symmetric_psd(seed in 0u64..10_000, rank in 1usize..4, extra in 1usize..8) {
        let inst = instance(seed, rank + extra, rank);
        let q = nullspace_basis(&inst.c_sz, NULLSPACE_TOL).unwrap();
        let a = build_evp_matrix(&inst.covs, &q, &inst.weights).unwrap();
        prop_assert_eq!(&a, &a.transpose());
        let (eig, _) = sym_eigen_desc(&a).unwrap();
        prop_assert!(eig.iter().all(|&l| l >= -1e-10 * eig[0].abs().max(1.0)));
    }

    #[test]
    fn selection_keeps_a_prefix_above_threshold(mut eig in prop::collection::vec(0.0f64..10.0, 1..30), thr in 1e-6f64..0.9) {
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let m = select_count(&eig, thr);
        prop_assert!(m >= 1 && m <= eig.len());
        if eig[0] > 0.0 {
            for (i, &l) in eig.iter().enumerate() {
                if i < m && i > 0 { prop_assert!(l / eig[0] >= thr); }
                if i >= m { prop_assert!(l / eig[0] < thr); }
            }
        }
    }
}
