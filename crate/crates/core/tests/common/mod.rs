//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use kerase::data::Labels;
use kerase::encoder::{encoder_forward, erasure_loss, loss_gradient, EncoderParams, LossTargets, LossWeights};
use kerase::kernels::{median_heuristic, rbf_kernel_matrix, FeatureMatrix, RffMap};
use kerase::rng::rng_from;
use kerase::Matrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// `(1/n²) Σᵢⱼ (HKH)ᵢⱼ (HLH)ᵢⱼ` with H built explicitly and every product
/// written as a plain loop.
pub fn brute_force_hsic(k: &Matrix, l: &Matrix) -> f64 {
    let n = k.nrows();
    let h = |i: usize, j: usize| if i == j { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 };
    let center = |m: &Matrix| {
        let mut hm = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    hm[i][j] += h(i, a) * m[(a, j)];
                }
            }
        }
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for b in 0..n {
                    out[i][j] += hm[i][b] * h(b, j);
                }
            }
        }
        out
    };
    let (kc, lc) = (center(k), center(l));
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += kc[i][j] * lc[i][j];
        }
    }
    total / (n * n) as f64
}

/// Cyclic Jacobi rotations; returns eigenvalues in descending order.
pub fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.nrows();
    let mut m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    eig
}

// Finite-difference gradient harness.

pub const STEP: f64 = 1e-5;

pub struct Problem {
    pub x: Matrix,
    pub z_map: RffMap,
    pub phi_s: FeatureMatrix,
    pub phi_x: FeatureMatrix,
    pub phi_xi: FeatureMatrix,
    pub phi_y: FeatureMatrix,
}

impl Problem {
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let x = Matrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
        let xi = x.map(|v: f64| v.tanh());
        let s = Labels::new((0..n).map(|i| usize::from(x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0)).collect());
        let y = Labels::new((0..n).map(|_| rng.random_range(0..3)).collect());
        let feat = |m: &Matrix, dim: usize, seed: u64| {
            RffMap::new(m.ncols(), dim, median_heuristic(m).unwrap(), seed).unwrap().features(m).unwrap()
        };
        Self {
            phi_s: s.one_hot().unwrap(),
            phi_x: feat(&x, 48, seed + 1),
            phi_xi: feat(&xi, 32, seed + 2),
            phi_y: y.one_hot().unwrap(),
            z_map: RffMap::new(d.min(256), 64, 0.9, seed + 3).unwrap(),
            x,
        }
    }

    /// The loss through a path independent of the analytic gradient code.
    pub fn loss(&self, params: &EncoderParams, w: &LossWeights) -> f64 {
        let z = encoder_forward(params, &self.x).unwrap();
        let phi_z = self.z_map.features(&z).unwrap();
        erasure_loss(&phi_z, &self.phi_s, &self.phi_x, &self.phi_xi, Some(&self.phi_y), w).unwrap()
    }
}

/// Largest entry-wise relative error; entries far below the gradient scale
/// are compared against a floor of 1e-6·‖g‖∞ to avoid dividing by noise.
pub fn max_relative_error(analytic: &EncoderParams, numeric: &EncoderParams) -> f64 {
    let scale = numeric.tensors().iter().map(|t| t.amax()).fold(0.0, f64::max);
    let floor = 1e-6 * scale;
    let mut worst = 0.0f64;
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
        for (&av, &nv) in a.iter().zip(n.iter()) {
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

pub fn numeric_gradient(problem: &Problem, params: &EncoderParams, w: &LossWeights) -> EncoderParams {
    let mut grads = params.zeros_like();
    let count = params.tensors().len();
    for t in 0..count {
        let (rows, cols) = params.tensors()[t].shape();
        for i in 0..rows {
            for j in 0..cols {
                let mut plus = params.clone();
                plus.tensors_mut()[t][(i, j)] += STEP;
                let mut minus = params.clone();
                minus.tensors_mut()[t][(i, j)] -= STEP;
                let g = (problem.loss(&plus, w) - problem.loss(&minus, w)) / (2.0 * STEP);
                grads.tensors_mut()[t][(i, j)] = g;
            }
        }
    }
    grads
}

pub fn check(problem: &Problem, params: &EncoderParams, w: &LossWeights) -> f64 {
    let targets = LossTargets::new(&problem.phi_s, &problem.phi_x, &problem.phi_xi, Some(&problem.phi_y)).unwrap();
    let (value, analytic) = loss_gradient(params, &problem.x, &problem.z_map, &targets, w).unwrap();
    let oracle_value = problem.loss(params, w);
    assert!((value - oracle_value).abs() <= 1e-12 * oracle_value.abs().max(1e-12));
    max_relative_error(&analytic, &numeric_gradient(problem, params, w))
}

// Fairness metric oracles.

/// DP written straight from its definition with explicit counting loops.
pub fn dp_oracle(preds: &[usize], s: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..classes {
        let mut rate = [0.0; 2];
        for g in 0..2 {
            let members: Vec<usize> = (0..s.len()).filter(|&i| s[i] == g).collect();
            let hits = members.iter().filter(|&&i| preds[i] == c).count();
            rate[g] = hits as f64 / members.len() as f64;
        }
        total += (rate[0] - rate[1]).abs();
    }
    total / classes as f64
}

pub fn gap_oracle(preds: &[usize], y: &[usize], s: &[usize], classes: usize) -> Option<f64> {
    let mut sq = Vec::new();
    for c in 0..classes {
        let mut tpr = [None; 2];
        for g in 0..2 {
            let members: Vec<usize> = (0..s.len()).filter(|&i| s[i] == g && y[i] == c).collect();
            if !members.is_empty() {
                let hits = members.iter().filter(|&&i| preds[i] == c).count();
                tpr[g] = Some(hits as f64 / members.len() as f64);
            }
        }
        if let [Some(a), Some(b)] = tpr {
            sq.push((a - b) * (a - b));
        }
    }
    (!sq.is_empty()).then(|| (sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// Every base-`classes` vector of length `n`.
pub fn all_vectors(n: usize, classes: usize) -> Vec<Vec<usize>> {
    let total = classes.pow(n as u32);
    (0..total)
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let d = code % classes;
                    code /= classes;
                    d
                })
                .collect()
        })
        .collect()
}

/// Mean absolute error of the random-feature kernel over all pairs,
/// averaged over seeds.
pub fn approximation_error(x: &Matrix, sigma: f64, dim: usize, seeds: u64) -> f64 {
    let k = rbf_kernel_matrix(x, sigma).unwrap();
    let mut total = 0.0;
    for seed in 0..seeds {
        let map = RffMap::new(x.ncols(), dim, sigma, 1000 + seed).unwrap();
        let phi = map.features(x).unwrap().data;
        total += (&phi * phi.transpose() - &k).abs().mean();
    }
    total / seeds as f64
}

/// One populated class with TPR 0.9 in group 0 and 0.4 in group 1; the
/// second class never occurs as a true label and is skipped.
pub fn tpr_gap_case() -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let y = vec![0; 20];
    let s: Vec<usize> = (0..20).map(|i| i / 10).collect();
    let preds: Vec<usize> = (0..20).map(|i| usize::from(if i < 10 { i >= 9 } else { i - 10 >= 4 })).collect();
    (preds, y, s)
}
