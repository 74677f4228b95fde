//! Browser bindings: random-feature accuracy, HSIC under noise and a toy
//! erasure run, each returning plain numbers or CSV for the static page.

use kerase::data::{generate_synthetic, SynthSpec};
use kerase::erasure::{run_erasure, ErasureConfig, Mode, RffSchedule};
use kerase::hsic::{hsic_feature, lim};
use kerase::kernels::{median_heuristic, rbf_kernel_matrix, RffMap};
use kerase::probes::{KernelProbeSpec, MlpSpec, ProbeEvaluator, ProbeSettings, ProbeSpec};
use kerase::rng::rng_from;
use kerase::Matrix;
use rand_distr::{Distribution, StandardNormal};
use wasm_bindgen::prelude::*;

fn to_js(e: kerase::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = rng_from(seed);
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

/// Mean absolute error of the random-feature kernel against the exact RBF
/// kernel on 60 random points, averaged over `seeds` draws, for each width.
#[wasm_bindgen]
pub fn rff_error(dims: Vec<u32>, seeds: u32) -> Result<Vec<f64>, JsError> {
    let x = gaussian(60, 3, 7);
    let sigma = median_heuristic(&x).map_err(to_js)?;
    let exact = rbf_kernel_matrix(&x, sigma).map_err(to_js)?;
    dims.iter()
        .map(|&d| {
            let mut total = 0.0;
            for seed in 0..seeds.max(1) {
                let map = RffMap::new(3, (d as usize).max(2) & !1, sigma, u64::from(seed)).map_err(to_js)?;
                let phi = map.features(&x).map_err(to_js)?.data;
                total += (&phi * phi.transpose() - &exact).abs().mean();
            }
            Ok(total / f64::from(seeds.max(1)))
        })
        .collect()
}

fn standardized(m: &Matrix) -> Matrix {
    let n = m.nrows() as f64;
    let mean = m.mean();
    let sd = (m.map(|v| (v - mean).powi(2)).sum() / n).sqrt().max(f64::MIN_POSITIVE);
    m.map(|v| (v - mean) / sd)
}

/// For `y = x² + noise·ε`, returns `[hsic, lim]` for each noise level, with
/// LIM on standardised variables (a squared correlation). LIM stays near
/// zero throughout because the dependence is nonlinear.
#[wasm_bindgen]
pub fn hsic_under_noise(noise_levels: Vec<f64>, n: u32, seed: u64) -> Result<Vec<f64>, JsError> {
    let n = (n as usize).max(10);
    let x = gaussian(n, 1, seed);
    let eps = gaussian(n, 1, seed + 1);
    let map_x = RffMap::new(1, 512, median_heuristic(&x).map_err(to_js)?, seed + 2).map_err(to_js)?;
    let phi_x = map_x.features(&x).map_err(to_js)?;
    let mut out = Vec::with_capacity(2 * noise_levels.len());
    for &noise in &noise_levels {
        let y = Matrix::from_fn(n, 1, |i, _| x[(i, 0)] * x[(i, 0)] + noise * eps[(i, 0)]);
        let map_y = RffMap::new(1, 512, median_heuristic(&y).map_err(to_js)?, seed + 3).map_err(to_js)?;
        out.push(hsic_feature(&phi_x, &map_y.features(&y).map_err(to_js)?).map_err(to_js)?.value);
        out.push(lim(&standardized(&x), &standardized(&y)).map_err(to_js)?);
    }
    Ok(out)
}

/// Erases the attribute from a small synthetic dataset and returns the
/// trade-off table as CSV.
#[wasm_bindgen]
pub fn toy_erasure(seed: u64, steps: u32, supervised: bool) -> Result<String, JsError> {
    let data = generate_synthetic(&SynthSpec { n: 600, d: 16, block: 4, seed, ..SynthSpec::default() }).map_err(to_js)?;
    let mut config = ErasureConfig {
        steps: steps.clamp(1, 6) as usize,
        mode: if supervised { Mode::Supervised } else { Mode::Unsupervised },
        rff: RffSchedule { encoder_first: 128, encoder_later: 128, evp_first: 128, evp_later: 128 },
        hsic_rff_dim: 128,
        seed,
        ..ErasureConfig::default()
    };
    config.encoder.hidden_width = 64;
    let mut evaluator = ProbeEvaluator::new(ProbeSettings {
        s_probes: vec![
            ProbeSpec::Kernel(KernelProbeSpec { grid: vec![(10.0, 5.0), (1.0, 1.0)], rff_dim: 128, ..Default::default() }),
            ProbeSpec::Mlp(MlpSpec { hidden: vec![32], seeds: 1, epochs: 30, learning_rate: 1e-2, batch_size: 64 }),
        ],
        y_probe: MlpSpec { hidden: vec![32], seeds: 1, epochs: 30, learning_rate: 1e-2, batch_size: 64 },
        seed,
    });
    let state = run_erasure(&data, &config, &mut evaluator).map_err(to_js)?;
    Ok(state.table().map_err(to_js)?.to_csv())
}
