//! The trainable erasure function: a small SiLU perceptron whose output rows
//! are scaled to unit norm, trained full-batch to minimise
//!
//! ```text
//! HSIC(Z, S) − τ_x·HSIC(Z, X) − τ_xi·HSIC(Z, X^i) − τ_y·HSIC(Z, Y)
//! ```
//!
//! with every HSIC term computed from random features of Z and centered
//! features of the other variable. Gradients are analytic, through the
//! random-feature map and the row normalisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Labels;
use crate::hsic::hsic_feature;
use crate::kernels::{median_heuristic_with, Bandwidth, FeatureMatrix, KernelSpec, RffMap, Variable, MEDIAN_SUBSAMPLE_CAP};
use crate::linalg::{all_finite, at_b, normalize_rows, ZERO_ROW_NORM};
use crate::optim::{clip_global_norm, AdamW, AdamWSettings};
use crate::rng::{derive_seed, rng_from, stream};
use crate::{Error, Matrix, Result};

/// Upper bound on hidden layers (the deepest ablation uses four).
pub const MAX_HIDDEN_LAYERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    /// Linear hidden layers; only useful for checking normalisation algebra.
    Identity,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Silu => a / (1.0 + (-a).exp()),
            Activation::Identity => a,
        }
    }

    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-a).exp());
                s * (1.0 + a * (1.0 - s))
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer `h·W + b`, with W stored `in × out` and b as a `1 × out` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: Matrix::zeros(1, output),
        }
    }

    /// PyTorch-style init: every entry uniform in `±1/√fan_in`.
    pub fn uniform<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut draw = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..=bound));
        let weight = draw(input, output);
        let bias = draw(1, output);
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, h: &Matrix) -> Matrix {
        let mut out = h * &self.weight;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[(0, j)]);
        }
        out
    }
}

/// Weights of the erasure encoder. The activation is applied after every
/// layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl EncoderParams {
    pub fn init(
        input_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
        output_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if hidden_layers == 0 || hidden_layers > MAX_HIDDEN_LAYERS {
            return Err(Error::Config(format!(
                "hidden_layers must be in 1..={MAX_HIDDEN_LAYERS}, got {hidden_layers}"
            )));
        }
        if input_dim == 0 || hidden_width == 0 || output_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let mut rng = rng_from(seed);
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        let mut fan_in = input_dim;
        for _ in 0..hidden_layers {
            layers.push(Dense::uniform(fan_in, hidden_width, &mut rng));
            fan_in = hidden_width;
        }
        layers.push(Dense::uniform(fan_in, output_dim, &mut rng));
        Ok(Self { layers, activation })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors().iter().map(|t| t.shape()).collect()
    }

    /// Weights and biases in layer order: `W1, b1, W2, b2, …`.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| all_finite(t))
    }

    /// Pre-normalisation output.
    pub fn forward_raw(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_cached(x)?.raw)
    }

    fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for layer in &self.layers[..last] {
            let a = layer.forward(&h);
            inputs.push(h);
            h = a.map(|v| self.activation.apply(v));
            pre.push(a);
        }
        let raw = self.layers[last].forward(&h);
        inputs.push(h);
        let (output, norms) = normalize_rows(&raw);
        Ok(ForwardCache {
            inputs,
            pre,
            raw,
            norms,
            output,
        })
    }

    /// Backpropagates `d_output` (gradient w.r.t. the normalised output).
    fn backward(&self, cache: &ForwardCache, d_output: &Matrix) -> EncoderParams {
        let mut grads = self.zeros_like();
        // Through z = o/‖o‖: do = (g − z(zᵀg))/‖o‖.
        let mut delta = Matrix::zeros(d_output.nrows(), d_output.ncols());
        for i in 0..d_output.nrows() {
            let norm = cache.norms[i];
            if norm < ZERO_ROW_NORM {
                continue;
            }
            let z = cache.output.row(i);
            let g = d_output.row(i);
            let proj = z.dot(&g);
            delta.set_row(i, &((g - z * proj) / norm));
        }
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            grads.layers[l].weight = at_b(input, &delta);
            grads.layers[l].bias =
                Matrix::from_iterator(1, delta.ncols(), delta.column_iter().map(|c| c.sum()));
            if l == 0 {
                break;
            }
            let mut upstream = &delta * self.layers[l].weight.transpose();
            let a = &cache.pre[l - 1];
            upstream.zip_apply(a, |u, av| *u *= self.activation.derivative(av));
            delta = upstream;
        }
        grads
    }
}

struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    raw: Matrix,
    norms: Vec<f64>,
    output: Matrix,
}

/// Forward pass with sample-wise normalisation: every output row has norm 1,
/// or is zero when the raw output row vanishes.
pub fn encoder_forward(params: &EncoderParams, x: &Matrix) -> Result<Matrix> {
    Ok(params.forward_cached(x)?.output)
}

/// Weights of the auxiliary dependence terms. Also used for the eigenvalue
/// problem, where the `tau_xi` coefficient is conventionally 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub tau_xi: f64,
    pub tau_x: f64,
    pub tau_y: f64,
}

impl LossWeights {
    pub fn encoder_supervised() -> Self {
        Self { tau_xi: 0.05, tau_x: 0.02, tau_y: 4.0 }
    }

    pub fn encoder_unsupervised() -> Self {
        Self { tau_xi: 0.1, tau_x: 0.05, tau_y: 0.0 }
    }

    pub fn evp_supervised() -> Self {
        Self { tau_xi: 1.0, tau_x: 0.2, tau_y: 3.0 }
    }

    pub fn evp_unsupervised() -> Self {
        Self { tau_xi: 1.0, tau_x: 0.5, tau_y: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("tau_xi", self.tau_xi), ("tau_x", self.tau_x), ("tau_y", self.tau_y)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Centered features of every variable the encoder loss compares Z against.
#[derive(Debug, Clone)]
pub struct LossTargets {
    pub attribute: FeatureMatrix,
    pub original: FeatureMatrix,
    pub current: FeatureMatrix,
    pub target: Option<FeatureMatrix>,
}

impl LossTargets {
    pub fn new(
        attribute: &FeatureMatrix,
        original: &FeatureMatrix,
        current: &FeatureMatrix,
        target: Option<&FeatureMatrix>,
    ) -> Result<Self> {
        let n = attribute.nrows();
        for f in [original, current].into_iter().chain(target) {
            if f.nrows() != n {
                return Err(Error::SampleCountMismatch { left: n, right: f.nrows() });
            }
        }
        Ok(Self {
            attribute: attribute.centered().with_provenance(Variable::Attribute),
            original: original.centered().with_provenance(Variable::Original),
            current: current.centered().with_provenance(Variable::Current),
            target: target.map(|t| t.centered().with_provenance(Variable::Target)),
        })
    }

    pub fn n(&self) -> usize {
        self.attribute.nrows()
    }

    fn terms(&self, w: &LossWeights) -> Result<Vec<(f64, &FeatureMatrix)>> {
        let mut terms = vec![(1.0, &self.attribute)];
        if w.tau_x != 0.0 {
            terms.push((-w.tau_x, &self.original));
        }
        if w.tau_xi != 0.0 {
            terms.push((-w.tau_xi, &self.current));
        }
        if w.tau_y != 0.0 {
            let t = self.target.as_ref().ok_or(Error::MissingTargetFeatures)?;
            terms.push((-w.tau_y, t));
        }
        Ok(terms)
    }

    /// Loss value and its gradient w.r.t. the (uncentered) features of Z.
    fn value_and_feature_grad(&self, phi_z: &Matrix, w: &LossWeights) -> Result<(f64, Matrix)> {
        let n = self.n();
        if phi_z.nrows() != n {
            return Err(Error::SampleCountMismatch { left: n, right: phi_z.nrows() });
        }
        let nf = n as f64;
        let mut value = 0.0;
        let mut grad = Matrix::zeros(n, phi_z.ncols());
        for (coef, f) in self.terms(w)? {
            // Centered F makes FᵀΦ equal to Fᵀ(HΦ).
            let cross = at_b(&f.data, phi_z) / nf;
            value += coef * cross.iter().map(|v| v * v).sum::<f64>();
            grad.gemm(2.0 * coef / nf, &f.data, &cross, 1.0);
        }
        Ok((value, grad))
    }
}

/// The multi-objective HSIC loss, evaluated term by term with
/// [`hsic_feature`].
pub fn erasure_loss(
    phi_z: &FeatureMatrix,
    phi_s: &FeatureMatrix,
    phi_x: &FeatureMatrix,
    phi_xi: &FeatureMatrix,
    phi_y: Option<&FeatureMatrix>,
    w: &LossWeights,
) -> Result<f64> {
    let mut value = hsic_feature(phi_z, phi_s)?.value;
    if w.tau_x != 0.0 {
        value -= w.tau_x * hsic_feature(phi_z, phi_x)?.value;
    }
    if w.tau_xi != 0.0 {
        value -= w.tau_xi * hsic_feature(phi_z, phi_xi)?.value;
    }
    if w.tau_y != 0.0 {
        let phi_y = phi_y.ok_or(Error::MissingTargetFeatures)?;
        value -= w.tau_y * hsic_feature(phi_z, phi_y)?.value;
    }
    Ok(value)
}

/// Loss and analytic gradient w.r.t. every encoder parameter. The random
/// feature map of Z and all target features are held constant.
pub fn loss_gradient(
    params: &EncoderParams,
    input: &Matrix,
    z_map: &RffMap,
    targets: &LossTargets,
    w: &LossWeights,
) -> Result<(f64, EncoderParams)> {
    if input.nrows() != targets.n() {
        return Err(Error::SampleCountMismatch { left: input.nrows(), right: targets.n() });
    }
    let cache = params.forward_cached(input)?;
    let proj = z_map.project(&cache.output)?;
    let phi = z_map.features_from_projection(&proj);
    let (value, d_phi) = targets.value_and_feature_grad(&phi, w)?;

    // φ = s·[cos u, sin u]  ⇒  ∂/∂u = s·(−sin u ∘ g_cos + cos u ∘ g_sin).
    let half = proj.ncols();
    let scale = z_map.scale();
    let d_proj = Matrix::from_fn(proj.nrows(), half, |i, j| {
        let (s, c) = proj[(i, j)].sin_cos();
        scale * (c * d_phi[(i, j + half)] - s * d_phi[(i, j)])
    });
    let d_output = d_proj * z_map.frequencies().transpose();
    Ok((value, params.backward(&cache, &d_output)))
}

/// Training settings for one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Defaults to `min(d_in, 256)`.
    pub output_dim: Option<usize>,
    pub rff_dim: usize,
    pub weights: LossWeights,
    pub clip_norm: f64,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            learning_rate: 5e-4,
            weight_decay: 1e-3,
            hidden_width: 256,
            hidden_layers: 1,
            output_dim: None,
            rff_dim: 2500,
            weights: LossWeights::encoder_supervised(),
            clip_norm: 10.0,
            activation: Activation::Silu,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn resolved_output_dim(&self, input_dim: usize) -> usize {
        self.output_dim.unwrap_or(input_dim.min(256)).max(1)
    }
}

/// Result of [`train_encoder`].
#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub params: EncoderParams,
    /// Normalised output on the training rows.
    pub z: Matrix,
    /// Loss before each optimizer step.
    pub losses: Vec<f64>,
    /// Loss after the last step.
    pub final_loss: f64,
    /// Random feature map of Z used by the loss (bandwidth frozen at init).
    pub z_map: RffMap,
}

/// Random-feature map for a continuous variable with a median-heuristic
/// bandwidth.
pub fn median_rff_map(rows: &Matrix, rff_dim: usize, seed: u64) -> Result<RffMap> {
    let sigma = median_heuristic_with(rows, MEDIAN_SUBSAMPLE_CAP, derive_seed(seed, stream::MEDIAN))?;
    KernelSpec::rbf(Bandwidth::Fixed(sigma), rff_dim, seed)?.rff_map(rows)
}

/// Full-batch AdamW training of one encoder on `current` (X^i).
pub fn train_encoder(
    current: &Matrix,
    original: &Matrix,
    target: Option<&Labels>,
    attribute: &Labels,
    config: &EncoderConfig,
) -> Result<TrainedEncoder> {
    let n = current.nrows();
    for other in [original.nrows(), attribute.len()]
        .into_iter()
        .chain(target.map(|t| t.len()))
    {
        if other != n {
            return Err(Error::SampleCountMismatch { left: n, right: other });
        }
    }
    if config.iterations == 0 {
        return Err(Error::Config("encoder iterations must be >= 1".into()));
    }
    config.weights.validate()?;
    if config.weights.tau_y > 0.0 && target.is_none() {
        return Err(Error::MissingTargetFeatures);
    }

    let seed = config.seed;
    let phi_s = attribute.one_hot()?;
    let phi_y = match target {
        Some(t) if config.weights.tau_y > 0.0 => Some(t.one_hot()?),
        _ => None,
    };
    let phi_x = median_rff_map(original, config.rff_dim, derive_seed(seed, stream::RFF_ENC_X))?
        .features(original)?;
    let phi_xi = median_rff_map(current, config.rff_dim, derive_seed(seed, stream::RFF_ENC_XI))?
        .features(current)?;
    let targets = LossTargets::new(&phi_s, &phi_x, &phi_xi, phi_y.as_ref())?;

    let mut params = EncoderParams::init(
        current.ncols(),
        config.hidden_width,
        config.hidden_layers,
        config.resolved_output_dim(current.ncols()),
        config.activation,
        derive_seed(seed, stream::ENCODER_INIT),
    )?;
    let z0 = encoder_forward(&params, current)?;
    let z_map = median_rff_map(&z0, config.rff_dim, derive_seed(seed, stream::RFF_ENC_Z))?;

    let mut opt = AdamW::new(
        AdamWSettings {
            learning_rate: config.learning_rate,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
        &params.shapes(),
    );
    let mut losses = Vec::with_capacity(config.iterations);
    for step in 0..config.iterations {
        let (value, mut grads) = loss_gradient(&params, current, &z_map, &targets, &config.weights)?;
        if !value.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        losses.push(value);
        clip_global_norm(grads.tensors_mut(), config.clip_norm);
        opt.update(params.tensors_mut(), grads.tensors());
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
    }
    let z = encoder_forward(&params, current)?;
    let final_loss = {
        let phi_z = z_map.features(&z)?;
        targets.value_and_feature_grad(&phi_z.data, &config.weights)?.0
    };
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss { step: config.iterations });
    }
    Ok(TrainedEncoder {
        params,
        z,
        losses,
        final_loss,
        z_map,
    })
}
