//! The iterative erasure driver.
//!
//! Each step trains an encoder on the current representation, solves the
//! constrained eigenproblem on its output and projects to obtain the next
//! representation. After every step an injected [`Evaluator`] probes the
//! held-out split and a [`TradeoffRecord`] is appended.

use serde::{Deserialize, Serialize};

use crate::data::{split_indices, EmbeddingDataset, Labels, Split, SplitFractions};
use crate::disentangle::{constraint_residual, solve_disentangle, DisentangleConfig, NULLSPACE_TOL};
use crate::encoder::{encoder_forward, median_rff_map, train_encoder, Activation, EncoderConfig, EncoderParams, LossWeights};
use crate::hsic::hsic_feature;
use crate::kernels::RffMap;
use crate::linalg::normalize_rows;
use crate::metrics::{assemble_tradeoff, TradeoffRecord, TradeoffTable};
use crate::rng::{derive_seed, stream};
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Supervised,
    Unsupervised,
}

/// Encoder hyperparameters shared by every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSettings {
    pub first_iterations: usize,
    pub later_iterations: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub output_dim: Option<usize>,
    pub clip_norm: f64,
    pub activation: Activation,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let base = EncoderConfig::default();
        Self {
            first_iterations: 30,
            later_iterations: 25,
            learning_rate: base.learning_rate,
            weight_decay: base.weight_decay,
            hidden_width: base.hidden_width,
            hidden_layers: base.hidden_layers,
            output_dim: base.output_dim,
            clip_norm: base.clip_norm,
            activation: base.activation,
        }
    }
}

/// Random feature dimensions for the first and later steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RffSchedule {
    pub encoder_first: usize,
    pub encoder_later: usize,
    pub evp_first: usize,
    pub evp_later: usize,
}

impl Default for RffSchedule {
    fn default() -> Self {
        Self { encoder_first: 2500, encoder_later: 1500, evp_first: 1500, evp_later: 1500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErasureConfig {
    pub steps: usize,
    pub mode: Mode,
    pub encoder: EncoderSettings,
    /// Weights of the encoder loss; mode defaults when absent.
    pub encoder_weights: Option<LossWeights>,
    /// Weights of the eigenvalue problem; mode defaults when absent.
    pub evp_weights: Option<LossWeights>,
    pub eig_threshold: f64,
    pub rff: RffSchedule,
    /// Feature dimension of the per-step HSIC(X^i, S) reading.
    pub hsic_rff_dim: usize,
    pub seed: u64,
    /// Stop once S-probe accuracy ≤ chance + delta.
    pub stop_delta: Option<f64>,
    pub split: SplitFractions,
}

impl Default for ErasureConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            mode: Mode::Supervised,
            encoder: EncoderSettings::default(),
            encoder_weights: None,
            evp_weights: None,
            eig_threshold: 1e-4,
            rff: RffSchedule::default(),
            hsic_rff_dim: 1024,
            seed: 0,
            stop_delta: Some(0.01),
            split: SplitFractions::default(),
        }
    }
}

impl ErasureConfig {
    pub fn resolved_encoder_weights(&self) -> LossWeights {
        self.encoder_weights.unwrap_or(match self.mode {
            Mode::Supervised => LossWeights::encoder_supervised(),
            Mode::Unsupervised => LossWeights::encoder_unsupervised(),
        })
    }

    pub fn resolved_evp_weights(&self) -> LossWeights {
        self.evp_weights.unwrap_or(match self.mode {
            Mode::Supervised => LossWeights::evp_supervised(),
            Mode::Unsupervised => LossWeights::evp_unsupervised(),
        })
    }

    /// Config with the mode defaults filled in, as written to manifests.
    pub fn resolved(&self) -> ErasureConfig {
        ErasureConfig {
            encoder_weights: Some(self.resolved_encoder_weights()),
            evp_weights: Some(self.resolved_evp_weights()),
            ..self.clone()
        }
    }

    pub fn validate(&self, has_targets: bool) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.mode == Mode::Supervised && !has_targets {
            return Err(Error::Config("supervised mode requires task labels".into()));
        }
        if !(self.eig_threshold > 0.0 && self.eig_threshold < 1.0) {
            return Err(Error::Config(format!("eig_threshold must be in (0, 1), got {}", self.eig_threshold)));
        }
        if self.encoder.first_iterations == 0 || self.encoder.later_iterations == 0 {
            return Err(Error::Config("encoder iterations must be >= 1".into()));
        }
        let enc = self.resolved_encoder_weights();
        let evp = self.resolved_evp_weights();
        enc.validate()?;
        evp.validate()?;
        if self.mode == Mode::Unsupervised && (enc.tau_y != 0.0 || evp.tau_y != 0.0) {
            return Err(Error::Config("unsupervised mode requires tau_y = 0".into()));
        }
        if let Some(d) = self.stop_delta {
            if !(d.is_finite() && d >= 0.0) {
                return Err(Error::Config("stop_delta must be non-negative".into()));
            }
        }
        Ok(())
    }

    fn encoder_config(&self, step: usize, seed: u64) -> EncoderConfig {
        let e = &self.encoder;
        EncoderConfig {
            iterations: if step == 1 { e.first_iterations } else { e.later_iterations },
            learning_rate: e.learning_rate,
            weight_decay: e.weight_decay,
            hidden_width: e.hidden_width,
            hidden_layers: e.hidden_layers,
            output_dim: e.output_dim,
            rff_dim: if step == 1 { self.rff.encoder_first } else { self.rff.encoder_later },
            weights: self.resolved_encoder_weights(),
            clip_norm: e.clip_norm,
            activation: e.activation,
            seed,
        }
    }

    fn disentangle_config(&self, step: usize, seed: u64) -> DisentangleConfig {
        DisentangleConfig {
            rff_dim: if step == 1 { self.rff.evp_first } else { self.rff.evp_later },
            weights: self.resolved_evp_weights(),
            eig_threshold: self.eig_threshold,
            nullspace_tol: NULLSPACE_TOL,
            seed,
        }
    }
}

/// What an evaluator sees after each step: the three splits in the current
/// representation.
#[derive(Debug, Clone, Copy)]
pub struct EvalView<'a> {
    pub step: usize,
    pub train: &'a EmbeddingDataset,
    pub val: &'a EmbeddingDataset,
    pub test: &'a EmbeddingDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReading {
    /// `NaN` when no task labels exist.
    pub y_acc_test: f64,
    pub s_acc_test_max: f64,
    pub s_acc_train_max: f64,
}

pub trait Evaluator {
    fn evaluate(&mut self, view: &EvalView<'_>) -> Result<ProbeReading>;
}

impl<F> Evaluator for F
where
    F: FnMut(&EvalView<'_>) -> Result<ProbeReading>,
{
    fn evaluate(&mut self, view: &EvalView<'_>) -> Result<ProbeReading> {
        self(view)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Nullspace dimension.
    pub k: usize,
    /// Selected eigenvectors (next representation width).
    pub m: usize,
    pub eigenvalues_top: Vec<f64>,
    /// `max |QᵀQ − I|`.
    pub qtq_error: f64,
    /// `‖Ĉ_{s,x^{i+1}}‖_F / ‖Ĉ_{sz}‖_F` on the raw projection.
    pub constraint_residual: f64,
    pub attribute_cov_norm: f64,
    pub encoder_losses: Vec<f64>,
    pub encoder_final_loss: f64,
}

/// Everything needed to replay one step on new inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct StepArtifact {
    pub encoder: EncoderParams,
    pub z_map: RffMap,
    /// `Q·V`, mapping Z's random features to the next representation.
    pub projection: Matrix,
}

impl StepArtifact {
    pub fn output_dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn apply_raw(&self, x: &Matrix) -> Result<Matrix> {
        let z = encoder_forward(&self.encoder, x)?;
        Ok(&self.z_map.features(&z)?.data * &self.projection)
    }

    /// Encoder, random features, projection and row normalisation.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(normalize_rows(&self.apply_raw(x)?).0)
    }
}

/// The learned transform: steps applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ErasureChain {
    pub input_dim: usize,
    pub steps: Vec<StepArtifact>,
}

impl ErasureChain {
    pub fn output_dim(&self) -> usize {
        self.steps.last().map_or(self.input_dim, StepArtifact::output_dim)
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if self.steps.is_empty() {
            return Err(Error::EmptyState);
        }
        if x.ncols() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "expected {} columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        let mut cur = x.clone();
        for step in &self.steps {
            cur = step.apply(&cur)?;
        }
        Ok(cur)
    }
}

/// Why a run ended before its step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Attribute probes reached chance + `stop_delta`.
    Chance,
    /// The representation collapsed to one column. After row normalisation
    /// it only carries a sign, which no further step can change.
    Collapsed,
}

#[derive(Debug, Clone)]
pub struct ErasureState {
    pub split: Split,
    /// Original training representation X.
    pub original: Matrix,
    /// Current training representation X^{i+1}.
    pub current: Matrix,
    /// Last encoder output Z^i on the training split.
    pub encoded: Option<Matrix>,
    pub chain: ErasureChain,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Record for the untouched representation (step 0).
    pub baseline: TradeoffRecord,
    /// One record per completed step.
    pub history: Vec<TradeoffRecord>,
    pub stopped_early: bool,
    pub stop_reason: Option<StopReason>,
}

impl ErasureState {
    pub fn completed_steps(&self) -> usize {
        self.chain.steps.len()
    }

    /// Replays the learned chain on unseen rows.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        self.chain.transform(x)
    }

    /// Baseline followed by every step.
    pub fn table(&self) -> Result<TradeoffTable> {
        let mut records = vec![self.baseline];
        records.extend_from_slice(&self.history);
        assemble_tradeoff(&records)
    }
}

fn hsic_reading(x: &Matrix, s: &Labels, rff_dim: usize, seed: u64) -> Result<f64> {
    let map = median_rff_map(x, rff_dim, derive_seed(seed, stream::HSIC_READING))?;
    Ok(hsic_feature(&map.features(x)?, &s.one_hot()?)?.value)
}

fn qtq_error(q: &Matrix) -> f64 {
    let g = q.transpose() * q;
    let k = g.nrows();
    (g - Matrix::identity(k, k)).amax()
}

/// Runs the alternating encoder / disentanglement procedure.
pub fn run_erasure(
    dataset: &EmbeddingDataset,
    config: &ErasureConfig,
    evaluator: &mut dyn Evaluator,
) -> Result<ErasureState> {
    config.validate(dataset.y.is_some())?;
    let split = split_indices(dataset.len(), config.split, derive_seed(config.seed, stream::SPLIT))?;
    let mut train = dataset.select(&split.train);
    let mut val = dataset.select(&split.val);
    let mut test = dataset.select(&split.test);
    let original = train.x.clone();
    let chance_s = test.s.majority_fraction();
    let chance_y = test.y.as_ref().map_or(f64::NAN, Labels::majority_fraction);

    let record = |step: usize, reading: ProbeReading, rep: &Matrix, s: &Labels| -> Result<TradeoffRecord> {
        Ok(TradeoffRecord {
            step,
            y_acc_test: reading.y_acc_test,
            s_acc_test_max: reading.s_acc_test_max,
            s_acc_train_max: reading.s_acc_train_max,
            chance_y,
            chance_s,
            hsic_s: hsic_reading(rep, s, config.hsic_rff_dim, config.seed)?,
            dim: rep.ncols(),
        })
    };
    let stop = |reading: &ProbeReading| config.stop_delta.is_some_and(|d| reading.s_acc_test_max <= chance_s + d);

    let reading = evaluator.evaluate(&EvalView { step: 0, train: &train, val: &val, test: &test })?;
    let baseline = record(0, reading, &train.x, &train.s).map_err(|e| e.at_step(0))?;
    let mut state = ErasureState {
        split,
        original: original.clone(),
        current: train.x.clone(),
        encoded: None,
        chain: ErasureChain { input_dim: dataset.dim(), steps: Vec::new() },
        diagnostics: Vec::new(),
        baseline,
        history: Vec::new(),
        stopped_early: false,
        stop_reason: None,
    };
    if stop(&reading) {
        state.stopped_early = true;
        state.stop_reason = Some(StopReason::Chance);
        return Ok(state);
    }
    let target = match config.mode {
        Mode::Supervised => train.y.clone(),
        Mode::Unsupervised => None,
    };

    for step in 1..=config.steps {
        if step > 1 && train.x.ncols() <= 1 {
            state.stopped_early = true;
            state.stop_reason = Some(StopReason::Collapsed);
            break;
        }
        let step_seed = derive_seed(config.seed, 1000 + step as u64);
        let run_step = || -> Result<(StepArtifact, StepDiagnostics, Matrix)> {
            let trained = train_encoder(
                &train.x,
                &original,
                target.as_ref(),
                &train.s,
                &config.encoder_config(step, step_seed),
            )?;
            let result = solve_disentangle(
                &trained.z,
                &original,
                &train.x,
                target.as_ref(),
                &train.s,
                &config.disentangle_config(step, step_seed),
            )?;
            let artifact = StepArtifact {
                encoder: trained.params.clone(),
                z_map: result.z_map.clone(),
                projection: result.projection(),
            };
            let raw = &result.features.data * &artifact.projection;
            let diagnostics = StepDiagnostics {
                step,
                k: result.q.ncols(),
                m: result.selected(),
                eigenvalues_top: result.eigenvalues.iter().take(16).copied().collect(),
                qtq_error: qtq_error(&result.q),
                constraint_residual: constraint_residual(&raw, &train.s, result.attribute_cov_norm)?,
                attribute_cov_norm: result.attribute_cov_norm,
                encoder_losses: trained.losses.clone(),
                encoder_final_loss: trained.final_loss,
            };
            Ok((artifact, diagnostics, trained.z))
        };
        let (artifact, diagnostics, z) = run_step().map_err(|e| e.at_step(step))?;
        let advance = |d: &mut EmbeddingDataset| -> Result<()> {
            d.x = artifact.apply(&d.x)?;
            Ok(())
        };
        advance(&mut train).map_err(|e| e.at_step(step))?;
        advance(&mut val).map_err(|e| e.at_step(step))?;
        advance(&mut test).map_err(|e| e.at_step(step))?;

        let reading = evaluator
            .evaluate(&EvalView { step, train: &train, val: &val, test: &test })
            .map_err(|e| e.at_step(step))?;
        let rec = record(step, reading, &train.x, &train.s).map_err(|e| e.at_step(step))?;
        state.chain.steps.push(artifact);
        state.diagnostics.push(diagnostics);
        state.history.push(rec);
        state.encoded = Some(z);
        state.current = train.x.clone();
        if stop(&reading) {
            state.stopped_early = step < config.steps;
            state.stop_reason = Some(StopReason::Chance);
            break;
        }
    }
    Ok(state)
}
