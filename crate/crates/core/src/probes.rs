//! Leakage and utility probes.
//!
//! Two probe families: a ReLU MLP trained with Adam on minibatches, and a
//! kernel probe that maps inputs through RBF random features
//! (`k(x, y) = exp(−γ‖x−y‖²)`) and fits an L2-regularised multinomial
//! logistic model with strength `1/C` by L-BFGS. The reported leakage is the
//! maximum accuracy over all runs.

use std::thread;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{select_rows, Labels};
use crate::encoder::Dense;
use crate::erasure::{EvalView, Evaluator, ProbeReading};
use crate::kernels::RffMap;
use crate::linalg::at_b;
use crate::optim::{AdamW, AdamWSettings};
use crate::rng::{derive_seed, rng_from};
use crate::{Error, Matrix, Result};

/// Default (γ, C) grid for the kernel probe.
pub const DEFAULT_GRID: [(f64, f64); 7] =
    [(10.0, 5.0), (10.0, 10.0), (5.0, 10.0), (5.0, 5.0), (1.0, 5.0), (1.0, 1.0), (0.5, 1.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpSpec {
    pub hidden: Vec<usize>,
    pub seeds: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self { hidden: vec![128, 128], seeds: 3, epochs: 100, learning_rate: 1e-3, batch_size: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelProbeSpec {
    pub grid: Vec<(f64, f64)>,
    pub rff_dim: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KernelProbeSpec {
    fn default() -> Self {
        Self { grid: DEFAULT_GRID.to_vec(), rff_dim: 1024, max_iter: 500, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSpec {
    Mlp(MlpSpec),
    Kernel(KernelProbeSpec),
}

impl ProbeSpec {
    /// Three MLP seeds plus the seven-point kernel grid.
    pub fn defaults() -> Vec<ProbeSpec> {
        vec![ProbeSpec::Mlp(MlpSpec::default()), ProbeSpec::Kernel(KernelProbeSpec::default())]
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ProbeSpec::Mlp(m) if m.seeds == 0 || m.epochs == 0 || m.batch_size == 0 => {
                Err(Error::Config("MLP probe needs seeds, epochs and batch_size >= 1".into()))
            }
            ProbeSpec::Kernel(k) if k.grid.is_empty() => Err(Error::Config("kernel probe grid is empty".into())),
            ProbeSpec::Kernel(k) if k.grid.iter().any(|&(g, c)| !(g > 0.0 && c > 0.0)) => {
                Err(Error::Config("kernel probe needs gamma > 0 and C > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Features and labels of one split.
#[derive(Debug, Clone, Copy)]
pub struct LabeledData<'a> {
    pub x: &'a Matrix,
    pub labels: &'a Labels,
}

impl<'a> LabeledData<'a> {
    pub fn new(x: &'a Matrix, labels: &'a Labels) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::SampleCountMismatch { left: x.nrows(), right: labels.len() });
        }
        Ok(Self { x, labels })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub kind: String,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub runs: Vec<ProbeRun>,
    pub max_test: f64,
    pub max_train: f64,
    pub chance: f64,
}

/// Majority-class frequency.
pub fn random_chance(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyLabels);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l] += 1;
    }
    Ok(*counts.iter().max().expect("non-empty") as f64 / labels.len() as f64)
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    scores
        .row_iter()
        .map(|r| {
            let mut best = 0;
            for j in 1..r.len() {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Row-wise softmax in place; returns the summed cross-entropy.
fn softmax_xent(scores: &mut Matrix, labels: &[usize]) -> f64 {
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let mut row = scores.row_mut(i);
        let max = row.max();
        row.apply(|v| *v = (*v - max).exp());
        let sum = row.sum();
        row /= sum;
        loss -= row[label].max(f64::MIN_POSITIVE).ln();
    }
    loss
}

/// ReLU multilayer perceptron classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    pub layers: Vec<Dense>,
}

impl MlpClassifier {
    pub fn fit(data: LabeledData<'_>, classes: usize, spec: &MlpSpec, seed: u64) -> Result<Self> {
        let n = data.x.nrows();
        if n == 0 {
            return Err(Error::EmptyLabels);
        }
        let classes = classes.max(1);
        let mut rng = rng_from(seed);
        let mut layers = Vec::new();
        let mut fan_in = data.x.ncols();
        for &h in &spec.hidden {
            layers.push(Dense::uniform(fan_in, h, &mut rng));
            fan_in = h;
        }
        layers.push(Dense::uniform(fan_in, classes, &mut rng));
        let mut model = Self { layers };
        let shapes: Vec<_> = model.layers.iter().flat_map(|l| [l.weight.shape(), l.bias.shape()]).collect();
        let mut opt = AdamW::new(
            AdamWSettings { learning_rate: spec.learning_rate, ..Default::default() },
            &shapes,
        );
        let mut order: Vec<usize> = (0..n).collect();
        let labels = data.labels.values();
        for epoch in 0..spec.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(spec.batch_size.max(1)) {
                let xb = select_rows(data.x, batch);
                let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let (loss, grads) = model.loss_grad(&xb, &yb);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { step: epoch });
                }
                let params = model.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect();
                opt.update(params, grads.iter().flat_map(|l| [&l.weight, &l.bias]).collect());
            }
        }
        Ok(model)
    }

    fn loss_grad(&self, x: &Matrix, labels: &[usize]) -> (f64, Vec<Dense>) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers[..last] {
            let a = layer.forward(&h).map(|v| v.max(0.0));
            inputs.push(h);
            h = a;
        }
        let mut probs = self.layers[last].forward(&h);
        inputs.push(h);
        let b = labels.len() as f64;
        let loss = softmax_xent(&mut probs, labels) / b;
        for (i, &l) in labels.iter().enumerate() {
            probs[(i, l)] -= 1.0;
        }
        let mut delta = probs / b;
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let weight = at_b(&inputs[l], &delta);
            let bias = Matrix::from_iterator(1, delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Dense { weight, bias });
            if l == 0 {
                break;
            }
            let mut up = &delta * self.layers[l].weight.transpose();
            // ReLU mask from the stored activation of layer l−1.
            up.zip_apply(&inputs[l], |u, h| {
                if h <= 0.0 {
                    *u = 0.0
                }
            });
            delta = up;
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn scores(&self, x: &Matrix) -> Matrix {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for layer in &self.layers[..last] {
            h = layer.forward(&h).map(|v| v.max(0.0));
        }
        self.layers[last].forward(&h)
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        argmax_rows(&self.scores(x))
    }
}

fn class_count(train: LabeledData<'_>, test: LabeledData<'_>) -> usize {
    train.labels.classes().max(test.labels.classes()).max(1)
}

pub fn fit_mlp_probe(train: LabeledData<'_>, test: LabeledData<'_>, spec: &MlpSpec, seed: u64) -> Result<ProbeRun> {
    let model = MlpClassifier::fit(train, class_count(train, test), spec, seed)?;
    Ok(ProbeRun {
        kind: format!("mlp(seed={seed})"),
        train_acc: accuracy(&model.predict(train.x), train.labels.values()),
        test_acc: accuracy(&model.predict(test.x), test.labels.values()),
    })
}

/// Multinomial logistic regression on fixed features, `W` is D×c plus an
/// unpenalised bias row.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSoftmax {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl LinearSoftmax {
    pub fn scores(&self, features: &Matrix) -> Matrix {
        let mut s = features * &self.weight;
        for (j, mut col) in s.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.bias[(0, j)]);
        }
        s
    }

    /// Minimises `mean xent + (λ/2)‖W‖²` to a loss-change tolerance.
    pub fn fit(features: &Matrix, labels: &[usize], classes: usize, lambda: f64, max_iter: usize, tol: f64) -> Result<Self> {
        let (n, d) = features.shape();
        let c = classes.max(1);
        let nf = n.max(1) as f64;
        let unpack = |theta: &[f64]| LinearSoftmax {
            weight: Matrix::from_column_slice(d, c, &theta[..d * c]),
            bias: Matrix::from_row_slice(1, c, &theta[d * c..]),
        };
        let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
            let model = unpack(theta);
            let mut p = model.scores(features);
            let mut loss = softmax_xent(&mut p, labels) / nf;
            for (i, &l) in labels.iter().enumerate() {
                p[(i, l)] -= 1.0;
            }
            p /= nf;
            let mut gw = at_b(features, &p);
            gw += &model.weight * lambda;
            loss += 0.5 * lambda * model.weight.norm_squared();
            let mut grad = gw.as_slice().to_vec();
            grad.extend(p.column_iter().map(|col| col.sum()));
            (loss, grad)
        };
        let theta = lbfgs(vec![0.0; d * c + c], objective, max_iter, tol)?;
        Ok(unpack(&theta))
    }
}

/// Limited-memory BFGS with Armijo backtracking. Stops when the objective
/// changes by less than `tol·max(1, |f|)` or the gradient vanishes.
fn lbfgs<F>(mut x: Vec<f64>, f: F, max_iter: usize, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    const MEMORY: usize = 10;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let (mut fx, mut g) = f(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteLoss { step: 0 });
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    for iter in 0..max_iter {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm < 1e-12 {
            break;
        }
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for (s, y) in s_hist.iter().zip(&y_hist).rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push((rho, a));
        }
        let gamma = match (s_hist.last(), y_hist.last()) {
            (Some(s), Some(y)) => dot(s, y) / dot(y, y),
            _ => 1.0 / gnorm,
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), (rho, a)) in s_hist.iter().zip(&y_hist).zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v / gnorm).collect();
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = f(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else { break };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 {
            if s_hist.len() == MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        let change = (fx - f_new).abs();
        x = x_new;
        g = g_new;
        fx = f_new;
        if !fx.is_finite() {
            return Err(Error::NonFiniteLoss { step: iter });
        }
        if change < tol * fx.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// RBF-kernel probe: random features with `σ = 1/√(2γ)` and a logistic
/// model with regularisation strength `1/C` (penalty `‖W‖²/(2Cn)`).
pub fn fit_kernel_probe(
    train: LabeledData<'_>,
    test: LabeledData<'_>,
    gamma: f64,
    c: f64,
    spec: &KernelProbeSpec,
    seed: u64,
) -> Result<ProbeRun> {
    if !(gamma > 0.0 && c > 0.0) {
        return Err(Error::InvalidArgument(format!("kernel probe needs gamma > 0 and C > 0, got ({gamma}, {c})")));
    }
    let sigma = 1.0 / (2.0 * gamma).sqrt();
    let map = RffMap::new(train.x.ncols(), spec.rff_dim, sigma, seed)?;
    let phi_train = map.features(train.x)?.data;
    let phi_test = map.features(test.x)?.data;
    let n = train.x.nrows().max(1) as f64;
    let model = LinearSoftmax::fit(
        &phi_train,
        train.labels.values(),
        class_count(train, test),
        1.0 / (c * n),
        spec.max_iter,
        spec.tol,
    )?;
    Ok(ProbeRun {
        kind: format!("kernel(gamma={gamma},C={c})"),
        train_acc: accuracy(&argmax_rows(&model.scores(&phi_train)), train.labels.values()),
        test_acc: accuracy(&argmax_rows(&model.scores(&phi_test)), test.labels.values()),
    })
}

enum Task<'s> {
    Mlp(&'s MlpSpec, u64),
    Kernel(&'s KernelProbeSpec, f64, f64, u64),
}

impl Task<'_> {
    fn run(&self, train: LabeledData<'_>, test: LabeledData<'_>) -> Result<ProbeRun> {
        match *self {
            Task::Mlp(spec, seed) => fit_mlp_probe(train, test, spec, seed),
            Task::Kernel(spec, g, c, seed) => fit_kernel_probe(train, test, g, c, spec, seed),
        }
    }
}

/// Runs every probe sequentially and reports the maximum accuracies.
pub fn probe_max(train: LabeledData<'_>, test: LabeledData<'_>, specs: &[ProbeSpec], seed: u64) -> Result<ProbeReport> {
    probe_max_jobs(train, test, specs, seed, 1)
}

/// [`probe_max`] with up to `jobs` probes running concurrently. Results are
/// merged in spec order, so the report does not depend on `jobs`.
pub fn probe_max_jobs(
    train: LabeledData<'_>,
    test: LabeledData<'_>,
    specs: &[ProbeSpec],
    seed: u64,
    jobs: usize,
) -> Result<ProbeReport> {
    if specs.is_empty() {
        return Err(Error::Config("at least one probe spec is required".into()));
    }
    let mut tasks = Vec::new();
    for (k, spec) in specs.iter().enumerate() {
        spec.validate()?;
        let base = derive_seed(seed, k as u64);
        match spec {
            ProbeSpec::Mlp(m) => {
                tasks.extend((0..m.seeds).map(|r| Task::Mlp(m, derive_seed(base, r as u64))));
            }
            ProbeSpec::Kernel(kp) => tasks.extend(
                kp.grid.iter().enumerate().map(|(r, &(g, c))| Task::Kernel(kp, g, c, derive_seed(base, r as u64))),
            ),
        }
    }
    let jobs = jobs.max(1);
    let runs: Vec<Result<ProbeRun>> = if jobs == 1 {
        tasks.iter().map(|t| t.run(train, test)).collect()
    } else {
        let mut out = Vec::with_capacity(tasks.len());
        for chunk in tasks.chunks(jobs) {
            thread::scope(|scope| {
                let handles: Vec<_> = chunk.iter().map(|t| scope.spawn(move || t.run(train, test))).collect();
                for h in handles {
                    out.push(h.join().expect("probe thread panicked"));
                }
            });
        }
        out
    };
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ProbeReport {
        max_test: runs.iter().map(|r| r.test_acc).fold(0.0, f64::max),
        max_train: runs.iter().map(|r| r.train_acc).fold(0.0, f64::max),
        chance: random_chance(test.labels.values())?,
        runs,
    })
}

/// Probe settings of an erasure run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    /// Adversaries for the attribute; the maximum accuracy is reported.
    pub s_probes: Vec<ProbeSpec>,
    /// Task classifier (a single seeded run).
    pub y_probe: MlpSpec,
    pub seed: u64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { s_probes: ProbeSpec::defaults(), y_probe: MlpSpec { seeds: 1, ..MlpSpec::default() }, seed: 0 }
    }
}

/// Standard evaluator: max-over-probes attribute leakage and an MLP task
/// classifier, both scored on the test split.
#[derive(Debug, Clone)]
pub struct ProbeEvaluator {
    pub settings: ProbeSettings,
    pub jobs: usize,
}

impl ProbeEvaluator {
    pub fn new(settings: ProbeSettings) -> Self {
        Self { settings, jobs: 1 }
    }

    /// Attribute probe report for one step.
    pub fn leakage(&self, view: &EvalView<'_>) -> Result<ProbeReport> {
        let seed = derive_seed(self.settings.seed, view.step as u64);
        probe_max_jobs(
            LabeledData::new(&view.train.x, &view.train.s)?,
            LabeledData::new(&view.test.x, &view.test.s)?,
            &self.settings.s_probes,
            seed,
            self.jobs,
        )
    }

    /// Task classifier trained on the train split.
    pub fn task_classifier(&self, view: &EvalView<'_>) -> Result<Option<MlpClassifier>> {
        let (Some(y_train), Some(y_test)) = (&view.train.y, &view.test.y) else {
            return Ok(None);
        };
        let classes = y_train.classes().max(y_test.classes());
        let seed = derive_seed(self.settings.seed, 0x7A5C_0000 + view.step as u64);
        MlpClassifier::fit(LabeledData::new(&view.train.x, y_train)?, classes, &self.settings.y_probe, seed).map(Some)
    }
}

impl Evaluator for ProbeEvaluator {
    fn evaluate(&mut self, view: &EvalView<'_>) -> Result<ProbeReading> {
        let report = self.leakage(view)?;
        let y_acc_test = match (self.task_classifier(view)?, &view.test.y) {
            (Some(model), Some(y)) => accuracy(&model.predict(&view.test.x), y.values()),
            _ => f64::NAN,
        };
        Ok(ProbeReading { y_acc_test, s_acc_test_max: report.max_test, s_acc_train_max: report.max_train })
    }
}
