//! Probe accuracy on problems with known answers.

use kerase::data::Labels;
use kerase::probes::{
    fit_kernel_probe, fit_mlp_probe, probe_max, probe_max_jobs, random_chance, KernelProbeSpec, LabeledData,
    MlpSpec, ProbeSpec,
};
use kerase::rng::rng_from;
use kerase::Matrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

struct Problem {
    x: Matrix,
    labels: Labels,
}

fn blobs(n: usize, seed: u64) -> Problem {
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut labels = Vec::with_capacity(n);
    let x = Matrix::from_fn(n, 4, |i, j| {
        let class = i % 2;
        if j == 0 {
            labels.push(class);
        }
        let centre = if class == 1 { 1.5 } else { -1.5 };
        centre + noise.sample(&mut rng)
    });
    Problem { x, labels: Labels::new(labels) }
}

fn xor(n: usize, seed: u64) -> Problem {
    let mut rng = rng_from(seed);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let mut x = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let a: bool = rng.random();
        let b: bool = rng.random();
        x[(i, 0)] = if a { 1.0 } else { -1.0 } + noise.sample(&mut rng);
        x[(i, 1)] = if b { 1.0 } else { -1.0 } + noise.sample(&mut rng);
        labels.push(usize::from(a != b));
    }
    Problem { x, labels: Labels::new(labels) }
}

fn data(p: &Problem) -> LabeledData<'_> {
    LabeledData::new(&p.x, &p.labels).unwrap()
}

fn small_mlp() -> MlpSpec {
    MlpSpec { hidden: vec![32], seeds: 1, epochs: 40, learning_rate: 1e-2, batch_size: 64 }
}

fn kernel(rff_dim: usize) -> KernelProbeSpec {
    KernelProbeSpec { rff_dim, ..KernelProbeSpec::default() }
}

#[test]
fn separable_blobs_are_learned_by_both_probes() {
    let (train, test) = (blobs(400, 1), blobs(400, 2));
    let mlp = fit_mlp_probe(data(&train), data(&test), &small_mlp(), 3).unwrap();
    assert!(mlp.test_acc >= 0.99, "mlp {mlp:?}");
    let krr = fit_kernel_probe(data(&train), data(&test), 1.0, 1.0, &kernel(512), 3).unwrap();
    assert!(krr.test_acc >= 0.99, "kernel {krr:?}");
}

#[test]
fn narrow_kernel_solves_xor_and_wide_kernel_cannot() {
    let (train, test) = (xor(600, 5), xor(600, 6));
    let narrow = fit_kernel_probe(data(&train), data(&test), 10.0, 5.0, &kernel(1024), 7).unwrap();
    assert!(narrow.test_acc >= 0.95, "gamma=10: {narrow:?}");
    let wide = fit_kernel_probe(data(&train), data(&test), 1e-4, 5.0, &kernel(1024), 7).unwrap();
    assert!(wide.test_acc <= 0.6, "gamma=1e-4: {wide:?}");
}

#[test]
fn shuffled_labels_stay_near_chance() {
    let (mut train, mut test) = (blobs(1000, 11), blobs(2000, 12));
    let mut rng = rng_from(13);
    for p in [&mut train, &mut test] {
        let mut v = p.labels.values().to_vec();
        v.shuffle(&mut rng);
        p.labels = Labels::new(v);
    }
    let specs = [ProbeSpec::Mlp(small_mlp()), ProbeSpec::Kernel(kernel(256))];
    let report = probe_max(data(&train), data(&test), &specs, 0).unwrap();
    assert!(report.max_test <= report.chance + 0.05, "{report:?}");
    assert_eq!(report.chance, random_chance(test.labels.values()).unwrap());
}

#[test]
fn chance_examples() {
    let labels: Vec<usize> = [0; 3].into_iter().chain([1; 7]).collect();
    assert!((random_chance(&labels).unwrap() - 0.7).abs() < 1e-15);
    let skewed: Vec<usize> = [0; 30].into_iter().chain([1; 20]).chain([2; 50]).collect();
    assert!((random_chance(&skewed).unwrap() - 0.5).abs() < 1e-15);
    let thirds: Vec<usize> = [0; 30].into_iter().chain([1; 35]).chain([2; 35]).collect();
    assert!((random_chance(&thirds).unwrap() - 0.35).abs() < 1e-15);
    assert!((random_chance(&[0, 1]).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn adding_probes_never_lowers_the_maximum() {
    let (train, test) = (xor(300, 21), xor(300, 22));
    let grid = |g: Vec<(f64, f64)>| ProbeSpec::Kernel(KernelProbeSpec { grid: g, rff_dim: 256, ..Default::default() });
    let one = probe_max(data(&train), data(&test), &[grid(vec![(0.5, 1.0)])], 4).unwrap();
    let more = probe_max(data(&train), data(&test), &[grid(vec![(0.5, 1.0)]), ProbeSpec::Mlp(small_mlp())], 4).unwrap();
    assert!(more.max_test >= one.max_test);
    assert!(more.max_train >= one.max_train);
    let best = more.runs.iter().map(|r| r.test_acc).fold(0.0, f64::max);
    assert_eq!(more.max_test, best);
}

#[test]
fn reports_are_deterministic_and_independent_of_jobs() {
    let (train, test) = (blobs(200, 31), blobs(200, 32));
    let specs = [ProbeSpec::Mlp(MlpSpec { seeds: 2, epochs: 5, ..small_mlp() }), ProbeSpec::Kernel(kernel(128))];
    let a = probe_max(data(&train), data(&test), &specs, 9).unwrap();
    let b = probe_max(data(&train), data(&test), &specs, 9).unwrap();
    let c = probe_max_jobs(data(&train), data(&test), &specs, 9, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.runs.len(), 2 + 7);
}

#[test]
fn invalid_probe_arguments_are_rejected() {
    let p = blobs(20, 1);
    assert!(fit_kernel_probe(data(&p), data(&p), 0.0, 1.0, &kernel(16), 0).is_err());
    assert!(probe_max(data(&p), data(&p), &[], 0).is_err());
    let short = Labels::new(vec![0, 1]);
    assert!(LabeledData::new(&p.x, &short).is_err());
}
