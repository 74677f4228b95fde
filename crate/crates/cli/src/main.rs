use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kerase::config::{execute, DataSource, RunConfig};
use kerase::data::{
    generate_synthetic, read_embeddings, read_labels, split_indices, write_embeddings, EmbeddingDataset, LabelColumn,
    Labels, SplitFractions, SynthSpec,
};
use kerase::erasure::StopReason;
use kerase::hsic::{hsic_exact, hsic_feature};
use kerase::kernels::{median_heuristic, rbf_kernel_matrix, RffMap};
use kerase::metrics::{controlled_resample, fairness_report};
use kerase::probes::{probe_max_jobs, KernelProbeSpec, LabeledData, MlpSpec, ProbeSpec, DEFAULT_GRID};
use kerase::state::{load_chain, write_json};
use kerase::{Error, Matrix};

/// Nonlinear concept erasure for embedding matrices.
#[derive(Parser)]
#[command(name = "kerase", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the HSIC between two embedding files.
    Hsic(HsicArgs),
    /// Run iterative erasure from a JSON config (or a previous manifest).
    Erase(EraseArgs),
    /// Apply a saved erasure chain to new embeddings.
    Transform(TransformArgs),
    /// Probe how well labels can be recovered from embeddings.
    Probe(ProbeArgs),
    /// Print demographic parity and Gap_rms of predictions.
    Fairness(FairnessArgs),
    /// Write a synthetic dataset with known attribute leakage.
    Synth(SynthArgs),
    /// Subsample with a controlled task/attribute skew.
    Resample(ResampleArgs),
}

#[derive(Args)]
struct HsicArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Use the exact O(n²) estimator instead of random features.
    #[arg(long, conflicts_with = "rff")]
    exact: bool,
    /// Random feature dimension.
    #[arg(long, default_value_t = 1024)]
    rff: usize,
    /// Treat `--y` as a label file and use the one-hot kernel.
    #[arg(long)]
    categorical: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EraseArgs {
    #[arg(long)]
    config: PathBuf,
    /// Probes run concurrently; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// `default` or a list of gamma:C pairs such as `10:5,1:1`.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, default_value = "probe_report.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct FairnessArgs {
    #[arg(long)]
    preds: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    s: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 6000)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Correlation between task and attribute labels.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResampleArgs {
    /// Fraction of each class drawn from its majority attribute group.
    #[arg(long)]
    split: f64,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    s: PathBuf,
    #[arg(long)]
    y: PathBuf,
    /// Samples per class; defaults to the smallest (y, s) cell.
    #[arg(long)]
    class_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// An error together with the flag whose value caused it.
struct Failure {
    flag: Option<&'static str>,
    error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self { flag: None, error }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.flag {
            Some(flag) => write!(f, "{flag}: {}", self.error),
            None => write!(f, "{}", self.error),
        }
    }
}

trait Flagged<T> {
    fn flag(self, flag: &'static str) -> Result<T, Failure>;
}

impl<T> Flagged<T> for kerase::Result<T> {
    fn flag(self, flag: &'static str) -> Result<T, Failure> {
        self.map_err(|error| Failure { flag: Some(flag), error })
    }
}

type CliResult = Result<(), Failure>;

fn invalid(flag: &'static str, message: String) -> Failure {
    Failure { flag: Some(flag), error: Error::InvalidArgument(message) }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Hsic(a) => hsic(a),
        Command::Erase(a) => erase(a),
        Command::Transform(a) => transform(a),
        Command::Probe(a) => probe(a),
        Command::Fairness(a) => fairness(a),
        Command::Synth(a) => synth(a),
        Command::Resample(a) => resample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(if failure.error.is_numerical() { 2 } else { 1 })
        }
    }
}

fn hsic(args: HsicArgs) -> CliResult {
    let x = read_embeddings(&args.x).flag("--x")?;
    let (y, y_onehot) = if args.categorical {
        let labels = read_labels(&args.y).flag("--y")?.labels;
        let onehot = labels.one_hot().flag("--y")?;
        (onehot.data.clone(), Some(onehot))
    } else {
        (read_embeddings(&args.y).flag("--y")?, None)
    };
    if x.nrows() != y.nrows() {
        return Err(invalid("--y", format!("{} rows, but --x has {}", y.nrows(), x.nrows())));
    }
    let sigma_x = median_heuristic(&x).flag("--x")?;
    let value = if args.exact {
        let k = rbf_kernel_matrix(&x, sigma_x)?;
        let l = match &y_onehot {
            Some(f) => &f.data * f.data.transpose(),
            None => rbf_kernel_matrix(&y, median_heuristic(&y).flag("--y")?)?,
        };
        hsic_exact(&k, &l)?.value
    } else {
        if args.rff == 0 || args.rff % 2 == 1 {
            return Err(invalid("--rff", format!("feature dimension must be even and positive, got {}", args.rff)));
        }
        let phi_x = RffMap::new(x.ncols(), args.rff, sigma_x, args.seed)?.features(&x)?;
        let phi_y = match y_onehot {
            Some(f) => f,
            None => {
                let sigma_y = median_heuristic(&y).flag("--y")?;
                RffMap::new(y.ncols(), args.rff, sigma_y, args.seed.wrapping_add(1))?.features(&y)?
            }
        };
        hsic_feature(&phi_x, &phi_y)?.value
    };
    println!("{value:e}");
    Ok(())
}

fn erase(args: EraseArgs) -> CliResult {
    if args.jobs == 0 {
        return Err(invalid("--jobs", "must be at least 1".into()));
    }
    let config = RunConfig::load(&args.config).flag("--config")?;
    let run = execute(&config, args.jobs)?;
    let table = run.state.table()?;
    let last = table.records.last().expect("baseline record");
    eprintln!(
        "{} steps{}; S probe {:.4} (chance {:.4}), Y {:.4}; outputs in {}",
        run.manifest.completed_steps,
        match run.manifest.stop_reason {
            Some(StopReason::Chance) => " (attribute probes at chance)",
            Some(StopReason::Collapsed) => " (representation collapsed to one column)",
            None => "",
        },
        last.s_acc_test_max,
        table.chance_s,
        last.y_acc_test,
        config.output_dir.display()
    );
    print!("{}", run.tradeoff_csv);
    Ok(())
}

fn transform(args: TransformArgs) -> CliResult {
    let chain = load_chain(&args.state).flag("--state")?;
    let x = read_embeddings(&args.x).flag("--x")?;
    let out = chain.transform(&x).flag("--x")?;
    write_embeddings(&args.out, &out).flag("--out")?;
    eprintln!("{} rows: {} -> {} columns", out.nrows(), x.ncols(), out.ncols());
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<(f64, f64)>, Failure> {
    if text == "default" {
        return Ok(DEFAULT_GRID.to_vec());
    }
    text.split(',')
        .map(|pair| {
            let parsed = pair.split_once(':').and_then(|(g, c)| Some((g.trim().parse().ok()?, c.trim().parse().ok()?)));
            parsed.ok_or_else(|| invalid("--grid", format!("expected gamma:C, got `{pair}`")))
        })
        .collect()
}

fn probe(args: ProbeArgs) -> CliResult {
    let x = read_embeddings(&args.x).flag("--x")?;
    let labels = read_labels(&args.labels).flag("--labels")?.labels;
    if x.nrows() != labels.len() {
        return Err(invalid("--labels", format!("{} labels for {} rows of --x", labels.len(), x.nrows())));
    }
    if args.jobs == 0 {
        return Err(invalid("--jobs", "must be at least 1".into()));
    }
    let specs = vec![
        ProbeSpec::Mlp(MlpSpec::default()),
        ProbeSpec::Kernel(KernelProbeSpec { grid: parse_grid(&args.grid)?, ..KernelProbeSpec::default() }),
    ];
    for spec in &specs {
        spec.validate().flag("--grid")?;
    }
    let split = split_indices(x.nrows(), SplitFractions::default(), args.seed)?;
    let part = |idx: &[usize]| (kerase::data::select_rows(&x, idx), labels.select(idx));
    let (train_x, train_y) = part(&split.train);
    let (test_x, test_y) = part(&split.test);
    let report = probe_max_jobs(
        LabeledData::new(&train_x, &train_y)?,
        LabeledData::new(&test_x, &test_y)?,
        &specs,
        args.seed,
        args.jobs,
    )?;
    let mut csv = String::from("probe,train_acc,test_acc\n");
    for run in &report.runs {
        csv.push_str(&format!("\"{}\",{},{}\n", run.kind, run.train_acc, run.test_acc));
    }
    csv.push_str(&format!("max,{},{}\n", report.max_train, report.max_test));
    csv.push_str(&format!("chance,{},{}\n", report.chance, report.chance));
    fs::write(&args.out, csv).map_err(Error::from).flag("--out")?;
    println!("max test accuracy {:.4} (train {:.4}, chance {:.4})", report.max_test, report.max_train, report.chance);
    Ok(())
}

/// Raw label value of every dense index.
fn raw_values(column: &LabelColumn) -> Vec<u64> {
    let mut raw = vec![0; column.mapping.len()];
    for (&value, &index) in &column.mapping {
        raw[index] = value;
    }
    raw
}

/// Re-indexes two label files over the union of their raw values, so the
/// same raw class gets the same index in both.
fn joint_labels(a: &LabelColumn, b: &LabelColumn) -> (Vec<usize>, Vec<usize>, usize) {
    let (ra, rb) = (raw_values(a), raw_values(b));
    let union: BTreeMap<u64, usize> = {
        let mut all: Vec<u64> = ra.iter().chain(&rb).copied().collect();
        all.sort_unstable();
        all.dedup();
        all.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
    };
    let remap = |col: &LabelColumn, raw: &[u64]| col.labels.values().iter().map(|&i| union[&raw[i]]).collect();
    (remap(a, &ra), remap(b, &rb), union.len())
}

fn fairness(args: FairnessArgs) -> CliResult {
    let preds = read_labels(&args.preds).flag("--preds")?;
    let y = read_labels(&args.y).flag("--y")?;
    let s = read_labels(&args.s).flag("--s")?;
    if preds.labels.len() != y.labels.len() {
        return Err(invalid("--y", format!("{} labels, but --preds has {}", y.labels.len(), preds.labels.len())));
    }
    if s.labels.len() != y.labels.len() {
        return Err(invalid("--s", format!("{} labels, but --y has {}", s.labels.len(), y.labels.len())));
    }
    let (p, t, classes) = joint_labels(&preds, &y);
    let report = fairness_report(&p, &t, s.labels.values(), classes).flag("--s")?;
    println!("dp {}", report.dp);
    println!("gap_rms {}", report.gap_rms);
    if report.skipped_classes > 0 {
        eprintln!("{} classes skipped in gap_rms for lack of samples in one group", report.skipped_classes);
    }
    Ok(())
}

fn write_dataset(dir: &Path, data: &EmbeddingDataset, raw: Option<(&[u64], &[u64])>) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(Error::from).flag("--out")?;
    write_embeddings(&dir.join("x.oblv"), &data.x).flag("--out")?;
    let write = |name: &str, labels: &Labels, raw: Option<&[u64]>| -> Result<(), Failure> {
        let mut text = String::from("label\n");
        for &l in labels.values() {
            let value = raw.map_or(l as u64, |r| r[l]);
            text.push_str(&format!("{value}\n"));
        }
        fs::write(dir.join(name), text).map_err(Error::from).flag("--out")
    };
    write("s.csv", &data.s, raw.map(|r| r.0))?;
    if let Some(y) = &data.y {
        write("y.csv", y, raw.map(|r| r.1))?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> CliResult {
    let spec = SynthSpec { n: args.n, d: args.d, seed: args.seed, rho: args.rho, ..SynthSpec::default() };
    let data = generate_synthetic(&spec).flag("--n/--d/--rho")?;
    write_dataset(&args.out, &data, None)?;
    let config = RunConfig {
        data: DataSource::Files {
            embeddings: "x.oblv".into(),
            attribute: "s.csv".into(),
            target: Some("y.csv".into()),
        },
        output_dir: "run".into(),
        erasure: Default::default(),
        probes: Default::default(),
    };
    write_json(&args.out.join("run.json"), &config).flag("--out")?;
    fs::write(args.out.join("recipe.txt"), kerase::config::synthetic_recipe(&spec) + "\n")
        .map_err(Error::from)
        .flag("--out")?;
    eprintln!("wrote {} samples of dimension {} to {}", data.len(), data.dim(), args.out.display());
    Ok(())
}

fn resample(args: ResampleArgs) -> CliResult {
    let x: Matrix = read_embeddings(&args.x).flag("--x")?;
    let s = read_labels(&args.s).flag("--s")?;
    let y = read_labels(&args.y).flag("--y")?;
    let data = EmbeddingDataset::new(x, s.labels.clone(), Some(y.labels.clone())).flag("--s/--y")?;
    let sub = controlled_resample(&data, args.split, args.class_size, args.seed).flag("--split")?;
    write_dataset(&args.out, &sub, Some((&raw_values(&s), &raw_values(&y))))?;
    eprintln!("kept {} of {} samples", sub.len(), data.len());
    Ok(())
}
