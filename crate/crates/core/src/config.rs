//! Run configuration (strict JSON) and the end-to-end `erase` driver that
//! writes `tradeoff.csv`, `state/` and `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, read_embeddings, read_labels, EmbeddingDataset, SynthSpec};
use crate::erasure::{run_erasure, ErasureConfig, ErasureState, StepDiagnostics, StopReason};
use crate::probes::{ProbeEvaluator, ProbeSettings};
use crate::state::{save_chain, write_json};
use crate::{Error, Result};

pub const MANIFEST_FORMAT: &str = "kerase-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Where the embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Files {
        embeddings: PathBuf,
        attribute: PathBuf,
        #[serde(default)]
        target: Option<PathBuf>,
    },
    Synthetic(SynthSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub erasure: ErasureConfig,
    #[serde(default)]
    pub probes: ProbeSettings,
}

/// Everything needed to rerun an `erase` invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub package_version: String,
    /// Resolved configuration with absolute paths and mode defaults filled in.
    pub config: RunConfig,
    pub attribute_mapping: Option<BTreeMap<u64, usize>>,
    pub target_mapping: Option<BTreeMap<u64, usize>>,
    pub synthetic_recipe: Option<String>,
    pub completed_steps: usize,
    pub stopped_early: bool,
    pub stop_reason: Option<StopReason>,
    pub diagnostics: Vec<StepDiagnostics>,
}

#[derive(Deserialize)]
struct FormatProbe {
    format: Option<String>,
}

impl RunConfig {
    /// Parses a config document. A manifest written by a previous run is
    /// accepted too, in which case its embedded config is used.
    pub fn from_json(text: &str) -> Result<Self> {
        let probe: FormatProbe = serde_json::from_str(text).unwrap_or(FormatProbe { format: None });
        if probe.format.as_deref() == Some(MANIFEST_FORMAT) {
            let manifest: Manifest = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            return Ok(manifest.config);
        }
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(parent)?;
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let DataSource::Files { embeddings, attribute, target } = &mut self.data {
            fix(embeddings);
            fix(attribute);
            if let Some(t) = target {
                fix(t);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        for spec in &self.probes.s_probes {
            spec.validate()?;
        }
        if self.probes.s_probes.is_empty() {
            return Err(Error::Config("at least one attribute probe is required".into()));
        }
        Ok(())
    }
}

/// A dataset plus the label remappings applied while loading it.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: EmbeddingDataset,
    pub attribute_mapping: Option<BTreeMap<u64, usize>>,
    pub target_mapping: Option<BTreeMap<u64, usize>>,
    pub synthetic_recipe: Option<String>,
}

/// Human-readable generative recipe stored in manifests of synthetic runs.
pub fn synthetic_recipe(spec: &SynthSpec) -> String {
    format!(
        "y ~ Bernoulli(0.5); s = y with prob (1+rho)/2 else 1-y, rho={rho}; \
         latent = [y-block (width {b}, offset ±{ysig}), s-block (width {b}, offset ±{sig}), noise], \
         all coordinates + N(0, {noise}^2); {depth} x (random rotation, tanh), then a random rotation; \
         d={d}, n={n}, seed={seed}",
        rho = spec.rho,
        b = spec.block,
        sig = spec.signal,
        ysig = spec.y_signal.unwrap_or(spec.signal),
        noise = spec.noise,
        depth = spec.depth,
        d = spec.d,
        n = spec.n,
        seed = spec.seed,
    )
}

pub fn load_data(source: &DataSource) -> Result<LoadedData> {
    match source {
        DataSource::Synthetic(spec) => Ok(LoadedData {
            dataset: generate_synthetic(spec)?,
            attribute_mapping: None,
            target_mapping: None,
            synthetic_recipe: Some(synthetic_recipe(spec)),
        }),
        DataSource::Files { embeddings, attribute, target } => {
            let x = read_embeddings(embeddings)?;
            let s = read_labels(attribute)?;
            let y = target.as_deref().map(read_labels).transpose()?;
            let dataset = EmbeddingDataset::new(x, s.labels, y.as_ref().map(|c| c.labels.clone()))?;
            Ok(LoadedData {
                dataset,
                attribute_mapping: Some(s.mapping),
                target_mapping: y.map(|c| c.mapping),
                synthetic_recipe: None,
            })
        }
    }
}

/// Result of [`execute`].
#[derive(Debug)]
pub struct RunOutput {
    pub state: ErasureState,
    pub manifest: Manifest,
    pub tradeoff_csv: String,
}

/// Runs a configured erasure and writes its outputs under `output_dir`.
pub fn execute(config: &RunConfig, jobs: usize) -> Result<RunOutput> {
    config.validate()?;
    let loaded = load_data(&config.data)?;
    let mut evaluator = ProbeEvaluator { settings: config.probes.clone(), jobs: jobs.max(1) };
    let state = run_erasure(&loaded.dataset, &config.erasure, &mut evaluator)?;
    let tradeoff_csv = state.table()?.to_csv();

    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("tradeoff.csv"), &tradeoff_csv)?;
    if !state.chain.steps.is_empty() {
        save_chain(&out.join("state"), &state.chain)?;
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        package_version: env!("CARGO_PKG_VERSION").into(),
        config: RunConfig { erasure: config.erasure.resolved(), ..config.clone() },
        attribute_mapping: loaded.attribute_mapping,
        target_mapping: loaded.target_mapping,
        synthetic_recipe: loaded.synthetic_recipe,
        completed_steps: state.completed_steps(),
        stopped_early: state.stopped_early,
        stop_reason: state.stop_reason,
        diagnostics: state.diagnostics.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(RunOutput { state, manifest, tradeoff_csv })
}
