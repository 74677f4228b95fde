//! On-disk layout of a learned erasure chain.
//!
//! ```text
//! state/
//!   chain.json          step index, activation, bandwidths, seeds
//!   step_001/
//!     layer0_w.oblv     layer0_b.oblv   ...
//!     omega.oblv        RFF frequencies of Z
//!     projection.oblv   Q·V
//!   step_002/ ...
//! ```
//!
//! All matrices use the binary embedding format, so replaying a loaded
//! chain is bitwise identical to replaying the in-memory one.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{decode_binary, encode_binary};
use crate::encoder::{Activation, Dense, EncoderParams};
use crate::erasure::{ErasureChain, StepArtifact};
use crate::kernels::RffMap;
use crate::{Error, Matrix, Result};

pub const CHAIN_FILE: &str = "chain.json";
pub const CHAIN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainIndex {
    version: u32,
    input_dim: usize,
    steps: Vec<StepIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepIndex {
    dir: String,
    activation: Activation,
    layers: usize,
    rff_sigma: f64,
    rff_seed: u64,
    output_dim: usize,
}

fn step_dir_name(step: usize) -> String {
    format!("step_{step:03}")
}

fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, encode_binary(m))?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Matrix> {
    decode_binary(&fs::read(path)?)
}

/// Writes the chain below `dir`, creating it if needed.
pub fn save_chain(dir: &Path, chain: &ErasureChain) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut steps = Vec::with_capacity(chain.steps.len());
    for (i, artifact) in chain.steps.iter().enumerate() {
        let name = step_dir_name(i + 1);
        let sub = dir.join(&name);
        fs::create_dir_all(&sub)?;
        for (l, layer) in artifact.encoder.layers.iter().enumerate() {
            write_matrix(&sub.join(format!("layer{l}_w.oblv")), &layer.weight)?;
            write_matrix(&sub.join(format!("layer{l}_b.oblv")), &layer.bias)?;
        }
        write_matrix(&sub.join("omega.oblv"), artifact.z_map.frequencies())?;
        write_matrix(&sub.join("projection.oblv"), &artifact.projection)?;
        steps.push(StepIndex {
            dir: name,
            activation: artifact.encoder.activation,
            layers: artifact.encoder.layers.len(),
            rff_sigma: artifact.z_map.sigma(),
            rff_seed: artifact.z_map.seed(),
            output_dim: artifact.output_dim(),
        });
    }
    let index = ChainIndex { version: CHAIN_VERSION, input_dim: chain.input_dim, steps };
    fs::write(dir.join(CHAIN_FILE), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

/// Loads a chain written by [`save_chain`] and checks that consecutive
/// steps fit together.
pub fn load_chain(dir: &Path) -> Result<ErasureChain> {
    let index_path = dir.join(CHAIN_FILE);
    if !index_path.exists() {
        return Err(Error::EmptyState);
    }
    let index: ChainIndex = serde_json::from_str(&fs::read_to_string(&index_path)?)?;
    if index.version != CHAIN_VERSION {
        return Err(Error::UnsupportedVersion(index.version));
    }
    if index.steps.is_empty() {
        return Err(Error::EmptyState);
    }
    let mut expected_in = index.input_dim;
    let mut steps = Vec::with_capacity(index.steps.len());
    for entry in &index.steps {
        let sub: PathBuf = dir.join(&entry.dir);
        let mut layers = Vec::with_capacity(entry.layers);
        for l in 0..entry.layers {
            let weight = read_matrix(&sub.join(format!("layer{l}_w.oblv")))?;
            let bias = read_matrix(&sub.join(format!("layer{l}_b.oblv")))?;
            if bias.nrows() != 1 || bias.ncols() != weight.ncols() {
                return Err(Error::ShapeMismatch(format!("{}: layer {l} bias shape", entry.dir)));
            }
            layers.push(Dense { weight, bias });
        }
        let encoder = EncoderParams { layers, activation: entry.activation };
        for pair in encoder.layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch(format!("{}: layer widths do not chain", entry.dir)));
            }
        }
        if encoder.layers.is_empty() || encoder.input_dim() != expected_in {
            return Err(Error::ShapeMismatch(format!("{}: encoder expects {expected_in} inputs", entry.dir)));
        }
        let z_map = RffMap::from_frequencies(read_matrix(&sub.join("omega.oblv"))?, entry.rff_sigma, entry.rff_seed)?;
        if z_map.input_dim() != encoder.output_dim() {
            return Err(Error::ShapeMismatch(format!("{}: frequency rows vs encoder width", entry.dir)));
        }
        let projection = read_matrix(&sub.join("projection.oblv"))?;
        if projection.nrows() != z_map.feature_dim() || projection.ncols() != entry.output_dim {
            return Err(Error::ShapeMismatch(format!("{}: projection shape", entry.dir)));
        }
        expected_in = projection.ncols();
        steps.push(StepArtifact { encoder, z_map, projection });
    }
    Ok(ErasureChain { input_dim: index.input_dim, steps })
}

/// Writes `value` as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
