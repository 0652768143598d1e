//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"BRCK"            magic
//! u32                format version (1)
//! u64                header length in bytes
//! [u8; header_len]   UTF-8 JSON header (layer shapes, activations, optimizer
//!                    counters, RNG position, free-form metadata)
//! f64 * P            parameters, in `PolicyNet::param_slices_mut` order
//! f64 * P            optimizer first moments (only if header.optim is set)
//! f64 * P            optimizer second moments (only if header.optim is set)
//! ```
//!
//! Within a layer the weights are row-major `out x in`, followed by biases.

use super::mlp::{Activation, Dense, Mlp};
use super::optim::OptimState;
use super::policy::PolicyNet;
use super::NeuralError;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"BRCK";
pub const FORMAT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Decimal string; JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng, NeuralError> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| NeuralError::Format(format!("bad rng word position {:?}", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerSpec {
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimHeader {
    step_count: u64,
    base_lr: f64,
    total_steps: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    clip_norm: Option<f64>,
    skipped_steps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    trunk: Vec<LayerSpec>,
    actor: Vec<LayerSpec>,
    critic: Vec<LayerSpec>,
    optim: Option<OptimHeader>,
    rng: Option<RngState>,
    metadata: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: PolicyNet,
    pub optim: Option<OptimState>,
    pub rng: Option<RngState>,
    pub metadata: serde_json::Value,
}

fn specs(m: &Mlp) -> Vec<LayerSpec> {
    m.layers
        .iter()
        .map(|l| LayerSpec {
            inputs: l.inputs(),
            outputs: l.outputs(),
            activation: l.activation,
        })
        .collect()
}

fn put_f64s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), NeuralError> {
        let header = Header {
            trunk: specs(&self.net.trunk),
            actor: specs(&self.net.actor),
            critic: specs(&self.net.critic),
            optim: self.optim.as_ref().map(|o| OptimHeader {
                step_count: o.step_count,
                base_lr: o.base_lr,
                total_steps: o.total_steps,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                clip_norm: o.clip_norm,
                skipped_steps: o.skipped_steps,
            }),
            rng: self.rng.clone(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| NeuralError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut net = self.net.clone();
        for s in net.param_slices_mut() {
            put_f64s(w, s.iter().copied())?;
        }
        if let Some(o) = &self.optim {
            put_f64s(w, o.first_moment.iter().flatten().copied())?;
            put_f64s(w, o.second_moment.iter().flatten().copied())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, NeuralError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NeuralError::Format("not a checkpoint file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(NeuralError::Format(format!("unsupported format version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| NeuralError::Format(e.to_string()))?;

        let build = |specs: &[LayerSpec]| -> Result<Mlp, NeuralError> {
            if specs.is_empty() {
                return Err(NeuralError::Format("empty layer list".into()));
            }
            Ok(Mlp {
                layers: specs
                    .iter()
                    .map(|s| Dense::zeros(s.inputs, s.outputs, s.activation))
                    .collect(),
            })
        };
        let mut net = PolicyNet::from_parts(build(&header.trunk)?, build(&header.actor)?, build(&header.critic)?, 0.0);
        let mut read_into = |dst: &mut [f64]| -> Result<(), NeuralError> {
            for v in dst.iter_mut() {
                r.read_exact(&mut b8)?;
                *v = f64::from_le_bytes(b8);
            }
            Ok(())
        };
        for s in net.param_slices_mut() {
            read_into(s)?;
        }
        let optim = match header.optim {
            None => None,
            Some(h) => {
                let mut o = OptimState::new(&net.param_slices_mut(), h.base_lr, h.total_steps, h.clip_norm);
                for m in o.first_moment.iter_mut() {
                    read_into(m)?;
                }
                for v in o.second_moment.iter_mut() {
                    read_into(v)?;
                }
                o.step_count = h.step_count;
                o.beta1 = h.beta1;
                o.beta2 = h.beta2;
                o.epsilon = h.epsilon;
                o.skipped_steps = h.skipped_steps;
                Some(o)
            }
        };
        if !net.is_finite() {
            return Err(NeuralError::Format("non-finite parameters".into()));
        }
        Ok(Self {
            net,
            optim,
            rng: header.rng,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
