//! Versioned checkpoint persistence for the actor/critic pair.
//!
//! JSON with explicit layer shapes and row-major weight arrays; loading
//! rejects version or shape mismatches outright rather than guessing.

use super::nn::{Dense, Mlp};
use super::{PolicyParams, PpoHyperparams, ValueParams};
use crate::cq::{CqParams, ObsLayout, RewardWeights};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found} (expected {CHECKPOINT_VERSION})")]
    Version { found: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerSpec {
    in_dim: usize,
    out_dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NetSpec {
    layers: Vec<LayerSpec>,
}

/// Everything needed to reproduce decision-making and TD-error computation:
/// both networks plus the hyperparameters they were trained with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub k_max: usize,
    pub hyperparams: PpoHyperparams,
    pub cq: CqParams,
    pub reward: RewardWeights,
    actor: NetSpec,
    critic: NetSpec,
}

fn to_spec(net: &Mlp) -> NetSpec {
    NetSpec {
        layers: net
            .layers
            .iter()
            .map(|l| LayerSpec {
                in_dim: l.in_dim,
                out_dim: l.out_dim,
                w: l.w.clone(),
                b: l.b.clone(),
            })
            .collect(),
    }
}

fn from_spec(spec: &NetSpec, what: &str) -> Result<Mlp, CheckpointError> {
    if spec.layers.is_empty() {
        return Err(CheckpointError::Shape(format!("{what}: no layers")));
    }
    let mut prev_out = None;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, l) in spec.layers.iter().enumerate() {
        if l.w.len() != l.in_dim * l.out_dim {
            return Err(CheckpointError::Shape(format!(
                "{what} layer {i}: {} weights, expected {}x{}",
                l.w.len(),
                l.out_dim,
                l.in_dim
            )));
        }
        if l.b.len() != l.out_dim {
            return Err(CheckpointError::Shape(format!(
                "{what} layer {i}: {} biases, expected {}",
                l.b.len(),
                l.out_dim
            )));
        }
        if let Some(prev) = prev_out {
            if l.in_dim != prev {
                return Err(CheckpointError::Shape(format!(
                    "{what} layer {i}: input {} does not chain from previous output {prev}",
                    l.in_dim
                )));
            }
        }
        prev_out = Some(l.out_dim);
        layers.push(Dense {
            in_dim: l.in_dim,
            out_dim: l.out_dim,
            w: l.w.clone(),
            b: l.b.clone(),
        });
    }
    Ok(Mlp { layers })
}

impl Checkpoint {
    pub fn new(
        actor: &PolicyParams,
        critic: &ValueParams,
        hyperparams: PpoHyperparams,
        cq: CqParams,
        reward: RewardWeights,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            k_max: actor.layout.k_max,
            hyperparams,
            cq,
            reward,
            actor: to_spec(&actor.net),
            critic: to_spec(&critic.net),
        }
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout::new(self.k_max)
    }

    /// Reconstructs the networks, validating every shape against `k_max`.
    pub fn instantiate(&self) -> Result<(PolicyParams, ValueParams), CheckpointError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version {
                found: self.version,
            });
        }
        let layout = self.layout();
        let actor_net = from_spec(&self.actor, "actor")?;
        let critic_net = from_spec(&self.critic, "critic")?;
        if actor_net.input_dim() != layout.obs_dim() {
            return Err(CheckpointError::Shape(format!(
                "actor input {} does not match obs dim {} for k_max {}",
                actor_net.input_dim(),
                layout.obs_dim(),
                self.k_max
            )));
        }
        if actor_net.output_dim() != layout.action_dim() {
            return Err(CheckpointError::Shape(format!(
                "actor output {} does not match action dim {}",
                actor_net.output_dim(),
                layout.action_dim()
            )));
        }
        if critic_net.input_dim() != layout.obs_dim() || critic_net.output_dim() != 1 {
            return Err(CheckpointError::Shape(format!(
                "critic dims {}->{} do not match obs dim {} -> 1",
                critic_net.input_dim(),
                critic_net.output_dim(),
                layout.obs_dim()
            )));
        }
        Ok((
            PolicyParams {
                net: actor_net,
                layout,
            },
            ValueParams { net: critic_net },
        ))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let raw = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&raw)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: ckpt.version,
        });
    }
    Ok(ckpt)
}
