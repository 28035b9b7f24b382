//! Rollout collection and the PPO training loop.
//!
//! Training is centralized with decentralized execution: every node in every
//! rollout episode decides through one shared actor, and all transitions are
//! pooled into a single update. Episodes are independent and seeded, so
//! batches may be collected in parallel without losing determinism.

use super::nn::Adam;
use super::{
    act, compute_advantages, greedy_act, masked_log_softmax, normalize_advantages, ppo_update,
    PolicyError, PolicyParams, PpoHyperparams, Transition, ValueParams,
};
use crate::cq::{Action, Observation, PolicyChoice, RoutePolicy};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::sim::{run_episode, EpisodeOptions, EpisodeOutput, NodeId};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Seed-derivation phase tags; keep distinct across run kinds.
pub mod phase {
    pub const TRAIN: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const CALIBRATE: u64 = 3;
    pub const DETECT: u64 = 4;
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("training scenario must be nominal (anomaly = none), got {0}")]
    AnomalousScenario(String),
}

/// Samples from the shared actor; one instance per episode with its own
/// seeded stream.
pub struct SampledActor<'a> {
    pub actor: &'a PolicyParams,
    pub rng: ChaCha8Rng,
}

impl<'a> SampledActor<'a> {
    pub fn new(actor: &'a PolicyParams, seed: u64) -> Self {
        SampledActor {
            actor,
            rng: stream_rng(seed, Stream::Policy),
        }
    }
}

impl RoutePolicy for SampledActor<'_> {
    fn choose(&mut self, obs: &Observation) -> PolicyChoice {
        let (action, logprob) = act(self.actor, obs, &mut self.rng);
        PolicyChoice { action, logprob }
    }
}

/// Deterministic argmax execution of the shared actor.
pub struct GreedyActor<'a> {
    pub actor: &'a PolicyParams,
}

impl RoutePolicy for GreedyActor<'_> {
    fn choose(&mut self, obs: &Observation) -> PolicyChoice {
        let action = greedy_act(self.actor, obs);
        let logits = self.actor.net.forward(&obs.features);
        let logprob = masked_log_softmax(&logits, &obs.mask)[action.to_index()];
        PolicyChoice { action, logprob }
    }
}

/// Uniform choice over the valid action set; the comparison baseline.
pub struct UniformRandomPolicy {
    pub rng: ChaCha8Rng,
}

impl UniformRandomPolicy {
    pub fn new(seed: u64) -> Self {
        UniformRandomPolicy {
            rng: stream_rng(seed, Stream::Policy),
        }
    }
}

impl RoutePolicy for UniformRandomPolicy {
    fn choose(&mut self, obs: &Observation) -> PolicyChoice {
        let valid: Vec<usize> = obs
            .mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| i)
            .collect();
        assert!(!valid.is_empty(), "observation with no valid action");
        let idx = valid[self.rng.gen_range(0..valid.len())];
        PolicyChoice {
            action: Action::from_index(idx),
            logprob: -(valid.len() as f64).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub iterations: usize,
    pub episodes_per_iter: usize,
    pub hp: PpoHyperparams,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            episodes_per_iter: 8,
            hp: PpoHyperparams::default(),
            seed: 0,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterStats {
    pub iteration: usize,
    pub transitions: usize,
    pub mean_reward: f64,
    pub delivery_ratio: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub actor: PolicyParams,
    pub critic: ValueParams,
    pub log: Vec<IterStats>,
}

/// Collects one batch of seeded rollout episodes under the frozen actor.
pub fn collect_rollouts(
    scenario: &ScenarioConfig,
    actor: &PolicyParams,
    base_seed: u64,
    phase: u64,
    start_index: u64,
    episodes: usize,
    opts: EpisodeOptions,
) -> Vec<EpisodeOutput> {
    (0..episodes as u64)
        .into_par_iter()
        .map(|e| {
            let ep_seed = ScenarioConfig::episode_seed(base_seed, phase, start_index + e);
            let params = scenario.resolve(ep_seed);
            let mut policy = SampledActor::new(actor, ep_seed);
            run_episode(&params, ep_seed, &mut policy, opts)
        })
        .collect()
}

/// Groups a flat transition batch into per-(episode, node) runs and computes
/// advantages and return targets with the trajectory structure respected.
fn pooled_advantages(
    outputs: &[EpisodeOutput],
    critic: &ValueParams,
    hp: &PpoHyperparams,
) -> (Vec<Transition>, Vec<f64>, Vec<f64>) {
    let mut pool = Vec::new();
    let mut advs = Vec::new();
    let mut rets = Vec::new();
    for out in outputs {
        let mut per_node: BTreeMap<NodeId, Vec<Transition>> = BTreeMap::new();
        for tr in &out.transitions {
            per_node.entry(tr.node).or_default().push(tr.clone());
        }
        for (_, traj) in per_node {
            debug_assert!(traj.windows(2).all(|w| w[0].slot < w[1].slot));
            for (adv, ret) in compute_advantages(&traj, critic, hp) {
                advs.push(adv);
                rets.push(ret);
            }
            pool.extend(traj);
        }
    }
    (pool, advs, rets)
}

/// Full training run: rollout, advantage, PPO update, per-iteration stats.
pub fn train(scenario: &ScenarioConfig, tc: &TrainerConfig) -> Result<TrainOutput, TrainError> {
    if !scenario.anomaly.is_nominal() {
        return Err(TrainError::AnomalousScenario(
            scenario.anomaly.kind_name().into(),
        ));
    }
    scenario.validate()?;
    tc.hp.validate()?;

    let layout = scenario.layout();
    let mut init_rng = stream_rng(derive_seed(tc.seed, &[phase::TRAIN, 0]), Stream::Init);
    let mut actor = PolicyParams::new(layout, &mut init_rng);
    let mut critic = ValueParams::new(layout, &mut init_rng);
    let mut opt_actor = Adam::new(&actor.net);
    let mut opt_critic = Adam::new(&critic.net);
    let mut log = Vec::with_capacity(tc.iterations);

    for iteration in 0..tc.iterations {
        let outputs = collect_rollouts(
            scenario,
            &actor,
            tc.seed,
            phase::TRAIN,
            (iteration as u64) * tc.episodes_per_iter as u64,
            tc.episodes_per_iter,
            EpisodeOptions::default(),
        );

        let (pool, advantages, returns) = pooled_advantages(&outputs, &critic, &tc.hp);
        if pool.is_empty() {
            log.push(IterStats {
                iteration,
                transitions: 0,
                mean_reward: 0.0,
                delivery_ratio: 0.0,
                policy_loss: 0.0,
                value_loss: 0.0,
                entropy: 0.0,
                clip_fraction: 0.0,
            });
            continue;
        }
        let advantages = normalize_advantages(&advantages);

        let mut shuffle_rng = stream_rng(
            derive_seed(tc.seed, &[phase::TRAIN, 1 + iteration as u64]),
            Stream::Shuffle,
        );
        let stats = ppo_update(
            &mut actor,
            &mut critic,
            &mut opt_actor,
            &mut opt_critic,
            &pool,
            &advantages,
            &returns,
            &tc.hp,
            &mut shuffle_rng,
        )?;

        let injected: u64 = outputs.iter().map(|o| o.metrics.injected).sum();
        let delivered: u64 = outputs.iter().map(|o| o.metrics.delivered).sum();
        let mean_reward =
            pool.iter().map(|t| t.reward).sum::<f64>() / pool.len() as f64;
        log.push(IterStats {
            iteration,
            transitions: pool.len(),
            mean_reward,
            delivery_ratio: delivered as f64 / injected.max(1) as f64,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
        });
    }

    Ok(TrainOutput { actor, critic, log })
}

/// Aggregate evaluation metrics over a batch of seeded episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_delivery_ratio: f64,
    pub mean_reward: f64,
    pub mean_overhead: Option<f64>,
}

/// Runs evaluation episodes with either the greedy trained policy
/// (`actor = Some`) or the uniform-random baseline (`actor = None`). Episode
/// seeds depend only on `(base_seed, phase, index)`, so both policies can be
/// compared on identical worlds.
pub fn evaluate_policy(
    scenario: &ScenarioConfig,
    actor: Option<&PolicyParams>,
    episodes: usize,
    base_seed: u64,
    phase: u64,
) -> EvalSummary {
    let outputs: Vec<EpisodeOutput> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| {
            let ep_seed = ScenarioConfig::episode_seed(base_seed, phase, e);
            let params = scenario.resolve(ep_seed);
            let opts = EpisodeOptions {
                collect_transitions: false,
                record_events: false,
            };
            match actor {
                Some(a) => run_episode(&params, ep_seed, &mut GreedyActor { actor: a }, opts),
                None => {
                    run_episode(&params, ep_seed, &mut UniformRandomPolicy::new(ep_seed), opts)
                }
            }
        })
        .collect();

    let n = outputs.len().max(1) as f64;
    let overheads: Vec<f64> = outputs
        .iter()
        .filter_map(|o| o.metrics.overhead)
        .collect();
    EvalSummary {
        episodes: outputs.len(),
        mean_delivery_ratio: outputs.iter().map(|o| o.metrics.delivery_ratio).sum::<f64>() / n,
        mean_reward: outputs.iter().map(|o| o.metrics.mean_reward).sum::<f64>() / n,
        mean_overhead: (!overheads.is_empty())
            .then(|| overheads.iter().sum::<f64>() / overheads.len() as f64),
    }
}
