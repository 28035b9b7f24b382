//! Parameter-shared actor/critic networks and PPO training.
//!
//! One actor and one critic serve every node (weight sharing): agents differ
//! only in their observations. The actor maps an observation to logits over
//! broadcast-plus-unicast-slot actions with invalid slots masked out; the
//! critic maps the same observation to a scalar value estimate used both for
//! advantage computation and, later, for online TD-error monitoring.

mod checkpoint;
mod gae;
pub mod nn;
mod ppo;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gae::compute_advantages;
pub use ppo::{
    actor_loss, actor_loss_and_grads, critic_loss, critic_loss_and_grads, normalize_advantages,
    ppo_update, PpoStats,
};
pub use train::{
    collect_rollouts, evaluate_policy, phase, train, EvalSummary, GreedyActor, IterStats,
    SampledActor, TrainError, TrainOutput, TrainerConfig, UniformRandomPolicy,
};

use crate::cq::{Action, Observation, ObsLayout};
use crate::sim::NodeId;
use nn::Mlp;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    /// A gradient or loss went non-finite; the update is aborted and no
    /// parameters are touched. Usually a learning-rate misconfiguration.
    #[error("non-finite {quantity} in PPO update (epoch {epoch}, minibatch {minibatch})")]
    NonFiniteGradient {
        quantity: &'static str,
        epoch: usize,
        minibatch: usize,
    },
    #[error("empty batch passed to ppo_update")]
    EmptyBatch,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
}

/// PPO knobs. `lambda` stays 0 for the drift-monitoring pipeline so the
/// advantage *is* the one-step TD-error; other values are accepted for the
/// general estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpoHyperparams {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub entropy_coef: f64,
}

impl Default for PpoHyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.0,
            clip_epsilon: 0.2,
            epochs: 4,
            minibatch_size: 256,
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            entropy_coef: 0.01,
        }
    }
}

impl PpoHyperparams {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let err = |m: String| Err(PolicyError::InvalidHyperparams(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return err(format!("gamma must be in (0,1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return err(format!("lambda must be in [0,1], got {}", self.lambda));
        }
        if !(self.clip_epsilon > 0.0) {
            return err(format!("clip_epsilon must be > 0, got {}", self.clip_epsilon));
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return err("epochs and minibatch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// Shared actor weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub net: Mlp,
    pub layout: ObsLayout,
}

/// Critic weights; output is the scalar V(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueParams {
    pub net: Mlp,
}

/// Hidden widths used when the caller does not override the architecture.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

impl PolicyParams {
    pub fn new<R: Rng>(layout: ObsLayout, rng: &mut R) -> Self {
        let dims = [
            &[layout.obs_dim()][..],
            &DEFAULT_HIDDEN[..],
            &[layout.action_dim()][..],
        ]
        .concat();
        PolicyParams {
            net: Mlp::new(&dims, rng),
            layout,
        }
    }
}

impl ValueParams {
    pub fn new<R: Rng>(layout: ObsLayout, rng: &mut R) -> Self {
        let dims = [&[layout.obs_dim()][..], &DEFAULT_HIDDEN[..], &[1][..]].concat();
        ValueParams {
            net: Mlp::new(&dims, rng),
        }
    }
}

/// Log-probabilities over actions with invalid entries at -inf; the valid
/// entries are exact log softmax values (stable, max-subtracted).
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    debug_assert_eq!(logits.len(), mask.len());
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(
        max.is_finite(),
        "masked_log_softmax requires at least one valid action"
    );
    let log_z = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l - log_z } else { f64::NEG_INFINITY })
        .collect()
}

/// Samples an action from the masked categorical distribution defined by the
/// actor; returns the action and the exact log-probability of the sample.
/// Panics if the observation has no valid action (broadcast is always valid
/// by construction, so this is a contract violation upstream).
pub fn act<R: Rng>(actor: &PolicyParams, obs: &Observation, rng: &mut R) -> (Action, f64) {
    let logits = actor.net.forward(&obs.features);
    let logp = masked_log_softmax(&logits, &obs.mask);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut chosen = None;
    for (i, lp) in logp.iter().enumerate() {
        if !obs.mask[i] {
            continue;
        }
        acc += lp.exp();
        if u < acc {
            chosen = Some(i);
            break;
        }
        chosen = Some(i); // fall back to the last valid index on rounding
    }
    let idx = chosen.expect("at least one valid action");
    (Action::from_index(idx), logp[idx])
}

/// Argmax over valid logits; deterministic tie-break toward the lower index.
pub fn greedy_act(actor: &PolicyParams, obs: &Observation) -> Action {
    let logits = actor.net.forward(&obs.features);
    let mut best = None;
    for (i, &l) in logits.iter().enumerate() {
        if !obs.mask[i] {
            continue;
        }
        match best {
            None => best = Some((i, l)),
            Some((_, bl)) if l > bl => best = Some((i, l)),
            _ => {}
        }
    }
    Action::from_index(best.expect("at least one valid action").0)
}

/// Deterministic scalar value estimate V(s).
pub fn value(critic: &ValueParams, obs: &Observation) -> f64 {
    critic.net.forward(&obs.features)[0]
}

/// One recorded agent step: everything PPO and the TD-error monitor need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub logprob: f64,
    pub reward: f64,
    pub obs_next: Observation,
    /// Episode ended at this step; the bootstrap term is dropped.
    pub done: bool,
    pub node: NodeId,
    pub slot: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use approx::assert_relative_eq;

    fn obs_with_mask(layout: ObsLayout, valid_slots: usize) -> Observation {
        let mut obs = Observation::terminal(layout);
        for s in 0..valid_slots {
            obs.mask[1 + s] = true;
        }
        obs
    }

    #[test]
    fn single_valid_action_has_logprob_zero() {
        let layout = ObsLayout::new(4);
        let mut rng = stream_rng(1, Stream::Init);
        let actor = PolicyParams::new(layout, &mut rng);
        let obs = obs_with_mask(layout, 0); // only broadcast valid
        let mut rng2 = stream_rng(2, Stream::Policy);
        let (action, logprob) = act(&actor, &obs, &mut rng2);
        assert_eq!(action, Action::Broadcast);
        assert_eq!(logprob, 0.0);
    }

    #[test]
    fn masked_probabilities_sum_to_one_and_invalid_are_zero() {
        let logits = [0.3, -2.0, 1.4, 0.0, 5.0];
        let mask = [true, false, true, true, false];
        let logp = masked_log_softmax(&logits, &mask);
        let total: f64 = logp
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(lp, _)| lp.exp())
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
        assert_eq!(logp[1], f64::NEG_INFINITY);
        assert_eq!(logp[4], f64::NEG_INFINITY);
    }

    #[test]
    fn uniform_logits_sample_uniformly() {
        // Zero the actor: all logits equal, 4 valid actions, frequencies
        // within 3 sigma of 0.25 over 100k draws.
        let layout = ObsLayout::new(3);
        let mut rng = stream_rng(3, Stream::Init);
        let mut actor = PolicyParams::new(layout, &mut rng);
        for l in &mut actor.net.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let obs = obs_with_mask(layout, 3); // broadcast + 3 slots
        let mut counts = [0u32; 4];
        let mut rng2 = stream_rng(4, Stream::Policy);
        let draws = 100_000;
        for _ in 0..draws {
            let (a, lp) = act(&actor, &obs, &mut rng2);
            assert_relative_eq!(lp, (0.25f64).ln(), epsilon = 1e-12);
            counts[a.to_index()] += 1;
        }
        let sigma = (0.25 * 0.75 / draws as f64).sqrt();
        for &c in &counts {
            let freq = f64::from(c) / draws as f64;
            assert!(
                (freq - 0.25).abs() <= 3.0 * sigma,
                "frequency {freq} outside 0.25 +- {}",
                3.0 * sigma
            );
        }
    }

    #[test]
    fn greedy_picks_max_valid_logit() {
        let layout = ObsLayout::new(2);
        let mut rng = stream_rng(5, Stream::Init);
        let mut actor = PolicyParams::new(layout, &mut rng);
        for l in &mut actor.net.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        // Bias the output layer: logits [2, 1, 0]
        actor.net.layers.last_mut().unwrap().b = vec![2.0, 1.0, 0.0];
        let obs = obs_with_mask(layout, 2);
        assert_eq!(greedy_act(&actor, &obs), Action::Broadcast);
        // Mask out broadcast's logit dominance by checking slot choice when
        // the bias favors a unicast slot.
        actor.net.layers.last_mut().unwrap().b = vec![0.5, 3.0, 1.0];
        assert_eq!(greedy_act(&actor, &obs), Action::Unicast(0));
    }

    #[test]
    fn value_is_reproducible_and_reduces_to_bias() {
        let layout = ObsLayout::new(4);
        let mut rng = stream_rng(6, Stream::Init);
        let mut critic = ValueParams::new(layout, &mut rng);
        let obs = obs_with_mask(layout, 2);
        let v1 = value(&critic, &obs);
        let v2 = value(&critic, &obs);
        assert_eq!(v1, v2);

        for l in &mut critic.net.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
        }
        critic.net.layers.last_mut().unwrap().b = vec![0.75];
        assert_eq!(value(&critic, &obs), 0.75);
    }

    #[test]
    fn value_gradient_consistent_with_finite_difference() {
        // Perturbing one weight by h moves V by roughly grad*h.
        let layout = ObsLayout::new(3);
        let mut rng = stream_rng(7, Stream::Init);
        let critic = ValueParams::new(layout, &mut rng);
        let mut obs = obs_with_mask(layout, 3);
        for (i, f) in obs.features.iter_mut().enumerate() {
            *f = (i as f64 * 0.37).sin() * 0.5;
        }
        let cache = critic.net.forward_cached(&obs.features);
        let mut grads = nn::Grads::zeros_like(&critic.net);
        critic.net.backward(&cache, &[1.0], &mut grads);
        let flat_g = grads.flatten();

        let h = 1e-6;
        for idx in (0..critic.net.param_count()).step_by(97) {
            let mut flat = critic.net.flatten();
            let mut probe = critic.clone();
            flat[idx] += h;
            probe.net.assign(&flat);
            let plus = value(&probe, &obs);
            flat[idx] -= 2.0 * h;
            probe.net.assign(&flat);
            let minus = value(&probe, &obs);
            let numeric = (plus - minus) / (2.0 * h);
            let denom = numeric.abs().max(flat_g[idx].abs()).max(1e-8);
            assert!(
                ((numeric - flat_g[idx]) / denom).abs() < 1e-5,
                "value grad mismatch at {idx}"
            );
        }
    }

    #[test]
    fn hyperparam_validation_rejects_bad_values() {
        let mut hp = PpoHyperparams::default();
        assert!(hp.validate().is_ok());
        hp.gamma = 1.0;
        assert!(hp.validate().is_err());
        hp.gamma = 0.99;
        hp.lambda = 1.5;
        assert!(hp.validate().is_err());
    }
}
