//! Clipped-surrogate PPO losses, analytic gradients, and the update step.

use super::nn::{Adam, Grads};
use super::{masked_log_softmax, PolicyError, PolicyParams, PpoHyperparams, Transition, ValueParams};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Averaged diagnostics over all minibatch steps of one update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// Shifts and scales to zero mean, unit standard deviation (population).
pub fn normalize_advantages(advantages: &[f64]) -> Vec<f64> {
    if advantages.is_empty() {
        return Vec::new();
    }
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// The negated clipped surrogate plus entropy bonus, averaged over the batch:
///
/// ```text
/// L = -(1/B) sum_i [ min(eta_i A_i, clip(eta_i, 1-eps, 1+eps) A_i) + c_H H(pi(s_i)) ]
/// ```
///
/// with `eta = exp(logpi(a|s) - logpi_old(a|s))` taken against the log-probs
/// recorded at rollout time.
pub fn actor_loss(
    actor: &PolicyParams,
    batch: &[&Transition],
    advantages: &[f64],
    hp: &PpoHyperparams,
) -> f64 {
    let mut total = 0.0;
    for (tr, &adv) in batch.iter().zip(advantages) {
        let logits = actor.net.forward(&tr.obs.features);
        let logp = masked_log_softmax(&logits, &tr.obs.mask);
        let lp_a = logp[tr.action.to_index()];
        let ratio = (lp_a - tr.logprob).exp();
        let clipped = ratio.clamp(1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon);
        let objective = (ratio * adv).min(clipped * adv);
        let entropy = entropy_of(&logp, &tr.obs.mask);
        total += objective + hp.entropy_coef * entropy;
    }
    -total / batch.len() as f64
}

/// [`actor_loss`] together with its analytic parameter gradient.
pub fn actor_loss_and_grads(
    actor: &PolicyParams,
    batch: &[&Transition],
    advantages: &[f64],
    hp: &PpoHyperparams,
) -> (f64, Grads, SurrogateStats) {
    let b = batch.len() as f64;
    let mut grads = Grads::zeros_like(&actor.net);
    let mut total = 0.0;
    let mut stats = SurrogateStats::default();

    for (tr, &adv) in batch.iter().zip(advantages) {
        let cache = actor.net.forward_cached(&tr.obs.features);
        let logp = masked_log_softmax(cache.output(), &tr.obs.mask);
        let a_idx = tr.action.to_index();
        let lp_a = logp[a_idx];
        let ratio = (lp_a - tr.logprob).exp();
        let clipped = ratio.clamp(1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon);
        let surr_raw = ratio * adv;
        let surr_clip = clipped * adv;
        let entropy = entropy_of(&logp, &tr.obs.mask);
        total += surr_raw.min(surr_clip) + hp.entropy_coef * entropy;

        stats.entropy += entropy;
        stats.approx_kl += tr.logprob - lp_a;
        if (ratio - 1.0).abs() > hp.clip_epsilon {
            stats.clipped += 1;
        }

        // Gradient of the surrogate flows only through the unclipped branch;
        // when the clipped term is strictly smaller the clamp is saturated
        // and its derivative is zero.
        let factor = if surr_raw <= surr_clip { adv * ratio } else { 0.0 };

        let mut dz = vec![0.0; logp.len()];
        for k in 0..logp.len() {
            if !tr.obs.mask[k] {
                continue;
            }
            let p_k = logp[k].exp();
            let onehot = if k == a_idx { 1.0 } else { 0.0 };
            let d_obj = factor * (onehot - p_k);
            let d_ent = -p_k * (logp[k] + entropy);
            // minimize the negated objective, averaged over the batch
            dz[k] = -(d_obj + hp.entropy_coef * d_ent) / b;
        }
        actor.net.backward(&cache, &dz, &mut grads);
    }

    stats.entropy /= b;
    stats.approx_kl /= b;
    stats.clip_fraction = stats.clipped as f64 / b;
    (-total / b, grads, stats)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateStats {
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    clipped: usize,
}

fn entropy_of(logp: &[f64], mask: &[bool]) -> f64 {
    logp.iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&lp, _)| {
            let p = lp.exp();
            if p > 0.0 {
                -p * lp
            } else {
                0.0
            }
        })
        .sum()
}

/// Mean squared error between V(s) and the return targets.
pub fn critic_loss(critic: &ValueParams, batch: &[&Transition], returns: &[f64]) -> f64 {
    batch
        .iter()
        .zip(returns)
        .map(|(tr, &ret)| {
            let v = critic.net.forward(&tr.obs.features)[0];
            (v - ret) * (v - ret)
        })
        .sum::<f64>()
        / batch.len() as f64
}

/// [`critic_loss`] with its analytic gradient.
pub fn critic_loss_and_grads(
    critic: &ValueParams,
    batch: &[&Transition],
    returns: &[f64],
) -> (f64, Grads) {
    let b = batch.len() as f64;
    let mut grads = Grads::zeros_like(&critic.net);
    let mut total = 0.0;
    for (tr, &ret) in batch.iter().zip(returns) {
        let cache = critic.net.forward_cached(&tr.obs.features);
        let v = cache.output()[0];
        total += (v - ret) * (v - ret);
        critic.net.backward(&cache, &[2.0 * (v - ret) / b], &mut grads);
    }
    (total / b, grads)
}

/// Runs `hp.epochs` passes of shuffled minibatch gradient steps on both
/// networks. `advantages` must already be normalized per batch; `returns`
/// are the critic's regression targets. Aborts (leaving the current
/// parameters in place for the failing step) when any loss or gradient goes
/// non-finite.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng>(
    actor: &mut PolicyParams,
    critic: &mut ValueParams,
    opt_actor: &mut Adam,
    opt_critic: &mut Adam,
    batch: &[Transition],
    advantages: &[f64],
    returns: &[f64],
    hp: &PpoHyperparams,
    rng: &mut R,
) -> Result<PpoStats, PolicyError> {
    if batch.is_empty() {
        return Err(PolicyError::EmptyBatch);
    }
    hp.validate()?;
    assert_eq!(batch.len(), advantages.len());
    assert_eq!(batch.len(), returns.len());

    let mut stats = PpoStats::default();
    let mut indices: Vec<usize> = (0..batch.len()).collect();

    for epoch in 0..hp.epochs {
        indices.shuffle(rng);
        for (mb, chunk) in indices.chunks(hp.minibatch_size).enumerate() {
            let mb_batch: Vec<&Transition> = chunk.iter().map(|&i| &batch[i]).collect();
            let mb_adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let mb_ret: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();

            let (ploss, pgrads, surr) = actor_loss_and_grads(actor, &mb_batch, &mb_adv, hp);
            if !ploss.is_finite() || !pgrads.all_finite() {
                return Err(PolicyError::NonFiniteGradient {
                    quantity: "actor gradient",
                    epoch,
                    minibatch: mb,
                });
            }
            opt_actor.step(&mut actor.net, &pgrads, hp.lr_actor);

            let (vloss, vgrads) = critic_loss_and_grads(critic, &mb_batch, &mb_ret);
            if !vloss.is_finite() || !vgrads.all_finite() {
                return Err(PolicyError::NonFiniteGradient {
                    quantity: "critic gradient",
                    epoch,
                    minibatch: mb,
                });
            }
            opt_critic.step(&mut critic.net, &vgrads, hp.lr_critic);

            stats.policy_loss += ploss;
            stats.value_loss += vloss;
            stats.entropy += surr.entropy;
            stats.clip_fraction += surr.clip_fraction;
            stats.approx_kl += surr.approx_kl;
            stats.minibatches += 1;
        }
    }

    let n = stats.minibatches.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
    Ok(stats)
}
