//! Generalized advantage estimation over recorded trajectories.

use super::{value, PpoHyperparams, Transition, ValueParams};

/// Computes `(advantage, return-target)` per transition.
///
/// The input must be ordered by slot within each (node, episode) run, with
/// `done = true` on the final step of each run; the backward recursion
///
/// ```text
/// A_t = delta_t + gamma * lambda * A_{t+1}
/// delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)      (bootstrap dropped on done)
/// ```
///
/// then equals the truncated exponentially-weighted sum of future one-step
/// TD residuals. With `lambda = 0` the advantage *is* the one-step residual.
/// The return target is `A_t + V(s_t)`.
pub fn compute_advantages(
    traj: &[Transition],
    critic: &ValueParams,
    hp: &PpoHyperparams,
) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); traj.len()];
    let mut carry = 0.0;
    for (i, tr) in traj.iter().enumerate().rev() {
        let v_s = value(critic, &tr.obs);
        let next = if tr.done {
            carry = 0.0;
            0.0
        } else {
            value(critic, &tr.obs_next)
        };
        let delta = tr.reward + hp.gamma * next - v_s;
        carry = delta + hp.gamma * hp.lambda * carry;
        out[i] = (carry, carry + v_s);
    }
    out
}
