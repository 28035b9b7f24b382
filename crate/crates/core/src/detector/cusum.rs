//! Log-unlikelihood evidence and the CUSUM-like decision recursion.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Evidence carried by one tail probability:
///
/// ```text
/// ell = ln(alpha / max(p, p_floor))
/// ```
///
/// Positive when p < alpha (outlier), negative when p > alpha (nominal
/// evidence that drains the accumulator), zero at p = alpha. The floor keeps
/// extremely small p-values finite.
pub fn log_unlikelihood(p: f64, alpha: f64, p_floor: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 1.0, "tail probability out of range: {p}");
    (alpha / p.max(p_floor)).ln()
}

/// Running decision statistic with first-crossing alarm bookkeeping.
///
/// ```text
/// g_0 = 0,  g_t = max(0, g_{t-1} + ell_t),  alarm at inf{t : g_t >= h}
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub g: f64,
    /// First slot at which g reached the threshold; never overwritten.
    pub alarm_slot: Option<u64>,
    /// Optional ring buffer of recent (slot, p, ell, g) rows for debugging.
    #[serde(skip)]
    pub history: Option<VecDeque<(u64, f64, f64, f64)>>,
    #[serde(skip)]
    history_capacity: usize,
}

impl Default for DetectorState {
    fn default() -> Self {
        Self::new()
    }
}

impl DetectorState {
    pub fn new() -> Self {
        DetectorState {
            g: 0.0,
            alarm_slot: None,
            history: None,
            history_capacity: 0,
        }
    }

    pub fn with_history(capacity: usize) -> Self {
        DetectorState {
            g: 0.0,
            alarm_slot: None,
            history: Some(VecDeque::with_capacity(capacity)),
            history_capacity: capacity,
        }
    }

    pub fn alarmed(&self) -> bool {
        self.alarm_slot.is_some()
    }

    fn record(&mut self, slot: u64, p: f64, ell: f64) {
        if let Some(hist) = self.history.as_mut() {
            if hist.len() == self.history_capacity {
                hist.pop_front();
            }
            hist.push_back((slot, p, ell, self.g));
        }
    }
}

/// One accumulation step; sets the stopping time on the first crossing of
/// `h` and never moves it afterwards.
pub fn cusum_step(state: &mut DetectorState, ell: f64, h: f64, slot: u64) {
    debug_assert!(state.g >= 0.0);
    state.g = (state.g + ell).max(0.0);
    if state.alarm_slot.is_none() && state.g >= h {
        state.alarm_slot = Some(slot);
    }
    state.record(slot, f64::NAN, ell);
}

/// Convenience wrapper that also threads the p-value into the history row.
pub fn cusum_step_with_p(state: &mut DetectorState, p: f64, ell: f64, h: f64, slot: u64) {
    debug_assert!(state.g >= 0.0);
    state.g = (state.g + ell).max(0.0);
    if state.alarm_slot.is_none() && state.g >= h {
        state.alarm_slot = Some(slot);
    }
    state.record(slot, p, ell);
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ell_is_zero_at_alpha() {
        assert_eq!(log_unlikelihood(0.05, 0.05, 1e-9), 0.0);
    }

    #[test]
    fn ell_matches_hand_arithmetic() {
        // alpha = 0.05, p = 0.005 -> ln 10
        assert_relative_eq!(
            log_unlikelihood(0.005, 0.05, 1e-9),
            10.0f64.ln(),
            epsilon = 1e-12
        );
        // p below the floor 1e-4 clamps: ln(0.05 / 1e-4) = ln 500, finite
        let ell = log_unlikelihood(1e-12, 0.05, 1e-4);
        assert_relative_eq!(ell, 500.0f64.ln(), epsilon = 1e-12);
        assert!(ell.is_finite());
    }

    #[test]
    fn floor_at_zero_absorbs_negative_evidence() {
        let mut s = DetectorState::new();
        cusum_step(&mut s, -5.0, 10.0, 0);
        assert_eq!(s.g, 0.0);
        assert!(!s.alarmed());
    }

    #[test]
    fn first_crossing_sets_the_stopping_time_once() {
        let mut s = DetectorState::new();
        for (slot, ell) in [1.0, 1.0, 1.0].iter().enumerate() {
            cusum_step(&mut s, *ell, 2.5, slot as u64);
        }
        assert_relative_eq!(s.g, 3.0);
        assert_eq!(s.alarm_slot, Some(2));
        // Later crossings and resets do not move the alarm.
        cusum_step(&mut s, 100.0, 2.5, 3);
        assert_eq!(s.alarm_slot, Some(2));
    }

    #[test]
    fn non_negativity_under_random_streams() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(8, crate::rng::Stream::Synthetic);
        for _ in 0..100 {
            let mut s = DetectorState::new();
            for slot in 0..500u64 {
                cusum_step(&mut s, rng.gen_range(-3.0..3.0), 50.0, slot);
                assert!(s.g >= 0.0);
            }
        }
    }

    #[test]
    fn increasing_one_evidence_term_never_decreases_later_g() {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(9, crate::rng::Stream::Synthetic);
        for _ in 0..50 {
            let ells: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bump_at = rng.gen_range(0..ells.len());
            let mut bumped = ells.clone();
            bumped[bump_at] += rng.gen_range(0.0..3.0);

            let trace = |stream: &[f64]| -> Vec<f64> {
                let mut s = DetectorState::new();
                stream
                    .iter()
                    .enumerate()
                    .map(|(slot, &e)| {
                        cusum_step(&mut s, e, f64::INFINITY, slot as u64);
                        s.g
                    })
                    .collect()
            };
            for (a, b) in trace(&ells).iter().zip(trace(&bumped)) {
                assert!(b >= *a - 1e-12);
            }
        }
    }

    #[test]
    fn history_ring_buffer_is_bounded() {
        let mut s = DetectorState::with_history(4);
        for slot in 0..10u64 {
            cusum_step_with_p(&mut s, 0.5, 0.1, 100.0, slot);
        }
        let hist = s.history.as_ref().unwrap();
        assert_eq!(hist.len(), 4);
        assert_eq!(hist.front().unwrap().0, 6);
    }
}
