//! Online TD-error drift monitoring.
//!
//! Offline, nominal TD-errors from the frozen policy are turned into
//! leave-one-out kNN statistics and their eCDF ([`CalibrationSet`]). Online,
//! each node independently maps every fresh TD-error to a kNN statistic, a
//! smoothed tail probability, a log-unlikelihood, and a CUSUM-like decision
//! statistic with a first-crossing alarm ([`run_detector`]).

mod calibration;
mod cusum;

pub use calibration::{
    load_calibration, save_calibration, CalibrationSet, DetectorError, CALIBRATION_VERSION,
};
pub use cusum::{cusum_step, cusum_step_with_p, log_unlikelihood, DetectorState};

use crate::policy::{value, Transition, ValueParams};
use crate::sim::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One monitored TD-error sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdSample {
    pub node: NodeId,
    pub slot: u64,
    pub delta: f64,
}

/// One-step TD-error of the value network,
///
/// ```text
/// delta = V(s) - r - gamma * V(s')
/// ```
///
/// with the bootstrap term dropped on terminal steps. Detection is invariant
/// to a global sign flip since the kNN statistic only sees distances.
pub fn td_error(
    critic: &ValueParams,
    obs: &crate::cq::Observation,
    reward: f64,
    obs_next: &crate::cq::Observation,
    done: bool,
    gamma: f64,
) -> f64 {
    let bootstrap = if done { 0.0 } else { gamma * value(critic, obs_next) };
    value(critic, obs) - reward - bootstrap
}

/// Per-node TD-error streams from recorded transitions, ordered by slot.
pub fn td_streams(
    transitions: &[Transition],
    critic: &ValueParams,
    gamma: f64,
) -> BTreeMap<NodeId, Vec<TdSample>> {
    let mut streams: BTreeMap<NodeId, Vec<TdSample>> = BTreeMap::new();
    for tr in transitions {
        streams.entry(tr.node).or_default().push(TdSample {
            node: tr.node,
            slot: tr.slot,
            delta: td_error(critic, &tr.obs, tr.reward, &tr.obs_next, tr.done, gamma),
        });
    }
    for stream in streams.values_mut() {
        stream.sort_by_key(|s| s.slot);
    }
    streams
}

/// Online decision-function knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Neighbor count; must match the calibration set.
    pub k: usize,
    /// Acceptance level on the nominal kNN distribution.
    pub alpha: f64,
    /// Alarm threshold on the decision statistic.
    pub h: f64,
    /// Minimum p-value before the log; defaults to the calibration's
    /// smoothing floor 1/(M+1).
    pub p_floor: Option<f64>,
    /// Embedding arity; must match the calibration set.
    pub window: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            k: 5,
            alpha: 0.05,
            h: 50.0,
            p_floor: None,
            window: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self, calib: &CalibrationSet) -> Result<(), DetectorError> {
        if self.k != calib.k() {
            return Err(DetectorError::InvalidConfig(format!(
                "k = {} does not match calibration k = {}",
                self.k,
                calib.k()
            )));
        }
        if self.window != calib.window() {
            return Err(DetectorError::InvalidConfig(format!(
                "window = {} does not match calibration window = {}",
                self.window,
                calib.window()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DetectorError::InvalidConfig(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        // With alpha at or below the smoothing floor 1/(M+1), even the most
        // extreme outlier yields ell <= 0 and evidence can never accumulate.
        if self.alpha <= calib.smoothing_floor() {
            return Err(DetectorError::InvalidConfig(format!(
                "alpha = {} is not above the smoothing floor 1/(M+1) = {}; \
                 grow the calibration set or raise alpha",
                self.alpha,
                calib.smoothing_floor()
            )));
        }
        if !(self.h > 0.0) {
            return Err(DetectorError::InvalidConfig(format!(
                "threshold h must be positive, got {}",
                self.h
            )));
        }
        if let Some(pf) = self.p_floor {
            if !(pf > 0.0 && pf < self.alpha) {
                return Err(DetectorError::InvalidConfig(format!(
                    "p_floor must lie in (0, alpha), got {pf}"
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_p_floor(&self, calib: &CalibrationSet) -> f64 {
        self.p_floor.unwrap_or_else(|| calib.smoothing_floor())
    }
}

/// One row of a per-node detector trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub slot: u64,
    pub delta: f64,
    pub knn_stat: f64,
    pub p: f64,
    pub ell: f64,
    pub g: f64,
    pub alarmed: bool,
}

/// Full per-node run of the online detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub node: NodeId,
    pub rows: Vec<TraceRow>,
    pub alarm_slot: Option<u64>,
}

/// Runs the per-node detectors over TD-error streams. Nodes are independent;
/// the calibration structure is shared read-only. With `window > 1` the
/// first `window - 1` samples of each node only warm up the embedding.
pub fn run_detector(
    streams: &BTreeMap<NodeId, Vec<TdSample>>,
    calib: &CalibrationSet,
    cfg: &DetectorConfig,
) -> Result<Vec<NodeTrace>, DetectorError> {
    cfg.validate(calib)?;
    let p_floor = cfg.resolved_p_floor(calib);
    let mut traces = Vec::with_capacity(streams.len());
    for (&node, samples) in streams {
        let mut state = DetectorState::new();
        let mut rows = Vec::with_capacity(samples.len());
        let mut embed: Vec<f64> = Vec::with_capacity(cfg.window);
        for s in samples {
            embed.push(s.delta);
            if embed.len() > cfg.window {
                embed.remove(0);
            }
            if embed.len() < cfg.window {
                continue;
            }
            let d = calib.knn_statistic(&embed);
            let p = calib.tail_probability(d);
            let ell = log_unlikelihood(p, cfg.alpha, p_floor);
            cusum_step_with_p(&mut state, p, ell, cfg.h, s.slot);
            rows.push(TraceRow {
                slot: s.slot,
                delta: s.delta,
                knn_stat: d,
                p,
                ell,
                g: state.g,
                alarmed: state.alarmed(),
            });
        }
        traces.push(NodeTrace {
            node,
            rows,
            alarm_slot: state.alarm_slot,
        });
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cq::{Observation, ObsLayout};
    use crate::rng::{stream_rng, Stream};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn td_error_hand_values() {
        // Zero critic: V == 0 everywhere, r = 1 -> delta = -1.
        let layout = ObsLayout::new(2);
        let mut rng = stream_rng(30, Stream::Init);
        let mut critic = ValueParams::new(layout, &mut rng);
        for l in &mut critic.net.layers {
            l.w.iter_mut().for_each(|w| *w = 0.0);
            l.b.iter_mut().for_each(|b| *b = 0.0);
        }
        let obs = Observation::terminal(layout);
        assert_eq!(td_error(&critic, &obs, 1.0, &obs, false, 0.99), -1.0);

        // Fixed point: r = V(s) - gamma V(s') -> delta = 0.
        critic.net.layers.last_mut().unwrap().b = vec![2.0];
        let r = 2.0 - 0.99 * 2.0;
        assert_relative_eq!(td_error(&critic, &obs, r, &obs, false, 0.99), 0.0);

        // V(s)=2.0, V(s')=1.5 via done-vs-bootstrap arithmetic checked by
        // hand: 2.0 - 0.3 - 0.99*1.5 = 0.215. Build a critic returning 2.0,
        // and a "next" critic value of 1.5 by scaling the observation path is
        // overkill here; instead verify with done=true dropping the bootstrap
        // and the explicit formula on the constant net.
        assert_relative_eq!(
            2.0 - 0.3 - 0.99 * 1.5,
            0.215,
            epsilon = 1e-12
        );
        assert_relative_eq!(td_error(&critic, &obs, 0.3, &obs, true, 0.99), 1.7);
    }

    #[test]
    fn constant_stream_behaves_linearly() {
        // A stream identical to one calibration point: p is constant, so the
        // decision statistic either stays floored at 0 or grows linearly.
        let calib = CalibrationSet::build(
            vec![(0..=100).map(f64::from).collect()],
            1,
            1,
            0.99,
        )
        .unwrap();
        let cfg = DetectorConfig {
            k: 1,
            alpha: 0.05,
            h: 1e9,
            ..Default::default()
        };
        let mk = |delta: f64| {
            let mut m = BTreeMap::new();
            m.insert(
                NodeId(0),
                (0..50)
                    .map(|slot| TdSample {
                        node: NodeId(0),
                        slot,
                        delta,
                    })
                    .collect::<Vec<_>>(),
            );
            m
        };
        // On-calibration value: d = 0, p = 1, ell = ln(alpha) < 0 -> g == 0.
        let traces = run_detector(&mk(2.0), &calib, &cfg).unwrap();
        assert!(traces[0].rows.iter().all(|r| r.g == 0.0));
        // Far outlier: constant positive ell -> g grows linearly.
        let traces = run_detector(&mk(1000.0), &calib, &cfg).unwrap();
        let ell = traces[0].rows[0].ell;
        assert!(ell > 0.0);
        for (i, row) in traces[0].rows.iter().enumerate() {
            assert_relative_eq!(row.g, ell * (i + 1) as f64, epsilon = 1e-9);
        }
    }

    #[test]
    fn detector_is_deterministic_and_permutation_invariant() {
        let mut rng = stream_rng(31, Stream::Synthetic);
        let values: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut permuted = values.clone();
        use rand::seq::SliceRandom;
        permuted.shuffle(&mut rng);

        let calib_a = CalibrationSet::build(vec![values], 5, 1, 0.99).unwrap();
        let calib_b = CalibrationSet::build(vec![permuted], 5, 1, 0.99).unwrap();
        let cfg = DetectorConfig::default();

        let mut streams = BTreeMap::new();
        streams.insert(
            NodeId(3),
            (0..100)
                .map(|slot| TdSample {
                    node: NodeId(3),
                    slot,
                    delta: rng.gen_range(-2.0..2.0),
                })
                .collect::<Vec<_>>(),
        );
        let t1 = run_detector(&streams, &calib_a, &cfg).unwrap();
        let t2 = run_detector(&streams, &calib_a, &cfg).unwrap();
        assert_eq!(t1, t2);
        let t3 = run_detector(&streams, &calib_b, &cfg).unwrap();
        assert_eq!(t1, t3, "detector output depends on calibration order");
    }

    #[test]
    fn config_validation_catches_mismatches() {
        let calib = CalibrationSet::build(
            vec![(0..60).map(f64::from).collect()],
            2,
            1,
            0.99,
        )
        .unwrap();
        let ok = DetectorConfig {
            k: 2,
            ..Default::default()
        };
        assert!(ok.validate(&calib).is_ok());
        assert!(DetectorConfig {
            k: 3,
            ..Default::default()
        }
        .validate(&calib)
        .is_err());
        assert!(DetectorConfig {
            k: 2,
            alpha: 1.5,
            ..Default::default()
        }
        .validate(&calib)
        .is_err());
        // Alpha at the smoothing floor can never accumulate evidence.
        assert!(DetectorConfig {
            k: 2,
            alpha: 1.0 / 61.0,
            ..Default::default()
        }
        .validate(&calib)
        .is_err());
        assert!(DetectorConfig {
            k: 2,
            window: 2,
            ..Default::default()
        }
        .validate(&calib)
        .is_err());
        assert!(DetectorConfig {
            k: 2,
            p_floor: Some(0.1),
            ..Default::default()
        }
        .validate(&calib)
        .is_err());
    }
}
