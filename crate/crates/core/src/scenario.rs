//! Declarative episode-family configuration.
//!
//! Scenarios are TOML files with a strict schema (unknown keys are rejected).
//! A scenario describes the nominal world plus, optionally, per-episode
//! randomization ranges (used for training/calibration diversity) and one
//! anomaly block (jammers, a network-size shift, a mobility shift, or a
//! traffic shift).

use crate::cq::{CqParams, ObsLayout, RewardWeights};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sim::{
    Area, ChannelModel, JammerConfig, JammerMode, MobilityParams, NodeId, SimParams, TrafficFlow,
    Vec2,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaConfig {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConfig {
    pub mean_speed: f64,
    pub memory: f64,
    pub sigma_speed: f64,
    pub sigma_heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub source: u32,
    pub destination: u32,
    pub rate: f64,
}

/// Either an explicit flow list or `random_flows` drawn per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_flows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flows: Option<Vec<FlowConfig>>,
}

/// Per-episode randomization ranges, matching the training regime: mean
/// mobility speed, area scale, and traffic rate scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RandomizeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_speed: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_scale: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_scale: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JammerToml {
    pub x: f64,
    pub y: f64,
    pub jam_radius: f64,
    pub from_slot: u64,
    pub to_slot: u64,
    pub mode: JammerMode,
}

/// Exactly one anomaly kind per scenario; `none` for nominal runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnomalyConfig {
    #[default]
    None,
    Jammer {
        jammers: Vec<JammerToml>,
    },
    SizeShift {
        n_new: usize,
    },
    MobilityShift {
        speed_multiplier: f64,
    },
    TrafficShift {
        rate_multiplier: f64,
    },
}

impl AnomalyConfig {
    pub fn is_nominal(&self) -> bool {
        matches!(self, AnomalyConfig::None)
    }

    pub fn label(&self) -> &'static str {
        match self {
            AnomalyConfig::None => "nominal",
            _ => "anomalous",
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            AnomalyConfig::None => "none",
            AnomalyConfig::Jammer { .. } => "jammer",
            AnomalyConfig::SizeShift { .. } => "size_shift",
            AnomalyConfig::MobilityShift { .. } => "mobility_shift",
            AnomalyConfig::TrafficShift { .. } => "traffic_shift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CqConfig {
    pub beta_q: f64,
    pub beta_c: f64,
    pub gamma_q: f64,
}

/// The on-disk scenario schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub t_max: u64,
    pub seed: u64,
    pub comm_radius: f64,
    pub area: AreaConfig,
    pub mobility: MobilityConfig,
    pub traffic: TrafficConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttl: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dpd_capacity: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cq: Option<CqConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomize: Option<RandomizeConfig>,
    #[serde(default)]
    pub anomaly: AnomalyConfig,
}

impl ScenarioConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n < 2 {
            return Err(invalid(format!("n must be >= 2, got {}", self.n)));
        }
        if self.t_max == 0 {
            return Err(invalid("t_max must be positive"));
        }
        if !(self.comm_radius > 0.0) {
            return Err(invalid("comm_radius must be positive"));
        }
        if !(self.area.width > 0.0 && self.area.height > 0.0) {
            return Err(invalid("area dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&self.mobility.memory) {
            return Err(invalid("mobility.memory must lie in [0, 1]"));
        }
        if self.mobility.mean_speed < 0.0
            || self.mobility.sigma_speed < 0.0
            || self.mobility.sigma_heading < 0.0
        {
            return Err(invalid("mobility parameters must be non-negative"));
        }
        match (&self.traffic.flows, self.traffic.random_flows) {
            (Some(flows), None) => {
                if flows.is_empty() {
                    return Err(invalid("traffic.flows must not be empty"));
                }
                for f in flows {
                    if f.source == f.destination {
                        return Err(invalid("flow source and destination must differ"));
                    }
                    let n = self.effective_n() as u32;
                    if f.source >= n || f.destination >= n {
                        return Err(invalid(format!(
                            "flow endpoints must be < n ({})",
                            self.effective_n()
                        )));
                    }
                    if !(f.rate > 0.0 && f.rate <= 1.0) {
                        return Err(invalid("flow rate must lie in (0, 1]"));
                    }
                }
            }
            (None, Some(k)) => {
                if k == 0 {
                    return Err(invalid("traffic.random_flows must be >= 1"));
                }
                let rate = self
                    .traffic
                    .rate
                    .ok_or_else(|| invalid("traffic.rate required with random_flows"))?;
                if !(rate > 0.0 && rate <= 1.0) {
                    return Err(invalid("traffic.rate must lie in (0, 1]"));
                }
            }
            (Some(_), Some(_)) => {
                return Err(invalid("set either traffic.flows or traffic.random_flows"));
            }
            (None, None) => {
                return Err(invalid("traffic needs flows or random_flows"));
            }
        }
        if let Some(r) = &self.randomize {
            for (name, range) in [
                ("mean_speed", r.mean_speed),
                ("area_scale", r.area_scale),
                ("rate_scale", r.rate_scale),
            ] {
                if let Some([lo, hi]) = range {
                    if !(lo <= hi && lo > 0.0) {
                        return Err(invalid(format!(
                            "randomize.{name} range must satisfy 0 < lo <= hi"
                        )));
                    }
                }
            }
        }
        match &self.anomaly {
            AnomalyConfig::Jammer { jammers } => {
                if jammers.is_empty() {
                    return Err(invalid("anomaly.jammers must not be empty"));
                }
                for j in jammers {
                    if !(j.jam_radius > 0.0) {
                        return Err(invalid("jam_radius must be positive"));
                    }
                    if j.from_slot > j.to_slot || j.to_slot >= self.t_max {
                        return Err(invalid(format!(
                            "jammer window [{},{}] must fit in [0,{})",
                            j.from_slot, j.to_slot, self.t_max
                        )));
                    }
                }
            }
            AnomalyConfig::SizeShift { n_new } => {
                if *n_new < 2 {
                    return Err(invalid("size_shift n_new must be >= 2"));
                }
            }
            AnomalyConfig::MobilityShift { speed_multiplier } => {
                if !(*speed_multiplier > 0.0) {
                    return Err(invalid("speed_multiplier must be positive"));
                }
            }
            AnomalyConfig::TrafficShift { rate_multiplier } => {
                if !(*rate_multiplier > 0.0) {
                    return Err(invalid("rate_multiplier must be positive"));
                }
            }
            AnomalyConfig::None => {}
        }
        if let Some(r) = &self.reward {
            RewardWeights {
                w1: r.w1,
                w2: r.w2,
                w3: r.w3,
                w4: r.w4,
            }
            .validate()
            .map_err(invalid)?;
        }
        if self.k_max == Some(0) {
            return Err(invalid("k_max must be >= 1"));
        }
        Ok(())
    }

    /// Node count after the anomaly block is applied.
    pub fn effective_n(&self) -> usize {
        match self.anomaly {
            AnomalyConfig::SizeShift { n_new } => n_new,
            _ => self.n,
        }
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout::new(self.k_max.unwrap_or(8))
    }

    pub fn reward_weights(&self) -> RewardWeights {
        self.reward
            .map(|r| RewardWeights {
                w1: r.w1,
                w2: r.w2,
                w3: r.w3,
                w4: r.w4,
            })
            .unwrap_or_default()
    }

    pub fn cq_params(&self) -> CqParams {
        self.cq
            .map(|c| CqParams {
                beta_q: c.beta_q,
                beta_c: c.beta_c,
                gamma_q: c.gamma_q,
            })
            .unwrap_or_default()
    }

    /// Resolves the concrete world for one episode: applies randomization
    /// ranges and the anomaly block, and draws random flows. Deterministic in
    /// `episode_seed`.
    pub fn resolve(&self, episode_seed: u64) -> SimParams {
        let mut rng = stream_rng(episode_seed, Stream::Setup);
        let n = self.effective_n();

        let mut mean_speed = self.mobility.mean_speed;
        let mut area_scale = 1.0;
        let mut rate_scale = 1.0;
        if let Some(r) = &self.randomize {
            if let Some([lo, hi]) = r.mean_speed {
                mean_speed = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            }
            if let Some([lo, hi]) = r.area_scale {
                area_scale = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            }
            if let Some([lo, hi]) = r.rate_scale {
                rate_scale = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            }
        }
        if let AnomalyConfig::MobilityShift { speed_multiplier } = self.anomaly {
            mean_speed *= speed_multiplier;
        }
        let anomaly_rate_scale = match self.anomaly {
            AnomalyConfig::TrafficShift { rate_multiplier } => rate_multiplier,
            _ => 1.0,
        };

        let flows: Vec<TrafficFlow> = match (&self.traffic.flows, self.traffic.random_flows) {
            (Some(expl), _) => expl
                .iter()
                .enumerate()
                .map(|(i, f)| TrafficFlow {
                    flow_id: i as u64,
                    source: NodeId(f.source),
                    destination: NodeId(f.destination),
                    rate: (f.rate * rate_scale * anomaly_rate_scale).min(1.0),
                })
                .collect(),
            (None, Some(k)) => {
                let rate = self.traffic.rate.expect("validated");
                (0..k)
                    .map(|i| {
                        let source = rng.gen_range(0..n as u32);
                        let mut destination = rng.gen_range(0..n as u32);
                        while destination == source {
                            destination = rng.gen_range(0..n as u32);
                        }
                        TrafficFlow {
                            flow_id: i as u64,
                            source: NodeId(source),
                            destination: NodeId(destination),
                            rate: (rate * rate_scale * anomaly_rate_scale).min(1.0),
                        }
                    })
                    .collect()
            }
            (None, None) => unreachable!("validated"),
        };

        let jammers: Vec<JammerConfig> = match &self.anomaly {
            AnomalyConfig::Jammer { jammers } => jammers
                .iter()
                .map(|j| JammerConfig {
                    position: Vec2::new(j.x, j.y),
                    jam_radius: j.jam_radius,
                    from_slot: j.from_slot,
                    to_slot: j.to_slot,
                    mode: j.mode,
                })
                .collect(),
            _ => Vec::new(),
        };

        SimParams {
            n,
            mobility: MobilityParams {
                mean_speed,
                memory: self.mobility.memory,
                sigma_speed: self.mobility.sigma_speed,
                sigma_heading: self.mobility.sigma_heading,
                area: Area {
                    width: self.area.width * area_scale.sqrt(),
                    height: self.area.height * area_scale.sqrt(),
                },
            },
            channel: ChannelModel {
                comm_radius: self.comm_radius,
                jammers,
            },
            flows,
            t_max: self.t_max,
            ttl: self.ttl.unwrap_or(4 * n as u32),
            dpd_capacity: self.dpd_capacity.unwrap_or(4096),
            layout: self.layout(),
            cq: self.cq_params(),
            reward: self.reward_weights(),
        }
    }

    /// Seed for episode `index` of run phase `phase` under `base_seed`.
    pub fn episode_seed(base_seed: u64, phase: u64, index: u64) -> u64 {
        derive_seed(base_seed, &[phase, index])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const NOMINAL_TOML: &str = r#"
n = 8
t_max = 500
seed = 42
comm_radius = 130.0

[area]
width = 360.0
height = 360.0

[mobility]
mean_speed = 5.0
memory = 0.8
sigma_speed = 1.0
sigma_heading = 0.35

[traffic]
random_flows = 2
rate = 0.2

[randomize]
mean_speed = [3.0, 8.0]
area_scale = [0.85, 1.2]
rate_scale = [0.6, 1.4]
"#;

    #[test]
    fn nominal_scenario_parses_and_resolves() {
        let cfg = ScenarioConfig::from_toml_str(NOMINAL_TOML).unwrap();
        assert!(cfg.anomaly.is_nominal());
        let params = cfg.resolve(7);
        assert_eq!(params.n, 8);
        assert_eq!(params.flows.len(), 2);
        assert_eq!(params.ttl, 32);
        assert!(params.mobility.mean_speed >= 3.0 && params.mobility.mean_speed < 8.0);
        for f in &params.flows {
            assert_ne!(f.source, f.destination);
            assert!(f.rate > 0.0 && f.rate <= 1.0);
        }
        // Same seed, same resolution; different seed, different draws.
        assert_eq!(params, cfg.resolve(7));
        assert_ne!(params, cfg.resolve(8));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{NOMINAL_TOML}\nbogus_key = 3\n");
        let err = ScenarioConfig::from_toml_str(&bad).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(_)), "{err}");
    }

    #[test]
    fn anomaly_blocks_parse_and_apply() {
        let jam = format!(
            "{NOMINAL_TOML}\n[anomaly]\nkind = \"jammer\"\n[[anomaly.jammers]]\nx = 180.0\ny = 180.0\njam_radius = 260.0\nfrom_slot = 100\nto_slot = 400\nmode = \"suppress_ack\"\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&jam).unwrap();
        assert_eq!(cfg.anomaly.kind_name(), "jammer");
        assert_eq!(cfg.resolve(1).channel.jammers.len(), 1);

        let size = format!("{NOMINAL_TOML}\n[anomaly]\nkind = \"size_shift\"\nn_new = 20\n");
        let cfg = ScenarioConfig::from_toml_str(&size).unwrap();
        assert_eq!(cfg.effective_n(), 20);
        let params = cfg.resolve(1);
        assert_eq!(params.n, 20);
        assert!(params.flows.iter().all(|f| f.source.0 < 20));

        let mob = format!(
            "{NOMINAL_TOML}\n[anomaly]\nkind = \"mobility_shift\"\nspeed_multiplier = 3.0\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&mob).unwrap();
        assert!(!cfg.anomaly.is_nominal());

        let tr = format!(
            "{NOMINAL_TOML}\n[anomaly]\nkind = \"traffic_shift\"\nrate_multiplier = 2.0\n"
        );
        let cfg = ScenarioConfig::from_toml_str(&tr).unwrap();
        let params = cfg.resolve(1);
        assert!(params.flows.iter().all(|f| f.rate <= 1.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            ("n = 1", NOMINAL_TOML.replacen("n = 8", "n = 1", 1)),
            (
                "memory out of range",
                NOMINAL_TOML.replacen("memory = 0.8", "memory = 1.5", 1),
            ),
            (
                "rate out of range",
                NOMINAL_TOML.replacen("rate = 0.2", "rate = 1.5", 1),
            ),
            (
                "zero radius",
                NOMINAL_TOML.replacen("comm_radius = 130.0", "comm_radius = 0.0", 1),
            ),
        ];
        for (name, toml) in cases {
            assert!(
                ScenarioConfig::from_toml_str(&toml).is_err(),
                "{name} should fail"
            );
        }
        // Jammer window must fit inside the episode.
        let jam = format!(
            "{NOMINAL_TOML}\n[anomaly]\nkind = \"jammer\"\n[[anomaly.jammers]]\nx = 0.0\ny = 0.0\njam_radius = 10.0\nfrom_slot = 0\nto_slot = 500\nmode = \"suppress_all\"\n"
        );
        assert!(ScenarioConfig::from_toml_str(&jam).is_err());
    }

    #[test]
    fn explicit_flows_are_honored() {
        let toml = r#"
n = 4
t_max = 100
seed = 1
comm_radius = 50.0

[area]
width = 100.0
height = 100.0

[mobility]
mean_speed = 2.0
memory = 0.5
sigma_speed = 0.5
sigma_heading = 0.2

[traffic]
[[traffic.flows]]
source = 0
destination = 3
rate = 1.0
"#;
        let cfg = ScenarioConfig::from_toml_str(toml).unwrap();
        let params = cfg.resolve(9);
        assert_eq!(params.flows.len(), 1);
        assert_eq!(params.flows[0].source, NodeId(0));
        assert_eq!(params.flows[0].destination, NodeId(3));
        assert_eq!(params.flows[0].rate, 1.0);
    }
}
