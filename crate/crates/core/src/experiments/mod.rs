//! Run orchestration: calibration and detection batches, episode-level
//! anomaly scores, and the records the ROC/report stages consume.

pub mod report;
pub mod roc;

pub use roc::{auc_from_points, auc_from_scores, roc_points, RocPoint};

use crate::detector::{run_detector, CalibrationSet, DetectorConfig, DetectorError, NodeTrace};
use crate::policy::{
    collect_rollouts, phase, Checkpoint, PolicyError, SampledActor, TrainError,
};
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::sim::{run_episode, EpisodeOptions, EventRecord, NetMetrics};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const RUN_BATCH_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed run record file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

/// One detected episode: detector traces, the episode-level score, and the
/// network performance metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    /// "nominal" or "anomalous"; always consistent with `anomaly_kind`.
    pub label: String,
    pub anomaly_kind: String,
    /// max over slots of the mean per-node decision statistic.
    pub episode_score: f64,
    /// Per-slot mean per-node g, length t_max (carry-forward between acting
    /// slots, zero before a node's first sample).
    pub aggregate_g: Vec<f64>,
    pub node_traces: Vec<NodeTrace>,
    pub metrics: NetMetrics,
    /// Raw simulator events; populated only on request.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<EventRecord>,
}

/// On-disk container for a batch of records from one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunBatch {
    pub version: u32,
    pub anomaly_kind: String,
    pub label: String,
    pub records: Vec<RunRecord>,
}

impl RunBatch {
    pub fn new(anomaly_kind: &str, label: &str, records: Vec<RunRecord>) -> Self {
        RunBatch {
            version: RUN_BATCH_VERSION,
            anomaly_kind: anomaly_kind.to_string(),
            label: label.to_string(),
            records,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ExperimentError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ExperimentError> {
        let batch: RunBatch = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if batch.version != RUN_BATCH_VERSION {
            return Err(ExperimentError::Invalid(format!(
                "unsupported run batch version {}",
                batch.version
            )));
        }
        for r in &batch.records {
            if r.label != batch.label || r.anomaly_kind != batch.anomaly_kind {
                return Err(ExperimentError::Invalid(
                    "record label/kind inconsistent with batch header".into(),
                ));
            }
        }
        Ok(batch)
    }
}

/// Mean per-node decision statistic per slot, carrying each node's g forward
/// between its acting slots. Nodes that never acted contribute 0.
pub fn aggregate_g_series(traces: &[NodeTrace], t_max: u64, n: usize) -> Vec<f64> {
    let mut series = vec![0.0; t_max as usize];
    let mut per_node_g = vec![0.0f64; n];
    let mut cursors: BTreeMap<usize, std::iter::Peekable<std::slice::Iter<'_, _>>> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| (i, t.rows.iter().peekable()))
        .collect();
    let node_index: Vec<usize> = traces.iter().map(|t| t.node.index()).collect();
    for (slot, out) in series.iter_mut().enumerate() {
        for (i, cursor) in cursors.iter_mut() {
            while let Some(row) = cursor.peek() {
                if row.slot <= slot as u64 {
                    per_node_g[node_index[*i]] = row.g;
                    cursor.next();
                } else {
                    break;
                }
            }
        }
        *out = per_node_g.iter().sum::<f64>() / n.max(1) as f64;
    }
    series
}

/// Episode-level anomaly score: max over slots of the aggregate statistic.
pub fn episode_score(aggregate_g: &[f64]) -> f64 {
    aggregate_g.iter().copied().fold(0.0, f64::max)
}

/// Runs the frozen policy on nominal episodes and builds the calibration set
/// from the pooled per-(episode, node) TD-error streams.
pub fn run_calibration(
    ckpt: &Checkpoint,
    scenario: &ScenarioConfig,
    episodes: usize,
    k: usize,
    window: usize,
    base_seed: u64,
) -> Result<CalibrationSet, ExperimentError> {
    if !scenario.anomaly.is_nominal() {
        return Err(ExperimentError::Invalid(format!(
            "calibration requires a nominal scenario, got anomaly = {}",
            scenario.anomaly.kind_name()
        )));
    }
    if episodes == 0 {
        return Err(ExperimentError::Invalid(
            "calibration needs at least one episode".into(),
        ));
    }
    scenario.validate()?;
    if scenario.layout() != ckpt.layout() {
        return Err(ExperimentError::Invalid(format!(
            "scenario k_max {} does not match checkpoint k_max {}",
            scenario.layout().k_max,
            ckpt.k_max
        )));
    }
    let (actor, critic) = ckpt
        .instantiate()
        .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let gamma = ckpt.hyperparams.gamma;

    let outputs = collect_rollouts(
        scenario,
        &actor,
        base_seed,
        phase::CALIBRATE,
        0,
        episodes,
        EpisodeOptions::default(),
    );
    let mut streams: Vec<Vec<f64>> = Vec::new();
    for out in &outputs {
        for (_, samples) in crate::detector::td_streams(&out.transitions, &critic, gamma) {
            streams.push(samples.into_iter().map(|s| s.delta).collect());
        }
    }
    Ok(CalibrationSet::build(streams, k, window, gamma)?)
}

/// Executes the frozen policy in a (possibly anomalous) scenario and runs
/// the per-node detectors over each episode.
pub fn run_detection(
    ckpt: &Checkpoint,
    calib: &CalibrationSet,
    scenario: &ScenarioConfig,
    cfg: &DetectorConfig,
    episodes: usize,
    base_seed: u64,
    record_events: bool,
) -> Result<Vec<RunRecord>, ExperimentError> {
    if episodes == 0 {
        return Err(ExperimentError::Invalid(
            "detection needs at least one episode".into(),
        ));
    }
    scenario.validate()?;
    if scenario.layout() != ckpt.layout() {
        return Err(ExperimentError::Invalid(format!(
            "scenario k_max {} does not match checkpoint k_max {}",
            scenario.layout().k_max,
            ckpt.k_max
        )));
    }
    let (actor, critic) = ckpt
        .instantiate()
        .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
    let gamma = ckpt.hyperparams.gamma;
    if (gamma - calib.gamma).abs() > 1e-12 {
        return Err(ExperimentError::Invalid(format!(
            "calibration gamma {} does not match checkpoint gamma {gamma}",
            calib.gamma
        )));
    }
    cfg.validate(calib)?;

    let label = scenario.anomaly.label().to_string();
    let kind = scenario.anomaly.kind_name().to_string();

    let records: Result<Vec<RunRecord>, ExperimentError> = (0..episodes as u64)
        .into_par_iter()
        .map(|e| {
            let ep_seed = ScenarioConfig::episode_seed(base_seed, phase::DETECT, e);
            let params = scenario.resolve(ep_seed);
            let mut policy = SampledActor::new(&actor, ep_seed);
            let opts = EpisodeOptions {
                collect_transitions: true,
                record_events,
            };
            let out = run_episode(&params, ep_seed, &mut policy, opts);
            let streams = crate::detector::td_streams(&out.transitions, &critic, gamma);
            let traces = run_detector(&streams, calib, cfg)?;
            let aggregate = aggregate_g_series(&traces, params.t_max, params.n);
            Ok(RunRecord {
                seed: ep_seed,
                label: label.clone(),
                anomaly_kind: kind.clone(),
                episode_score: episode_score(&aggregate),
                aggregate_g: aggregate,
                node_traces: traces,
                metrics: out.metrics,
                events: out.events,
            })
        })
        .collect();
    records
}

/// Splits batches into (nominal scores, anomalous scores), enforcing label
/// consistency.
pub fn split_scores(batches: &[RunBatch]) -> Result<(Vec<f64>, Vec<f64>), ExperimentError> {
    let mut nominal = Vec::new();
    let mut anomalous = Vec::new();
    for b in batches {
        let bucket = match b.label.as_str() {
            "nominal" => &mut nominal,
            "anomalous" => &mut anomalous,
            other => {
                return Err(ExperimentError::Invalid(format!(
                    "unknown batch label {other:?}"
                )))
            }
        };
        bucket.extend(b.records.iter().map(|r| r.episode_score));
    }
    Ok((nominal, anomalous))
}

/// Helper used by tests and the jammer experiment: mean aggregate score over
/// an inclusive slot window.
pub fn mean_aggregate_over_window(record: &RunRecord, from_slot: u64, to_slot: u64) -> f64 {
    let lo = from_slot as usize;
    let hi = (to_slot as usize + 1).min(record.aggregate_g.len());
    if lo >= hi {
        return 0.0;
    }
    record.aggregate_g[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
}
