//! MANET routing testbed with a learned forwarding policy and an online
//! drift monitor.
//!
//! The crate is organized around four subsystems plus an orchestration layer:
//!
//! - [`sim`] — deterministic slotted-time network world: Gauss-Markov
//!   mobility, unit-disk links, packet transmission with ACK and jammer
//!   semantics, duplicate-packet detection.
//! - [`cq`] — per-node C/Q factor tables, the policy observation vector,
//!   the action space, and the local reward.
//! - [`policy`] — parameter-shared actor/critic networks, PPO with a
//!   clipped surrogate objective, generalized advantage estimation.
//! - [`detector`] — per-node TD-error monitoring: offline kNN/eCDF
//!   calibration and the online p-value → log-unlikelihood → CUSUM
//!   decision function.
//! - [`experiments`] — train/calibrate/detect orchestration, ROC/AUC
//!   evaluation, CSV and SVG reporting.
//!
//! Everything is seeded: identical configuration and seed produce
//! bit-identical traces, checkpoints and reports.

pub mod cq;
pub mod detector;
pub mod experiments;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod sim;
