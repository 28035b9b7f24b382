//! Per-node routing state: C/Q factor tables, the policy observation vector,
//! the forwarding action space, and the local reward.
//!
//! Each node i keeps, per (next hop j, destination d), a path-quality
//! estimate q(j,d) and a confidence c(j,d) that j eventually reaches d. Both
//! live in `[0, 1]` and are updated from ACK feedback with exponential
//! smoothing; q additionally bootstraps from the best estimate the ACKing
//! neighbor advertises toward d.

use crate::sim::{NodeId, TransmitOutcome, TxAction};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Smoothing and bootstrap constants for the table updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CqParams {
    /// Learning rate for q entries.
    pub beta_q: f64,
    /// Learning rate for c entries.
    pub beta_c: f64,
    /// Discount applied to the neighbor's advertised downstream estimate.
    pub gamma_q: f64,
}

impl Default for CqParams {
    fn default() -> Self {
        Self {
            beta_q: 0.3,
            beta_c: 0.2,
            gamma_q: 0.95,
        }
    }
}

type Key = (NodeId, NodeId); // (next hop, destination)

/// One node's C/Q tables plus the previous-slot snapshot used for the
/// observation's delta features. Missing entries read as 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CqTables {
    cur_q: BTreeMap<Key, f64>,
    cur_c: BTreeMap<Key, f64>,
    prev_q: BTreeMap<Key, f64>,
    prev_c: BTreeMap<Key, f64>,
}

impl CqTables {
    pub fn q(&self, next_hop: NodeId, dest: NodeId) -> f64 {
        *self.cur_q.get(&(next_hop, dest)).unwrap_or(&0.0)
    }

    pub fn c(&self, next_hop: NodeId, dest: NodeId) -> f64 {
        *self.cur_c.get(&(next_hop, dest)).unwrap_or(&0.0)
    }

    pub fn delta_q(&self, next_hop: NodeId, dest: NodeId) -> f64 {
        self.q(next_hop, dest) - self.prev_q.get(&(next_hop, dest)).unwrap_or(&0.0)
    }

    pub fn delta_c(&self, next_hop: NodeId, dest: NodeId) -> f64 {
        self.c(next_hop, dest) - self.prev_c.get(&(next_hop, dest)).unwrap_or(&0.0)
    }

    /// Best current q toward `dest` over any next hop; what this node
    /// advertises on its own ACKs. A destination advertises 1 for itself at
    /// the call site.
    pub fn best_q_toward(&self, dest: NodeId) -> f64 {
        self.cur_q
            .range((NodeId(0), dest)..=(NodeId(u32::MAX), dest))
            .filter(|((_, d), _)| *d == dest)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max)
    }

    /// Applies one slot's transmission feedback and rotates the snapshot so
    /// the delta features compare this slot against the previous one.
    ///
    /// For every ACKing neighbor j (carrying its advertised `q_best` toward
    /// the destination d):
    ///   q(j,d) <- (1-beta_q) q(j,d) + beta_q (rho + gamma_q q_best),  rho = [j = d]
    ///   c(j,d) <- (1-beta_c) c(j,d) + beta_c
    /// For every targeted neighbor that stayed silent:
    ///   c(j,d) <- (1-beta_c) c(j,d)
    /// Entries are clamped to [0, 1]. With no transmission the tables only
    /// rotate, so the next deltas are zero.
    pub fn update(&mut self, outcome: Option<&TransmitOutcome>, params: &CqParams) {
        self.prev_q = self.cur_q.clone();
        self.prev_c = self.cur_c.clone();

        let Some(out) = outcome else { return };
        let dest = out.destination;

        for ack in &out.acks {
            let rho = if ack.from == dest { 1.0 } else { 0.0 };
            let advertised = if ack.from == dest { 1.0 } else { ack.q_best };
            let target = rho + params.gamma_q * advertised;
            let q = self.cur_q.entry((ack.from, dest)).or_insert(0.0);
            *q = ((1.0 - params.beta_q) * *q + params.beta_q * target).clamp(0.0, 1.0);
            let c = self.cur_c.entry((ack.from, dest)).or_insert(0.0);
            *c = ((1.0 - params.beta_c) * *c + params.beta_c).clamp(0.0, 1.0);
        }

        for &t in &out.targets {
            if out.acks.iter().any(|a| a.from == t) {
                continue;
            }
            let c = self.cur_c.entry((t, dest)).or_insert(0.0);
            *c = ((1.0 - params.beta_c) * *c).clamp(0.0, 1.0);
        }
    }
}

/// Layout constants for the fixed-size observation encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    /// Maximum number of neighbors encoded; excess neighbors are truncated
    /// nearest-first.
    pub k_max: usize,
}

impl ObsLayout {
    pub fn new(k_max: usize) -> Self {
        assert!(k_max >= 1, "k_max must be at least 1");
        Self { k_max }
    }

    /// Number of actions: broadcast plus one unicast slot per neighbor.
    pub fn action_dim(self) -> usize {
        self.k_max + 1
    }

    /// Feature vector length: c, q, delta-c, delta-q blocks of `k_max` each,
    /// then the one-hot previous action.
    pub fn obs_dim(self) -> usize {
        4 * self.k_max + self.action_dim()
    }
}

/// Forwarding decision. The unicast index points into the observation's
/// neighbor slots, not at a node id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Broadcast,
    Unicast(usize),
}

impl Action {
    /// Dense action index: 0 = broadcast, 1 + slot = unicast.
    pub fn to_index(self) -> usize {
        match self {
            Action::Broadcast => 0,
            Action::Unicast(slot) => 1 + slot,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Action::Broadcast
        } else {
            Action::Unicast(index - 1)
        }
    }

    /// Maps the slot-indexed action onto a concrete target set given the
    /// observation's neighbor list.
    pub fn resolve(self, neighbor_ids: &[NodeId]) -> Option<TxAction> {
        match self {
            Action::Broadcast => Some(TxAction::Broadcast),
            Action::Unicast(slot) => neighbor_ids.get(slot).map(|&id| TxAction::Unicast(id)),
        }
    }
}

/// Fixed-length policy input for one (node, destination) pair at one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `[c | q | delta-c | delta-q | one-hot prev action]`, zero-padded.
    pub features: Vec<f64>,
    /// Validity per action index; `mask[0]` (broadcast) is always true.
    pub mask: Vec<bool>,
    /// Node ids occupying the neighbor slots, ascending; length <= k_max.
    pub neighbor_ids: Vec<NodeId>,
}

impl Observation {
    pub fn valid_action_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// An all-zero observation with only broadcast valid; stands in for the
    /// unused bootstrap state of terminal transitions.
    pub fn terminal(layout: ObsLayout) -> Self {
        let mut mask = vec![false; layout.action_dim()];
        mask[0] = true;
        Observation {
            features: vec![0.0; layout.obs_dim()],
            mask,
            neighbor_ids: Vec::new(),
        }
    }
}

/// Builds the observation for a node holding a packet for `dest`.
///
/// `neighbors` are (id, distance) pairs for the node's current link set; the
/// nearest `k_max` are kept and then laid out in ascending id order.
pub fn build_observation(
    tables: &CqTables,
    neighbors: &[(NodeId, f64)],
    prev_action: Option<Action>,
    dest: NodeId,
    layout: ObsLayout,
) -> Observation {
    let k = layout.k_max;
    let mut picked: Vec<(NodeId, f64)> = neighbors.to_vec();
    if picked.len() > k {
        picked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        picked.truncate(k);
    }
    let mut ids: Vec<NodeId> = picked.into_iter().map(|(id, _)| id).collect();
    ids.sort_unstable();

    let mut features = vec![0.0; layout.obs_dim()];
    let mut mask = vec![false; layout.action_dim()];
    mask[0] = true;
    for (slot, &j) in ids.iter().enumerate() {
        features[slot] = tables.c(j, dest);
        features[k + slot] = tables.q(j, dest);
        features[2 * k + slot] = tables.delta_c(j, dest);
        features[3 * k + slot] = tables.delta_q(j, dest);
        mask[1 + slot] = true;
    }
    if let Some(a) = prev_action {
        let idx = a.to_index();
        if idx < layout.action_dim() {
            features[4 * k + idx] = 1.0;
        }
    }

    Observation {
        features,
        mask,
        neighbor_ids: ids,
    }
}

/// Positive weights of the four local reward terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        // Delivery dominates; the duplicate-ACK penalty stays mild.
        Self {
            w1: 1.0,
            w2: 0.2,
            w3: 1.0,
            w4: 5.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w4", self.w4),
        ] {
            if !(v > 0.0) {
                return Err(format!("reward weight {name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Locally observable quantities the reward is computed from: the ACK count
/// of the previous transmission and whether that transmission was ACKed by
/// the packet's destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardInputs {
    pub n_prev: u32,
    pub delivered_prev: bool,
}

impl From<&TransmitOutcome> for RewardInputs {
    fn from(out: &TransmitOutcome) -> Self {
        RewardInputs {
            n_prev: out.ack_count(),
            delivered_prev: out.dest_acked,
        }
    }
}

/// r = w1*[n=1] - w2*[n>1]*(n-1) - w3*[n=0] + w4*[D].
///
/// Exactly one of the first three indicator terms fires for any n >= 0.
pub fn compute_reward(inputs: RewardInputs, weights: &RewardWeights) -> f64 {
    let n = inputs.n_prev;
    let mut r = 0.0;
    if n == 1 {
        r += weights.w1;
    }
    if n > 1 {
        r -= weights.w2 * f64::from(n - 1);
    }
    if n == 0 {
        r -= weights.w3;
    }
    if inputs.delivered_prev {
        r += weights.w4;
    }
    r
}

/// What a routing policy returns for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyChoice {
    pub action: Action,
    pub logprob: f64,
}

/// Anything that can drive forwarding decisions inside an episode.
pub trait RoutePolicy {
    fn choose(&mut self, obs: &Observation) -> PolicyChoice;
}
