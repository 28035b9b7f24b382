//! Unit-disk channel: link graph construction and jammer geometry.

use super::{NodeId, Vec2};
use serde::{Deserialize, Serialize};

/// How a jammer disturbs traffic inside its disk while active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JammerMode {
    /// Data still gets through; ACKs cannot be decoded by senders inside the disk.
    SuppressAck,
    /// Receivers inside the disk receive nothing; senders inside decode no ACKs.
    SuppressAll,
}

/// A static jammer active over a closed slot interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JammerConfig {
    pub position: Vec2,
    pub jam_radius: f64,
    /// Active slots, inclusive on both ends.
    pub from_slot: u64,
    pub to_slot: u64,
    pub mode: JammerMode,
}

impl JammerConfig {
    pub fn active_at(&self, slot: u64) -> bool {
        slot >= self.from_slot && slot <= self.to_slot
    }

    pub fn covers(&self, p: Vec2) -> bool {
        self.position.distance(p) <= self.jam_radius
    }
}

/// Disk-graph channel model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub comm_radius: f64,
    pub jammers: Vec<JammerConfig>,
}

impl ChannelModel {
    /// True if `p` sits inside any active jammer matching `pred`.
    fn jammed(&self, p: Vec2, slot: u64, pred: impl Fn(JammerMode) -> bool) -> bool {
        self.jammers
            .iter()
            .any(|j| j.active_at(slot) && pred(j.mode) && j.covers(p))
    }

    /// A receiver at `p` gets no data this slot.
    pub fn blocks_reception(&self, p: Vec2, slot: u64) -> bool {
        self.jammed(p, slot, |m| m == JammerMode::SuppressAll)
    }

    /// A sender at `p` decodes no ACKs this slot.
    pub fn blocks_ack_decoding(&self, p: Vec2, slot: u64) -> bool {
        self.jammed(p, slot, |m| {
            matches!(m, JammerMode::SuppressAck | JammerMode::SuppressAll)
        })
    }
}

/// Undirected neighbor lists, symmetric by construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkGraph {
    /// Per node, its neighbors in ascending id order.
    neighbors: Vec<Vec<NodeId>>,
}

impl LinkGraph {
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node.index()]
    }

    pub fn linked(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors[a.index()].binary_search(&b).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Builds the link graph for one slot: `(i, j)` is an edge iff the Euclidean
/// distance is at most `comm_radius` (closed disk, so a pair exactly at the
/// radius counts as linked).
pub fn compute_links(positions: &[Vec2], channel: &ChannelModel) -> LinkGraph {
    let n = positions.len();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if positions[i].distance(positions[j]) <= channel.comm_radius {
                neighbors[i].push(NodeId(j as u32));
                neighbors[j].push(NodeId(i as u32));
            }
        }
    }
    // Inner loops push ascending ids already; keep the invariant explicit.
    debug_assert!(neighbors.iter().all(|v| v.windows(2).all(|w| w[0] < w[1])));
    LinkGraph { neighbors }
}
