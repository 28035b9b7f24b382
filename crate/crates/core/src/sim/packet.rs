//! Packets, traffic flows, duplicate-packet detection, episode clock and
//! terminal-state accounting.

use super::NodeId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet, VecDeque};

/// A unicast data packet. `packet_id` is unique within an episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub packet_id: u64,
    pub flow_id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    pub hop_count: u32,
    pub ttl: u32,
    pub created_slot: u64,
}

/// One unicast flow; emits a packet per slot with probability `rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficFlow {
    pub flow_id: u64,
    pub source: NodeId,
    pub destination: NodeId,
    /// Packets per slot, in `(0, 1]`.
    pub rate: f64,
}

/// Bernoulli traffic injection: each flow emits at most one packet this slot.
/// Packet ids are allocated from `next_packet_id`.
pub fn inject_traffic<R: Rng>(
    flows: &[TrafficFlow],
    slot: u64,
    ttl: u32,
    next_packet_id: &mut u64,
    rng: &mut R,
) -> Vec<Packet> {
    let mut out = Vec::new();
    for flow in flows {
        // One uniform draw per flow per slot, unconditionally, so traffic
        // randomness is independent of rates and of everything else.
        let u: f64 = rng.gen();
        if u < flow.rate {
            let packet_id = *next_packet_id;
            *next_packet_id += 1;
            out.push(Packet {
                packet_id,
                flow_id: flow.flow_id,
                source: flow.source,
                destination: flow.destination,
                hop_count: 0,
                ttl,
                created_slot: slot,
            });
        }
    }
    out
}

/// Bounded set of seen packet ids with FIFO eviction.
#[derive(Debug, Clone, Default)]
pub struct DpdCache {
    capacity: usize,
    seen: HashSet<u64>,
    order: VecDeque<u64>,
}

impl DpdCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "DPD cache capacity must be positive");
        Self {
            capacity,
            seen: HashSet::new(),
            order: VecDeque::new(),
        }
    }

    /// Inserts `packet_id`; returns `true` when the id is fresh (not cached),
    /// `false` when it is a duplicate. At capacity the oldest entry is evicted.
    pub fn insert(&mut self, packet_id: u64) -> bool {
        if self.seen.contains(&packet_id) {
            return false;
        }
        if self.order.len() == self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.seen.remove(&old);
            }
        }
        self.seen.insert(packet_id);
        self.order.push_back(packet_id);
        true
    }

    pub fn contains(&self, packet_id: u64) -> bool {
        self.seen.contains(&packet_id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Slot counter for one episode; `slot` runs from 0 to `t_max` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeClock {
    pub slot: u64,
    pub t_max: u64,
}

impl EpisodeClock {
    pub fn new(t_max: u64) -> Self {
        Self { slot: 0, t_max }
    }

    pub fn tick(&mut self) {
        self.slot += 1;
    }

    pub fn finished(&self) -> bool {
        self.slot >= self.t_max
    }
}

/// Terminal state of one injected packet id at episode end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketFate {
    Delivered,
    InFlightAtTmax,
    DroppedTtl,
    DroppedDuplicateEverywhere,
}

#[derive(Debug, Clone, Default)]
struct FateCounters {
    delivered: bool,
    live_copies: u32,
    ttl_drop: bool,
    dup_drop: bool,
}

/// Tracks every copy of every packet so that episode-end accounting assigns
/// exactly one terminal state per injected packet id.
///
/// Precedence when copies met mixed fates:
/// delivered > in-flight > dropped-ttl > dropped-duplicate-everywhere.
#[derive(Debug, Clone, Default)]
pub struct PacketLedger {
    counters: BTreeMap<u64, FateCounters>,
    injected: u64,
    delivered: u64,
    delivered_hops: u64,
}

impl PacketLedger {
    pub fn on_injected(&mut self, packet_id: u64) {
        self.injected += 1;
        self.counters.entry(packet_id).or_default().live_copies += 1;
    }

    pub fn on_copy_forwarded(&mut self, packet_id: u64) {
        self.counters.entry(packet_id).or_default().live_copies += 1;
    }

    pub fn on_copy_consumed(&mut self, packet_id: u64) {
        let c = self.counters.entry(packet_id).or_default();
        debug_assert!(c.live_copies > 0, "consuming a copy that was never live");
        c.live_copies = c.live_copies.saturating_sub(1);
    }

    pub fn on_delivered(&mut self, packet_id: u64, hop_count: u32) {
        let c = self.counters.entry(packet_id).or_default();
        if !c.delivered {
            c.delivered = true;
            self.delivered += 1;
            self.delivered_hops += u64::from(hop_count);
        }
    }

    pub fn on_ttl_drop(&mut self, packet_id: u64) {
        self.counters.entry(packet_id).or_default().ttl_drop = true;
    }

    pub fn on_duplicate_drop(&mut self, packet_id: u64) {
        self.counters.entry(packet_id).or_default().dup_drop = true;
    }

    pub fn injected(&self) -> u64 {
        self.injected
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn mean_hops_delivered(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.delivered_hops as f64 / self.delivered as f64)
    }

    pub fn live_copy_total(&self) -> u64 {
        self.counters.values().map(|c| u64::from(c.live_copies)).sum()
    }

    /// Final per-packet terminal states; total always equals the number of
    /// injected packet ids.
    pub fn finalize(&self) -> BTreeMap<u64, PacketFate> {
        self.counters
            .iter()
            .map(|(&id, c)| {
                let fate = if c.delivered {
                    PacketFate::Delivered
                } else if c.live_copies > 0 {
                    PacketFate::InFlightAtTmax
                } else if c.ttl_drop {
                    PacketFate::DroppedTtl
                } else {
                    debug_assert!(c.dup_drop, "copy vanished without a recorded drop");
                    PacketFate::DroppedDuplicateEverywhere
                };
                (id, fate)
            })
            .collect()
    }
}
