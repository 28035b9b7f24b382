//! Deterministic, seeded, slotted-time MANET world.
//!
//! One episode is a fixed number of time slots. Per slot: nodes move
//! (Gauss-Markov), the unit-disk link graph is rebuilt, traffic is injected,
//! every node holding a packet picks a forwarding action, transmissions are
//! resolved (delivery, duplicate detection, ACKs, jammer suppression), and
//! the per-node routing tables absorb the outcomes.

mod channel;
mod mobility;
mod packet;
mod transmit;
mod world;

pub use channel::{compute_links, ChannelModel, JammerConfig, JammerMode, LinkGraph};
pub use mobility::{step_mobility, Area, MobilityParams, MobilityState, Vec2};
pub use packet::{
    inject_traffic, DpdCache, EpisodeClock, Packet, PacketFate, PacketLedger, TrafficFlow,
};
pub use transmit::{transmit, AckInfo, TransmitOutcome, TxAction};
pub use world::{
    run_episode, EpisodeOptions, EpisodeOutput, EventKind, EventRecord, NetMetrics, SimParams,
    World,
};

use serde::{Deserialize, Serialize};

/// Index of a node within an episode; dense in `[0, N)`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}
