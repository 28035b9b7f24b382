//! Single-slot transmission resolution: reach, duplicate detection, ACKs,
//! jammer suppression.

use super::{ChannelModel, DpdCache, LinkGraph, NodeId, Packet, Vec2};
use serde::{Deserialize, Serialize};

/// Resolved transmission target set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxAction {
    Broadcast,
    Unicast(NodeId),
}

/// An ACK as decoded by the sender. Carries the receiver's advertised best
/// path-quality estimate toward the packet's destination, piggybacked on the
/// ACK frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AckInfo {
    pub from: NodeId,
    pub q_best: f64,
}

/// Ground truth plus sender-visible result of one transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitOutcome {
    pub sender: NodeId,
    pub slot: u64,
    pub packet_id: u64,
    pub destination: NodeId,
    /// Intended receivers: all current neighbors for broadcast, the single
    /// target for unicast (empty when the target is not a current neighbor).
    pub targets: Vec<NodeId>,
    /// Per receiver that the signal actually reached: `true` when the packet
    /// was fresh and accepted, `false` when DPD rejected it as a duplicate.
    /// Receivers blocked by a SUPPRESS_ALL jammer are absent entirely.
    pub deliveries: Vec<(NodeId, bool)>,
    /// ACKs as decoded by the sender. Empty when the sender sits inside an
    /// active jammer, whatever really happened at the receivers.
    pub acks: Vec<AckInfo>,
    /// The sender heard an ACK from the packet's destination this slot.
    pub dest_acked: bool,
}

impl TransmitOutcome {
    /// n_t: the ACK count observed by the sender.
    pub fn ack_count(&self) -> u32 {
        self.acks.len() as u32
    }

    /// A no-transmission placeholder (node idle this slot).
    pub fn idle(sender: NodeId, slot: u64) -> Self {
        TransmitOutcome {
            sender,
            slot,
            packet_id: u64::MAX,
            destination: sender,
            targets: Vec::new(),
            deliveries: Vec::new(),
            acks: Vec::new(),
            dest_acked: false,
        }
    }

    pub fn reached_any(&self) -> bool {
        !self.deliveries.is_empty()
    }

    pub fn accepted_any(&self) -> bool {
        self.deliveries.iter().any(|&(_, fresh)| fresh)
    }

    /// True when at least one receiver was reached and every reached
    /// receiver rejected the packet as a duplicate.
    pub fn all_reached_rejected(&self) -> bool {
        self.reached_any() && self.deliveries.iter().all(|&(_, fresh)| !fresh)
    }
}

/// Resolves one transmission. Receivers inside an active SUPPRESS_ALL jammer
/// disk receive nothing; a fresh receiver ACKs, a duplicate does not; and a
/// sender inside any active jammer disk decodes no ACKs at all.
///
/// `q_advert(j)` supplies receiver `j`'s advertised best path quality toward
/// `packet.destination` for the ACK piggyback.
#[allow(clippy::too_many_arguments)]
pub fn transmit(
    sender: NodeId,
    action: TxAction,
    packet: &Packet,
    links: &LinkGraph,
    positions: &[Vec2],
    channel: &ChannelModel,
    slot: u64,
    dpd: &mut [DpdCache],
    q_advert: impl Fn(NodeId) -> f64,
) -> TransmitOutcome {
    let targets: Vec<NodeId> = match action {
        TxAction::Broadcast => links.neighbors(sender).to_vec(),
        TxAction::Unicast(t) => {
            if t != sender && links.linked(sender, t) {
                vec![t]
            } else {
                Vec::new() // delivery failure, recorded as an empty outcome
            }
        }
    };

    let mut deliveries = Vec::with_capacity(targets.len());
    let mut acks = Vec::new();
    for &recv in &targets {
        if channel.blocks_reception(positions[recv.index()], slot) {
            continue; // the signal never arrives
        }
        let fresh = dpd[recv.index()].insert(packet.packet_id);
        deliveries.push((recv, fresh));
        if fresh {
            acks.push(AckInfo {
                from: recv,
                q_best: q_advert(recv),
            });
        }
    }

    if channel.blocks_ack_decoding(positions[sender.index()], slot) {
        acks.clear();
    }
    let dest_acked = acks.iter().any(|a| a.from == packet.destination);

    TransmitOutcome {
        sender,
        slot,
        packet_id: packet.packet_id,
        destination: packet.destination,
        targets,
        deliveries,
        acks,
        dest_acked,
    }
}
