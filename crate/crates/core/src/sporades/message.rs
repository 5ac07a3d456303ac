use serde::{Deserialize, Serialize};

use crate::block::{Block, BlockId, ReplicaId};

/// Consensus messages. Blocks travel whole so receivers can store them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ProtocolMessage {
    Propose { block: Block, committed: BlockId },
    /// Sync vote when `view == block_high.view`, new-view vote when greater.
    Vote { view: u64, round: u64, block_high: Block },
    Timeout { view: u64, round: u64, block_high: Block },
    ProposeAsync { block: Block, sender: ReplicaId, height: u8 },
    VoteAsync { block_id: BlockId, height: u8, sender: ReplicaId },
    AsyncComplete { block: Block, view: u64, sender: ReplicaId },
}

impl ProtocolMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolMessage::Propose { .. } => "propose",
            ProtocolMessage::Vote { .. } => "vote",
            ProtocolMessage::Timeout { .. } => "timeout",
            ProtocolMessage::ProposeAsync { .. } => "propose-async",
            ProtocolMessage::VoteAsync { .. } => "vote-async",
            ProtocolMessage::AsyncComplete { .. } => "async-complete",
        }
    }

    /// Blocks whose full ancestry must be stored before the message can be
    /// handled.
    pub fn carried_blocks(&self) -> Vec<&Block> {
        match self {
            ProtocolMessage::Propose { block, .. }
            | ProtocolMessage::ProposeAsync { block, .. }
            | ProtocolMessage::AsyncComplete { block, .. } => vec![block],
            ProtocolMessage::Vote { block_high, .. } | ProtocolMessage::Timeout { block_high, .. } => vec![block_high],
            ProtocolMessage::VoteAsync { .. } => Vec::new(),
        }
    }

    pub fn is_new_view_vote(&self) -> bool {
        matches!(self, ProtocolMessage::Vote { view, block_high, .. } if *view > block_high.view())
    }
}
