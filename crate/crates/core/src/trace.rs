//! Structured run trace. One JSON object per line; keys appear in
//! declaration order (`t`, `replica`, `event`, then event fields).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::block::{Block, BlockId, ReplicaId};
use crate::mandator::{BatchId, CmndsVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommitVia {
    Sync,
    Async,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum TraceKind {
    // message sends; `replica` is the sender
    Propose { to: ReplicaId, msg_id: u64, block: BlockId, view: u64, round: u64, committed: BlockId },
    Vote { to: ReplicaId, msg_id: u64, view: u64, round: u64, block: BlockId, block_view: u64 },
    Timeout { to: ReplicaId, msg_id: u64, view: u64, round: u64, block: BlockId },
    ProposeAsync { to: ReplicaId, msg_id: u64, block: BlockId, view: u64, round: u64, height: u8 },
    VoteAsync { to: ReplicaId, msg_id: u64, block: BlockId, height: u8 },
    AsyncComplete { to: ReplicaId, msg_id: u64, block: BlockId, view: u64 },
    Batch { to: ReplicaId, msg_id: u64, creator: ReplicaId, round: u64, batch_id: BatchId },
    MandatorVote { to: ReplicaId, msg_id: u64, creator: ReplicaId, round: u64 },
    PullRequest { to: ReplicaId, msg_id: u64, creator: ReplicaId, round: u64 },
    PullResponse { to: ReplicaId, msg_id: u64, creator: ReplicaId, round: u64 },
    BlockFetch { to: ReplicaId, msg_id: u64, blocks: Vec<BlockId> },
    BlockResponse { to: ReplicaId, msg_id: u64, blocks: Vec<BlockId> },
    /// `replica` is the receiver.
    Deliver { from: ReplicaId, msg_id: u64 },

    // dissemination state
    BatchCreated { round: u64, batch_id: BatchId, requests: usize },
    BatchStored { creator: ReplicaId, round: u64, batch_id: BatchId },
    WriteComplete { creator: ReplicaId, round: u64 },
    CutCommitted { block: BlockId, cut: CmndsVector, batch_ids: Vec<BatchId>, requests: usize },

    // consensus state
    AsyncEnter { view: u64, high: BlockId },
    Coin { view: u64, winner: ReplicaId },
    Commit { block: Block, via: CommitVia },
    CommitConflict { block: BlockId, last_committed: BlockId },
    ViewChange { view: u64, round: u64 },
    AsyncExit { view: u64, winner: ReplicaId, elected: bool, block_high: BlockId },

    // adversary and clients
    Crash,
    AttackRotate { attacked: Vec<ReplicaId> },
    ClientArrival { client: u32, first_request: u64, count: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: u64,
    pub replica: ReplicaId,
    #[serde(flatten)]
    pub kind: TraceKind,
}

impl TraceKind {
    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Propose { .. } => "propose",
            TraceKind::Vote { .. } => "vote",
            TraceKind::Timeout { .. } => "timeout",
            TraceKind::ProposeAsync { .. } => "propose-async",
            TraceKind::VoteAsync { .. } => "vote-async",
            TraceKind::AsyncComplete { .. } => "async-complete",
            TraceKind::Batch { .. } => "batch",
            TraceKind::MandatorVote { .. } => "mandator-vote",
            TraceKind::PullRequest { .. } => "pull-request",
            TraceKind::PullResponse { .. } => "pull-response",
            TraceKind::BlockFetch { .. } => "block-fetch",
            TraceKind::BlockResponse { .. } => "block-response",
            TraceKind::Deliver { .. } => "deliver",
            TraceKind::BatchCreated { .. } => "batch-created",
            TraceKind::BatchStored { .. } => "batch-stored",
            TraceKind::WriteComplete { .. } => "write-complete",
            TraceKind::CutCommitted { .. } => "cut-committed",
            TraceKind::AsyncEnter { .. } => "async-enter",
            TraceKind::Coin { .. } => "coin",
            TraceKind::Commit { .. } => "commit",
            TraceKind::CommitConflict { .. } => "commit-conflict",
            TraceKind::ViewChange { .. } => "view-change",
            TraceKind::AsyncExit { .. } => "async-exit",
            TraceKind::Crash => "crash",
            TraceKind::AttackRotate { .. } => "attack-rotate",
            TraceKind::ClientArrival { .. } => "client-arrival",
        }
    }

    /// `(to, msg_id)` for message sends.
    pub fn send_info(&self) -> Option<(ReplicaId, u64)> {
        match *self {
            TraceKind::Propose { to, msg_id, .. }
            | TraceKind::Vote { to, msg_id, .. }
            | TraceKind::Timeout { to, msg_id, .. }
            | TraceKind::ProposeAsync { to, msg_id, .. }
            | TraceKind::VoteAsync { to, msg_id, .. }
            | TraceKind::AsyncComplete { to, msg_id, .. }
            | TraceKind::Batch { to, msg_id, .. }
            | TraceKind::MandatorVote { to, msg_id, .. }
            | TraceKind::PullRequest { to, msg_id, .. }
            | TraceKind::PullResponse { to, msg_id, .. }
            | TraceKind::BlockFetch { to, msg_id, .. }
            | TraceKind::BlockResponse { to, msg_id, .. } => Some((to, msg_id)),
            _ => None,
        }
    }

    /// Consensus messages other than block repair.
    pub fn is_consensus_send(&self) -> bool {
        matches!(
            self,
            TraceKind::Propose { .. }
                | TraceKind::Vote { .. }
                | TraceKind::Timeout { .. }
                | TraceKind::ProposeAsync { .. }
                | TraceKind::VoteAsync { .. }
                | TraceKind::AsyncComplete { .. }
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunTrace {
    pub events: Vec<TraceEvent>,
}

impl RunTrace {
    pub fn push(&mut self, t: u64, replica: ReplicaId, kind: TraceKind) {
        self.events.push(TraceEvent { t, replica, kind });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_jsonl(s: &str) -> Result<RunTrace, serde_json::Error> {
        let events = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RunTrace { events })
    }
}
