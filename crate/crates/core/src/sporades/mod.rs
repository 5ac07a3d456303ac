//! Dual-mode consensus engine.
//!
//! A leader drives one block per round trip in synchronous mode. When a
//! quorum of replicas times out, every replica proposes a height-1 then a
//! height-2 block; once a quorum of height-2 blocks completes, a shared
//! coin elects one proposer whose block is committed if its completion was
//! among the first quorum seen. Replicas then vote into the next view.
//!
//! The engine is a pure state machine: callers hand it a message, the
//! current time and the dissemination cut, and collect sends, commits,
//! timer requests and trace events from [`Output`].

pub mod coin;
pub mod message;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use coin::{common_coin_flip, splitmix64_at, CoinConfig};
pub use message::ProtocolMessage;

use crate::block::{leader_of, Block, BlockId, BlockStore, Level, Rank, ReplicaId};
use crate::mandator::CmndsVector;
use crate::trace::{CommitVia, TraceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackMode {
    #[default]
    Enabled,
    /// Timeouts trigger a plain leader change instead of the async path.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dest {
    To(ReplicaId),
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimerRequest {
    pub generation: u64,
    pub deadline: u64,
}

#[derive(Debug, Default)]
pub struct Output {
    pub sends: Vec<(Dest, ProtocolMessage)>,
    /// Newly committed blocks, oldest first.
    pub commits: Vec<Block>,
    pub timer: Option<TimerRequest>,
    pub events: Vec<TraceKind>,
}

#[derive(Debug, Clone)]
pub struct SporadesConfig {
    pub n: usize,
    pub f: usize,
    pub timer_ms: u64,
    pub fallback: FallbackMode,
    pub coin: CoinConfig,
}

#[derive(Debug, Clone, Default)]
struct AsyncEpisode {
    view: u64,
    // (proposer, height) pairs already voted for
    voted: BTreeSet<(ReplicaId, u8)>,
    own_h1: Option<BlockId>,
    own_h2: Option<BlockId>,
    h1_votes: BTreeSet<ReplicaId>,
    h2_votes: BTreeSet<ReplicaId>,
    complete_sent: bool,
    // height-2 blocks seen via propose-async
    h2_seen: BTreeMap<ReplicaId, BlockId>,
    completes: Vec<(ReplicaId, Block)>,
    finished: bool,
}

#[derive(Debug, Clone)]
pub struct Sporades {
    id: ReplicaId,
    cfg: SporadesConfig,
    store: BlockStore,
    v_cur: u64,
    r_cur: u64,
    block_high: BlockId,
    is_async: bool,
    last_committed: BlockId,
    committed_chain: Vec<BlockId>,
    // view in which this replica broadcast a timeout; no sync votes there
    timed_out_view: Option<u64>,
    timer_generation: u64,
    timer_armed: bool,
    // leader role
    outstanding: Option<BlockId>,
    vote_tally: BTreeSet<ReplicaId>,
    new_view_tally: BTreeMap<u64, BTreeMap<ReplicaId, BlockId>>,
    last_new_view_proposed: Option<u64>,
    timeout_tally: BTreeMap<u64, BTreeMap<ReplicaId, BlockId>>,
    timeout_acted: Option<u64>,
    episode: AsyncEpisode,
    async_episodes: u64,
    parked: Vec<(ReplicaId, ProtocolMessage)>,
}

impl Sporades {
    pub fn new(id: ReplicaId, cfg: SporadesConfig) -> Self {
        assert!(cfg.n > 2 * cfg.f, "n must be at least 2f+1");
        let store = BlockStore::new(cfg.n);
        Sporades {
            id,
            cfg,
            store,
            v_cur: 0,
            r_cur: 0,
            block_high: BlockId::GENESIS,
            is_async: false,
            last_committed: BlockId::GENESIS,
            committed_chain: Vec::new(),
            timed_out_view: None,
            timer_generation: 0,
            timer_armed: false,
            outstanding: None,
            vote_tally: BTreeSet::new(),
            new_view_tally: BTreeMap::new(),
            last_new_view_proposed: None,
            timeout_tally: BTreeMap::new(),
            timeout_acted: None,
            episode: AsyncEpisode::default(),
            async_episodes: 0,
            parked: Vec::new(),
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn quorum(&self) -> usize {
        self.cfg.n - self.cfg.f
    }

    pub fn rank_cur(&self) -> Rank {
        Rank::new(self.v_cur, self.r_cur)
    }

    pub fn view(&self) -> u64 {
        self.v_cur
    }

    pub fn is_async(&self) -> bool {
        self.is_async
    }

    pub fn block_high(&self) -> BlockId {
        self.block_high
    }

    pub fn last_committed(&self) -> BlockId {
        self.last_committed
    }

    /// Committed blocks after genesis, oldest first.
    pub fn committed_chain(&self) -> &[BlockId] {
        &self.committed_chain
    }

    pub fn async_episodes(&self) -> u64 {
        self.async_episodes
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut BlockStore {
        &mut self.store
    }

    fn block(&self, id: BlockId) -> &Block {
        self.store.get(id).expect("referenced block is stored")
    }

    fn arm_timer(&mut self, now: u64, out: &mut Output) {
        self.timer_generation += 1;
        self.timer_armed = true;
        out.timer = Some(TimerRequest { generation: self.timer_generation, deadline: now + self.cfg.timer_ms });
    }

    fn disarm_timer(&mut self) {
        self.timer_generation += 1;
        self.timer_armed = false;
        // a superseded request must not fire
    }

    fn put_block(&mut self, block: Block) {
        // own blocks extend stored parents; a conflict cannot arise
        let _ = self.store.insert(block);
    }

    /// Arms the first timer; the view-0 leader proposes rank (0,1).
    pub fn start(&mut self, now: u64, cut: &CmndsVector, out: &mut Output) {
        self.arm_timer(now, out);
        if leader_of(0, self.cfg.n) == self.id {
            self.last_new_view_proposed = Some(0);
            self.propose(0, BlockId::GENESIS, BlockId::GENESIS, cut, out);
        }
    }

    fn propose(&mut self, view: u64, parent: BlockId, committed: BlockId, cut: &CmndsVector, out: &mut Output) {
        let round = self.block(parent).round() + 1;
        let block = Block::new(Rank::new(view, round), Level::Sync, parent, self.id, cut.clone());
        self.put_block(block.clone());
        self.outstanding = Some(block.id);
        self.vote_tally.clear();
        out.sends.push((Dest::All, ProtocolMessage::Propose { block, committed }));
    }

    /// Handles a message whose carried blocks are stored and complete.
    pub fn handle(&mut self, now: u64, from: ReplicaId, msg: ProtocolMessage, cut: &CmndsVector, out: &mut Output) {
        match msg {
            ProtocolMessage::Propose { block, committed } => self.on_propose(now, block, committed, cut, out),
            ProtocolMessage::Vote { view, round, block_high } => {
                if view > block_high.view() {
                    self.on_new_view_vote(now, from, view, round, block_high, cut, out)
                } else {
                    self.on_vote(now, from, view, block_high, cut, out)
                }
            }
            ProtocolMessage::Timeout { view, round, block_high } => {
                self.on_timeout_msg(now, from, view, round, block_high, cut, out)
            }
            ProtocolMessage::ProposeAsync { block, sender, height } => {
                self.on_propose_async(now, block, sender, height, cut, out)
            }
            ProtocolMessage::VoteAsync { block_id, height, sender } => {
                self.on_vote_async(now, block_id, height, sender, cut, out)
            }
            ProtocolMessage::AsyncComplete { block, view, sender } => {
                self.on_async_complete(now, sender, block, view, cut, out)
            }
        }
    }

    fn park(&mut self, from: ReplicaId, msg: ProtocolMessage) {
        self.parked.push((from, msg));
    }

    fn drain_parked(&mut self, now: u64, cut: &CmndsVector, out: &mut Output) {
        let parked = std::mem::take(&mut self.parked);
        for (from, msg) in parked {
            self.handle(now, from, msg, cut, out);
        }
    }

    fn enter_view(&mut self, view: u64, round: u64, out: &mut Output) {
        let changed = view > self.v_cur;
        self.v_cur = view;
        self.r_cur = round;
        if changed {
            self.timed_out_view = None;
            out.events.push(TraceKind::ViewChange { view, round });
        }
    }

    pub fn on_propose(&mut self, now: u64, block: Block, committed: BlockId, cut: &CmndsVector, out: &mut Output) {
        if block.level != Level::Sync || block.proposer != leader_of(block.view(), self.cfg.n) {
            return;
        }
        if self.is_async || block.rank <= self.rank_cur() {
            return;
        }
        self.put_block(block.clone());
        if self.store.contains(committed) {
            self.commit(committed, CommitVia::Sync, out);
        }
        if self.timed_out_view == Some(block.view()) {
            return;
        }
        let view_changed = block.view() > self.v_cur;
        self.enter_view(block.view(), block.round(), out);
        self.block_high = block.id;
        self.arm_timer(now, out);
        let leader = leader_of(block.view(), self.cfg.n);
        out.sends.push((
            Dest::To(leader),
            ProtocolMessage::Vote { view: block.view(), round: block.round(), block_high: block },
        ));
        if view_changed {
            self.drain_parked(now, cut, out);
        }
    }

    pub fn on_vote(
        &mut self,
        _now: u64,
        voter: ReplicaId,
        view: u64,
        block: Block,
        cut: &CmndsVector,
        out: &mut Output,
    ) {
        if leader_of(view, self.cfg.n) != self.id || self.outstanding != Some(block.id) {
            return;
        }
        if self.is_async || self.v_cur != view {
            return;
        }
        if !self.vote_tally.insert(voter) || self.vote_tally.len() != self.quorum() {
            return;
        }
        self.commit(block.id, CommitVia::Sync, out);
        // after its own timeout the leader stops extending the view
        if self.timed_out_view != Some(view) {
            self.propose(view, block.id, block.id, cut, out);
        } else {
            self.outstanding = None;
        }
    }

    pub fn on_timer_expired(&mut self, _now: u64, generation: u64, out: &mut Output) {
        if !self.timer_armed || generation != self.timer_generation || self.is_async {
            return;
        }
        if self.timed_out_view == Some(self.v_cur) {
            return;
        }
        self.timed_out_view = Some(self.v_cur);
        self.disarm_timer();
        let block_high = self.block(self.block_high).clone();
        out.sends.push((Dest::All, ProtocolMessage::Timeout { view: self.v_cur, round: self.r_cur, block_high }));
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_timeout_msg(
        &mut self,
        now: u64,
        sender: ReplicaId,
        view: u64,
        _round: u64,
        their_high: Block,
        cut: &CmndsVector,
        out: &mut Output,
    ) {
        if view < self.v_cur || (view == self.v_cur && self.is_async) {
            return;
        }
        if self.timeout_acted.is_some_and(|v| v >= view) {
            return;
        }
        let quorum = self.quorum();
        let tally = self.timeout_tally.entry(view).or_default();
        tally.entry(sender).or_insert(their_high.id);
        if tally.len() < quorum {
            return;
        }
        let tallied: Vec<BlockId> = tally.values().copied().collect();
        self.timeout_acted = Some(view);
        self.timeout_tally.retain(|v, _| *v > view);
        match self.cfg.fallback {
            FallbackMode::Enabled => self.enter_async(now, view, tallied, cut, out),
            FallbackMode::Disabled => {
                // plain view change: vote for the next leader
                let next = view + 1;
                let high = self.block(self.block_high).clone();
                self.enter_view(next, high.round(), out);
                self.arm_timer(now, out);
                out.sends.push((
                    Dest::To(leader_of(next, self.cfg.n)),
                    ProtocolMessage::Vote { view: next, round: high.round(), block_high: high },
                ));
                self.drain_parked(now, cut, out);
            }
        }
    }

    fn enter_async(&mut self, now: u64, view: u64, tallied: Vec<BlockId>, cut: &CmndsVector, out: &mut Output) {
        let high = tallied
            .into_iter()
            .chain(std::iter::once(self.block_high))
            .map(|id| self.block(id))
            .max_by_key(|b| (b.rank, b.id))
            .expect("own block_high is present")
            .clone();
        if view > self.v_cur {
            self.enter_view(view, self.r_cur, out);
        }
        self.is_async = true;
        self.disarm_timer();
        self.async_episodes += 1;
        self.episode = AsyncEpisode { view, ..AsyncEpisode::default() };
        out.events.push(TraceKind::AsyncEnter { view, high: high.id });
        let a1 = Block::new(Rank::new(view, high.round() + 1), Level::Height1, high.id, self.id, cut.clone());
        self.put_block(a1.clone());
        self.episode.own_h1 = Some(a1.id);
        out.sends.push((Dest::All, ProtocolMessage::ProposeAsync { block: a1, sender: self.id, height: 1 }));
        self.drain_parked(now, cut, out);
    }

    pub fn on_propose_async(
        &mut self,
        now: u64,
        block: Block,
        sender: ReplicaId,
        height: u8,
        cut: &CmndsVector,
        out: &mut Output,
    ) {
        if block.level.height() != Some(height) || block.proposer != sender {
            return;
        }
        if block.view() < self.v_cur || (block.view() == self.episode.view && self.episode.finished) {
            return;
        }
        if !self.is_async || block.view() != self.v_cur {
            self.park(sender, ProtocolMessage::ProposeAsync { block, sender, height });
            return;
        }
        self.put_block(block.clone());
        if height == 2 {
            self.episode.h2_seen.entry(sender).or_insert(block.id);
        }
        // async blocks are built on the highest of a timeout quorum, so they
        // extend every sync-committed block; a rank test against this
        // replica's own high would only stall the episode when highs diverge
        let extends = self.store.extends(block.id, self.last_committed).unwrap_or(false);
        if extends && self.episode.voted.insert((sender, height)) {
            out.sends.push((
                Dest::To(sender),
                ProtocolMessage::VoteAsync { block_id: block.id, height, sender: self.id },
            ));
        }
        if height == 2 && sender != self.id && self.episode.own_h2.is_none() {
            // the foreign height-1 parent gathered a quorum; build on it
            let parent = self.block(block.parent).clone();
            self.propose_h2(now, &parent, cut, out);
        }
    }

    fn propose_h2(&mut self, _now: u64, h1: &Block, cut: &CmndsVector, out: &mut Output) {
        let a2 = Block::new(Rank::new(h1.view(), h1.round() + 1), Level::Height2, h1.id, self.id, cut.clone());
        self.put_block(a2.clone());
        self.episode.own_h2 = Some(a2.id);
        out.sends.push((Dest::All, ProtocolMessage::ProposeAsync { block: a2, sender: self.id, height: 2 }));
    }

    pub fn on_vote_async(
        &mut self,
        now: u64,
        block_id: BlockId,
        height: u8,
        voter: ReplicaId,
        cut: &CmndsVector,
        out: &mut Output,
    ) {
        if !self.is_async || self.episode.view != self.v_cur || self.episode.finished {
            return;
        }
        let quorum = self.quorum();
        match height {
            1 if self.episode.own_h1 == Some(block_id) && self.episode.own_h2.is_none() => {
                self.episode.h1_votes.insert(voter);
                if self.episode.h1_votes.len() >= quorum {
                    let h1 = self.block(block_id).clone();
                    self.propose_h2(now, &h1, cut, out);
                }
            }
            2 if self.episode.own_h2 == Some(block_id) && !self.episode.complete_sent => {
                self.episode.h2_votes.insert(voter);
                if self.episode.h2_votes.len() >= quorum {
                    self.episode.complete_sent = true;
                    let block = self.block(block_id).clone();
                    out.sends.push((
                        Dest::All,
                        ProtocolMessage::AsyncComplete { block, view: self.v_cur, sender: self.id },
                    ));
                }
            }
            _ => {}
        }
    }

    pub fn on_async_complete(
        &mut self,
        now: u64,
        sender: ReplicaId,
        block: Block,
        view: u64,
        cut: &CmndsVector,
        out: &mut Output,
    ) {
        if view < self.v_cur || (view == self.episode.view && self.episode.finished) {
            return;
        }
        if !self.is_async || view != self.v_cur {
            self.park(sender, ProtocolMessage::AsyncComplete { block, view, sender });
            return;
        }
        if block.level != Level::Height2 || block.proposer != sender {
            return;
        }
        if self.episode.completes.iter().any(|(s, _)| *s == sender) {
            return;
        }
        self.put_block(block.clone());
        self.episode.completes.push((sender, block));
        if self.episode.completes.len() < self.quorum() {
            return;
        }
        self.episode.finished = true;
        let winner = common_coin_flip(&self.cfg.coin, view);
        out.events.push(TraceKind::Coin { view, winner });
        let elected = self.episode.completes.iter().find(|(s, _)| *s == winner).map(|(_, b)| b.id);
        let mut committed = false;
        if let Some(id) = elected {
            committed = self.commit(id, CommitVia::Async, out);
            if committed {
                self.block_high = id;
            }
        } else if let Some(&id) = self.episode.h2_seen.get(&winner) {
            if self.store.extends(id, self.last_committed).unwrap_or(false) {
                self.block_high = id;
            }
        }
        let high = self.block(self.block_high).clone();
        out.events.push(TraceKind::AsyncExit { view, winner, elected: committed, block_high: high.id });
        self.is_async = false;
        let next = view + 1;
        self.enter_view(next, high.round(), out);
        self.arm_timer(now, out);
        out.sends.push((
            Dest::To(leader_of(next, self.cfg.n)),
            ProtocolMessage::Vote { view: next, round: high.round(), block_high: high },
        ));
        self.drain_parked(now, cut, out);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn on_new_view_vote(
        &mut self,
        _now: u64,
        sender: ReplicaId,
        view: u64,
        _round: u64,
        their_high: Block,
        cut: &CmndsVector,
        out: &mut Output,
    ) {
        if leader_of(view, self.cfg.n) != self.id || view < self.v_cur {
            return;
        }
        if self.last_new_view_proposed.is_some_and(|v| v >= view) {
            return;
        }
        if view > self.v_cur || self.is_async {
            self.park(sender, ProtocolMessage::Vote { view, round: their_high.round(), block_high: their_high });
            return;
        }
        let quorum = self.quorum();
        let tally = self.new_view_tally.entry(view).or_default();
        tally.entry(sender).or_insert(their_high.id);
        if tally.len() < quorum {
            return;
        }
        let ids: Vec<BlockId> = tally.values().copied().chain(std::iter::once(self.block_high)).collect();
        self.new_view_tally.retain(|v, _| *v > view);
        let high = ids
            .into_iter()
            .map(|id| self.block(id))
            .max_by_key(|b| (b.rank, b.id))
            .expect("non-empty")
            .id;
        self.last_new_view_proposed = Some(view);
        let committed = self.last_committed;
        self.propose(view, high, committed, cut, out);
    }

    /// Commits `target` and its uncommitted ancestors. Returns whether
    /// `target` is now committed.
    fn commit(&mut self, target: BlockId, via: CommitVia, out: &mut Output) -> bool {
        if target == self.last_committed {
            return true;
        }
        if self.store.extends(self.last_committed, target).unwrap_or(false) {
            return true;
        }
        if !self.store.extends(target, self.last_committed).unwrap_or(false) {
            out.events.push(TraceKind::CommitConflict { block: target, last_committed: self.last_committed });
            return false;
        }
        let path: Vec<Block> = self
            .store
            .path_from(self.last_committed, target)
            .expect("target extends last_committed")
            .into_iter()
            .cloned()
            .collect();
        for b in path {
            self.committed_chain.push(b.id);
            out.events.push(TraceKind::Commit { block: b.clone(), via });
            out.commits.push(b);
        }
        self.last_committed = target;
        if !self.store.extends(self.block_high, target).unwrap_or(false) {
            self.block_high = target;
            let rank = self.block(target).rank;
            if !self.is_async && rank > self.rank_cur() && rank.view == self.v_cur {
                self.r_cur = rank.round;
            }
        }
        true
    }
}
