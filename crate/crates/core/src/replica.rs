//! One replica: the consensus engine, its dissemination state, execution of
//! committed cuts, and repair of missing blocks and batches.
//!
//! Consensus messages are handed to the engine only once every block they
//! carry has its full ancestry stored; until then they wait here while the
//! missing ancestors are fetched.

use std::collections::{BTreeMap, VecDeque};

use crate::block::{leader_of, Block, BlockId, ReplicaId};
use crate::mandator::{ChainsState, MandatorError, MandatorMessage, RequestId};
use crate::sporades::{CoinConfig, Dest, FallbackMode, Output, ProtocolMessage, Sporades, SporadesConfig, TimerRequest};
use crate::trace::TraceKind;

/// Ancestors returned alongside each requested block.
const FETCH_DEPTH: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockSyncMessage {
    Fetch { ids: Vec<BlockId> },
    Blocks { blocks: Vec<Block> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Consensus(ProtocolMessage),
    Mandator(MandatorMessage),
    BlockSync(BlockSyncMessage),
}

impl Message {
    /// Send-side trace record for this message.
    pub fn trace_kind(&self, to: ReplicaId, msg_id: u64) -> TraceKind {
        match self {
            Message::Consensus(m) => match m {
                ProtocolMessage::Propose { block, committed } => TraceKind::Propose {
                    to,
                    msg_id,
                    block: block.id,
                    view: block.view(),
                    round: block.round(),
                    committed: *committed,
                },
                ProtocolMessage::Vote { view, round, block_high } => TraceKind::Vote {
                    to,
                    msg_id,
                    view: *view,
                    round: *round,
                    block: block_high.id,
                    block_view: block_high.view(),
                },
                ProtocolMessage::Timeout { view, round, block_high } => {
                    TraceKind::Timeout { to, msg_id, view: *view, round: *round, block: block_high.id }
                }
                ProtocolMessage::ProposeAsync { block, height, .. } => TraceKind::ProposeAsync {
                    to,
                    msg_id,
                    block: block.id,
                    view: block.view(),
                    round: block.round(),
                    height: *height,
                },
                ProtocolMessage::VoteAsync { block_id, height, .. } => {
                    TraceKind::VoteAsync { to, msg_id, block: *block_id, height: *height }
                }
                ProtocolMessage::AsyncComplete { block, view, .. } => {
                    TraceKind::AsyncComplete { to, msg_id, block: block.id, view: *view }
                }
            },
            Message::Mandator(m) => match m {
                MandatorMessage::Batch(b) => {
                    TraceKind::Batch { to, msg_id, creator: b.creator, round: b.round, batch_id: b.batch_id }
                }
                MandatorMessage::Vote { creator, round, .. } => {
                    TraceKind::MandatorVote { to, msg_id, creator: *creator, round: *round }
                }
                MandatorMessage::PullRequest { creator, round, .. } => {
                    TraceKind::PullRequest { to, msg_id, creator: *creator, round: *round }
                }
                MandatorMessage::PullResponse(b) => {
                    TraceKind::PullResponse { to, msg_id, creator: b.creator, round: b.round }
                }
            },
            Message::BlockSync(m) => match m {
                BlockSyncMessage::Fetch { ids } => TraceKind::BlockFetch { to, msg_id, blocks: ids.clone() },
                BlockSyncMessage::Blocks { blocks } => {
                    TraceKind::BlockResponse { to, msg_id, blocks: blocks.iter().map(|b| b.id).collect() }
                }
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicaConfig {
    pub n: usize,
    pub f: usize,
    pub timer_ms: u64,
    pub fallback: FallbackMode,
    pub selective_broadcast: bool,
    pub heartbeat_ms: u64,
    pub max_batch_requests: usize,
    pub fetch_retry_ms: u64,
    pub coin_seed: u64,
    /// Fault injection: execute the first request of the first non-empty
    /// batch twice.
    pub double_execute: bool,
}

#[derive(Debug, Default)]
pub struct Outbox {
    pub sends: Vec<(ReplicaId, Message)>,
    pub consensus_timer: Option<TimerRequest>,
    pub events: Vec<TraceKind>,
    pub executed: Vec<RequestId>,
}

#[derive(Debug, Clone)]
struct Want {
    first_seen: u64,
    last_sent: Option<u64>,
    attempts: u32,
    hint: ReplicaId,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ReplicaSummary {
    pub id: ReplicaId,
    pub view: u64,
    pub round: u64,
    pub is_async: bool,
    pub last_committed: BlockId,
    pub committed_blocks: usize,
    pub async_episodes: u64,
    pub executed_requests: u64,
    pub crashed: bool,
}

#[derive(Debug, Clone)]
pub struct Replica {
    id: ReplicaId,
    cfg: ReplicaConfig,
    pub sporades: Sporades,
    pub chains: ChainsState,
    pending: VecDeque<RequestId>,
    last_batch_time: u64,
    // last time the newest own batch was sent, initially or as a resend
    last_batch_send: u64,
    exec_queue: VecDeque<Block>,
    waiting: Vec<(ReplicaId, ProtocolMessage)>,
    wanted_blocks: BTreeMap<BlockId, Want>,
    wanted_batches: BTreeMap<(ReplicaId, u64), Want>,
    executed_requests: u64,
    double_executed: bool,
}

impl Replica {
    pub fn new(id: ReplicaId, cfg: ReplicaConfig) -> Self {
        let sporades = Sporades::new(
            id,
            SporadesConfig {
                n: cfg.n,
                f: cfg.f,
                timer_ms: cfg.timer_ms,
                fallback: cfg.fallback,
                coin: CoinConfig { shared_seed: cfg.coin_seed, n: cfg.n },
            },
        );
        let chains = ChainsState::new(cfg.n, id, cfg.n - cfg.f, cfg.selective_broadcast);
        Replica {
            id,
            cfg,
            sporades,
            chains,
            pending: VecDeque::new(),
            last_batch_time: 0,
            last_batch_send: 0,
            exec_queue: VecDeque::new(),
            waiting: Vec::new(),
            wanted_blocks: BTreeMap::new(),
            wanted_batches: BTreeMap::new(),
            executed_requests: 0,
            double_executed: false,
        }
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn summary(&self, crashed: bool) -> ReplicaSummary {
        let rank = self.sporades.rank_cur();
        ReplicaSummary {
            id: self.id,
            view: rank.view,
            round: rank.round,
            is_async: self.sporades.is_async(),
            last_committed: self.sporades.last_committed(),
            committed_blocks: self.sporades.committed_chain().len(),
            async_episodes: self.sporades.async_episodes(),
            executed_requests: self.executed_requests,
            crashed,
        }
    }

    pub fn start(&mut self, now: u64, out: &mut Outbox) {
        let mut o = Output::default();
        let cut = self.chains.current_cut();
        self.sporades.start(now, &cut, &mut o);
        self.absorb(now, o, out);
    }

    pub fn on_client_requests(&mut self, now: u64, requests: impl IntoIterator<Item = RequestId>, out: &mut Outbox) {
        self.pending.extend(requests);
        self.try_create_batch(now, out);
    }

    pub fn on_consensus_timer(&mut self, now: u64, generation: u64, out: &mut Outbox) {
        let mut o = Output::default();
        self.sporades.on_timer_expired(now, generation, &mut o);
        self.absorb(now, o, out);
    }

    pub fn on_message(&mut self, now: u64, from: ReplicaId, msg: Message, out: &mut Outbox) {
        match msg {
            Message::Consensus(m) => self.on_consensus(now, from, m, out),
            Message::Mandator(m) => self.on_mandator(now, from, m, out),
            Message::BlockSync(m) => self.on_block_sync(now, from, m, out),
        }
    }

    fn send(&self, out: &mut Outbox, dest: Dest, msg: Message) {
        match dest {
            Dest::To(r) => out.sends.push((r, msg)),
            Dest::All => {
                for i in 0..self.cfg.n {
                    out.sends.push((ReplicaId::from(i), msg.clone()));
                }
            }
        }
    }

    fn absorb(&mut self, now: u64, o: Output, out: &mut Outbox) {
        for (dest, m) in o.sends {
            self.send(out, dest, Message::Consensus(m));
        }
        if o.timer.is_some() {
            out.consensus_timer = o.timer;
        }
        out.events.extend(o.events);
        if !o.commits.is_empty() {
            self.exec_queue.extend(o.commits);
            self.try_execute(now, out);
        }
    }

    fn on_consensus(&mut self, now: u64, from: ReplicaId, msg: ProtocolMessage, out: &mut Outbox) {
        let mut resolved = false;
        for b in msg.carried_blocks() {
            match self.sporades.store_mut().insert(b.clone()) {
                Ok(done) => resolved |= !done.is_empty(),
                // equivocation is outside the model; drop the message
                Err(_) => return,
            }
        }
        if self.ready(&msg) {
            self.dispatch(now, from, msg, out);
        } else {
            for b in msg.carried_blocks() {
                if let Some(missing) = self.sporades.store().missing_ancestor(b.id) {
                    self.wanted_blocks.entry(missing).or_insert(Want {
                        first_seen: now,
                        last_sent: None,
                        attempts: 0,
                        hint: from,
                    });
                }
            }
            self.waiting.push((from, msg));
        }
        if resolved {
            self.retry_waiting(now, out);
        }
    }

    fn ready(&self, msg: &ProtocolMessage) -> bool {
        msg.carried_blocks().iter().all(|b| self.sporades.store().is_complete(b.id))
    }

    fn dispatch(&mut self, now: u64, from: ReplicaId, msg: ProtocolMessage, out: &mut Outbox) {
        let mut o = Output::default();
        let cut = self.chains.current_cut();
        self.sporades.handle(now, from, msg, &cut, &mut o);
        self.absorb(now, o, out);
    }

    fn retry_waiting(&mut self, now: u64, out: &mut Outbox) {
        loop {
            let pos = self.waiting.iter().position(|(_, m)| self.ready(m));
            match pos {
                Some(i) => {
                    let (from, msg) = self.waiting.remove(i);
                    self.dispatch(now, from, msg, out);
                }
                None => break,
            }
        }
    }

    fn on_block_sync(&mut self, now: u64, from: ReplicaId, msg: BlockSyncMessage, out: &mut Outbox) {
        match msg {
            BlockSyncMessage::Fetch { ids } => {
                let mut blocks: Vec<Block> = Vec::new();
                for id in ids {
                    for b in self.sporades.store().chain_segment(id, FETCH_DEPTH) {
                        if !blocks.iter().any(|x| x.id == b.id) {
                            blocks.push(b);
                        }
                    }
                }
                if !blocks.is_empty() {
                    out.sends.push((from, Message::BlockSync(BlockSyncMessage::Blocks { blocks })));
                }
            }
            BlockSyncMessage::Blocks { blocks } => {
                let mut resolved = false;
                for b in blocks.into_iter().rev() {
                    if let Ok(done) = self.sporades.store_mut().insert(b) {
                        resolved |= !done.is_empty();
                    }
                }
                if resolved {
                    self.retry_waiting(now, out);
                }
            }
        }
    }

    fn on_mandator(&mut self, now: u64, _from: ReplicaId, msg: MandatorMessage, out: &mut Outbox) {
        match msg {
            MandatorMessage::Batch(b) | MandatorMessage::PullResponse(b) => {
                let (creator, round, batch_id) = (b.creator, b.round, b.batch_id);
                match self.chains.on_batch(b) {
                    Ok(Some(vote)) => {
                        out.events.push(TraceKind::BatchStored { creator, round, batch_id });
                        out.sends.push((creator, Message::Mandator(vote)));
                        self.wanted_batches.remove(&(creator, round));
                        self.try_execute(now, out);
                    }
                    Ok(None) | Err(MandatorError::ConflictingBatch { .. }) => {}
                    Err(_) => {}
                }
            }
            MandatorMessage::Vote { creator, round, voter } => {
                for r in self.chains.on_vote(voter, creator, round) {
                    out.events.push(TraceKind::WriteComplete { creator, round: r });
                }
                if creator == self.id {
                    self.try_create_batch(now, out);
                }
            }
            MandatorMessage::PullRequest { creator, round, requester } => {
                if let Some(resp) = self.chains.on_pull_request(creator, round) {
                    out.sends.push((requester, Message::Mandator(resp)));
                }
            }
        }
    }

    fn try_create_batch(&mut self, now: u64, out: &mut Outbox) {
        if self.pending.is_empty() || !self.chains.ready() {
            return;
        }
        let take = self.pending.len().min(self.cfg.max_batch_requests);
        let requests: Vec<RequestId> = self.pending.drain(..take).collect();
        self.create_batch(now, requests, out);
    }

    fn create_batch(&mut self, now: u64, requests: Vec<RequestId>, out: &mut Outbox) {
        let count = requests.len();
        let intent = self.chains.create_batch(requests).expect("readiness checked");
        out.events.push(TraceKind::BatchCreated {
            round: intent.batch.round,
            batch_id: intent.batch.batch_id,
            requests: count,
        });
        let mut targets = intent.targets;
        // the leader forms cuts, so it must see new batches directly
        let leader = leader_of(self.sporades.view(), self.cfg.n);
        if self.cfg.selective_broadcast && leader != self.id && !targets.contains(&leader) {
            targets.push(leader);
        }
        for t in targets {
            out.sends.push((t, Message::Mandator(MandatorMessage::Batch(intent.batch.clone()))));
        }
        self.last_batch_time = now;
        self.last_batch_send = now;
    }

    fn try_execute(&mut self, now: u64, out: &mut Outbox) {
        while let Some(block) = self.exec_queue.front() {
            match self.chains.commit_cut(&block.cmnds) {
                Ok(batches) => {
                    let mut requests = 0;
                    let mut batch_ids = Vec::with_capacity(batches.len());
                    for b in &batches {
                        batch_ids.push(b.batch_id);
                        requests += b.requests.len();
                        out.executed.extend(b.requests.iter().copied());
                        if self.cfg.double_execute && !self.double_executed && !b.requests.is_empty() {
                            self.double_executed = true;
                            out.executed.push(b.requests[0]);
                        }
                    }
                    self.executed_requests += requests as u64;
                    out.events.push(TraceKind::CutCommitted {
                        block: block.id,
                        cut: block.cmnds.clone(),
                        batch_ids,
                        requests,
                    });
                    self.exec_queue.pop_front();
                }
                Err(MandatorError::MissingBatch(missing)) => {
                    let fresh: Vec<(ReplicaId, u64)> =
                        missing.into_iter().filter(|k| !self.wanted_batches.contains_key(k)).collect();
                    for (target, msg) in self.chains.fetch_missing(&fresh, 0) {
                        out.sends.push((target, Message::Mandator(msg)));
                    }
                    for k in fresh {
                        self.wanted_batches.insert(
                            k,
                            Want { first_seen: now, last_sent: Some(now), attempts: 1, hint: k.0 },
                        );
                    }
                    break;
                }
                Err(_) => {
                    self.exec_queue.pop_front();
                }
            }
        }
    }

    /// Periodic housekeeping: heartbeat batches and repair retries.
    pub fn on_tick(&mut self, now: u64, out: &mut Outbox) {
        if self.pending.is_empty() && self.chains.ready() && now >= self.last_batch_time + self.cfg.heartbeat_ms {
            self.create_batch(now, Vec::new(), out);
        } else {
            self.try_create_batch(now, out);
        }
        self.retry_block_fetches(now, out);
        self.retry_batch_pulls(now, out);
        self.resend_own_batch(now, out);
    }

    /// A selectively broadcast batch whose targets went silent is resent
    /// to every replica that has not voted for it.
    fn resend_own_batch(&mut self, now: u64, out: &mut Outbox) {
        if !self.cfg.selective_broadcast || self.chains.ready() || now < self.last_batch_send + self.cfg.fetch_retry_ms {
            return;
        }
        let round = self.chains.chain_len(self.id);
        let Some(batch) = self.chains.get(self.id, round).cloned() else {
            return;
        };
        let voters = self.chains.voters(self.id, round).cloned().unwrap_or_default();
        for i in 0..self.cfg.n {
            let r = ReplicaId::from(i);
            if r != self.id && !voters.contains(&r) {
                out.sends.push((r, Message::Mandator(MandatorMessage::Batch(batch.clone()))));
            }
        }
        self.last_batch_send = now;
    }

    fn due(w: &Want, now: u64, retry: u64) -> bool {
        match w.last_sent {
            None => now >= w.first_seen + retry,
            Some(t) => now >= t + retry,
        }
    }

    fn retry_block_fetches(&mut self, now: u64, out: &mut Outbox) {
        let store = self.sporades.store();
        self.wanted_blocks.retain(|id, _| !store.contains(*id));
        let retry = self.cfg.fetch_retry_ms;
        let mut by_target: BTreeMap<Option<ReplicaId>, Vec<BlockId>> = BTreeMap::new();
        for (id, w) in self.wanted_blocks.iter_mut() {
            if !Self::due(w, now, retry) {
                continue;
            }
            let target = if w.attempts == 0 && w.hint != self.id { Some(w.hint) } else { None };
            by_target.entry(target).or_default().push(*id);
            w.attempts += 1;
            w.last_sent = Some(now);
        }
        for (target, ids) in by_target {
            let msg = Message::BlockSync(BlockSyncMessage::Fetch { ids });
            match target {
                Some(t) => out.sends.push((t, msg)),
                None => {
                    for i in 0..self.cfg.n {
                        let r = ReplicaId::from(i);
                        if r != self.id {
                            out.sends.push((r, msg.clone()));
                        }
                    }
                }
            }
        }
    }

    fn retry_batch_pulls(&mut self, now: u64, out: &mut Outbox) {
        for k in self.chains.gaps() {
            self.wanted_batches.entry(k).or_insert(Want { first_seen: now, last_sent: None, attempts: 0, hint: k.0 });
        }
        let chains = &self.chains;
        self.wanted_batches.retain(|(c, r), _| !chains.has(*c, *r));
        let retry = self.cfg.fetch_retry_ms;
        let mut sends = Vec::new();
        for (k, w) in self.wanted_batches.iter_mut() {
            if !Self::due(w, now, retry) {
                continue;
            }
            sends.extend(self.chains.fetch_missing(&[*k], w.attempts));
            w.attempts += 1;
            w.last_sent = Some(now);
        }
        for (t, m) in sends {
            out.sends.push((t, Message::Mandator(m)));
        }
        if !self.exec_queue.is_empty() {
            self.try_execute(now, out);
        }
    }
}
