//! Request dissemination: per-creator chains of batches, acknowledgement
//! watermarks, cut computation and cut-commit expansion, selective
//! broadcast and pull-based recovery of missing batches.
//!
//! Votes travel only to a batch's creator. Other replicas learn that round
//! `r − 1` of creator `c` is write-complete when they receive `c`'s batch at
//! round `r`, because a creator never starts round `r` before round `r − 1`
//! reached a quorum. `confirmed[c]` combines both sources and is capped by
//! the locally stored gapless prefix, so every cut a replica proposes only
//! names batches it holds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::block::{deserialize_hex, serialize_hex, Fnv64, ReplicaId};

pub type RequestId = u64;

/// Length-`n` vector of per-creator chain positions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CmndsVector(Vec<u64>);

impl CmndsVector {
    pub fn zeros(n: usize) -> Self {
        CmndsVector(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> u64 {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    /// Componentwise `self >= other`.
    pub fn dominates(&self, other: &CmndsVector) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a >= b)
    }

    pub fn join(&self, other: &CmndsVector) -> CmndsVector {
        CmndsVector(self.0.iter().zip(&other.0).map(|(a, b)| *a.max(b)).collect())
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

impl From<Vec<u64>> for CmndsVector {
    fn from(v: Vec<u64>) -> Self {
        CmndsVector(v)
    }
}

impl fmt::Display for CmndsVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BatchId(pub u64);

impl fmt::Display for BatchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for BatchId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_hex(self.0, s)
    }
}

impl<'de> Deserialize<'de> for BatchId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        deserialize_hex(d).map(BatchId)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MandatorBatch {
    pub creator: ReplicaId,
    pub round: u64,
    pub requests: Vec<RequestId>,
    pub batch_id: BatchId,
}

impl MandatorBatch {
    pub fn new(creator: ReplicaId, round: u64, requests: Vec<RequestId>) -> Self {
        assert!(round >= 1, "batch rounds start at 1");
        let mut h = Fnv64::new();
        h.write(&creator.0.to_le_bytes());
        h.write_u64(round);
        h.write_u64(requests.len() as u64);
        for r in &requests {
            h.write_u64(*r);
        }
        MandatorBatch { creator, round, requests, batch_id: BatchId(h.finish()) }
    }

    pub fn is_heartbeat(&self) -> bool {
        self.requests.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MandatorMessage {
    Batch(Arc<MandatorBatch>),
    Vote { creator: ReplicaId, round: u64, voter: ReplicaId },
    PullRequest { creator: ReplicaId, round: u64, requester: ReplicaId },
    PullResponse(Arc<MandatorBatch>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MandatorError {
    #[error("round {round} not ready: previous round unconfirmed")]
    NotReady { round: u64 },
    #[error("conflicting batch at ({creator}, {round})")]
    ConflictingBatch { creator: ReplicaId, round: u64 },
    #[error("missing batches {0:?}")]
    MissingBatch(Vec<(ReplicaId, u64)>),
    #[error("cut has length {got}, expected {expected}")]
    CutLength { got: usize, expected: usize },
}

/// A new own batch plus the peers it must be sent to (self excluded).
#[derive(Debug, Clone)]
pub struct BatchIntent {
    pub batch: Arc<MandatorBatch>,
    pub targets: Vec<ReplicaId>,
}

#[derive(Debug, Clone)]
pub struct ChainsState {
    n: usize,
    me: ReplicaId,
    quorum: usize,
    selective: bool,
    chains: Vec<BTreeMap<u64, Arc<MandatorBatch>>>,
    // largest r with rounds 1..=r all stored
    contiguous: Vec<u64>,
    votes: BTreeMap<(ReplicaId, u64), BTreeSet<ReplicaId>>,
    vote_watermark: Vec<u64>,
    implied: Vec<u64>,
    confirmed: Vec<u64>,
    committed: CmndsVector,
    // last round of my chain each peer acknowledged
    last_vote_round: Vec<u64>,
}

impl ChainsState {
    pub fn new(n: usize, me: ReplicaId, quorum: usize, selective: bool) -> Self {
        assert!(me.index() < n);
        ChainsState {
            n,
            me,
            quorum,
            selective,
            chains: vec![BTreeMap::new(); n],
            contiguous: vec![0; n],
            votes: BTreeMap::new(),
            vote_watermark: vec![0; n],
            implied: vec![0; n],
            confirmed: vec![0; n],
            committed: CmndsVector::zeros(n),
            last_vote_round: vec![0; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn me(&self) -> ReplicaId {
        self.me
    }

    pub fn chain_len(&self, creator: ReplicaId) -> u64 {
        self.chains[creator.index()].keys().next_back().copied().unwrap_or(0)
    }

    pub fn get(&self, creator: ReplicaId, round: u64) -> Option<&Arc<MandatorBatch>> {
        self.chains[creator.index()].get(&round)
    }

    pub fn has(&self, creator: ReplicaId, round: u64) -> bool {
        self.chains[creator.index()].contains_key(&round)
    }

    pub fn confirmed(&self) -> &[u64] {
        &self.confirmed
    }

    /// Rounds of `creator` with a locally observed vote quorum.
    pub fn vote_watermark(&self, creator: ReplicaId) -> u64 {
        self.vote_watermark[creator.index()]
    }

    pub fn committed_cut(&self) -> &CmndsVector {
        &self.committed
    }

    pub fn voters(&self, creator: ReplicaId, round: u64) -> Option<&BTreeSet<ReplicaId>> {
        self.votes.get(&(creator, round))
    }

    /// Next own round may start.
    pub fn ready(&self) -> bool {
        let next = self.chain_len(self.me) + 1;
        next == 1 || self.vote_watermark[self.me.index()] >= next - 1
    }

    pub fn create_batch(&mut self, requests: Vec<RequestId>) -> Result<BatchIntent, MandatorError> {
        let round = self.chain_len(self.me) + 1;
        if !self.ready() {
            return Err(MandatorError::NotReady { round });
        }
        let batch = Arc::new(MandatorBatch::new(self.me, round, requests));
        self.store(batch.clone());
        self.on_vote(self.me, self.me, round);
        let targets = self.selective_targets().into_iter().filter(|r| *r != self.me).collect();
        Ok(BatchIntent { batch, targets })
    }

    /// Stores a received batch. Returns the vote for its creator on first
    /// receipt, `None` on a duplicate.
    pub fn on_batch(&mut self, batch: Arc<MandatorBatch>) -> Result<Option<MandatorMessage>, MandatorError> {
        let (c, r) = (batch.creator, batch.round);
        if let Some(existing) = self.get(c, r) {
            if existing.batch_id != batch.batch_id {
                return Err(MandatorError::ConflictingBatch { creator: c, round: r });
            }
            return Ok(None);
        }
        self.store(batch);
        if c == self.me {
            return Ok(None);
        }
        Ok(Some(MandatorMessage::Vote { creator: c, round: r, voter: self.me }))
    }

    fn store(&mut self, batch: Arc<MandatorBatch>) {
        let c = batch.creator.index();
        let r = batch.round;
        self.chains[c].insert(r, batch);
        while self.chains[c].contains_key(&(self.contiguous[c] + 1)) {
            self.contiguous[c] += 1;
        }
        self.implied[c] = self.implied[c].max(r - 1);
        self.recompute(c);
    }

    /// Records a vote. Returns the rounds of `creator` that became
    /// write-complete by vote count, ascending.
    pub fn on_vote(&mut self, voter: ReplicaId, creator: ReplicaId, round: u64) -> Vec<u64> {
        if round == 0 || creator.index() >= self.n || voter.index() >= self.n {
            return Vec::new();
        }
        let fresh = self.votes.entry((creator, round)).or_default().insert(voter);
        if !fresh {
            return Vec::new();
        }
        if creator == self.me {
            let lv = &mut self.last_vote_round[voter.index()];
            *lv = (*lv).max(round);
        }
        let c = creator.index();
        let mut advanced = Vec::new();
        loop {
            let next = self.vote_watermark[c] + 1;
            match self.votes.get(&(creator, next)) {
                Some(s) if s.len() >= self.quorum => {
                    self.vote_watermark[c] = next;
                    advanced.push(next);
                }
                _ => break,
            }
        }
        if !advanced.is_empty() {
            self.recompute(c);
        }
        advanced
    }

    fn recompute(&mut self, c: usize) {
        let known = self.vote_watermark[c].max(self.implied[c]);
        self.confirmed[c] = self.contiguous[c].min(known);
    }

    pub fn current_cut(&self) -> CmndsVector {
        CmndsVector(self.confirmed.clone())
    }

    /// Batches named by `cut`, not yet committed, and absent locally.
    pub fn missing_for_cut(&self, cut: &CmndsVector) -> Vec<(ReplicaId, u64)> {
        let mut missing = Vec::new();
        for i in 0..self.n.min(cut.len()) {
            for r in self.committed.get(i) + 1..=cut.get(i) {
                if !self.chains[i].contains_key(&r) {
                    missing.push((ReplicaId::from(i), r));
                }
            }
        }
        missing
    }

    /// Expands `cut` into the batches it newly covers, ordered by creator
    /// then round, and advances the committed watermark.
    pub fn commit_cut(&mut self, cut: &CmndsVector) -> Result<Vec<Arc<MandatorBatch>>, MandatorError> {
        if cut.len() != self.n {
            return Err(MandatorError::CutLength { got: cut.len(), expected: self.n });
        }
        let missing = self.missing_for_cut(cut);
        if !missing.is_empty() {
            return Err(MandatorError::MissingBatch(missing));
        }
        let mut out = Vec::new();
        for i in 0..self.n {
            for r in self.committed.get(i) + 1..=cut.get(i) {
                out.push(self.chains[i][&r].clone());
            }
        }
        self.committed = self.committed.join(cut);
        Ok(out)
    }

    /// Self plus the most up-to-date peers, a majority in total; every
    /// replica when selective broadcast is off.
    pub fn selective_targets(&self) -> BTreeSet<ReplicaId> {
        let all = (0..self.n).map(ReplicaId::from);
        if !self.selective {
            return all.collect();
        }
        let majority = self.n / 2 + 1;
        let mut peers: Vec<ReplicaId> = all.filter(|r| *r != self.me).collect();
        peers.sort_by_key(|r| (std::cmp::Reverse(self.last_vote_round[r.index()]), *r));
        let mut out: BTreeSet<ReplicaId> = peers.into_iter().take(majority - 1).collect();
        out.insert(self.me);
        out
    }

    /// Pull requests for `wanted`. Attempt 0 asks the creator; later
    /// attempts ask a replica whose vote proves possession, rotating by
    /// attempt, or everyone else when no holder is known.
    pub fn fetch_missing(&self, wanted: &[(ReplicaId, u64)], attempt: u32) -> Vec<(ReplicaId, MandatorMessage)> {
        let mut out = Vec::new();
        for &(creator, round) in wanted {
            if self.has(creator, round) {
                continue;
            }
            let msg = MandatorMessage::PullRequest { creator, round, requester: self.me };
            if attempt == 0 && creator != self.me {
                out.push((creator, msg));
                continue;
            }
            let holders: Vec<ReplicaId> = self
                .votes
                .get(&(creator, round))
                .map(|s| s.iter().copied().filter(|r| *r != self.me && *r != creator).collect())
                .unwrap_or_default();
            if holders.is_empty() {
                for i in 0..self.n {
                    let r = ReplicaId::from(i);
                    if r != self.me {
                        out.push((r, msg.clone()));
                    }
                }
            } else {
                let pick = holders[(attempt as usize - 1) % holders.len()];
                out.push((pick, msg));
            }
        }
        out
    }

    pub fn on_pull_request(&self, creator: ReplicaId, round: u64) -> Option<MandatorMessage> {
        self.get(creator, round).map(|b| MandatorMessage::PullResponse(b.clone()))
    }

    pub fn on_fetch_response(&mut self, batch: Arc<MandatorBatch>) -> Result<Option<MandatorMessage>, MandatorError> {
        self.on_batch(batch)
    }

    /// Rounds known to exist (below a stored batch or an observed quorum)
    /// but not stored locally.
    pub fn gaps(&self) -> Vec<(ReplicaId, u64)> {
        let mut out = Vec::new();
        for c in 0..self.n {
            let top = self.chain_len(ReplicaId::from(c)).max(self.vote_watermark[c]);
            for r in self.contiguous[c] + 1..=top {
                if !self.chains[c].contains_key(&r) {
                    out.push((ReplicaId::from(c), r));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(i: u32) -> ReplicaId {
        ReplicaId(i)
    }

    fn batch(c: u32, r: u64) -> Arc<MandatorBatch> {
        Arc::new(MandatorBatch::new(p(c), r, vec![u64::from(c) * 1000 + r]))
    }

    #[test]
    fn first_batch_goes_to_everyone() {
        let mut s = ChainsState::new(5, p(0), 3, false);
        let intent = s.create_batch((0..100).collect()).unwrap();
        assert_eq!(intent.batch.round, 1);
        assert_eq!(intent.targets, vec![p(1), p(2), p(3), p(4)]);
        assert_eq!(s.voters(p(0), 1).unwrap().len(), 1);
    }

    #[test]
    fn not_ready_until_quorum() {
        let mut s = ChainsState::new(5, p(0), 3, false);
        s.create_batch(vec![1]).unwrap();
        s.on_vote(p(1), p(0), 1);
        assert_eq!(s.create_batch(vec![2]).unwrap_err(), MandatorError::NotReady { round: 2 });
        assert_eq!(s.on_vote(p(2), p(0), 1), vec![1]);
        assert_eq!(s.create_batch(vec![2]).unwrap().batch.round, 2);
    }

    #[test]
    fn on_batch_votes_once() {
        let mut s = ChainsState::new(5, p(1), 3, false);
        let b = batch(0, 1);
        let v = s.on_batch(b.clone()).unwrap();
        assert_eq!(v, Some(MandatorMessage::Vote { creator: p(0), round: 1, voter: p(1) }));
        assert_eq!(s.on_batch(b).unwrap(), None);
        let forged = Arc::new(MandatorBatch::new(p(0), 1, vec![99]));
        assert_eq!(s.on_batch(forged), Err(MandatorError::ConflictingBatch { creator: p(0), round: 1 }));
    }

    #[test]
    fn third_vote_confirms() {
        let mut s = ChainsState::new(5, p(1), 3, false);
        s.create_batch(vec![7]).unwrap();
        assert!(s.on_vote(p(0), p(1), 1).is_empty());
        // duplicate voter
        assert!(s.on_vote(p(0), p(1), 1).is_empty());
        assert_eq!(s.on_vote(p(3), p(1), 1), vec![1]);
        assert_eq!(s.confirmed()[1], 1);
    }

    #[test]
    fn out_of_order_quorums_jump() {
        // round 2 reaches quorum first; the watermark waits for round 1
        let mut s = ChainsState::new(5, p(1), 3, false);
        s.store(batch(1, 1));
        s.store(batch(1, 2));
        for v in [1, 2, 3] {
            s.on_vote(p(v), p(1), 2);
        }
        s.on_vote(p(1), p(1), 1);
        s.on_vote(p(2), p(1), 1);
        assert_eq!(s.vote_watermark(p(1)), 0);
        assert_eq!(s.on_vote(p(4), p(1), 1), vec![1, 2]);
        assert_eq!(s.confirmed()[1], 2);
    }

    #[test]
    fn batch_receipt_implies_previous_round_complete() {
        let mut s = ChainsState::new(5, p(0), 3, false);
        s.on_batch(batch(2, 1)).unwrap();
        assert_eq!(s.confirmed()[2], 0);
        s.on_batch(batch(2, 2)).unwrap();
        assert_eq!(s.confirmed()[2], 1);
        // gap: round 4 received, round 3 missing
        s.on_batch(batch(2, 4)).unwrap();
        assert_eq!(s.confirmed()[2], 2);
        assert_eq!(s.gaps(), vec![(p(2), 3)]);
    }

    #[test]
    fn empty_state_cut_is_zero() {
        let s = ChainsState::new(5, p(0), 3, false);
        assert_eq!(s.current_cut(), CmndsVector::zeros(5));
    }

    #[test]
    fn recommit_is_empty_and_stale_cut_harmless() {
        let mut s = ChainsState::new(3, p(0), 2, false);
        for c in 0..3 {
            for r in 1..=2 {
                s.store(batch(c, r));
            }
        }
        let cut = CmndsVector::from(vec![2, 1, 2]);
        assert_eq!(s.commit_cut(&cut).unwrap().len(), 5);
        assert!(s.commit_cut(&cut).unwrap().is_empty());
        let stale = CmndsVector::from(vec![1, 2, 0]);
        let out = s.commit_cut(&stale).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].creator, out[0].round), (p(1), 2));
        assert_eq!(s.committed_cut(), &CmndsVector::from(vec![2, 2, 2]));
    }

    #[test]
    fn missing_batch_reported() {
        let mut s = ChainsState::new(3, p(0), 2, false);
        s.store(batch(2, 1));
        let err = s.commit_cut(&CmndsVector::from(vec![0, 0, 2])).unwrap_err();
        assert_eq!(err, MandatorError::MissingBatch(vec![(p(2), 2)]));
        assert_eq!(s.committed_cut(), &CmndsVector::zeros(3));
    }

    #[test]
    fn selective_targets_tie_break_and_lag() {
        let mut s = ChainsState::new(5, p(0), 3, true);
        assert_eq!(s.selective_targets(), [p(0), p(1), p(2)].into_iter().collect());
        // p1 lags by 10 rounds behind the rest
        for r in 1..=11 {
            s.store(Arc::new(MandatorBatch::new(p(0), r, vec![r])));
            for v in [2, 3, 4] {
                s.on_vote(p(v), p(0), r);
            }
        }
        s.on_vote(p(1), p(0), 1);
        let t = s.selective_targets();
        assert!(!t.contains(&p(1)));
        assert_eq!(t, [p(0), p(2), p(3)].into_iter().collect());
        let off = ChainsState::new(5, p(0), 3, false);
        assert_eq!(off.selective_targets().len(), 5);
    }

    #[test]
    fn fetch_routes() {
        let mut s = ChainsState::new(5, p(0), 3, false);
        assert!(s.fetch_missing(&[], 0).is_empty());
        let first = s.fetch_missing(&[(p(3), 2)], 0);
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].0, p(3));
        // no holder known: ask everyone else
        assert_eq!(s.fetch_missing(&[(p(3), 2)], 1).len(), 4);
        // p1's vote proves possession
        s.votes.entry((p(3), 2)).or_default().insert(p(1));
        let retry = s.fetch_missing(&[(p(3), 2)], 1);
        assert_eq!(retry.len(), 1);
        assert_eq!(retry[0].0, p(1));
    }

    /// Independent enumeration: every (creator, round) with
    /// `lo[c] < round <= hi[c]`, creator-major.
    fn enumerate(lo: &[u64], hi: &[u64]) -> Vec<(u32, u64)> {
        let mut v = Vec::new();
        for c in 0..lo.len() {
            let mut r = lo[c] + 1;
            while r <= hi[c] {
                v.push((c as u32, r));
                r += 1;
            }
        }
        v
    }

    proptest! {
        #[test]
        fn successive_cuts_partition_final_cut(
            cuts in proptest::collection::vec(proptest::collection::vec(0u64..6, 4), 1..6)
        ) {
            let mut s = ChainsState::new(4, p(0), 3, false);
            for c in 0..4 {
                for r in 1..=6 {
                    s.store(batch(c, r));
                }
            }
            let mut seen = BTreeSet::new();
            let mut hi = vec![0u64; 4];
            for cut in &cuts {
                let before = s.committed_cut().clone();
                let out = s.commit_cut(&CmndsVector::from(cut.clone())).unwrap();
                prop_assert!(s.committed_cut().dominates(&before));
                let got: Vec<(u32, u64)> = out.iter().map(|b| (b.creator.0, b.round)).collect();
                let next: Vec<u64> = hi.iter().zip(cut).map(|(a, b)| *a.max(b)).collect();
                prop_assert_eq!(&got, &enumerate(&hi, &next));
                for g in got {
                    prop_assert!(seen.insert(g));
                }
                hi = next;
            }
            let all: BTreeSet<(u32, u64)> = enumerate(&[0; 4], &hi).into_iter().collect();
            prop_assert_eq!(seen, all);
        }

        #[test]
        fn watermark_matches_brute_force(
            events in proptest::collection::vec((0u32..5, 1u64..5), 0..60)
        ) {
            let mut s = ChainsState::new(5, p(0), 3, false);
            let mut sets: BTreeMap<u64, BTreeSet<u32>> = BTreeMap::new();
            for (voter, round) in events {
                s.on_vote(p(voter), p(0), round);
                sets.entry(round).or_default().insert(voter);
                let mut expected = 0;
                while sets.get(&(expected + 1)).map(|v| v.len() >= 3).unwrap_or(false) {
                    expected += 1;
                }
                prop_assert_eq!(s.vote_watermark(p(0)), expected);
            }
        }

        #[test]
        fn confirmed_is_gapless_prefix(
            arrivals in proptest::collection::vec((0u32..4, 1u64..6), 0..40)
        ) {
            let mut s = ChainsState::new(4, p(0), 3, false);
            for (c, r) in arrivals {
                let _ = s.on_batch(batch(c, r));
                for c in 0..4usize {
                    let conf = s.confirmed()[c];
                    for r in 1..=conf {
                        prop_assert!(s.has(ReplicaId::from(c), r));
                    }
                }
            }
        }
    }
}
