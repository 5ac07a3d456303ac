//! Protocol vocabulary shared by every replica: identifiers, ranks, blocks
//! and the per-replica block store.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::mandator::CmndsVector;

/// Index of a replica in `[0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReplicaId(pub u32);

impl ReplicaId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ReplicaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl From<usize> for ReplicaId {
    fn from(i: usize) -> Self {
        ReplicaId(i as u32)
    }
}

/// `(view, round)`; the derived order is lexicographic because `view` is
/// declared first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Rank {
    pub view: u64,
    pub round: u64,
}

impl Rank {
    pub const ZERO: Rank = Rank { view: 0, round: 0 };

    pub fn new(view: u64, round: u64) -> Self {
        Rank { view, round }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.view, self.round)
    }
}

pub fn rank_compare(a: Rank, b: Rank) -> Ordering {
    a.cmp(&b)
}

/// Round-robin view leader.
pub fn leader_of(view: u64, n: usize) -> ReplicaId {
    assert!(n >= 1, "leader_of requires at least one replica");
    ReplicaId((view % n as u64) as u32)
}

/// Synchronous blocks carry level −1, asynchronous blocks level 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Sync,
    Height1,
    Height2,
}

impl Level {
    pub fn as_i8(self) -> i8 {
        match self {
            Level::Sync => -1,
            Level::Height1 => 1,
            Level::Height2 => 2,
        }
    }

    pub fn from_i8(v: i8) -> Option<Level> {
        match v {
            -1 => Some(Level::Sync),
            1 => Some(Level::Height1),
            2 => Some(Level::Height2),
            _ => None,
        }
    }

    pub fn height(self) -> Option<u8> {
        match self {
            Level::Sync => None,
            Level::Height1 => Some(1),
            Level::Height2 => Some(2),
        }
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i8::deserialize(d)?;
        Level::from_i8(v).ok_or_else(|| serde::de::Error::custom(format!("invalid block level {v}")))
    }
}

/// 64-bit content-derived identifier, rendered as 16 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u64);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

pub(crate) fn serialize_hex<S: Serializer>(v: u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:016x}"))
}

pub(crate) fn deserialize_hex<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
    let s = String::deserialize(d)?;
    u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
}

impl Serialize for BlockId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_hex(self.0, s)
    }
}

impl<'de> Deserialize<'de> for BlockId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        deserialize_hex(d).map(BlockId)
    }
}

/// FNV-1a, 64-bit. Stable across platforms and toolchains, unlike
/// `std::hash::DefaultHasher`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub(crate) fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn finish(self) -> u64 {
        self.0
    }
}

/// A chained consensus proposal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub rank: Rank,
    pub level: Level,
    pub parent: BlockId,
    pub proposer: ReplicaId,
    pub cmnds: CmndsVector,
}

impl Block {
    pub fn new(rank: Rank, level: Level, parent: BlockId, proposer: ReplicaId, cmnds: CmndsVector) -> Self {
        let id = Self::compute_id(rank, level, parent, proposer, &cmnds);
        Block { id, rank, level, parent, proposer, cmnds }
    }

    pub fn genesis(n: usize) -> Self {
        Block {
            id: BlockId::GENESIS,
            rank: Rank::ZERO,
            level: Level::Sync,
            parent: BlockId::GENESIS,
            proposer: ReplicaId(0),
            cmnds: CmndsVector::zeros(n),
        }
    }

    pub fn compute_id(rank: Rank, level: Level, parent: BlockId, proposer: ReplicaId, cmnds: &CmndsVector) -> BlockId {
        let mut h = Fnv64::new();
        h.write_u64(rank.view);
        h.write_u64(rank.round);
        h.write(&[level.as_i8() as u8]);
        h.write_u64(parent.0);
        h.write(&proposer.0.to_le_bytes());
        h.write_u64(cmnds.len() as u64);
        for c in cmnds.as_slice() {
            h.write_u64(*c);
        }
        match h.finish() {
            // 0 is reserved for genesis
            0 => BlockId(1),
            v => BlockId(v),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.id == BlockId::GENESIS
    }

    pub fn view(&self) -> u64 {
        self.rank.view
    }

    pub fn round(&self) -> u64 {
        self.rank.round
    }

    /// True when the stored id matches the content.
    pub fn verify_id(&self) -> bool {
        self.is_genesis() || self.id == Self::compute_id(self.rank, self.level, self.parent, self.proposer, &self.cmnds)
    }
}

#[derive(Serialize, Deserialize)]
struct BlockJson {
    id: BlockId,
    view: u64,
    round: u64,
    level: Level,
    parent: BlockId,
    proposer: ReplicaId,
    cmnds: CmndsVector,
}

impl Serialize for Block {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        BlockJson {
            id: self.id,
            view: self.rank.view,
            round: self.rank.round,
            level: self.level,
            parent: self.parent,
            proposer: self.proposer,
            cmnds: self.cmnds.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = BlockJson::deserialize(d)?;
        Ok(Block {
            id: j.id,
            rank: Rank::new(j.view, j.round),
            level: j.level,
            parent: j.parent,
            proposer: j.proposer,
            cmnds: j.cmnds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("block {0} has an unresolved ancestor")]
    UnresolvedParent(BlockId),
    #[error("block {0} is not in the store")]
    Unknown(BlockId),
    #[error("block id {0} already stored with different content")]
    Conflict(BlockId),
}

/// Blocks known to one replica. A block is *complete* when every ancestor
/// back to genesis is stored; incomplete blocks are held until their
/// parents arrive.
#[derive(Debug, Clone)]
pub struct BlockStore {
    blocks: HashMap<BlockId, Block>,
    complete: HashSet<BlockId>,
    // missing parent id -> stored children waiting on it
    waiting: HashMap<BlockId, Vec<BlockId>>,
}

impl BlockStore {
    pub fn new(n: usize) -> Self {
        let genesis = Block::genesis(n);
        let mut blocks = HashMap::new();
        let mut complete = HashSet::new();
        complete.insert(genesis.id);
        blocks.insert(genesis.id, genesis);
        BlockStore { blocks, complete, waiting: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, id: BlockId) -> Option<&Block> {
        self.blocks.get(&id)
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn is_complete(&self, id: BlockId) -> bool {
        self.complete.contains(&id)
    }

    /// Stores `block`. Returns the ids that became complete as a result,
    /// in the order they were resolved.
    pub fn insert(&mut self, block: Block) -> Result<Vec<BlockId>, StoreError> {
        if let Some(existing) = self.blocks.get(&block.id) {
            if *existing != block {
                return Err(StoreError::Conflict(block.id));
            }
            return Ok(Vec::new());
        }
        let id = block.id;
        let parent = block.parent;
        self.blocks.insert(id, block);
        if !self.complete.contains(&parent) {
            self.waiting.entry(parent).or_default().push(id);
            return Ok(Vec::new());
        }
        let mut resolved = Vec::new();
        let mut frontier = vec![id];
        while let Some(next) = frontier.pop() {
            self.complete.insert(next);
            resolved.push(next);
            if let Some(children) = self.waiting.remove(&next) {
                frontier.extend(children);
            }
        }
        Ok(resolved)
    }

    /// First ancestor of `id` (possibly `id` itself) that is not stored.
    pub fn missing_ancestor(&self, id: BlockId) -> Option<BlockId> {
        let mut cur = id;
        loop {
            if self.complete.contains(&cur) {
                return None;
            }
            match self.blocks.get(&cur) {
                None => return Some(cur),
                Some(b) => cur = b.parent,
            }
        }
    }

    /// Whether `b` lies on the parent path from `a` back to genesis
    /// (inclusive of `a == b`).
    pub fn extends(&self, a: BlockId, b: BlockId) -> Result<bool, StoreError> {
        let target = self.blocks.get(&b).ok_or(StoreError::Unknown(b))?;
        let target_round = target.rank.round;
        let mut cur = self.blocks.get(&a).ok_or(StoreError::Unknown(a))?;
        loop {
            if cur.id == b {
                return Ok(true);
            }
            if cur.is_genesis() || cur.rank.round <= target_round {
                return Ok(false);
            }
            cur = self.blocks.get(&cur.parent).ok_or(StoreError::UnresolvedParent(cur.parent))?;
        }
    }

    /// Blocks strictly after `ancestor` up to and including `descendant`,
    /// oldest first. Fails if `descendant` does not extend `ancestor`.
    pub fn path_from(&self, ancestor: BlockId, descendant: BlockId) -> Result<Vec<&Block>, StoreError> {
        let mut out = Vec::new();
        let mut cur = self.blocks.get(&descendant).ok_or(StoreError::Unknown(descendant))?;
        while cur.id != ancestor {
            if cur.is_genesis() {
                return Err(StoreError::Unknown(ancestor));
            }
            out.push(cur);
            cur = self.blocks.get(&cur.parent).ok_or(StoreError::UnresolvedParent(cur.parent))?;
        }
        out.reverse();
        Ok(out)
    }

    /// `id` followed by up to `depth` of its ancestors (excluding genesis).
    pub fn chain_segment(&self, id: BlockId, depth: usize) -> Vec<Block> {
        let mut out = Vec::new();
        let mut cur = self.blocks.get(&id);
        while let Some(b) = cur {
            if b.is_genesis() || out.len() > depth {
                break;
            }
            out.push(b.clone());
            cur = self.blocks.get(&b.parent);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cut(v: &[u64]) -> CmndsVector {
        CmndsVector::from(v.to_vec())
    }

    fn child(parent: &Block, view: u64, level: Level, proposer: u32) -> Block {
        Block::new(
            Rank::new(view, parent.round() + 1),
            level,
            parent.id,
            ReplicaId(proposer),
            cut(&[parent.round() + 1, 0, 0]),
        )
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_compare(Rank::new(0, 1), Rank::new(0, 2)), Ordering::Less);
        assert_eq!(rank_compare(Rank::new(1, 0), Rank::new(0, 99)), Ordering::Greater);
        assert_eq!(rank_compare(Rank::new(3, 7), Rank::new(3, 7)), Ordering::Equal);
    }

    #[test]
    fn leader_examples() {
        assert_eq!(leader_of(0, 5), ReplicaId(0));
        assert_eq!(leader_of(7, 5), ReplicaId(2));
        for v in 0..50 {
            assert_eq!(leader_of(v, 5), leader_of(v + 5, 5));
        }
    }

    #[test]
    fn extends_self_and_genesis() {
        let mut store = BlockStore::new(3);
        let g = Block::genesis(3);
        let b1 = child(&g, 0, Level::Sync, 0);
        let b2 = child(&b1, 0, Level::Sync, 0);
        store.insert(b1.clone()).unwrap();
        store.insert(b2.clone()).unwrap();
        assert!(store.extends(b2.id, b2.id).unwrap());
        assert!(store.extends(b2.id, BlockId::GENESIS).unwrap());
        assert!(store.extends(b2.id, b1.id).unwrap());
        assert!(!store.extends(b1.id, b2.id).unwrap());
    }

    #[test]
    fn divergent_async_branches_do_not_extend() {
        // genesis <- b1 <- {a (p1, h1), c (p2, h1)}
        let mut store = BlockStore::new(3);
        let g = Block::genesis(3);
        let b1 = child(&g, 0, Level::Sync, 0);
        let a = child(&b1, 0, Level::Height1, 1);
        let c = child(&b1, 0, Level::Height1, 2);
        assert_ne!(a.id, c.id);
        for b in [&b1, &a, &c] {
            store.insert(b.clone()).unwrap();
        }
        assert!(!store.extends(a.id, c.id).unwrap());
        assert!(!store.extends(c.id, a.id).unwrap());
        assert!(store.extends(a.id, b1.id).unwrap());
        assert!(store.extends(c.id, b1.id).unwrap());
    }

    #[test]
    fn unresolved_parent_is_reported() {
        let mut store = BlockStore::new(3);
        let g = Block::genesis(3);
        let b1 = child(&g, 0, Level::Sync, 0);
        let b2 = child(&b1, 0, Level::Sync, 0);
        assert!(store.insert(b2.clone()).unwrap().is_empty());
        assert!(!store.is_complete(b2.id));
        assert_eq!(store.missing_ancestor(b2.id), Some(b1.id));
        assert_eq!(store.extends(b2.id, BlockId::GENESIS), Err(StoreError::UnresolvedParent(b1.id)));
        let resolved = store.insert(b1.clone()).unwrap();
        assert_eq!(resolved, vec![b1.id, b2.id]);
        assert!(store.is_complete(b2.id));
    }

    #[test]
    fn conflicting_content_rejected() {
        let mut store = BlockStore::new(3);
        let g = Block::genesis(3);
        let b1 = child(&g, 0, Level::Sync, 0);
        store.insert(b1.clone()).unwrap();
        let mut forged = b1.clone();
        forged.proposer = ReplicaId(2);
        assert_eq!(store.insert(forged), Err(StoreError::Conflict(b1.id)));
        assert_eq!(store.insert(b1), Ok(vec![]));
    }

    #[test]
    fn path_from_lists_oldest_first() {
        let mut store = BlockStore::new(3);
        let g = Block::genesis(3);
        let b1 = child(&g, 0, Level::Sync, 0);
        let b2 = child(&b1, 0, Level::Sync, 0);
        let b3 = child(&b2, 1, Level::Sync, 1);
        for b in [&b1, &b2, &b3] {
            store.insert(b.clone()).unwrap();
        }
        let ids: Vec<_> = store.path_from(BlockId::GENESIS, b3.id).unwrap().iter().map(|b| b.id).collect();
        assert_eq!(ids, vec![b1.id, b2.id, b3.id]);
        assert!(store.path_from(b3.id, b1.id).is_err());
    }

    #[test]
    fn block_json_has_canonical_keys() {
        let g = Block::genesis(2);
        let b = child(&g, 0, Level::Height2, 1);
        let v = serde_json::to_value(&b).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        let mut expected = vec!["id", "view", "round", "level", "parent", "proposer", "cmnds"];
        expected.sort();
        let mut keys_sorted = keys.clone();
        keys_sorted.sort();
        assert_eq!(keys_sorted, expected);
        assert_eq!(v["level"], 2);
        let back: Block = serde_json::from_value(v).unwrap();
        assert_eq!(back, b);
        assert!(back.verify_id());
    }

    fn arb_rank() -> impl Strategy<Value = Rank> {
        (0u64..20, 0u64..20).prop_map(|(v, r)| Rank::new(v, r))
    }

    proptest! {
        #[test]
        fn rank_is_strict_total_order(a in arb_rank(), b in arb_rank(), c in arb_rank()) {
            // exactly one of <, =, >
            let lt = a < b;
            let gt = a > b;
            let eq = a == b;
            prop_assert_eq!(u8::from(lt) + u8::from(gt) + u8::from(eq), 1);
            prop_assert_eq!(a < b, b > a);
            if a < b && b < c {
                prop_assert!(a < c);
            }
            let lex = (a.view, a.round).cmp(&(b.view, b.round));
            prop_assert_eq!(rank_compare(a, b), lex);
        }

        #[test]
        fn id_equality_implies_field_equality(
            v1 in 0u64..4, r1 in 0u64..4, p1 in 0u32..3, c1 in proptest::collection::vec(0u64..3, 3),
            v2 in 0u64..4, r2 in 0u64..4, p2 in 0u32..3, c2 in proptest::collection::vec(0u64..3, 3),
            l1 in 0usize..3, l2 in 0usize..3,
        ) {
            let levels = [Level::Sync, Level::Height1, Level::Height2];
            let a = Block::new(Rank::new(v1, r1), levels[l1], BlockId(7), ReplicaId(p1), cut(&c1));
            let b = Block::new(Rank::new(v2, r2), levels[l2], BlockId(7), ReplicaId(p2), cut(&c2));
            if a.id == b.id {
                prop_assert_eq!(a, b);
            }
        }
    }
}
