//! Ledger data model: coins, blocks, the block tree and longest-chain selection.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Block identifier. Simulated runs use a monotone counter, the hash-chain
/// path uses the first 8 bytes of a SHA-256 digest (see [`block_digest`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockHash(pub u64);

impl fmt::Display for BlockHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

pub type CoinId = u32;

/// 256-bit randomness value (VDF inputs and outputs, `rand_source`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct RandValue(pub [u8; 32]);

impl RandValue {
    pub fn hash_of(parts: &[&[u8]]) -> Self {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&h.finalize());
        RandValue(out)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for RandValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RandValue({})", &self.to_hex()[..12])
    }
}

impl Serialize for RandValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for RandValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(serde::de::Error::custom)?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("expected 32 bytes"))?;
        Ok(RandValue(arr))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("coin stake must be positive")]
    NonPositiveStake,
    #[error("online intervals must be sorted, disjoint and non-empty")]
    BadIntervals,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coin {
    pub id: CoinId,
    pub stake: f64,
    pub honest: bool,
    /// Half-open `[start, end)` intervals in seconds.
    pub online_intervals: Vec<(f64, f64)>,
}

impl Coin {
    pub fn new(
        id: CoinId,
        stake: f64,
        honest: bool,
        online_intervals: Vec<(f64, f64)>,
    ) -> Result<Self, ChainError> {
        if !(stake > 0.0 && stake.is_finite()) {
            return Err(ChainError::NonPositiveStake);
        }
        validate_intervals(&online_intervals)?;
        Ok(Coin {
            id,
            stake,
            honest,
            online_intervals,
        })
    }

    pub fn online_at(&self, t: f64) -> bool {
        self.online_intervals.iter().any(|&(a, b)| a <= t && t < b)
    }

    /// True iff the coin is online for the whole closed window `[from, to]`.
    pub fn online_throughout(&self, from: f64, to: f64) -> bool {
        self.online_intervals
            .iter()
            .any(|&(a, b)| a <= from && to < b)
    }
}

pub fn validate_intervals(iv: &[(f64, f64)]) -> Result<(), ChainError> {
    let mut prev_end = f64::NEG_INFINITY;
    for &(a, b) in iv {
        if !(a < b) || a < prev_end || a.is_nan() {
            return Err(ChainError::BadIntervals);
        }
        prev_end = b;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub hash: BlockHash,
    pub parent: Option<BlockHash>,
    pub level: u64,
    pub slot: u64,
    pub rand_source: RandValue,
    /// VDF input the winning evaluation started from.
    pub input: RandValue,
    pub rand_iter: u64,
    #[serde(with = "hex_bytes")]
    pub proof: Vec<u8>,
    pub coin_id: CoinId,
    pub honest: bool,
    pub proposal_time: f64,
    pub reveal_time: f64,
    pub txs: Vec<u64>,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

impl Block {
    pub fn genesis(rand_source: RandValue) -> Self {
        Block {
            hash: BlockHash(0),
            parent: None,
            level: 0,
            slot: 0,
            rand_source,
            input: rand_source,
            rand_iter: 0,
            proof: Vec::new(),
            coin_id: CoinId::MAX,
            honest: true,
            proposal_time: 0.0,
            reveal_time: 0.0,
            txs: Vec::new(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.parent.is_none()
    }
}

/// Digest binding a block to its parent, coin, slot and randomness.
pub fn block_digest(parent: BlockHash, coin: CoinId, slot: u64, rand_source: &RandValue) -> BlockHash {
    let d = RandValue::hash_of(&[
        &parent.0.to_le_bytes(),
        &coin.to_le_bytes(),
        &slot.to_le_bytes(),
        &rand_source.0,
    ]);
    let mut b = [0u8; 8];
    b.copy_from_slice(&d.0[..8]);
    BlockHash(u64::from_le_bytes(b))
}

/// True iff `level` starts an epoch of length `c`.
pub fn epoch_beginning(level: u64, c: u64) -> bool {
    assert!(c >= 1, "epoch length must be positive");
    level.is_multiple_of(c)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("parent {0} not in tree")]
    UnknownParent(BlockHash),
    #[error("block {0} already in tree")]
    DuplicateHash(BlockHash),
    #[error("block level {got} does not follow parent level {parent}")]
    BadLevel { parent: u64, got: u64 },
    #[error("block {0} not in tree")]
    UnknownBlock(BlockHash),
    #[error("genesis must have level 0 and no parent")]
    BadGenesis,
}

/// Rooted block tree. Blocks are shared through `Arc` so per-node views are cheap.
#[derive(Clone, Debug)]
pub struct BlockTree {
    blocks: HashMap<BlockHash, Arc<Block>>,
    children: HashMap<BlockHash, Vec<BlockHash>>,
    genesis: BlockHash,
    max_level: u64,
}

impl BlockTree {
    pub fn new(genesis: Block) -> Result<Self, TreeError> {
        if genesis.parent.is_some() || genesis.level != 0 {
            return Err(TreeError::BadGenesis);
        }
        let g = genesis.hash;
        let mut blocks = HashMap::new();
        blocks.insert(g, Arc::new(genesis));
        Ok(BlockTree {
            blocks,
            children: HashMap::new(),
            genesis: g,
            max_level: 0,
        })
    }

    pub fn genesis(&self) -> BlockHash {
        self.genesis
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn max_level(&self) -> u64 {
        self.max_level
    }

    pub fn contains(&self, h: BlockHash) -> bool {
        self.blocks.contains_key(&h)
    }

    pub fn get(&self, h: BlockHash) -> Option<&Arc<Block>> {
        self.blocks.get(&h)
    }

    pub fn block(&self, h: BlockHash) -> &Block {
        &self.blocks[&h]
    }

    pub fn children(&self, h: BlockHash) -> &[BlockHash] {
        self.children.get(&h).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Block>> {
        self.blocks.values()
    }

    pub fn insert(&mut self, block: Block) -> Result<(), TreeError> {
        self.insert_arc(Arc::new(block))
    }

    pub fn insert_arc(&mut self, block: Arc<Block>) -> Result<(), TreeError> {
        let parent = block.parent.ok_or(TreeError::BadGenesis)?;
        let plevel = self
            .blocks
            .get(&parent)
            .ok_or(TreeError::UnknownParent(parent))?
            .level;
        if self.blocks.contains_key(&block.hash) {
            return Err(TreeError::DuplicateHash(block.hash));
        }
        if block.level != plevel + 1 {
            return Err(TreeError::BadLevel {
                parent: plevel,
                got: block.level,
            });
        }
        self.max_level = self.max_level.max(block.level);
        self.children.entry(parent).or_default().push(block.hash);
        self.blocks.insert(block.hash, block);
        Ok(())
    }

    /// Genesis-to-`tip` path.
    pub fn path_to(&self, tip: BlockHash) -> Result<Vec<Arc<Block>>, TreeError> {
        let mut out = Vec::new();
        let mut cur = Some(tip);
        while let Some(h) = cur {
            let b = self.blocks.get(&h).ok_or(TreeError::UnknownBlock(h))?;
            cur = b.parent;
            out.push(b.clone());
        }
        out.reverse();
        Ok(out)
    }

    /// Ancestor of `h` at `level` (or `h` itself when levels match).
    pub fn ancestor_at(&self, mut h: BlockHash, level: u64) -> Option<BlockHash> {
        loop {
            let b = self.blocks.get(&h)?;
            if b.level == level {
                return Some(h);
            }
            if b.level < level {
                return None;
            }
            h = b.parent?;
        }
    }

    pub fn is_ancestor(&self, anc: BlockHash, h: BlockHash) -> bool {
        match self.blocks.get(&anc) {
            Some(a) => self.ancestor_at(h, a.level) == Some(anc),
            None => false,
        }
    }

    /// Lowest common ancestor of two blocks.
    pub fn lca(&self, a: BlockHash, b: BlockHash) -> Option<BlockHash> {
        let (mut x, mut y) = (a, b);
        let lx = self.blocks.get(&x)?.level;
        let ly = self.blocks.get(&y)?.level;
        if lx > ly {
            x = self.ancestor_at(x, ly)?;
        } else if ly > lx {
            y = self.ancestor_at(y, lx)?;
        }
        while x != y {
            x = self.blocks[&x].parent?;
            y = self.blocks[&y].parent?;
        }
        Some(x)
    }

    /// All tips at maximal level.
    pub fn deepest_tips(&self) -> Vec<BlockHash> {
        let mut v: Vec<BlockHash> = self
            .blocks
            .values()
            .filter(|b| b.level == self.max_level)
            .map(|b| b.hash)
            .collect();
        v.sort();
        v
    }

    /// Tip of the longest chain under the sticky, earliest-reveal, lowest-hash rule.
    pub fn best_tip(&self, current_tip: BlockHash) -> BlockHash {
        if let Some(b) = self.blocks.get(&current_tip) {
            if b.level == self.max_level {
                return current_tip;
            }
        }
        self.blocks
            .values()
            .filter(|b| b.level == self.max_level)
            .min_by(|a, b| {
                a.reveal_time
                    .total_cmp(&b.reveal_time)
                    .then(a.hash.cmp(&b.hash))
            })
            .map(|b| b.hash)
            .unwrap_or(self.genesis)
    }

    /// Genesis-to-tip path of the longest chain.
    pub fn longest_chain(&self, current_tip: BlockHash) -> Vec<Arc<Block>> {
        let tip = self.best_tip(current_tip);
        self.path_to(tip).expect("best tip is in tree")
    }
}
