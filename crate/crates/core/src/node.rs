//! Honest node state machine: initialization, leader-election wins, message
//! handling, block validity and the k-deep confirmation rule.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chaintypes::{epoch_beginning, Block, BlockHash, BlockTree, CoinId, RandValue};
use crate::randvdf::{VdfResult, Verifier};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    /// Keep the in-flight evaluation when only the parent changes.
    #[default]
    Continue,
    /// Restart on every main-chain change.
    Restart,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    UnknownCoin,
    TimeOrder,
    Threshold,
    BadProof,
    UnknownParent,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NodeError {
    #[error("evaluation input no longer matches the node's rand_source")]
    StaleParent,
    #[error("node is not participating yet")]
    NotParticipating,
    #[error("own block failed validation: {0:?}")]
    InvalidOwnBlock(InvalidReason),
    #[error("tips have different levels")]
    NotEqualLength,
    #[error("unknown block {0}")]
    UnknownBlock(BlockHash),
}

/// Protocol knobs that shape validation and reactions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeRules {
    pub c: u64,
    pub time_ordering: bool,
    pub reset_policy: ResetPolicy,
}

/// Read-only context for validity checks.
pub struct ValidationCtx<'a> {
    pub stakes: &'a HashMap<CoinId, f64>,
    pub verifier: &'a Verifier,
    pub time_ordering: bool,
}

/// Stake of `coin` as seen from the chain ending at `_parent`. Stake is static
/// per scenario, so the chain is not consulted.
pub fn coin_stake(stakes: &HashMap<CoinId, f64>, coin: CoinId, _parent: BlockHash) -> Option<f64> {
    stakes.get(&coin).copied()
}

pub fn vdf_result_of(block: &Block, stake_s: f64) -> VdfResult {
    VdfResult {
        input: block.input,
        output: block.rand_source,
        proof: block.proof.clone(),
        rand_iter: block.rand_iter,
        slot_final: block.slot,
        stake_s,
    }
}

/// Checks in order: known coin, time ordering, threshold, VDF proof.
pub fn is_valid_block(view: &BlockTree, block: &Block, ctx: &ValidationCtx) -> Result<(), InvalidReason> {
    let parent_hash = block.parent.ok_or(InvalidReason::UnknownParent)?;
    let parent = view.get(parent_hash).ok_or(InvalidReason::UnknownParent)?;
    let stake = coin_stake(ctx.stakes, block.coin_id, parent_hash).ok_or(InvalidReason::UnknownCoin)?;
    if ctx.time_ordering && parent.slot >= block.slot {
        return Err(InvalidReason::TimeOrder);
    }
    if !ctx.verifier.wins(&block.rand_source, block.slot, stake) {
        return Err(InvalidReason::Threshold);
    }
    if !ctx.verifier.verify(&vdf_result_of(block, stake)) {
        return Err(InvalidReason::BadProof);
    }
    Ok(())
}

/// Longest chain with its last `k` blocks removed; genesis is always kept.
pub fn confirm_ledger(view: &BlockTree, tip: BlockHash, k: usize) -> Vec<Arc<Block>> {
    assert!(k >= 1, "confirmation depth must be positive");
    let mut chain = view.longest_chain(tip);
    let keep = chain.len().saturating_sub(k).max(1);
    chain.truncate(keep);
    chain
}

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    Broadcast(Arc<Block>),
    /// (Re)start every coin of the node from `input`.
    VdfStart { input: RandValue },
    /// Main chain changed while participating; `restart` discards in-flight work.
    VdfReset { restart: bool },
    TipChanged { old: BlockHash, new: BlockHash },
    Dropped { block: BlockHash, reason: InvalidReason },
    Buffered { block: BlockHash },
    /// Block entered the view.
    Inserted { block: BlockHash },
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub node_id: usize,
    pub view: BlockTree,
    pub parent_blk: BlockHash,
    pub rand_source: Option<RandValue>,
    pub slot: Option<u64>,
    pub participate: bool,
    pub uncnf_tx: BTreeSet<u64>,
    pub coins: Vec<CoinId>,
    orphans: HashMap<BlockHash, Vec<Arc<Block>>>,
}

/// Joins with a synced view. A node present when genesis is created observes
/// genesis as its first epoch beginning and participates at once.
pub fn initialize(node_id: usize, coins: Vec<CoinId>, sync_view: BlockTree, time: f64) -> NodeState {
    let genesis = sync_view.genesis();
    let tip = sync_view.best_tip(genesis);
    let mut st = NodeState {
        node_id,
        parent_blk: tip,
        rand_source: None,
        slot: None,
        participate: false,
        uncnf_tx: BTreeSet::new(),
        coins,
        orphans: HashMap::new(),
        view: sync_view,
    };
    let g = st.view.block(genesis);
    if tip == genesis && time <= g.proposal_time {
        st.rand_source = Some(g.rand_source);
        st.slot = Some(g.slot);
        st.participate = true;
    }
    st
}

impl NodeState {
    pub fn tip_level(&self) -> u64 {
        self.view.block(self.parent_blk).level
    }

    pub fn chain(&self) -> Vec<Arc<Block>> {
        self.view.path_to(self.parent_blk).expect("tip in view")
    }

    pub fn on_receive_tx(&mut self, tx: u64) {
        self.uncnf_tx.insert(tx);
    }

    /// Message handler, including orphan buffering.
    pub fn on_receive_block(
        &mut self,
        block: Arc<Block>,
        ctx: &ValidationCtx,
        rules: &NodeRules,
    ) -> Vec<Effect> {
        let mut effects = Vec::new();
        let mut queue = vec![block];
        while let Some(b) = queue.pop() {
            if self.view.contains(b.hash) {
                continue;
            }
            let Some(parent) = b.parent else { continue };
            if !self.view.contains(parent) {
                effects.push(Effect::Buffered { block: b.hash });
                self.orphans.entry(parent).or_default().push(b);
                continue;
            }
            if let Err(reason) = is_valid_block(&self.view, &b, ctx) {
                effects.push(Effect::Dropped { block: b.hash, reason });
                self.drop_orphans_of(b.hash, reason, &mut effects);
                continue;
            }
            self.view
                .insert_arc(b.clone())
                .expect("validated block with known parent");
            effects.push(Effect::Inserted { block: b.hash });
            self.accept(&b, rules, &mut effects);
            if let Some(waiting) = self.orphans.remove(&b.hash) {
                queue.extend(waiting.into_iter().rev());
            }
        }
        effects
    }

    fn drop_orphans_of(&mut self, h: BlockHash, reason: InvalidReason, effects: &mut Vec<Effect>) {
        let mut stack = vec![h];
        while let Some(x) = stack.pop() {
            if let Some(waiting) = self.orphans.remove(&x) {
                for w in waiting {
                    effects.push(Effect::Dropped { block: w.hash, reason });
                    stack.push(w.hash);
                }
            }
        }
    }

    fn accept(&mut self, x: &Block, rules: &NodeRules, effects: &mut Vec<Effect>) {
        if x.level <= self.tip_level() {
            return;
        }
        let old = self.parent_blk;
        self.switch_to(x.hash);
        effects.push(Effect::TipChanged { old, new: x.hash });
        let epoch = epoch_beginning(x.level, rules.c);
        let before = self.rand_source;
        if epoch {
            self.rand_source = Some(x.rand_source);
        }
        if self.participate {
            let restart = rules.reset_policy == ResetPolicy::Restart || before != self.rand_source;
            effects.push(Effect::VdfReset { restart });
        }
        if epoch && !self.participate {
            self.slot = Some(x.slot);
            self.participate = true;
            effects.push(Effect::VdfStart {
                input: x.rand_source,
            });
        }
    }

    /// Moves `parent_blk` and rebalances the unconfirmed-transaction buffer.
    fn switch_to(&mut self, new: BlockHash) {
        let old = self.parent_blk;
        let lca = self.view.lca(old, new).expect("both tips in view");
        let mut h = old;
        while h != lca {
            let b = self.view.block(h);
            self.uncnf_tx.extend(b.txs.iter().copied());
            h = b.parent.expect("lca above");
        }
        let mut h = new;
        while h != lca {
            let b = self.view.block(h);
            for t in &b.txs {
                self.uncnf_tx.remove(t);
            }
            h = b.parent.expect("lca above");
        }
        self.parent_blk = new;
    }

    /// Adversary-directed switch between equal-length tips.
    pub fn switch_tip(&mut self, tip: BlockHash, c: u64) -> Result<BlockHash, NodeError> {
        let lvl = self
            .view
            .get(tip)
            .ok_or(NodeError::UnknownBlock(tip))?
            .level;
        if lvl != self.tip_level() {
            return Err(NodeError::NotEqualLength);
        }
        let old = self.parent_blk;
        self.switch_to(tip);
        if self.participate {
            self.rand_source = Some(self.chain_rand_source(tip, c));
        }
        Ok(old)
    }

    /// Randomness a participating node holds at `tip`: the output of the last
    /// epoch beginning or own block on the chain.
    fn chain_rand_source(&self, tip: BlockHash, c: u64) -> RandValue {
        let mut h = tip;
        loop {
            let b = self.view.block(h);
            if b.is_genesis() || self.coins.contains(&b.coin_id) {
                return b.rand_source;
            }
            match b.parent {
                Some(p) if !epoch_beginning(b.level, c) => h = p,
                _ => return b.rand_source,
            }
        }
    }

    /// Builds the block for a won election on `parent_blk` and self-updates `rand_source`.
    pub fn pos_leader_election_win(
        &mut self,
        hash: BlockHash,
        coin: CoinId,
        result: &VdfResult,
        time: f64,
        ctx: &ValidationCtx,
    ) -> Result<(Arc<Block>, Vec<Effect>), NodeError> {
        if !self.participate {
            return Err(NodeError::NotParticipating);
        }
        if Some(result.input) != self.rand_source {
            return Err(NodeError::StaleParent);
        }
        let parent = self.view.block(self.parent_blk);
        let block = Block {
            hash,
            parent: Some(parent.hash),
            level: parent.level + 1,
            slot: result.slot_final,
            rand_source: result.output,
            input: result.input,
            rand_iter: result.rand_iter,
            proof: result.proof.clone(),
            coin_id: coin,
            honest: true,
            proposal_time: time,
            reveal_time: time,
            txs: self.uncnf_tx.iter().copied().collect(),
        };
        is_valid_block(&self.view, &block, ctx).map_err(NodeError::InvalidOwnBlock)?;
        let block = Arc::new(block);
        self.view
            .insert_arc(block.clone())
            .expect("fresh block on known parent");
        let old = self.parent_blk;
        self.switch_to(block.hash);
        self.rand_source = Some(result.output);
        self.slot = Some(result.slot_final);
        Ok((
            block.clone(),
            vec![
                Effect::TipChanged { old, new: block.hash },
                Effect::Broadcast(block.clone()),
                Effect::VdfStart { input: block.rand_source },
            ],
        ))
    }

    pub fn buffered_orphans(&self) -> usize {
        self.orphans.values().map(|v| v.len()).sum()
    }
}
