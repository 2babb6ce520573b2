//! Adversary strategies: private nothing-at-stake attack, costless simulation,
//! epoch enumeration, long-range randomness capture and tip switching.
//!
//! The adversary sees every honest block the moment it is created and keeps
//! its own blocks private until a reveal. Each epoch-beginning block it knows
//! about anchors one Poisson process per adversary coin; an arrival extends the
//! deepest block of the anchor's epoch.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::chaintypes::{epoch_beginning, Block, BlockHash, BlockTree, CoinId};
use crate::node::{NodeError, NodeState};
use crate::randvdf::SimulatedVdf;
use crate::simnet::config::{Baseline, ConfigError};
use crate::simnet::schedule::next_arrival;
use crate::stats;

fn one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StrategySpec {
    /// Adversary coins stay idle.
    #[default]
    None,
    Private {
        #[serde(default = "one")]
        target_depth_margin: u64,
    },
    CostlessSimulation {
        #[serde(default)]
        baseline: Option<Baseline>,
        #[serde(default = "one")]
        target_depth_margin: u64,
    },
    Enumeration {
        #[serde(default = "one")]
        target_depth_margin: u64,
    },
    LongRange {
        #[serde(default = "one")]
        target_depth_margin: u64,
    },
    /// Switches honest nodes between equal-length tips whenever it can.
    TipSwitchProbe,
}

impl StrategySpec {
    pub fn private_attack(target_depth_margin: u64) -> Self {
        StrategySpec::Private { target_depth_margin }
    }

    pub fn costless_simulation_attack(baseline: Option<Baseline>) -> Self {
        StrategySpec::CostlessSimulation {
            baseline,
            target_depth_margin: 1,
        }
    }

    pub fn enumeration_attack() -> Self {
        StrategySpec::Enumeration {
            target_depth_margin: 1,
        }
    }

    pub fn long_range_attack() -> Self {
        StrategySpec::LongRange {
            target_depth_margin: 1,
        }
    }

    pub fn validate(&self, _c: u64) -> Result<(), ConfigError> {
        match self {
            StrategySpec::CostlessSimulation { baseline: None, .. } => Err(ConfigError::BaselineRequired),
            StrategySpec::Private { target_depth_margin: 0 }
            | StrategySpec::CostlessSimulation {
                target_depth_margin: 0,
                ..
            }
            | StrategySpec::Enumeration {
                target_depth_margin: 0,
            }
            | StrategySpec::LongRange {
                target_depth_margin: 0,
            } => Err(ConfigError::Invalid {
                field: "adversary.strategy.target_depth_margin".into(),
                msg: "must be at least 1".into(),
            }),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StrategySpec::None => "none",
            StrategySpec::Private { .. } => "private",
            StrategySpec::CostlessSimulation { .. } => "costless_sim",
            StrategySpec::Enumeration { .. } => "enumeration",
            StrategySpec::LongRange { .. } => "long_range",
            StrategySpec::TipSwitchProbe => "tip_switch_probe",
        }
    }

    fn margin(&self) -> u64 {
        match *self {
            StrategySpec::Private { target_depth_margin }
            | StrategySpec::CostlessSimulation {
                target_depth_margin,
                ..
            }
            | StrategySpec::Enumeration { target_depth_margin }
            | StrategySpec::LongRange { target_depth_margin } => target_depth_margin,
            _ => 1,
        }
    }

    fn mines(&self) -> bool {
        !matches!(self, StrategySpec::None | StrategySpec::TipSwitchProbe)
    }
}

/// Overrides a node's sticky tie-break between equal-length tips.
pub fn honest_tip_switch(node: &mut NodeState, tip: BlockHash, c: u64) -> Result<BlockHash, NodeError> {
    node.switch_tip(tip, c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Nas,
    Enumerate,
    LongRange,
    Lottery,
}

#[derive(Clone, Debug)]
pub struct AdvCoin {
    pub id: CoinId,
    pub stake: f64,
    pub online: Vec<(f64, f64)>,
}

/// Static parameters the engine hands to the adversary.
#[derive(Clone, Debug)]
pub struct AdvParams {
    pub c: u64,
    pub k_confirm: usize,
    pub time_ordering: bool,
    pub rate_unit: f64,
    pub speedup: f64,
    pub iter_rate: f64,
    pub prune_window: u64,
    pub beam: Option<usize>,
    pub duration: f64,
    pub seed: u64,
    pub protocol: Baseline,
}

struct Proc {
    anchor: BlockHash,
    coin: usize,
    rng: ChaCha8Rng,
    arrivals: u64,
    frontier: BlockHash,
    key: u64,
    last_time: f64,
}

#[derive(Clone, Copy, Debug)]
struct Own {
    valid: bool,
    key: u64,
    revealed: bool,
}

/// Public state of one honest node as seen by the adversary.
#[derive(Clone, Copy, Debug)]
pub struct NodeTip {
    pub online: bool,
    pub tip: BlockHash,
    pub level: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AdvAction {
    /// Run process `proc` at `time`.
    Schedule { time: f64, proc: usize },
    /// A new private block.
    Created(Arc<Block>),
    /// Blocks to publish now, parents first.
    Reveal(Vec<Arc<Block>>),
}

pub struct AdversaryState {
    pub spec: StrategySpec,
    mode: Mode,
    p: AdvParams,
    pub coins: Vec<AdvCoin>,
    /// Every block the adversary knows: all honest blocks and its own.
    pub tree: BlockTree,
    own: HashMap<BlockHash, Own>,
    procs: Vec<Proc>,
    anchor_procs: HashMap<BlockHash, Vec<usize>>,
    anchors_per_level: HashMap<u64, usize>,
    best: Option<BlockHash>,
    best_level: u64,
    max_level_any: u64,
    public_max: u64,
    oracle: SimulatedVdf,
    probes: Vec<Arc<Block>>,
    dirty: bool,
}

impl AdversaryState {
    pub fn new(spec: StrategySpec, p: AdvParams, coins: Vec<AdvCoin>, genesis: Block, oracle: SimulatedVdf) -> Self {
        let mode = match &spec {
            StrategySpec::Enumeration { .. } => Mode::Enumerate,
            StrategySpec::LongRange { .. } => Mode::LongRange,
            StrategySpec::CostlessSimulation {
                baseline: Some(Baseline::VrfLottery),
                ..
            } => Mode::Lottery,
            _ if p.protocol == Baseline::VrfLottery => Mode::Lottery,
            _ => Mode::Nas,
        };
        AdversaryState {
            spec,
            mode,
            p,
            coins,
            tree: BlockTree::new(genesis).expect("genesis"),
            own: HashMap::new(),
            procs: Vec::new(),
            anchor_procs: HashMap::new(),
            anchors_per_level: HashMap::new(),
            best: None,
            best_level: 0,
            max_level_any: 0,
            public_max: 0,
            oracle,
            probes: Vec::new(),
            dirty: false,
        }
    }

    /// Deepest valid private block level (0 before the first win).
    pub fn best_valid_level(&self) -> u64 {
        self.best_level
    }

    /// Deepest own block level regardless of validity.
    pub fn max_level_any(&self) -> u64 {
        self.max_level_any
    }

    pub fn own_block_count(&self) -> usize {
        self.own.len()
    }

    pub fn is_valid_own(&self, h: BlockHash) -> Option<bool> {
        self.own.get(&h).map(|o| o.valid)
    }

    fn slot_at(&self, t: f64) -> u64 {
        (t * self.p.iter_rate).ceil() as u64
    }

    fn coin_rate(&self, coin: usize) -> f64 {
        self.coins[coin].stake * self.p.rate_unit * self.p.speedup
    }

    /// Initial actions at time 0.
    pub fn start(&mut self, ids: &mut u64) -> Vec<AdvAction> {
        let mut acts = Vec::new();
        if !self.spec.mines() || self.coins.is_empty() {
            return acts;
        }
        let g = self.tree.genesis();
        match self.mode {
            Mode::Lottery => {
                for coin in 0..self.coins.len() {
                    let key = stats::mix(0x107, coin as u64);
                    self.spawn(g, coin, key, 0.0, &mut acts);
                }
                let _ = ids;
            }
            _ => self.spawn_anchor(g, 0xA11CE, 0.0, &mut acts),
        }
        acts
    }

    fn spawn_anchor(&mut self, anchor: BlockHash, key: u64, now: f64, acts: &mut Vec<AdvAction>) {
        let level = self.tree.block(anchor).level;
        let honest = self.tree.block(anchor).honest;
        let n = self.anchors_per_level.entry(level).or_insert(0);
        *n += 1;
        if !honest && self.p.beam.is_some_and(|b| *n > b) {
            return;
        }
        for coin in 0..self.coins.len() {
            self.spawn(anchor, coin, stats::mix(key, coin as u64), now, acts);
        }
    }

    fn spawn(&mut self, anchor: BlockHash, coin: usize, key: u64, now: f64, acts: &mut Vec<AdvAction>) {
        let id = self.procs.len();
        self.procs.push(Proc {
            anchor,
            coin,
            rng: stats::substream(self.p.seed, key),
            arrivals: 0,
            frontier: anchor,
            key,
            last_time: now,
        });
        self.anchor_procs.entry(anchor).or_default().push(id);
        self.schedule_next(id, now, acts);
    }

    fn schedule_next(&mut self, id: usize, now: f64, acts: &mut Vec<AdvAction>) {
        let rate = self.coin_rate(self.procs[id].coin);
        let e: f64 = Exp1.sample(&mut self.procs[id].rng);
        let online = &self.coins[self.procs[id].coin].online;
        if let Some(t) = next_arrival(online, rate, now, e) {
            if t <= self.p.duration {
                acts.push(AdvAction::Schedule { time: t, proc: id });
            }
        }
    }

    /// Honest block created: learn it, open processes on epoch beginnings, refresh frontiers.
    pub fn observe_honest(&mut self, block: &Arc<Block>, now: f64) -> Vec<AdvAction> {
        let mut acts = Vec::new();
        if self.tree.contains(block.hash) {
            return acts;
        }
        self.tree
            .insert_arc(block.clone())
            .expect("honest blocks arrive parent-first at the adversary");
        self.public_max = self.public_max.max(block.level);
        if !self.spec.mines() || self.coins.is_empty() || self.mode == Mode::Lottery {
            return acts;
        }
        if epoch_beginning(block.level, self.p.c) {
            self.spawn_anchor(block.hash, stats::mix(0x40E5, block.hash.0), now, &mut acts);
        } else {
            let anchor_level = block.level - block.level % self.p.c;
            if let Some(anchor) = self.tree.ancestor_at(block.hash, anchor_level) {
                if let Some(ids) = self.anchor_procs.get(&anchor) {
                    for &id in ids {
                        let f = self.procs[id].frontier;
                        if self.tree.block(f).level < block.level {
                            self.procs[id].frontier = block.hash;
                        }
                    }
                }
            }
        }
        acts
    }

    fn pruned(&self, anchor_level: u64) -> bool {
        let reference = self.public_max.max(self.best_level);
        anchor_level + self.p.c + self.p.prune_window < reference
    }

    fn make_block(
        &mut self,
        ids: &mut u64,
        parent: BlockHash,
        slot: u64,
        coin: usize,
        now: f64,
        key: u64,
        since: f64,
    ) -> Arc<Block> {
        let pb = self.tree.block(parent);
        let input = pb.rand_source;
        let start = self.slot_at(since).min(slot.saturating_sub(1));
        let stake = self.coins[coin].stake;
        let r = self.oracle.certify(input, (slot - start).max(1), slot, stake);
        *ids += 1;
        let parent_valid = self.own.get(&parent).map(|o| o.valid).unwrap_or(true);
        let valid = parent_valid && (!self.p.time_ordering || slot > pb.slot);
        let b = Arc::new(Block {
            hash: BlockHash(*ids),
            parent: Some(parent),
            level: pb.level + 1,
            slot,
            rand_source: r.output,
            input,
            rand_iter: r.rand_iter,
            proof: r.proof,
            coin_id: self.coins[coin].id,
            honest: false,
            proposal_time: now,
            reveal_time: f64::INFINITY,
            txs: Vec::new(),
        });
        self.tree.insert_arc(b.clone()).expect("fresh private block");
        self.own.insert(
            b.hash,
            Own {
                valid,
                key,
                revealed: false,
            },
        );
        self.max_level_any = self.max_level_any.max(b.level);
        if valid && b.level > self.best_level {
            self.best_level = b.level;
            self.best = Some(b.hash);
            self.dirty = true;
        }
        b
    }

    /// Arrival of process `id` at `now`.
    pub fn on_win(&mut self, id: usize, now: f64, ids: &mut u64) -> Vec<AdvAction> {
        let mut acts = Vec::new();
        let anchor = self.procs[id].anchor;
        if self.mode != Mode::Lottery && self.pruned(self.tree.block(anchor).level) {
            return acts;
        }
        self.procs[id].arrivals += 1;
        let arrival = self.procs[id].arrivals;
        let coin = self.procs[id].coin;
        let base_key = stats::mix(self.procs[id].key, arrival);
        let since = self.procs[id].last_time;
        self.procs[id].last_time = now;
        match self.mode {
            Mode::Lottery => self.lottery_win(coin, now, since, base_key, ids, &mut acts),
            Mode::LongRange => self.long_range_win(id, now, since, base_key, ids, &mut acts),
            Mode::Nas | Mode::Enumerate => self.nas_win(id, now, since, base_key, ids, &mut acts),
        }
        self.schedule_next(id, now, &mut acts);
        acts
    }

    fn nas_win(&mut self, id: usize, now: f64, since: f64, key: u64, ids: &mut u64, acts: &mut Vec<AdvAction>) {
        let f = self.procs[id].frontier;
        let coin = self.procs[id].coin;
        let fb = self.tree.block(f).clone();
        let slot = self.slot_at(now).max(fb.slot + 1);
        let b = self.make_block(ids, f, slot, coin, now, key, since);
        acts.push(AdvAction::Created(b.clone()));
        if !epoch_beginning(b.level, self.p.c) {
            self.procs[id].frontier = b.hash;
            return;
        }
        self.spawn_anchor(b.hash, key, now, acts);
        if self.mode != Mode::Enumerate {
            return;
        }
        // Alternative epoch boundaries from earlier private wins of this epoch.
        let mut alt = Some(f);
        let mut n = 0u64;
        while let Some(a) = alt {
            let ab = self.tree.block(a).clone();
            if epoch_beginning(ab.level, self.p.c) || ab.honest {
                break;
            }
            n += 1;
            let k2 = stats::mix(key, 0xE000 + n);
            let e = self.make_block(ids, f, ab.slot, coin, now, k2, since);
            acts.push(AdvAction::Created(e.clone()));
            if self.own[&e.hash].valid {
                self.spawn_anchor(e.hash, k2, now, acts);
            } else {
                self.probes.push(e);
            }
            alt = ab.parent;
        }
    }

    fn long_range_win(&mut self, id: usize, now: f64, since: f64, key: u64, ids: &mut u64, acts: &mut Vec<AdvAction>) {
        let anchor = self.procs[id].anchor;
        let coin = self.procs[id].coin;
        let ab = self.tree.block(anchor).clone();
        let slot = self.slot_at(now).max(ab.slot + 1);
        let mut parent = anchor;
        for j in 0..self.p.c {
            let b = self.make_block(ids, parent, slot, coin, now, stats::mix(key, j), since);
            acts.push(AdvAction::Created(b.clone()));
            parent = b.hash;
        }
        if self.own[&parent].valid {
            self.spawn_anchor(parent, key, now, acts);
        } else {
            let tip = self.tree.block(parent).clone();
            self.probes.push(Arc::new(tip));
        }
    }

    fn lottery_win(&mut self, coin: usize, now: f64, since: f64, key: u64, ids: &mut u64, acts: &mut Vec<AdvAction>) {
        // On the first win, claim every past slot from genesis on: lottery tickets
        // for earlier slots can be evaluated at any later time.
        if since == 0.0 && self.coins[coin].online.first().is_some_and(|iv| iv.0 > 0.0) {
            let rate = self.coin_rate(coin);
            let mut rng = stats::substream(self.p.seed, stats::mix(key, 0x5EED));
            let mut parent = self.tree.genesis();
            let mut t = 0.0;
            let mut j = 0u64;
            loop {
                let e: f64 = Exp1.sample(&mut rng);
                t += e / rate;
                if t >= now {
                    break;
                }
                let pb = self.tree.block(parent).clone();
                let slot = self.slot_at(t).max(pb.slot + 1);
                let b = self.make_block(ids, parent, slot, coin, now, stats::mix(key, j), t);
                acts.push(AdvAction::Created(b.clone()));
                parent = b.hash;
                j += 1;
            }
        }
        let tip = self.deepest_for_lottery();
        let tb = self.tree.block(tip).clone();
        let slot = self.slot_at(now).max(tb.slot + 1);
        let b = self.make_block(ids, tip, slot, coin, now, key, since);
        acts.push(AdvAction::Created(b));
    }

    fn deepest_for_lottery(&self) -> BlockHash {
        let own = self.best.filter(|&b| self.tree.block(b).level >= self.public_max);
        own.unwrap_or_else(|| {
            let tips = self.tree.deepest_tips();
            *tips.first().expect("tree has genesis")
        })
    }

    /// Publishes the private chain when it displaces a confirmed block at some node,
    /// and publishes time-order probes right away.
    pub fn check_reveal(&mut self, now: f64, public: &[NodeTip]) -> Vec<AdvAction> {
        let mut acts = Vec::new();
        if !self.probes.is_empty() {
            let probes = std::mem::take(&mut self.probes);
            let mut out = Vec::new();
            for p in probes {
                out.extend(self.unrevealed_path(p.hash, now));
            }
            if !out.is_empty() {
                acts.push(AdvAction::Reveal(out));
            }
        }
        if !std::mem::take(&mut self.dirty) {
            return acts;
        }
        let Some(a) = self.best else { return acts };
        if self.own[&a].revealed {
            return acts;
        }
        let level = self.tree.block(a).level;
        let margin = self.spec.margin();
        let k = self.p.k_confirm as u64;
        let hit = public.iter().any(|n| {
            n.online
                && level >= n.level + margin
                && self
                    .tree
                    .lca(a, n.tip)
                    .map(|l| self.tree.block(l).level + 1 + k <= n.level)
                    .unwrap_or(false)
        });
        if hit {
            let path = self.unrevealed_path(a, now);
            acts.push(AdvAction::Reveal(path));
        }
        acts
    }

    fn unrevealed_path(&mut self, tip: BlockHash, now: f64) -> Vec<Arc<Block>> {
        let mut path = Vec::new();
        let mut h = tip;
        loop {
            match self.own.get_mut(&h) {
                Some(o) if !o.revealed => {
                    o.revealed = true;
                    let b = self.tree.block(h);
                    let mut copy = b.clone();
                    copy.reveal_time = now;
                    path.push(Arc::new(copy));
                    h = b.parent.expect("own block has parent");
                }
                _ => break,
            }
        }
        path.reverse();
        path
    }

    /// Some honest tip moved.
    pub fn observe_public_level(&mut self, level: u64) {
        self.public_max = self.public_max.max(level);
        self.dirty = true;
    }

    pub fn proc_count(&self) -> usize {
        self.procs.len()
    }

    #[doc(hidden)]
    pub fn lineage_key(&self, h: BlockHash) -> Option<u64> {
        self.own.get(&h).map(|o| o.key)
    }
}

/// Draws a uniform delay on `[0, delta]`.
pub fn random_delay<R: Rng>(rng: &mut R, delta: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else {
        rng.random_range(0.0..=delta)
    }
}
