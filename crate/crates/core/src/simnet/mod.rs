//! Deterministic discrete-event engine: honest proposal processes, Δ-bounded
//! delivery under adversary control, join/leave schedules and the adversary.

pub mod config;
pub mod schedule;
pub mod trace;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use thiserror::Error;

pub use config::{
    AdversaryCoinSpec, AdversarySpec, Baseline, ConfigError, DelayPolicy, FaultInjection, HonestNodeSpec,
    RevealPolicy, SimConfig,
};
pub use trace::{AttackOutcome, BlockRecord, RunSummary, TipRecord, Trace, TraceEvent};

use crate::adversary::{self, AdvAction, AdvCoin, AdvParams, AdversaryState, NodeTip, StrategySpec};
use crate::chaintypes::{Block, BlockHash, BlockTree, CoinId, RandValue};
use crate::growth;
use crate::node::{self, Effect, InvalidReason, NodeRules, NodeState, ValidationCtx};
use crate::randvdf::{self, Realization, SimulatedVdf, VdfKeys, VdfResult, Verifier};
use crate::stats;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

/// Honest online rate `λ_h(t)`.
pub fn lambda_h(cfg: &SimConfig, t: f64) -> f64 {
    cfg.honest
        .iter()
        .filter(|n| schedule::online_at(&n.online, t))
        .map(|n| n.coins.iter().sum::<f64>())
        .sum::<f64>()
        * cfg.rate_unit()
}

/// Adversary online rate `λ_a(t)` before any speedup.
pub fn lambda_a(cfg: &SimConfig, t: f64) -> f64 {
    cfg.adversary
        .coins
        .iter()
        .filter(|a| schedule::online_at(&a.online, t))
        .map(|a| a.stake)
        .sum::<f64>()
        * cfg.rate_unit()
}

/// Minimum and maximum of `λ_h` over `[0, duration]`.
pub fn honest_rate_range(cfg: &SimConfig) -> (f64, f64) {
    let pts = schedule::breakpoints(cfg.honest.iter().map(|n| n.online.as_slice()), cfg.duration);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for &p in &pts {
        let r = lambda_h(cfg, p);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

/// `σ(c)` for this scenario; `lambda_min` defaults to the smallest honest rate.
pub fn sigma(cfg: &SimConfig) -> f64 {
    let lmin = cfg.lambda_min.unwrap_or_else(|| honest_rate_range(cfg).0);
    if cfg.c == 1 {
        return 0.0;
    }
    growth::sigma_c(cfg.c as u32, cfg.delta, cfg.kappa, lmin)
}

/// Rate of honest stake online throughout `[t − σ(c), t]`.
pub fn lambda_h_c(cfg: &SimConfig, t: f64) -> f64 {
    let s = sigma(cfg);
    cfg.honest
        .iter()
        .filter(|n| {
            if s == 0.0 {
                schedule::online_at(&n.online, t)
            } else {
                schedule::online_throughout(&n.online, t - s, t)
            }
        })
        .map(|n| n.coins.iter().sum::<f64>())
        .sum::<f64>()
        * cfg.rate_unit()
}

/// Delay the adversary imposes on an honest broadcast to node `to`.
pub fn adversary_delay<R: Rng>(policy: &DelayPolicy, delta: f64, to: usize, rng: &mut R) -> f64 {
    match policy {
        DelayPolicy::Zero => 0.0,
        DelayPolicy::Max => delta,
        DelayPolicy::Split { fraction, nodes } => {
            if nodes.contains(&to) {
                fraction * delta
            } else {
                delta
            }
        }
        DelayPolicy::Random => adversary::random_delay(rng, delta),
    }
}

/// Delay of a reveal to node `to` of `n`.
pub fn reveal_delay(policy: RevealPolicy, delta: f64, to: usize, n: usize) -> f64 {
    match policy {
        RevealPolicy::Uniform => 0.0,
        RevealPolicy::StaggeredMaxDelta => {
            if n <= 1 {
                0.0
            } else {
                delta * to as f64 / (n - 1) as f64
            }
        }
    }
}

pub fn genesis_block(seed: u64) -> Block {
    Block::genesis(RandValue::hash_of(&[b"genesis", &seed.to_le_bytes()]))
}

pub fn vdf_keys(seed: u64) -> VdfKeys {
    VdfKeys::from_pp(RandValue::hash_of(&[b"pp", &seed.to_le_bytes()]).0)
}

#[derive(Debug)]
enum Kind {
    HonestWin { coin: usize, gen: u64 },
    AdversaryWin { proc: usize },
    Deliver { block: Arc<Block>, to: usize },
    Join { node: usize },
    Leave { node: usize },
    Tx,
}

#[derive(Debug)]
struct Ev {
    time: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Ev {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Ev {}
impl PartialOrd for Ev {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Ev {
    // Reversed so the max-heap pops the earliest event first.
    fn cmp(&self, o: &Self) -> Ordering {
        o.time.total_cmp(&self.time).then(o.seq.cmp(&self.seq))
    }
}

struct HonestCoin {
    node: usize,
    stake: f64,
    rng: ChaCha8Rng,
    gen: u64,
    start_slot: u64,
    pending: Option<VdfResult>,
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    rules: NodeRules,
    verifier: Verifier,
    oracle: SimulatedVdf,
    stakes: HashMap<CoinId, f64>,
    nodes: Vec<NodeState>,
    online: Vec<bool>,
    node_coins: Vec<Vec<usize>>,
    coins: Vec<HonestCoin>,
    queue: BinaryHeap<Ev>,
    seq: u64,
    ids: u64,
    net_rng: ChaCha8Rng,
    tx_rng: ChaCha8Rng,
    next_tx: u64,
    adv: Option<AdversaryState>,
    trace: Trace,
    record_index: HashMap<BlockHash, usize>,
    now: f64,
    stop: bool,
    switched_level: Vec<u64>,
}

/// Runs one scenario to completion.
pub fn run(cfg: &SimConfig) -> Result<Trace, SimError> {
    cfg.validate()?;
    let mut e = Engine::new(cfg);
    e.start();
    e.run_loop()?;
    Ok(e.finish())
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let keys = vdf_keys(cfg.seed);
        let genesis = genesis_block(cfg.seed);
        let mut stakes = HashMap::new();
        let mut coins = Vec::new();
        let mut node_coins = Vec::new();
        let mut nodes = Vec::new();
        for (n, spec) in cfg.honest.iter().enumerate() {
            let mut ids = Vec::new();
            for &s in &spec.coins {
                let idx = coins.len();
                stakes.insert(idx as CoinId, s);
                coins.push(HonestCoin {
                    node: n,
                    stake: s,
                    rng: stats::substream(cfg.seed, stats::mix(0x4C0, idx as u64)),
                    gen: 0,
                    start_slot: 0,
                    pending: None,
                });
                ids.push(idx);
            }
            let view = BlockTree::new(genesis.clone()).expect("genesis");
            nodes.push(node::initialize(n, ids.iter().map(|&i| i as CoinId).collect(), view, 0.0));
            node_coins.push(ids);
        }
        let first_adv = coins.len() as CoinId;
        let adv_coins: Vec<AdvCoin> = cfg
            .adversary
            .coins
            .iter()
            .enumerate()
            .map(|(i, a)| AdvCoin {
                id: first_adv + i as CoinId,
                stake: a.stake,
                online: a.online.clone(),
            })
            .collect();
        for c in &adv_coins {
            stakes.insert(c.id, c.stake);
        }
        let oracle = SimulatedVdf::new(keys, cfg.p_unit);
        let adv = (!matches!(cfg.adversary.strategy, StrategySpec::None)).then(|| {
            AdversaryState::new(
                cfg.adversary.strategy.clone(),
                AdvParams {
                    c: cfg.c,
                    k_confirm: cfg.k_confirm,
                    time_ordering: cfg.time_ordering,
                    rate_unit: cfg.rate_unit(),
                    speedup: cfg.adversary_speedup,
                    iter_rate: cfg.iter_rate,
                    prune_window: cfg.prune_window,
                    beam: cfg.adversary_beam,
                    duration: cfg.duration,
                    seed: stats::mix(cfg.seed, 0xADE),
                    protocol: cfg.protocol,
                },
                adv_coins,
                genesis.clone(),
                oracle.clone(),
            )
        });
        let online = cfg
            .honest
            .iter()
            .map(|n| schedule::online_at(&n.online, 0.0))
            .collect();
        let mut trace = Trace {
            config: cfg.record_trace.then(|| cfg.clone()),
            ..Trace::default()
        };
        trace.summary.seed = cfg.seed;
        trace.summary.outcome.strategy = cfg.adversary.strategy.name().to_string();
        let mut record_index = HashMap::new();
        if cfg.record_trace {
            trace.blocks.push(BlockRecord::from_block(&genesis, true));
            record_index.insert(genesis.hash, 0);
        }
        Engine {
            cfg,
            rules: NodeRules {
                c: cfg.c,
                time_ordering: cfg.time_ordering,
                reset_policy: cfg.reset_policy,
            },
            verifier: Verifier {
                vk: keys.vk,
                p_unit: cfg.p_unit,
                realization: cfg.realization,
            },
            oracle,
            stakes,
            nodes,
            online,
            node_coins,
            coins,
            queue: BinaryHeap::new(),
            seq: 0,
            ids: 0,
            net_rng: stats::substream(cfg.seed, 0xDE1A),
            tx_rng: stats::substream(cfg.seed, 0x7A),
            next_tx: 0,
            adv,
            trace,
            record_index,
            now: 0.0,
            stop: false,
            switched_level: vec![0; cfg.honest.len()],
        }
    }

    fn push(&mut self, time: f64, kind: Kind) {
        if time > self.cfg.duration {
            return;
        }
        self.seq += 1;
        self.queue.push(Ev {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn slot_at(&self, t: f64) -> u64 {
        (t * self.cfg.iter_rate).ceil() as u64
    }

    fn start(&mut self) {
        for n in 0..self.nodes.len() {
            for &(a, b) in &self.cfg.honest[n].online {
                if a > 0.0 {
                    self.push(a, Kind::Join { node: n });
                }
                if b < self.cfg.duration {
                    self.push(b, Kind::Leave { node: n });
                }
            }
            if self.online[n] {
                self.tip_record(n);
                if self.nodes[n].participate {
                    self.restart_coins(n);
                }
            }
        }
        if self.cfg.tx_rate > 0.0 {
            self.schedule_tx();
        }
        if let Some(adv) = self.adv.as_mut() {
            let acts = adv.start(&mut self.ids);
            self.apply_adv(acts);
        }
    }

    fn schedule_tx(&mut self) {
        let e: f64 = Exp1.sample(&mut self.tx_rng);
        let t = self.now + e / self.cfg.tx_rate;
        self.push(t, Kind::Tx);
    }

    fn tip_record(&mut self, n: usize) {
        if !self.cfg.record_trace {
            return;
        }
        let st = &self.nodes[n];
        self.trace.tips.push(TipRecord {
            time: self.now,
            node: n,
            tip: st.parent_blk.0,
            level: st.tip_level(),
        });
    }

    fn event(&mut self, e: TraceEvent) {
        if self.cfg.record_trace {
            self.trace.events.push(e);
        }
    }

    fn record_block(&mut self, b: &Block, valid: bool) {
        if b.honest {
            self.trace.summary.honest_blocks += 1;
        } else {
            self.trace.summary.adversary_blocks += 1;
        }
        if self.cfg.record_trace {
            self.record_index.insert(b.hash, self.trace.blocks.len());
            self.trace.blocks.push(BlockRecord::from_block(b, valid));
        }
    }

    /// Starts fresh evaluations for every coin of node `n` from its current randomness.
    fn restart_coins(&mut self, n: usize) {
        let Some(input) = self.nodes[n].rand_source else { return };
        let now = self.now;
        let start_slot = self.slot_at(now);
        for i in 0..self.node_coins[n].len() {
            let ci = self.node_coins[n][i];
            let coin = &mut self.coins[ci];
            coin.gen += 1;
            coin.start_slot = start_slot;
            let gen = coin.gen;
            match self.cfg.realization {
                Realization::Simulated => {
                    let e: f64 = Exp1.sample(&mut coin.rng);
                    let rate = coin.stake * self.cfg.rate_unit();
                    if let Some(t) = schedule::next_arrival(&self.cfg.honest[n].online, rate, now, e) {
                        self.push(t, Kind::HonestWin { coin: ci, gen });
                    }
                }
                Realization::HashChain => {
                    let r = randvdf::eval(input, &self.verifier.vk, coin.stake, start_slot, self.cfg.p_unit)
                        .expect("validated stake");
                    let t = r.slot_final as f64 / self.cfg.iter_rate;
                    coin.pending = Some(r);
                    self.push(t.max(now), Kind::HonestWin { coin: ci, gen });
                }
            }
        }
    }

    fn cancel_coins(&mut self, n: usize) {
        for &ci in &self.node_coins[n] {
            self.coins[ci].gen += 1;
            self.coins[ci].pending = None;
        }
    }

    fn run_loop(&mut self) -> Result<(), SimError> {
        while let Some(ev) = self.queue.pop() {
            if self.stop {
                break;
            }
            self.now = ev.time;
            self.trace.summary.events += 1;
            match ev.kind {
                Kind::HonestWin { coin, gen } => self.honest_win(coin, gen)?,
                Kind::AdversaryWin { proc } => {
                    let acts = match self.adv.as_mut() {
                        Some(a) => a.on_win(proc, self.now, &mut self.ids),
                        None => Vec::new(),
                    };
                    self.apply_adv(acts);
                    self.check_reveal();
                }
                Kind::Deliver { block, to } => self.deliver(block, to)?,
                Kind::Join { node } => self.join(node),
                Kind::Leave { node } => {
                    self.online[node] = false;
                    self.cancel_coins(node);
                    self.event(TraceEvent::Leave { time: self.now, node });
                }
                Kind::Tx => {
                    let tx = self.next_tx;
                    self.next_tx += 1;
                    for n in 0..self.nodes.len() {
                        if self.online[n] {
                            self.nodes[n].on_receive_tx(tx);
                        }
                    }
                    self.event(TraceEvent::Tx { time: self.now, tx });
                    self.schedule_tx();
                }
            }
        }
        Ok(())
    }

    fn join(&mut self, n: usize) {
        let peer = (0..self.nodes.len()).find(|&p| p != n && self.online[p]);
        let view = match peer {
            Some(p) => self.nodes[p].view.clone(),
            None => self.nodes[n].view.clone(),
        };
        let coins = self.nodes[n].coins.clone();
        let mut st = node::initialize(n, coins, view, self.now);
        if let Some(p) = peer {
            st.uncnf_tx = self.nodes[p].uncnf_tx.clone();
        }
        self.nodes[n] = st;
        self.online[n] = true;
        self.event(TraceEvent::Join { time: self.now, node: n });
        self.tip_record(n);
        if self.nodes[n].participate {
            self.restart_coins(n);
        }
    }

    fn honest_win(&mut self, ci: usize, gen: u64) -> Result<(), SimError> {
        let n = self.coins[ci].node;
        if self.coins[ci].gen != gen || !self.online[n] || !self.nodes[n].participate {
            return Ok(());
        }
        let Some(input) = self.nodes[n].rand_source else { return Ok(()) };
        let result = match self.cfg.realization {
            Realization::Simulated => {
                let parent_slot = self.nodes[n].view.block(self.nodes[n].parent_blk).slot;
                let start = self.coins[ci].start_slot;
                let slot = self.slot_at(self.now).max(parent_slot + 1).max(start + 1);
                self.oracle.certify(input, slot - start, slot, self.coins[ci].stake)
            }
            Realization::HashChain => match self.coins[ci].pending.take() {
                Some(r) => r,
                None => return Ok(()),
            },
        };
        let hash = BlockHash(self.ids + 1);
        let ctx = ValidationCtx {
            stakes: &self.stakes,
            verifier: &self.verifier,
            time_ordering: self.cfg.time_ordering,
        };
        match self.nodes[n].pos_leader_election_win(hash, ci as CoinId, &result, self.now, &ctx) {
            Ok((block, effects)) => {
                self.ids += 1;
                self.record_block(&block, true);
                self.event(TraceEvent::Recv {
                    time: self.now,
                    node: n,
                    block: block.hash.0,
                });
                if let Some(adv) = self.adv.as_mut() {
                    let acts = adv.observe_honest(&block, self.now);
                    self.apply_adv(acts);
                }
                self.apply_effects(n, effects)?;
                self.check_reveal();
            }
            Err(_) => self.restart_coins(n),
        }
        Ok(())
    }

    fn deliver(&mut self, block: Arc<Block>, to: usize) -> Result<(), SimError> {
        if !self.online[to] {
            return Ok(());
        }
        let ctx = ValidationCtx {
            stakes: &self.stakes,
            verifier: &self.verifier,
            time_ordering: self.cfg.time_ordering,
        };
        let effects = self.nodes[to].on_receive_block(block, &ctx, &self.rules);
        self.apply_effects(to, effects)?;
        if matches!(self.cfg.adversary.strategy, StrategySpec::TipSwitchProbe) {
            self.probe_switch(to);
        }
        self.check_reveal();
        Ok(())
    }

    fn probe_switch(&mut self, n: usize) {
        let st = &self.nodes[n];
        let level = st.tip_level();
        if level <= self.switched_level[n] || level != st.view.max_level() {
            return;
        }
        let tip = st.parent_blk;
        let Some(&other) = st.view.deepest_tips().iter().find(|&&h| h != tip) else { return };
        if adversary::honest_tip_switch(&mut self.nodes[n], other, self.cfg.c).is_ok() {
            self.switched_level[n] = level;
            self.trace.summary.tip_switches += 1;
            self.event(TraceEvent::TipSwitch {
                time: self.now,
                node: n,
                from: tip.0,
                to: other.0,
            });
            self.tip_record(n);
            self.restart_coins(n);
        }
    }

    fn apply_effects(&mut self, n: usize, effects: Vec<Effect>) -> Result<(), SimError> {
        for e in effects {
            match e {
                Effect::Broadcast(b) => {
                    for q in 0..self.nodes.len() {
                        if q == n {
                            continue;
                        }
                        let d = adversary_delay(&self.cfg.delay_policy, self.cfg.delta, q, &mut self.net_rng);
                        if !(0.0..=self.cfg.delta).contains(&d) {
                            return Err(SimError::InvariantViolation(format!("delivery delay {d} outside [0, Δ]")));
                        }
                        self.push(self.now + d, Kind::Deliver { block: b.clone(), to: q });
                    }
                }
                Effect::VdfStart { .. } => self.restart_coins(n),
                Effect::VdfReset { restart } => {
                    if restart {
                        self.restart_coins(n);
                    }
                }
                Effect::TipChanged { old, new } => self.tip_changed(n, old, new),
                Effect::Dropped { block, reason } => {
                    self.trace.summary.drops_total += 1;
                    if reason == InvalidReason::TimeOrder {
                        self.trace.summary.drops_time_order += 1;
                    }
                    self.event(TraceEvent::Drop {
                        time: self.now,
                        node: n,
                        block: block.0,
                        reason,
                    });
                }
                Effect::Buffered { .. } => {}
                Effect::Inserted { block } => {
                    if self.cfg.record_trace {
                        self.trace.events.push(TraceEvent::Recv {
                            time: self.now,
                            node: n,
                            block: block.0,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn tip_changed(&mut self, n: usize, old: BlockHash, new: BlockHash) {
        self.tip_record(n);
        let view = &self.nodes[n].view;
        let old_level = view.block(old).level;
        let new_level = view.block(new).level;
        if let Some(adv) = self.adv.as_mut() {
            adv.observe_public_level(new_level);
        }
        let lca = view.lca(old, new).expect("both in view");
        if lca == old {
            return;
        }
        let lca_level = view.block(lca).level;
        let depth = old_level - lca_level;
        self.trace.summary.max_fork_depth = self.trace.summary.max_fork_depth.max(depth);
        if lca_level + 1 + self.cfg.k_confirm as u64 > old_level {
            return;
        }
        let mut h = new;
        let mut adversarial = false;
        while h != lca {
            let b = view.block(h);
            adversarial |= !b.honest;
            h = b.parent.expect("below lca");
        }
        if !adversarial {
            return;
        }
        self.event(TraceEvent::Success {
            time: self.now,
            node: n,
            reorg_depth: depth,
        });
        let out = &mut self.trace.summary.outcome;
        if !out.success {
            out.success = true;
            out.reorg_depth = depth;
            out.time_of_success = Some(self.now);
        } else {
            out.reorg_depth = out.reorg_depth.max(depth);
        }
        if self.cfg.stop_on_success {
            self.stop = true;
        }
    }

    fn apply_adv(&mut self, acts: Vec<AdvAction>) {
        for a in acts {
            match a {
                AdvAction::Schedule { time, proc } => self.push(time, Kind::AdversaryWin { proc }),
                AdvAction::Created(b) => {
                    let valid = self
                        .adv
                        .as_ref()
                        .and_then(|adv| adv.is_valid_own(b.hash))
                        .unwrap_or(true);
                    self.record_block(&b, valid);
                }
                AdvAction::Reveal(blocks) => {
                    if blocks.is_empty() {
                        continue;
                    }
                    if self.cfg.record_trace {
                        for b in &blocks {
                            if let Some(&i) = self.record_index.get(&b.hash) {
                                self.trace.blocks[i].reveal_time = Some(self.now);
                            }
                        }
                    }
                    self.event(TraceEvent::Reveal {
                        time: self.now,
                        blocks: blocks.iter().map(|b| b.hash.0).collect(),
                    });
                    let n = self.nodes.len();
                    for q in 0..n {
                        let d = reveal_delay(self.cfg.reveal_policy, self.cfg.delta, q, n);
                        for b in &blocks {
                            self.push(self.now + d, Kind::Deliver { block: b.clone(), to: q });
                        }
                    }
                }
            }
        }
    }

    fn check_reveal(&mut self) {
        let Some(adv) = self.adv.as_mut() else { return };
        let public: Vec<NodeTip> = self
            .nodes
            .iter()
            .zip(&self.online)
            .map(|(st, &online)| NodeTip {
                online,
                tip: st.parent_blk,
                level: st.tip_level(),
            })
            .collect();
        let acts = adv.check_reveal(self.now, &public);
        self.apply_adv(acts);
    }

    fn finish(mut self) -> Trace {
        let s = &mut self.trace.summary;
        s.end_time = if self.stop { self.now } else { self.cfg.duration };
        s.chain_length = self.nodes.iter().map(|n| n.tip_level()).max().unwrap_or(0);
        if let Some(adv) = &self.adv {
            s.adv_max_valid_level = adv.best_valid_level();
            s.adv_max_level = adv.max_level_any();
        }
        if let Some(f) = self.cfg.fault_injection {
            if f.corrupt_view && self.cfg.record_trace {
                let g = self.nodes[0].view.genesis();
                self.trace.tips.push(TipRecord {
                    time: s.end_time,
                    node: 0,
                    tip: g.0,
                    level: 0,
                });
            }
        }
        self.trace
    }
}
