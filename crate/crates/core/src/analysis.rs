//! Post-hoc trace analysis: blocktree partitioning, the fictitious honest tree,
//! loner and Nakamoto-block detection, and ledger verdicts.

use std::collections::{HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::simnet::schedule;
use crate::simnet::{BlockRecord, TipRecord, Trace, TraceEvent};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

/// Right-continuous nondecreasing step function starting at 0.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepFn {
    /// `(time, value)` jumps in time order.
    pub jumps: Vec<(f64, u64)>,
}

impl StepFn {
    pub fn at(&self, t: f64) -> u64 {
        let i = self.jumps.partition_point(|&(x, _)| x <= t);
        if i == 0 {
            0
        } else {
            self.jumps[i - 1].1
        }
    }
}

/// Fictitious honest tree depth `D_h` and the start time of each level.
pub fn fictitious_depth(honest_times: &[f64], delta: f64) -> (StepFn, Vec<f64>) {
    let mut f = StepFn::default();
    let mut starts = Vec::new();
    let mut i = 0;
    while i < honest_times.len() {
        let start = honest_times[i];
        starts.push(start);
        f.jumps.push((start, starts.len() as u64));
        while i < honest_times.len() && honest_times[i] <= start + delta {
            i += 1;
        }
    }
    (f, starts)
}

/// No other honest block in the closed window `[τ_j − Δ, τ_j + Δ]`.
pub fn is_loner(j: usize, honest_times: &[f64], delta: f64) -> bool {
    let t = honest_times[j];
    honest_times
        .iter()
        .enumerate()
        .all(|(i, &s)| i == j || (s - t).abs() > delta)
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionView {
    pub delta: f64,
    pub end_time: f64,
    /// Indices into `trace.blocks` of honest blocks, genesis first, by proposal time.
    pub honest: Vec<usize>,
    pub tau_h: Vec<f64>,
    /// Adversary block indices of each tree `T_i`.
    pub trees: Vec<Vec<usize>>,
    pub depth: Vec<StepFn>,
    pub d_h: StepFn,
    pub level_start: Vec<f64>,
    pub loner: Vec<bool>,
}

pub(crate) fn index_blocks(trace: &Trace) -> HashMap<u64, usize> {
    trace.blocks.iter().enumerate().map(|(i, b)| (b.hash, i)).collect()
}

/// Splits the valid block tree into honest roots and their adversary trees.
/// Invalid blocks never enter honest views and are left out.
pub fn partition(trace: &Trace) -> Result<PartitionView, AnalysisError> {
    let idx = index_blocks(trace);
    let delta = trace.delta();
    let mut honest: Vec<usize> = (0..trace.blocks.len())
        .filter(|&i| trace.blocks[i].honest && trace.blocks[i].valid)
        .collect();
    if !honest.iter().any(|&i| trace.blocks[i].parent.is_none()) {
        return Err(AnalysisError::MalformedTrace("no genesis record".into()));
    }
    honest.sort_by(|&a, &b| {
        let (x, y) = (&trace.blocks[a], &trace.blocks[b]);
        x.parent
            .is_some()
            .cmp(&y.parent.is_some())
            .then(x.proposal_time.total_cmp(&y.proposal_time))
            .then(x.hash.cmp(&y.hash))
    });
    let root_of: HashMap<u64, usize> = honest
        .iter()
        .enumerate()
        .map(|(k, &i)| (trace.blocks[i].hash, k))
        .collect();
    let tau_h: Vec<f64> = honest.iter().map(|&i| trace.blocks[i].proposal_time).collect();
    let mut trees = vec![Vec::new(); honest.len()];
    let mut owner: HashMap<u64, usize> = HashMap::new();
    for (i, b) in trace.blocks.iter().enumerate() {
        if b.honest || !b.valid {
            continue;
        }
        let mut path = vec![b.hash];
        let mut cur = b.parent;
        let root = loop {
            let h = cur.ok_or_else(|| AnalysisError::MalformedTrace(format!("block {} has no honest root", b.hash)))?;
            if let Some(&r) = root_of.get(&h).or_else(|| owner.get(&h)) {
                break r;
            }
            let &pi = idx
                .get(&h)
                .ok_or_else(|| AnalysisError::MalformedTrace(format!("unknown parent {h}")))?;
            path.push(h);
            cur = trace.blocks[pi].parent;
        };
        for h in path {
            owner.insert(h, root);
        }
        trees[root].push(i);
    }
    let mut depth = Vec::with_capacity(honest.len());
    for (k, tree) in trees.iter_mut().enumerate() {
        let root_level = trace.blocks[honest[k]].level;
        tree.sort_by(|&a, &b| {
            trace.blocks[a]
                .proposal_time
                .total_cmp(&trace.blocks[b].proposal_time)
                .then(trace.blocks[a].hash.cmp(&trace.blocks[b].hash))
        });
        let mut f = StepFn::default();
        let mut best = 0;
        for &i in tree.iter() {
            let d = trace.blocks[i].level - root_level;
            if d > best {
                best = d;
                f.jumps.push((trace.blocks[i].proposal_time, d));
            }
        }
        depth.push(f);
    }
    let (d_h, level_start) = fictitious_depth(&tau_h[1..], delta);
    let loner = (0..tau_h.len()).map(|j| is_loner(j, &tau_h, delta)).collect();
    Ok(PartitionView {
        delta,
        end_time: trace.summary.end_time,
        honest,
        tau_h,
        trees,
        depth,
        d_h,
        level_start,
        loner,
    })
}

/// Indices `j ≥ 1` (into `view.honest`) of Nakamoto blocks over the observed horizon.
pub fn nakamoto_blocks(view: &PartitionView) -> Vec<usize> {
    let n = view.tau_h.len();
    let delta = view.delta;
    let end = view.end_time;
    // Tree i is "bad" on a union of [a, b) windows; keep the last finite end
    // and whether it is still bad at the horizon.
    let mut last_bad = vec![f64::NEG_INFINITY; n];
    let mut open = vec![false; n];
    for i in 0..n {
        let base = view.d_h.at(view.tau_h[i] + delta);
        let jumps = std::iter::once((view.tau_h[i], 0)).chain(view.depth[i].jumps.iter().copied());
        for (a, d) in jumps {
            let m = (d + 1 + base) as usize;
            match view.level_start.get(m - 1) {
                Some(&s) if s + delta <= end => {
                    if s + delta > a {
                        last_bad[i] = last_bad[i].max(s + delta);
                    }
                }
                _ => open[i] = true,
            }
        }
    }
    let mut out = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let mut any_open = false;
    for j in 1..n {
        worst = worst.max(last_bad[j - 1]);
        any_open |= open[j - 1];
        let tj = view.tau_h[j] + delta;
        if view.loner[j] && worst <= tj && !(any_open && end > tj) {
            out.push(j);
        }
    }
    out
}

/// Online intervals of honest node `n`, always online when the trace has no config.
fn node_online(trace: &Trace, n: usize) -> Vec<(f64, f64)> {
    trace
        .config
        .as_ref()
        .and_then(|c| c.honest.get(n))
        .map(|h| h.online.clone())
        .unwrap_or_else(|| vec![(0.0, f64::MAX)])
}

fn tips_by_node(trace: &Trace) -> HashMap<usize, Vec<TipRecord>> {
    let mut m: HashMap<usize, Vec<TipRecord>> = HashMap::new();
    for t in &trace.tips {
        m.entry(t.node).or_default().push(*t);
    }
    m
}

/// Every Nakamoto block stays on every online node's chain after `τ_j + Δ`.
pub fn nakamoto_stability_check(view: &PartitionView, trace: &Trace) -> bool {
    let nak = nakamoto_blocks(view);
    stability_of(&nak, view, trace)
}

pub(crate) fn stability_of(nak: &[usize], view: &PartitionView, trace: &Trace) -> bool {
    if nak.is_empty() {
        return true;
    }
    let idx = index_blocks(trace);
    let mut at_level: HashMap<u64, (u64, f64)> = HashMap::new();
    for &j in nak {
        let b = &trace.blocks[view.honest[j]];
        let due = view.tau_h[j] + view.delta;
        if let Some(&(h, _)) = at_level.get(&b.level) {
            if h != b.hash {
                return false;
            }
        }
        at_level.insert(b.level, (b.hash, due));
    }
    // Earliest due time of a Nakamoto block strictly above each level.
    let mut by_level: Vec<(u64, f64)> = at_level.iter().map(|(&l, &(_, d))| (l, d)).collect();
    by_level.sort_by_key(|x| x.0);
    let mut suffix_min = vec![f64::INFINITY; by_level.len() + 1];
    for i in (0..by_level.len()).rev() {
        suffix_min[i] = suffix_min[i + 1].min(by_level[i].1);
    }
    let due_above = |level: u64| suffix_min[by_level.partition_point(|x| x.0 <= level)];
    // Earliest due time of a Nakamoto block that the chain ending at `h` misses.
    let mut broken: HashMap<u64, f64> = HashMap::new();
    let mut broken_from = |tip: u64| -> Option<f64> {
        let mut path = Vec::new();
        let mut h = Some(tip);
        let mut acc = f64::INFINITY;
        while let Some(x) = h {
            if let Some(&v) = broken.get(&x) {
                acc = v;
                break;
            }
            let &bi = idx.get(&x)?;
            path.push(bi);
            h = trace.blocks[bi].parent;
        }
        for &bi in path.iter().rev() {
            let b = &trace.blocks[bi];
            if let Some(&(want, due)) = at_level.get(&b.level) {
                if want != b.hash {
                    acc = acc.min(due);
                }
            }
            broken.insert(b.hash, acc);
        }
        Some(acc)
    };
    let end = view.end_time;
    let mut nodes: Vec<(usize, Vec<TipRecord>)> = tips_by_node(trace).into_iter().collect();
    nodes.sort_by_key(|x| x.0);
    for (node, recs) in nodes {
        let online = node_online(trace, node);
        for (r, rec) in recs.iter().enumerate() {
            let Some(&(_, off)) = online.iter().find(|&&(a, b)| a <= rec.time && rec.time < b) else {
                continue;
            };
            let until = recs.get(r + 1).map(|x| x.time).unwrap_or(end).min(off);
            if r + 1 < recs.len() && until <= rec.time {
                continue;
            }
            let Some(missed) = broken_from(rec.tip) else { return false };
            if missed < until || due_above(rec.level) < until {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PersistenceViolation {
    pub time: f64,
    pub node: usize,
    pub level: u64,
    pub expected: u64,
    pub found: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerVerdict {
    pub persistence_ok: bool,
    pub first_violation: Option<PersistenceViolation>,
    pub liveness_ok: bool,
    /// Largest observed submission-to-confirmation delay over all nodes.
    pub worst_inclusion_delay: f64,
    pub unconfirmed_txs: usize,
    pub tau: f64,
    pub u: f64,
    pub k: usize,
}

/// Persistence and liveness over the tip log. A block is confirmed at a node
/// when it is at least `k` deep and mined more than `tau` before the tip.
pub fn check_ledger(trace: &Trace, tau: f64, u: f64, k: usize) -> LedgerVerdict {
    let idx = index_blocks(trace);
    let blk = |h: u64| -> Option<&BlockRecord> { idx.get(&h).map(|&i| &trace.blocks[i]) };
    let mut global: HashMap<u64, u64> = HashMap::new();
    let mut first_violation = None;
    let mut confirmed_at: HashMap<(u64, usize), f64> = HashMap::new();
    let mut seen: HashSet<(usize, u64)> = HashSet::new();
    for rec in &trace.tips {
        let Some(tip) = blk(rec.tip) else { continue };
        let tip_time = tip.proposal_time;
        let mut h = Some(rec.tip);
        while let Some(x) = h {
            let Some(b) = blk(x) else { break };
            let deep = b.level + k as u64 <= tip.level;
            if deep && b.proposal_time <= tip_time - tau {
                if !seen.insert((rec.node, b.hash)) && global.get(&b.level) == Some(&b.hash) {
                    break;
                }
                match global.get(&b.level) {
                    Some(&g) if g != b.hash => {
                        if first_violation.is_none() {
                            first_violation = Some(PersistenceViolation {
                                time: rec.time,
                                node: rec.node,
                                level: b.level,
                                expected: g,
                                found: b.hash,
                            });
                        }
                    }
                    Some(_) => {}
                    None => {
                        global.insert(b.level, b.hash);
                    }
                }
                for &tx in &b.txs {
                    confirmed_at.entry((tx, rec.node)).or_insert(rec.time);
                }
            }
            h = b.parent;
        }
    }
    let nodes: Vec<usize> = {
        let mut v: Vec<usize> = trace.tips.iter().map(|t| t.node).collect();
        v.sort();
        v.dedup();
        v
    };
    let end = trace.summary.end_time;
    let mut worst: f64 = 0.0;
    let mut unconfirmed = 0;
    let mut liveness_ok = true;
    for e in &trace.events {
        let TraceEvent::Tx { time, tx } = *e else { continue };
        for &n in &nodes {
            if !schedule::online_throughout(&node_online(trace, n), time, end.min(time + u)) {
                continue;
            }
            match confirmed_at.get(&(tx, n)) {
                Some(&c) => {
                    worst = worst.max(c - time);
                    if c - time > u {
                        liveness_ok = false;
                    }
                }
                None => {
                    if time + u <= end {
                        unconfirmed += 1;
                        liveness_ok = false;
                        worst = worst.max(end - time);
                    }
                }
            }
        }
    }
    LedgerVerdict {
        persistence_ok: first_violation.is_none(),
        first_violation,
        liveness_ok,
        worst_inclusion_delay: worst,
        unconfirmed_txs: unconfirmed,
        tau,
        u,
        k,
    }
}

/// Published valid blocks reach every continuously online node within `Δ`,
/// and no private block is seen before its reveal.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeliveryVerdict {
    pub delta_synchrony_ok: bool,
    pub withholding_ok: bool,
    pub late_deliveries: usize,
}

pub fn check_delivery(trace: &Trace) -> DeliveryVerdict {
    let delta = trace.delta();
    let mut recv: HashMap<(usize, u64), f64> = HashMap::new();
    for e in &trace.events {
        if let TraceEvent::Recv { time, node, block } = *e {
            recv.entry((node, block)).or_insert(time);
        }
    }
    let nodes = trace.config.as_ref().map(|c| c.honest.len()).unwrap_or(0);
    let end = trace.summary.end_time;
    let mut late = 0;
    let mut withholding_ok = true;
    for b in &trace.blocks {
        if b.parent.is_none() || !b.valid {
            continue;
        }
        let Some(rt) = b.reveal_time else {
            if (0..nodes).any(|n| recv.contains_key(&(n, b.hash))) {
                withholding_ok = false;
            }
            continue;
        };
        if rt + delta > end {
            continue;
        }
        for n in 0..nodes {
            match recv.get(&(n, b.hash)) {
                Some(&t) => {
                    if t < rt {
                        withholding_ok = false;
                    }
                    if t > rt + delta + 1e-9 {
                        late += 1;
                    }
                }
                None => {
                    if schedule::online_throughout(&node_online(trace, n), rt, rt + delta) {
                        late += 1;
                    }
                }
            }
        }
    }
    DeliveryVerdict {
        delta_synchrony_ok: late == 0,
        withholding_ok,
        late_deliveries: late,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalysisReport {
    pub honest_blocks: usize,
    pub adversary_blocks: usize,
    pub loners: usize,
    pub nakamoto_blocks: usize,
    pub nakamoto_stable: bool,
    pub delivery: DeliveryVerdict,
    pub ledger: LedgerVerdict,
    pub persistence_ok: bool,
}

/// Full analysis with `tau = 0` and `u` = the run length.
pub fn analyze(trace: &Trace) -> Result<AnalysisReport, AnalysisError> {
    let view = partition(trace)?;
    let nak = nakamoto_blocks(&view);
    let stable = stability_of(&nak, &view, trace);
    let k = trace.config.as_ref().map(|c| c.k_confirm).unwrap_or(6);
    let ledger = check_ledger(trace, 0.0, trace.summary.end_time, k);
    Ok(AnalysisReport {
        honest_blocks: view.honest.len() - 1,
        adversary_blocks: view.trees.iter().map(|t| t.len()).sum(),
        loners: view.loner.iter().skip(1).filter(|&&l| l).count(),
        nakamoto_blocks: nak.len(),
        nakamoto_stable: stable,
        delivery: check_delivery(trace),
        persistence_ok: ledger.persistence_ok,
        ledger,
    })
}
