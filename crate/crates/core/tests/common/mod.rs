//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use posat_core::adversary::StrategySpec;
use posat_core::analysis::{nakamoto_blocks, nakamoto_stability_check, partition};
use posat_core::simnet::config::{DelayPolicy, SimConfig};
use posat_core::simnet::{self, BlockRecord, RunSummary, Trace};
use posat_core::stats;
use rand::Rng;

/// Runs a config and fails the test unless Nakamoto blocks stay put.
pub fn run_checked(cfg: &SimConfig) -> Trace {
    let t = simnet::run(cfg).expect("simulation runs");
    assert_stable(&t);
    t
}

pub fn assert_stable(t: &Trace) {
    if t.config.as_ref().is_some_and(|c| c.fault_injection.is_some()) {
        return;
    }
    let view = partition(t).expect("trace partitions");
    assert!(
        nakamoto_stability_check(&view, t),
        "Nakamoto block left a chain (seed {})",
        t.summary.seed
    );
}

/// Pearson p-value of `rand_iter` counts in bins `1..=k` plus a tail bin
/// against Geometric(p) on `{1, 2, ..}`.
pub fn geometric_chi2(iters: &[u64], p: f64, k: u64) -> f64 {
    let n = iters.len() as f64;
    let mut obs = vec![0.0; k as usize + 1];
    for &i in iters {
        obs[(i.min(k + 1) - 1) as usize] += 1.0;
    }
    let mut exp: Vec<f64> = (1..=k).map(|i| n * (1.0 - p).powi(i as i32 - 1) * p).collect();
    exp.push(n * (1.0 - p).powi(k as i32));
    stats::chi_squared_p(&obs, &exp, 0)
}

/// Nakamoto blocks straight from the definitions: returns their hashes.
///
/// Honest blocks are ordered by proposal time with genesis first at time 0.
/// `D_i(t)` is the deepest adversary block of tree `i` proposed by `t`,
/// `D_h` the depth of the fictitious honest tree, and `E_ij` is checked at
/// `τ_j + Δ` (right limit) and at every later breakpoint up to the horizon.
pub fn brute_nakamoto(trace: &Trace) -> Vec<u64> {
    let delta = trace.delta();
    let end = trace.summary.end_time;
    let by_hash: HashMap<u64, &BlockRecord> = trace.blocks.iter().map(|b| (b.hash, b)).collect();
    let mut honest: Vec<&BlockRecord> = trace.blocks.iter().filter(|b| b.honest && b.valid).collect();
    honest.sort_by(|a, b| {
        a.parent
            .is_some()
            .cmp(&b.parent.is_some())
            .then(a.proposal_time.total_cmp(&b.proposal_time))
            .then(a.hash.cmp(&b.hash))
    });
    let tau: Vec<f64> = honest.iter().map(|b| b.proposal_time).collect();

    // Fictitious tree: levels open at the first unassigned honest time.
    let mut level_starts: Vec<f64> = Vec::new();
    let mut open_until = f64::NEG_INFINITY;
    for &t in &tau[1..] {
        if t > open_until {
            level_starts.push(t);
            open_until = t + delta;
        }
    }
    let d_h = |t: f64| level_starts.iter().filter(|&&s| s <= t).count() as i64;
    // `D_h(t − Δ)` without the rounding of `t − Δ`.
    let d_h_lag = |t: f64| level_starts.iter().filter(|&&s| s + delta <= t).count() as i64;

    // Adversary blocks grouped by the first honest ancestor.
    let root_index: HashMap<u64, usize> = honest.iter().enumerate().map(|(i, b)| (b.hash, i)).collect();
    let mut trees: Vec<Vec<(f64, i64)>> = vec![Vec::new(); honest.len()];
    for b in trace.blocks.iter().filter(|b| !b.honest && b.valid) {
        let mut p = b.parent;
        while let Some(h) = p {
            if let Some(&r) = root_index.get(&h) {
                let depth = b.level as i64 - honest[r].level as i64;
                trees[r].push((b.proposal_time, depth));
                break;
            }
            p = by_hash[&h].parent;
        }
    }
    let d_i = |i: usize, t: f64| {
        trees[i]
            .iter()
            .filter(|&&(s, _)| s <= t)
            .map(|&(_, d)| d)
            .max()
            .unwrap_or(0)
    };

    let mut out = Vec::new();
    for j in 1..honest.len() {
        let loner = (0..honest.len()).all(|k| k == j || (tau[k] - tau[j]).abs() > delta);
        if !loner {
            continue;
        }
        let from = tau[j] + delta;
        if from >= end {
            out.push(honest[j].hash);
            continue;
        }
        let mut checkpoints = vec![from];
        for tr in &trees[..j] {
            checkpoints.extend(tr.iter().map(|&(s, _)| s).filter(|&s| s > from && s <= end));
        }
        checkpoints.extend(level_starts.iter().map(|s| s + delta).filter(|&s| s > from && s <= end));
        let all_hold = (0..j).all(|i| {
            let base = d_h(tau[i] + delta);
            checkpoints.iter().all(|&t| d_i(i, t) < d_h_lag(t) - base)
        });
        if all_hold {
            out.push(honest[j].hash);
        }
    }
    out
}

/// Nakamoto blocks reported by the library, as hashes.
pub fn incremental_nakamoto(trace: &Trace) -> Vec<u64> {
    let view = partition(trace).expect("trace partitions");
    nakamoto_blocks(&view)
        .into_iter()
        .map(|j| trace.blocks[view.honest[j]].hash)
        .collect()
}

/// A random block tree with at most `max_blocks` blocks: honest blocks extend
/// a random earlier block, adversary blocks appear after their parents.
pub fn random_trace<R: Rng>(rng: &mut R, max_blocks: usize) -> Trace {
    let delta = [0.0, 0.25, 1.0, 2.0][rng.random_range(0..4)];
    let n = rng.random_range(2..=max_blocks);
    let horizon = rng.random_range(5.0..30.0);
    let mut blocks = vec![BlockRecord {
        hash: 0,
        parent: None,
        level: 0,
        slot: 0,
        coin: 0,
        honest: true,
        proposal_time: 0.0,
        reveal_time: Some(0.0),
        valid: true,
        txs: Vec::new(),
    }];
    let mut times: Vec<f64> = (1..n).map(|_| rng.random_range(0.0..horizon)).collect();
    times.sort_by(f64::total_cmp);
    for (k, t) in times.into_iter().enumerate() {
        let honest = rng.random_bool(0.6);
        let earlier: Vec<usize> = (0..blocks.len()).filter(|&i| blocks[i].proposal_time <= t).collect();
        // Bias towards deep parents so trees form chains as well as bushes.
        let pick = if rng.random_bool(0.7) {
            *earlier.iter().max_by_key(|&&i| (blocks[i].level, i)).unwrap()
        } else {
            earlier[rng.random_range(0..earlier.len())]
        };
        let parent = &blocks[pick];
        blocks.push(BlockRecord {
            hash: k as u64 + 1,
            parent: Some(parent.hash),
            level: parent.level + 1,
            slot: k as u64 + 1,
            coin: if honest { 1 } else { 2 },
            honest,
            proposal_time: t,
            reveal_time: Some(t),
            valid: rng.random_bool(0.95) || honest,
            txs: Vec::new(),
        });
    }
    // Invalid blocks taint their descendants.
    for i in 1..blocks.len() {
        let p = blocks[i].parent.unwrap() as usize;
        if !blocks[p].valid {
            blocks[i].valid = false;
        }
    }
    // Honest blocks below invalid ones would never exist; re-mark them adversarial.
    for b in blocks.iter_mut() {
        if !b.valid {
            b.honest = false;
        }
    }
    let cfg = SimConfig::basic(1, 1.0, 1, 0.0, delta, horizon, 0);
    Trace {
        config: Some(cfg),
        blocks,
        tips: Vec::new(),
        events: Vec::new(),
        summary: RunSummary {
            end_time: horizon + rng.random_range(0.0..5.0),
            ..RunSummary::default()
        },
    }
}

/// A small simulated scenario drawn from `seed`.
pub fn small_scenario(seed: u64, duration: f64) -> SimConfig {
    let mut rng = stats::substream(seed, 0x5CE);
    let c = rng.random_range(1..=3);
    let nodes = rng.random_range(1..=3);
    let lambda_h = rng.random_range(0.5..3.0);
    let lambda_a = rng.random_range(0.0..2.0);
    let delta = rng.random_range(0.0..1.0);
    let mut cfg = SimConfig::basic(c, lambda_h, nodes, lambda_a, delta, duration, seed);
    cfg.k_confirm = rng.random_range(1..=4);
    cfg.delay_policy = DelayPolicy::Random;
    cfg.adversary_beam = Some(8);
    cfg.prune_window = 4;
    cfg.adversary.strategy = match rng.random_range(0..4) {
        0 => StrategySpec::private_attack(1),
        1 if c >= 2 => StrategySpec::enumeration_attack(),
        2 if c >= 2 => StrategySpec::long_range_attack(),
        3 => StrategySpec::TipSwitchProbe,
        _ => StrategySpec::private_attack(2),
    };
    cfg
}
