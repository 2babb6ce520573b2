//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//!
//! Run with `cargo test --release --test acceptance`.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{assert_stable, brute_nakamoto, geometric_chi2, incremental_nakamoto, random_trace, small_scenario};
use posat_core::analysis::{nakamoto_stability_check, partition};
use posat_core::chaintypes::RandValue;
use posat_core::cli::experiments::{beta_grid, reproduce, solve_phi_table, sweep_threshold, ThresholdParams};
use posat_core::growth::{brw_private_tree_mc, depth_tail_bound, solve_theta_star, tail_generation, BrwConfig};
use posat_core::randvdf::{eval, threshold, ticket, verify, SimulatedVdf, VdfKeys};
use posat_core::simnet::{self, config::SimConfig};
use posat_core::stats;
use rand::Rng;

/// Published table, c = 1..10 (c = 1 is e).
const PHI_TABLE: [f64; 10] = [
    std::f64::consts::E,
    2.22547,
    2.01030,
    1.88255,
    1.79545,
    1.73110,
    1.68103,
    1.64060,
    1.60705,
    1.57860,
];
const FRACTION_TABLE: [f64; 9] = [0.31003, 0.33219, 0.34691, 0.35772, 0.36615, 0.37299, 0.37870, 0.38358, 0.38780];

const PHI_TOL: f64 = 1e-4;
const BRW_TOL: f64 = 0.15;
const BRW_BEAM: usize = 4096;
const SWEEP_STEP: f64 = 0.02;
const SWEEP_TRIALS: usize = 100;
const CHI2_ALPHA: f64 = 0.01;
const FUZZ_CASES: usize = 1000;
const NAKAMOTO_CASES: usize = 100;
const TAIL_COVERAGE: f64 = 0.95;
const TAIL_TRIALS: usize = 4000;

struct Ledger {
    lines: Vec<(usize, bool, String)>,
}

impl Ledger {
    fn record(&mut self, id: usize, ok: bool, elapsed: Duration, detail: String) {
        let line = format!(
            "criterion {id}: {} ({:.1}s) {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        // Written past the harness capture so the lines show up in plain `cargo test` output.
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
        self.lines.push((id, ok, line));
    }
}

fn c1_phi_table() -> (bool, String) {
    let rows = solve_phi_table(10).unwrap();
    let mut worst: f64 = 0.0;
    for (r, &published) in rows.iter().zip(&PHI_TABLE) {
        worst = worst.max((r.phi_c - published).abs());
        let frac = 1.0 / (1.0 + r.phi_c);
        worst = worst.max((r.tolerance_fraction - frac).abs());
    }
    worst = worst.max((rows[0].tolerance_fraction - 1.0 / (1.0 + std::f64::consts::E)).abs());
    for (r, &published) in rows[1..].iter().zip(&FRACTION_TABLE) {
        worst = worst.max((r.tolerance_fraction - published).abs());
    }
    (worst <= PHI_TOL, format!("max |error| {worst:.2e} <= {PHI_TOL:.0e}"))
}

fn c2_brw() -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    for c in [1u32, 2] {
        let phi = solve_theta_star(c, 1.0).unwrap().phi_c;
        let st = brw_private_tree_mc(&BrwConfig {
            c,
            lambda_a: 1.0,
            horizon: 200.0,
            trials: 200,
            seed: 2,
            beam: Some(BRW_BEAM),
        })
        .unwrap();
        let err = st.mean_depth_rate - phi;
        ok &= err.abs() <= BRW_TOL;
        detail.push(format!("c={c} rate {:.4} vs phi {phi:.4} (diff {err:+.4})", st.mean_depth_rate));
    }
    (ok, detail.join("; "))
}

fn c3_threshold_band() -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (c, target) in [(1u64, 0.269), (5, 0.358)] {
        let p = ThresholdParams::new(c, beta_grid(SWEEP_STEP, 0.5, SWEEP_STEP), SWEEP_TRIALS, 3);
        let r = sweep_threshold(&p).unwrap();
        let inside = r.band_lo <= target && target <= r.band_hi;
        ok &= inside;
        detail.push(format!("c={c} band [{:.2}, {:.2}] contains {target}: {inside}", r.band_lo, r.band_hi));
    }
    (ok, detail.join("; "))
}

fn c4_stability() -> (bool, String) {
    let mut traces = 0;
    let mut broken = 0;
    let mut check = |t: &simnet::Trace| {
        traces += 1;
        let view = partition(t).unwrap();
        if !nakamoto_stability_check(&view, t) {
            broken += 1;
        }
    };
    for seed in 0..200 {
        check(&simnet::run(&small_scenario(seed, 40.0)).unwrap());
    }
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["honest_only.toml", "private_attack.toml", "dynamic.toml"] {
        let cfg = SimConfig::from_toml(&fs::read_to_string(configs.join(name)).unwrap()).unwrap();
        check(&simnet::run(&cfg).unwrap());
    }
    (broken == 0, format!("{broken} of {traces} traces unstable"))
}

fn c5_attacks() -> (bool, String) {
    let seed = 5;
    let costless = reproduce("costless_sim", None, seed).unwrap();
    let (vrf, posat) = (&costless.arms[0], &costless.arms[1]);
    let costless_ok = vrf.success_rate > 0.90 && posat.success_rate < 0.05;

    let en = reproduce("enumeration", None, seed).unwrap();
    let en_p = en.p_value.unwrap();
    let en_ok = en.arms[1].mean_growth > en.arms[0].mean_growth && en_p < 0.05;

    let lr = reproduce("long_range", None, seed).unwrap();
    let lr_ok = lr.arms[0].successes == 0;

    let sy = reproduce("sybil", None, seed).unwrap();
    let sy_p = sy.p_value.unwrap();
    let sy_ok = sy_p >= 0.01;

    let detail = format!(
        "costless {}={:.2} {}={:.2}; enumeration growth on {:.3} off {:.3} p={en_p:.2e}; \
         long-range reorgs with ordering {}/{}; sybil {} vs {} p={sy_p:.3}",
        vrf.label,
        vrf.success_rate,
        posat.label,
        posat.success_rate,
        en.arms[0].mean_growth,
        en.arms[1].mean_growth,
        lr.arms[0].successes,
        lr.arms[0].trials,
        sy.arms[0].successes,
        sy.arms[1].successes,
    );
    (costless_ok && en_ok && lr_ok && sy_ok, detail)
}

fn c6_randvdf() -> (bool, String) {
    let mut rng = stats::substream(6, 0);
    let p_unit = 1.0 / 64.0;
    let mut fuzz_fail = 0;
    let mut tamper_ok = 0;
    let mut tamper_total = 0;
    for _ in 0..FUZZ_CASES {
        let input = RandValue(rng.random());
        let pp: [u8; 32] = rng.random();
        let stake = rng.random_range(0.25..4.0);
        let r = eval(input, &pp, stake, rng.random_range(0..1_000_000), p_unit).unwrap();
        if !verify(&pp, &r, p_unit) {
            fuzz_fail += 1;
        }
        let mut bad = r.clone();
        match rng.random_range(0..4) {
            0 => bad.output.0[rng.random_range(0..32)] ^= 1 << rng.random_range(0..8),
            1 => bad.rand_iter += 1,
            // A shifted slot whose ticket still wins is a valid result, not a forgery.
            2 => {
                let th = threshold(stake, p_unit).unwrap();
                bad.slot_final = (1..)
                    .map(|d| r.slot_final + d)
                    .find(|&s| ticket(&r.output, s) as u128 >= th)
                    .unwrap()
            }
            _ => bad.input.0[rng.random_range(0..32)] ^= 1,
        }
        tamper_total += 1;
        tamper_ok += !verify(&pp, &bad, p_unit) as usize;
    }
    let oracle = SimulatedVdf::new(VdfKeys::from_pp([6; 32]), p_unit);
    for _ in 0..FUZZ_CASES {
        let r = oracle
            .eval(RandValue(rng.random()), 1.0, rng.random_range(0..1000), &mut rng)
            .unwrap();
        if !oracle.verify(&r) {
            fuzz_fail += 1;
        }
        let mut bad = r.clone();
        bad.rand_iter += 1;
        tamper_total += 1;
        tamper_ok += !oracle.verify(&bad) as usize;
    }

    let p = 1.0 / 16.0;
    let mut x = RandValue::hash_of(&[b"chi2"]);
    let chain: Vec<u64> = (0..3000)
        .map(|_| {
            let r = eval(x, &[6; 32], 1.0, 0, p).unwrap();
            x = r.output;
            r.rand_iter
        })
        .collect();
    let sim = SimulatedVdf::new(VdfKeys::from_pp([6; 32]), 1.0 / 20.0);
    let simulated: Vec<u64> = (0..5000)
        .map(|_| sim.eval(x, 1.0, 0, &mut rng).unwrap().rand_iter)
        .collect();
    let p_chain = geometric_chi2(&chain, p, 40);
    let p_sim = geometric_chi2(&simulated, 1.0 / 20.0, 50);
    let ok = fuzz_fail == 0 && tamper_ok == tamper_total && p_chain > CHI2_ALPHA && p_sim > CHI2_ALPHA;
    (
        ok,
        format!(
            "fuzz failures {fuzz_fail}/{}; tampered rejected {tamper_ok}/{tamper_total}; \
             chi2 p hash-chain {p_chain:.3}, simulated {p_sim:.3} (alpha {CHI2_ALPHA})",
            2 * FUZZ_CASES
        ),
    )
}

fn c7_determinism() -> (bool, String) {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let cfg = SimConfig::from_toml(&fs::read_to_string(data.join("golden.toml")).unwrap()).unwrap();
    let a = simnet::run(&cfg).unwrap().to_jsonl();
    let b = simnet::run(&cfg).unwrap().to_jsonl();
    let golden = fs::read(data.join("golden_trace.jsonl")).unwrap();
    let rerun = a == b;
    let matches = a == golden;
    (
        rerun && matches,
        format!("re-run identical: {rerun}; golden match: {matches} ({} bytes)", golden.len()),
    )
}

fn c8_incremental() -> (bool, String) {
    let mut rng = stats::substream(8, 0);
    let mut mismatches = 0;
    let mut found = 0;
    for _ in 0..NAKAMOTO_CASES {
        let t = random_trace(&mut rng, 50);
        let fast = incremental_nakamoto(&t);
        found += fast.len();
        mismatches += (fast != brute_nakamoto(&t)) as usize;
    }
    let mut simulated = 0;
    let mut seed = 1000;
    while simulated < NAKAMOTO_CASES {
        seed += 1;
        let t = simnet::run(&small_scenario(seed, 6.0)).unwrap();
        if t.blocks.len() > 50 {
            continue;
        }
        assert_stable(&t);
        mismatches += (incremental_nakamoto(&t) != brute_nakamoto(&t)) as usize;
        simulated += 1;
    }
    (
        mismatches == 0,
        format!(
            "{mismatches} mismatches over {NAKAMOTO_CASES} random and {NAKAMOTO_CASES} simulated traces \
             ({found} Nakamoto blocks in the random set)"
        ),
    )
}

fn c9_tail_bound() -> (bool, String) {
    let mut points = 0;
    let mut covered = 0;
    let mut nontrivial = 0;
    for c in [1u32, 2, 3] {
        let s = solve_theta_star(c, 1.0).unwrap();
        let horizon = 8.0;
        let st = brw_private_tree_mc(&BrwConfig {
            c,
            lambda_a: 1.0,
            horizon,
            trials: TAIL_TRIALS,
            seed: 9 + c as u64,
            beam: None,
        })
        .unwrap();
        for t in [2.0, 4.0, 6.0, 8.0] {
            for x in [0.5, 1.0, 2.0, 3.0, 4.0] {
                let m = tail_generation(&s, t, x) as usize;
                let hits = st
                    .first_passage
                    .iter()
                    .filter(|p| p.len() >= m && p[m - 1] <= t)
                    .count();
                let (lo, _) = stats::wilson_interval(hits, TAIL_TRIALS, 1.96);
                let bound = depth_tail_bound(c, 1.0, t, x).unwrap();
                points += 1;
                covered += (bound >= lo) as usize;
                nontrivial += (bound < 1.0) as usize;
            }
        }
    }
    let frac = covered as f64 / points as f64;
    (
        frac >= TAIL_COVERAGE,
        format!("bound covers {covered}/{points} grid points ({nontrivial} with bound < 1); need {TAIL_COVERAGE}"),
    )
}

#[test]
fn acceptance() {
    let mut ledger = Ledger { lines: Vec::new() };
    let limits = [
        Some(Duration::from_secs(1)),
        Some(Duration::from_secs(120)),
        Some(Duration::from_secs(15 * 60)),
        None,
        None,
        None,
        None,
        None,
        None,
    ];
    let checks: [fn() -> (bool, String); 9] = [
        c1_phi_table,
        c2_brw,
        c3_threshold_band,
        c4_stability,
        c5_attacks,
        c6_randvdf,
        c7_determinism,
        c8_incremental,
        c9_tail_bound,
    ];
    for (i, check) in checks.iter().enumerate() {
        let start = Instant::now();
        let (ok, mut detail) = check();
        let elapsed = start.elapsed();
        let in_time = limits[i].is_none_or(|l| elapsed <= l);
        if let Some(l) = limits[i] {
            detail.push_str(&format!("; limit {}s", l.as_secs()));
        }
        ledger.record(i + 1, ok && in_time, elapsed, detail);
    }
    let failed: Vec<&String> = ledger.lines.iter().filter(|l| !l.1).map(|l| &l.2).collect();
    assert!(failed.is_empty(), "failed criteria:\n{failed:#?}");
}
