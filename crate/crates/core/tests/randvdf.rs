//! Hash-chain and simulated RandVDF: oracle outputs, tampering, fuzzing and
//! the geometric law of `rand_iter`.

mod common;

use common::geometric_chi2;
use posat_core::chaintypes::RandValue;
use posat_core::randvdf::{
    eval, eval_capped, sample_win_time, threshold, ticket, verify, verify_simulated, SimulatedVdf, VdfError, VdfKeys, VdfResult,
    CHECKPOINT_INTERVAL,
};
use posat_core::stats;
use proptest::prelude::*;

const PP: [u8; 32] = [7; 32];
const P: f64 = 1.0 / 256.0;

/// From `oracles/vdf_oracle.py`: (seed, rand_iter, slot_final, output).
const VDF_ORACLE: [(u8, u64, u64, &str); 4] = [
    (0, 261, 361, "f31632e8a4ad3836804982615f30cee2248e2c8d33f6a68598a4690a040332d2"),
    (1, 228, 328, "78263f3a3d84bba5496142b0a58e02180c2cfa0260710fd6a1f7dc5e936b7d0f"),
    (2, 225, 325, "552cfc767fb9ea2e5ee02310db48a354de32ef331c2a75cc0551e507610ab645"),
    (3, 361, 461, "41a027f3403c7280fe6aabb952133f2c629ac9ed47eb6805718312f3298a2f85"),
];

fn oracle_input(seed: u8) -> RandValue {
    RandValue::hash_of(&[b"S0", &[seed]])
}

#[test]
fn hash_chain_matches_independent_oracle() {
    for (seed, iters, slot, out) in VDF_ORACLE {
        let r = eval(oracle_input(seed), &PP, 1.0, 100, P).unwrap();
        assert_eq!(r.rand_iter, iters, "seed {seed}");
        assert_eq!(r.slot_final, slot, "seed {seed}");
        assert_eq!(r.output.to_hex(), out, "seed {seed}");
        assert!(verify(&PP, &r, P));
    }
}

fn sample_result() -> VdfResult {
    eval(oracle_input(0), &PP, 1.0, 100, P).unwrap()
}

#[test]
fn tampered_hash_chain_results_are_rejected() {
    let good = sample_result();
    let mut cases: Vec<(&str, VdfResult)> = Vec::new();
    let mut r = good.clone();
    r.output.0[0] ^= 1;
    cases.push(("output", r));
    let mut r = good.clone();
    r.input.0[31] ^= 0x80;
    cases.push(("input", r));
    let mut r = good.clone();
    r.rand_iter += 1;
    cases.push(("rand_iter", r));
    let mut r = good.clone();
    r.slot_final += 1;
    cases.push(("slot_final", r));
    let mut r = good.clone();
    r.proof.truncate(4);
    cases.push(("proof_truncated", r));
    let mut r = good.clone();
    r.proof[0] ^= 1;
    cases.push(("proof_iters", r));
    let mut r = good.clone();
    r.stake_s = 1e9;
    cases.push(("stake_too_large", r));
    let mut r = good.clone();
    r.stake_s = -1.0;
    cases.push(("negative_stake", r));
    for (name, r) in cases {
        assert!(!verify(&PP, &r, P), "{name} accepted");
    }
    assert!(!verify(&[8; 32], &good, P), "foreign key accepted");
    assert!(verify(&PP, &good, P));
}

#[test]
fn checkpoint_tampering_is_rejected() {
    // Enough iterations to carry at least one checkpoint digest.
    let mut input = oracle_input(9);
    let r = loop {
        let r = eval(input, &PP, 1.0, 0, 1.0 / 4096.0).unwrap();
        if r.rand_iter >= CHECKPOINT_INTERVAL {
            break r;
        }
        input = r.output;
    };
    assert!(verify(&PP, &r, 1.0 / 4096.0));
    let mut bad = r.clone();
    bad.proof[8] ^= 1;
    assert!(!verify(&PP, &bad, 1.0 / 4096.0));
}

#[test]
fn tampered_simulated_results_are_rejected() {
    let o = SimulatedVdf::new(VdfKeys::from_pp(PP), 1e-3);
    let good = o.certify(oracle_input(1), 40, 140, 2.0);
    assert!(o.verify(&good));
    let mut r = good.clone();
    r.rand_iter = 41;
    assert!(!o.verify(&r));
    let mut r = good.clone();
    r.slot_final = 139;
    assert!(!o.verify(&r));
    let mut r = good.clone();
    r.stake_s = 3.0;
    assert!(!o.verify(&r));
    let mut r = good.clone();
    r.output.0[5] ^= 4;
    assert!(!o.verify(&r));
    assert!(!verify_simulated(&[1; 32], &good, 1e-3));
}

#[test]
fn threshold_rejects_bad_stake() {
    assert_eq!(threshold(0.0, 0.1), Err(VdfError::BadStake(0.0)));
    assert!(matches!(threshold(20.0, 0.1), Err(VdfError::StakeTooLarge { .. })));
    assert_eq!(threshold(1.0, 1.0).unwrap(), 1u128 << 64);
}

#[test]
fn capped_eval_returns_none_before_win() {
    let r = eval_capped(oracle_input(0), &PP, 1.0, 100, P, 260).unwrap();
    assert!(r.is_none());
    let r = eval_capped(oracle_input(0), &PP, 1.0, 100, P, 261).unwrap();
    assert_eq!(r.unwrap().rand_iter, 261);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn eval_then_verify_roundtrips(
        input in any::<[u8; 32]>(),
        pp in any::<[u8; 32]>(),
        stake in 0.25f64..4.0,
        slot in 0u64..1_000_000,
    ) {
        let p_unit = 1.0 / 64.0;
        let r = eval(RandValue(input), &pp, stake, slot, p_unit).unwrap();
        prop_assert!(r.rand_iter >= 1);
        prop_assert_eq!(r.slot_final, slot + r.rand_iter);
        prop_assert!((ticket(&r.output, r.slot_final) as u128) < threshold(stake, p_unit).unwrap());
        prop_assert!(verify(&pp, &r, p_unit));
    }
}

#[test]
fn hash_chain_rand_iter_is_geometric() {
    let p = 1.0 / 16.0;
    let mut x = oracle_input(42);
    let iters: Vec<u64> = (0..3000)
        .map(|_| {
            let r = eval(x, &PP, 1.0, 0, p).unwrap();
            x = r.output;
            r.rand_iter
        })
        .collect();
    let pv = geometric_chi2(&iters, p, 40);
    assert!(pv > 0.01, "chi2 p = {pv}");
}

#[test]
fn simulated_rand_iter_is_geometric() {
    let o = SimulatedVdf::new(VdfKeys::from_pp(PP), 1.0 / 20.0);
    let mut rng = stats::substream(1, 2);
    let iters: Vec<u64> = (0..5000)
        .map(|_| o.eval(oracle_input(0), 1.0, 0, &mut rng).unwrap().rand_iter)
        .collect();
    let pv = geometric_chi2(&iters, 1.0 / 20.0, 50);
    assert!(pv > 0.01, "chi2 p = {pv}");
}

#[test]
fn win_time_mean_is_inverse_rate() {
    let mut rng = stats::substream(3, 0);
    let xs: Vec<f64> = (0..100_000).map(|_| sample_win_time(2.0, &mut rng).unwrap()).collect();
    assert!((stats::mean(&xs) - 0.5).abs() < 0.02);
    assert_eq!(sample_win_time(0.0, &mut rng), Err(VdfError::BadRate(0.0)));
}

#[test]
fn minimum_of_wins_matches_pooled_rate() {
    let mut rng = stats::substream(4, 0);
    let n = 10_000;
    let mins: Vec<f64> = (0..n)
        .map(|_| (0..3).map(|_| sample_win_time(0.7, &mut rng).unwrap()).fold(f64::INFINITY, f64::min))
        .collect();
    let pooled: Vec<f64> = (0..n).map(|_| sample_win_time(2.1, &mut rng).unwrap()).collect();
    let (_, p) = stats::ks_two_sample(&mins, &pooled);
    assert!(p > 0.01, "ks p = {p}");
}

#[test]
fn split_stake_first_win_is_indistinguishable() {
    let o = SimulatedVdf::new(VdfKeys::from_pp(PP), 1e-3);
    let mut rng = stats::substream(5, 0);
    let n = 10_000;
    let single: Vec<f64> = (0..n)
        .map(|_| o.eval(oracle_input(0), 3.0, 0, &mut rng).unwrap().rand_iter as f64)
        .collect();
    let split: Vec<f64> = (0..n)
        .map(|_| {
            (0..3)
                .map(|_| o.eval(oracle_input(0), 1.0, 0, &mut rng).unwrap().rand_iter)
                .min()
                .unwrap() as f64
        })
        .collect();
    let (_, p) = stats::ks_two_sample(&single, &split);
    assert!(p > 0.01, "ks p = {p}");
}
