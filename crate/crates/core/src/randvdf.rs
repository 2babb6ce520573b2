//! Randomized VDF: iterate a sequential function until the hashed output
//! falls below a stake-proportional threshold.
//!
//! Two realizations share one result type:
//! * hash chain: `f(x) = SHA-256(pp || x)`, verified by recomputation;
//! * simulated oracle: the win delay is sampled and the oracle signs the
//!   outcome with its parameters, verified by recomputing the certificate.

use rand::Rng;
use rand_distr::{Distribution, Exp, Geometric};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chaintypes::RandValue;

/// Steps between checkpoint digests in a hash-chain proof.
pub const CHECKPOINT_INTERVAL: u64 = 1 << 10;

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

#[derive(Debug, Error, PartialEq)]
pub enum VdfError {
    #[error("stake {stake} with p_unit {p_unit} gives per-step probability above 1")]
    StakeTooLarge { stake: f64, p_unit: f64 },
    #[error("stake must be positive and finite, got {0}")]
    BadStake(f64),
    #[error("rate must be positive and finite, got {0}")]
    BadRate(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Realization {
    HashChain,
    Simulated,
}

/// Public parameters. The hash chain is keyed by `pp`, so `ek` and `vk` coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VdfKeys {
    pub ek: [u8; 32],
    pub vk: [u8; 32],
}

impl VdfKeys {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut pp = [0u8; 32];
        rng.fill(&mut pp);
        Self::from_pp(pp)
    }

    pub fn from_pp(pp: [u8; 32]) -> Self {
        VdfKeys { ek: pp, vk: pp }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VdfResult {
    pub input: RandValue,
    pub output: RandValue,
    pub proof: Vec<u8>,
    pub rand_iter: u64,
    pub slot_final: u64,
    pub stake_s: f64,
}

/// `round(stake * p_unit * 2^64)`; a step wins iff its 64-bit hash is below it.
pub fn threshold(stake_s: f64, p_unit: f64) -> Result<u128, VdfError> {
    if !(stake_s > 0.0 && stake_s.is_finite()) {
        return Err(VdfError::BadStake(stake_s));
    }
    let p = stake_s * p_unit;
    if !(p > 0.0 && p <= 1.0) {
        return Err(VdfError::StakeTooLarge { stake: stake_s, p_unit });
    }
    Ok((p * TWO_POW_64).round() as u128)
}

/// Per-step win probability implied by a threshold.
pub fn threshold_probability(th: u128) -> f64 {
    th as f64 / TWO_POW_64
}

/// One application of the sequential function.
pub fn step(pp: &[u8; 32], x: &RandValue) -> RandValue {
    RandValue::hash_of(&[pp, &x.0])
}

/// `Hash(output, slot)` as a 64-bit lottery ticket.
pub fn ticket(output: &RandValue, slot: u64) -> u64 {
    let d = Sha256::new()
        .chain_update(output.0)
        .chain_update(slot.to_le_bytes())
        .finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    u64::from_le_bytes(b)
}

/// An in-flight hash-chain evaluation.
#[derive(Clone, Debug)]
pub struct VdfProcess {
    pub input: RandValue,
    pub current_output: RandValue,
    pub iterations_done: u64,
    pub slot: u64,
    pub stake_s: f64,
    threshold: u128,
    checkpoints: Vec<RandValue>,
}

impl VdfProcess {
    pub fn new(input: RandValue, stake_s: f64, slot: u64, p_unit: f64) -> Result<Self, VdfError> {
        Ok(VdfProcess {
            input,
            current_output: input,
            iterations_done: 0,
            slot,
            stake_s,
            threshold: threshold(stake_s, p_unit)?,
            checkpoints: Vec::new(),
        })
    }

    /// Advances one step; returns true when the new output wins.
    pub fn iterate(&mut self, pp: &[u8; 32]) -> bool {
        self.current_output = step(pp, &self.current_output);
        self.iterations_done += 1;
        self.slot += 1;
        if self.iterations_done.is_multiple_of(CHECKPOINT_INTERVAL) {
            self.checkpoints.push(self.current_output);
        }
        (ticket(&self.current_output, self.slot) as u128) < self.threshold
    }

    pub fn finish(self) -> VdfResult {
        VdfResult {
            input: self.input,
            output: self.current_output,
            proof: encode_proof(self.iterations_done, &self.checkpoints),
            rand_iter: self.iterations_done,
            slot_final: self.slot,
            stake_s: self.stake_s,
        }
    }
}

fn encode_proof(rand_iter: u64, digests: &[RandValue]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 32 * digests.len());
    out.extend_from_slice(&rand_iter.to_le_bytes());
    for d in digests {
        out.extend_from_slice(&d.0);
    }
    out
}

/// Splits a proof blob into its leading `rand_iter` and trailing 32-byte digests.
pub fn decode_proof(proof: &[u8]) -> Option<(u64, Vec<RandValue>)> {
    if proof.len() < 8 || !(proof.len() - 8).is_multiple_of(32) {
        return None;
    }
    let mut b = [0u8; 8];
    b.copy_from_slice(&proof[..8]);
    let digests = proof[8..]
        .chunks_exact(32)
        .map(|c| {
            let mut a = [0u8; 32];
            a.copy_from_slice(c);
            RandValue(a)
        })
        .collect();
    Some((u64::from_le_bytes(b), digests))
}

/// Hash-chain evaluation starting at `slot`; runs until a step wins or `max_iters` is hit.
pub fn eval_capped(
    input: RandValue,
    ek: &[u8; 32],
    stake_s: f64,
    slot: u64,
    p_unit: f64,
    max_iters: u64,
) -> Result<Option<VdfResult>, VdfError> {
    let mut proc = VdfProcess::new(input, stake_s, slot, p_unit)?;
    while proc.iterations_done < max_iters {
        if proc.iterate(ek) {
            return Ok(Some(proc.finish()));
        }
    }
    Ok(None)
}

/// Hash-chain evaluation without an iteration cap.
pub fn eval(
    input: RandValue,
    ek: &[u8; 32],
    stake_s: f64,
    slot: u64,
    p_unit: f64,
) -> Result<VdfResult, VdfError> {
    Ok(eval_capped(input, ek, stake_s, slot, p_unit, u64::MAX)?.expect("uncapped eval terminates"))
}

/// Recomputation check of a hash-chain result.
pub fn verify(vk: &[u8; 32], result: &VdfResult, p_unit: f64) -> bool {
    let Ok(th) = threshold(result.stake_s, p_unit) else {
        return false;
    };
    let Some((iters, digests)) = decode_proof(&result.proof) else {
        return false;
    };
    if iters != result.rand_iter
        || result.rand_iter == 0
        || digests.len() as u64 != result.rand_iter / CHECKPOINT_INTERVAL
    {
        return false;
    }
    let mut x = result.input;
    for i in 1..=result.rand_iter {
        x = step(vk, &x);
        if i % CHECKPOINT_INTERVAL == 0 && digests[(i / CHECKPOINT_INTERVAL - 1) as usize] != x {
            return false;
        }
    }
    x == result.output && (ticket(&result.output, result.slot_final) as u128) < th
}

/// Exponential win delay at `stake_rate` wins per second.
pub fn sample_win_time<R: Rng + ?Sized>(stake_rate: f64, rng: &mut R) -> Result<f64, VdfError> {
    if !(stake_rate > 0.0 && stake_rate.is_finite()) {
        return Err(VdfError::BadRate(stake_rate));
    }
    Ok(Exp::new(stake_rate).expect("positive rate").sample(rng))
}

/// Event-driven oracle: samples outcomes and certifies them under its parameters.
#[derive(Clone, Debug)]
pub struct SimulatedVdf {
    pub keys: VdfKeys,
    pub p_unit: f64,
}

impl SimulatedVdf {
    pub fn new(keys: VdfKeys, p_unit: f64) -> Self {
        SimulatedVdf { keys, p_unit }
    }

    fn output_of(&self, input: &RandValue, rand_iter: u64, slot_final: u64) -> RandValue {
        RandValue::hash_of(&[
            b"out",
            &self.keys.ek,
            &input.0,
            &rand_iter.to_le_bytes(),
            &slot_final.to_le_bytes(),
        ])
    }

    fn tag(vk: &[u8; 32], r: &VdfResult) -> RandValue {
        RandValue::hash_of(&[
            b"cert",
            vk,
            &r.input.0,
            &r.output.0,
            &r.rand_iter.to_le_bytes(),
            &r.slot_final.to_le_bytes(),
            &r.stake_s.to_bits().to_le_bytes(),
        ])
    }

    /// Issues the result of a win that took `rand_iter` steps and ended at `slot_final`.
    pub fn certify(&self, input: RandValue, rand_iter: u64, slot_final: u64, stake_s: f64) -> VdfResult {
        let mut r = VdfResult {
            input,
            output: self.output_of(&input, rand_iter, slot_final),
            proof: Vec::new(),
            rand_iter,
            slot_final,
            stake_s,
        };
        let tag = Self::tag(&self.keys.ek, &r);
        r.proof = encode_proof(rand_iter, &[tag]);
        r
    }

    /// Samples `rand_iter` from the geometric law and certifies it.
    pub fn eval<R: Rng + ?Sized>(
        &self,
        input: RandValue,
        stake_s: f64,
        slot: u64,
        rng: &mut R,
    ) -> Result<VdfResult, VdfError> {
        let p = threshold_probability(threshold(stake_s, self.p_unit)?);
        let rand_iter = if p >= 1.0 {
            1
        } else {
            Geometric::new(p).expect("valid p").sample(rng) + 1
        };
        Ok(self.certify(input, rand_iter, slot + rand_iter, stake_s))
    }

    pub fn verify(&self, result: &VdfResult) -> bool {
        verify_simulated(&self.keys.vk, result, self.p_unit)
    }
}

pub fn verify_simulated(vk: &[u8; 32], result: &VdfResult, p_unit: f64) -> bool {
    if threshold(result.stake_s, p_unit).is_err() || result.rand_iter == 0 {
        return false;
    }
    let Some((iters, digests)) = decode_proof(&result.proof) else {
        return false;
    };
    if iters != result.rand_iter || digests.len() != 1 {
        return false;
    }
    let expect_out = RandValue::hash_of(&[
        b"out",
        vk,
        &result.input.0,
        &result.rand_iter.to_le_bytes(),
        &result.slot_final.to_le_bytes(),
    ]);
    expect_out == result.output && digests[0] == SimulatedVdf::tag(vk, result)
}

/// Realization-dispatching verifier used by block validation.
#[derive(Clone, Debug)]
pub struct Verifier {
    pub vk: [u8; 32],
    pub p_unit: f64,
    pub realization: Realization,
}

impl Verifier {
    pub fn verify(&self, r: &VdfResult) -> bool {
        match self.realization {
            Realization::HashChain => verify(&self.vk, r, self.p_unit),
            Realization::Simulated => verify_simulated(&self.vk, r, self.p_unit),
        }
    }

    /// Threshold condition on `Hash(output, slot)`. The simulated oracle only
    /// issues winning results, so there it reduces to a valid stake.
    pub fn wins(&self, output: &RandValue, slot: u64, stake_s: f64) -> bool {
        match threshold(stake_s, self.p_unit) {
            Err(_) => false,
            Ok(th) => match self.realization {
                Realization::HashChain => (ticket(output, slot) as u128) < th,
                Realization::Simulated => true,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_range_wins_first_step() {
        let r = eval(RandValue([3; 32]), &[1; 32], 1.0, 0, 1.0).unwrap();
        assert_eq!(r.rand_iter, 1);
        assert_eq!(r.slot_final, 1);
        assert!(verify(&[1; 32], &r, 1.0));
    }

    #[test]
    fn stake_too_large() {
        assert!(matches!(threshold(3.0, 0.5), Err(VdfError::StakeTooLarge { .. })));
        assert_eq!(threshold(2.0, 0.5).unwrap(), 1u128 << 64);
    }

    #[test]
    fn proof_round_trip() {
        let r = eval(RandValue([9; 32]), &[2; 32], 1.0, 5, 1.0 / 4096.0).unwrap();
        let (it, d) = decode_proof(&r.proof).unwrap();
        assert_eq!(it, r.rand_iter);
        assert_eq!(d.len() as u64, r.rand_iter / CHECKPOINT_INTERVAL);
    }
}
