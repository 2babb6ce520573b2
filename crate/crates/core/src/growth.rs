//! Growth rate of the private nothing-at-stake tree: the log-MGF `Λ_c`, its
//! optimizing tilt `θ*`, the amplification `φ_c`, a branching-random-walk
//! Monte Carlo and the depth tail bound.

use std::cmp::Reverse;
use std::collections::binary_heap::PeekMut;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum GrowthError {
    #[error("theta must be negative, got {0}")]
    DomainError(f64),
    #[error("root finding failed: {0}")]
    ConvergenceFailure(String),
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error("{without} of {trials} trials saw no first-generation block before the horizon")]
    HorizonTooSmall { without: usize, trials: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthSolution {
    pub c: u32,
    pub lambda_a: f64,
    pub theta_star: f64,
    pub lambda_c_at_star: f64,
    pub eta_c: f64,
    pub phi_c: f64,
}

/// `Λ_c(θ) = c ln λ_a − ln(−θ) − (c−1) ln(λ_a − θ)`.
pub fn lambda_c(theta: f64, lambda_a: f64, c: u32) -> Result<f64, GrowthError> {
    if !(theta < 0.0) {
        return Err(GrowthError::DomainError(theta));
    }
    let c = c as f64;
    Ok(c * lambda_a.ln() - (-theta).ln() - (c - 1.0) * (lambda_a - theta).ln())
}

/// `Λ̇_c(θ) = −1/θ + (c−1)/(λ_a − θ)`.
pub fn lambda_c_dot(theta: f64, lambda_a: f64, c: u32) -> f64 {
    -1.0 / theta + (c as f64 - 1.0) / (lambda_a - theta)
}

fn lambda_c_ddot(theta: f64, lambda_a: f64, c: u32) -> f64 {
    1.0 / (theta * theta) + (c as f64 - 1.0) / (lambda_a - theta).powi(2)
}

/// `g(θ) = Λ_c(θ) − θ Λ̇_c(θ)` and its derivative `−θ Λ̈_c(θ)`.
fn g_and_dg(theta: f64, lambda_a: f64, c: u32) -> (f64, f64) {
    let l = lambda_c(theta, lambda_a, c).expect("theta < 0 inside bracket");
    (
        l - theta * lambda_c_dot(theta, lambda_a, c),
        -theta * lambda_c_ddot(theta, lambda_a, c),
    )
}

const MAX_DOUBLINGS: u32 = 200;
const RESIDUAL_TOL: f64 = 1e-10;

/// Negative root of `Λ_c(θ) = θ Λ̇_c(θ)` by safeguarded Newton-bisection.
pub fn solve_theta_star(c: u32, lambda_a: f64) -> Result<GrowthSolution, GrowthError> {
    if c == 0 || !(lambda_a > 0.0 && lambda_a.is_finite()) {
        return Err(GrowthError::BadParameter(format!("c={c}, lambda_a={lambda_a}")));
    }
    let g = |t: f64| g_and_dg(t, lambda_a, c);
    let mut lo = -4.0 * lambda_a * c as f64;
    let mut hi = -1e-12 * lambda_a;
    let mut n = 0;
    while g(lo).0 > 0.0 {
        lo *= 2.0;
        n += 1;
        if n > MAX_DOUBLINGS {
            return Err(GrowthError::ConvergenceFailure("lower bracket not found".into()));
        }
    }
    if g(hi).0 < 0.0 {
        return Err(GrowthError::ConvergenceFailure("upper bracket has wrong sign".into()));
    }
    // g is increasing through the root: g(lo) <= 0 <= g(hi).
    let mut x = 0.5 * (lo + hi);
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    let (mut f, mut df) = g(x);
    for _ in 0..500 {
        let newton_out = ((x - hi) * df - f) * ((x - lo) * df - f) > 0.0;
        let slow = (2.0 * f).abs() > (dx_old * df).abs();
        if newton_out || slow {
            dx_old = dx;
            dx = 0.5 * (hi - lo);
            x = lo + dx;
        } else {
            dx_old = dx;
            dx = f / df;
            x -= dx;
        }
        if dx.abs() <= 4.0 * f64::EPSILON * x.abs() {
            break;
        }
        (f, df) = g(x);
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    let (res, _) = g(x);
    if !(res.abs() < RESIDUAL_TOL) {
        return Err(GrowthError::ConvergenceFailure(format!("residual {res:e}")));
    }
    let lam_star = lambda_c(x, lambda_a, c)?;
    let eta = x / (lambda_a * lam_star);
    let sol = GrowthSolution {
        c,
        lambda_a,
        theta_star: x,
        lambda_c_at_star: lam_star,
        eta_c: eta,
        phi_c: c as f64 * eta,
    };
    check_sup(&sol)?;
    Ok(sol)
}

/// `Λ_c(θ)/θ` sampled on a log grid must not exceed its value at `θ*`.
fn check_sup(sol: &GrowthSolution) -> Result<(), GrowthError> {
    let best = sol.lambda_c_at_star / sol.theta_star;
    for i in 0..=400 {
        let u = -6.0 + 9.0 * i as f64 / 400.0;
        let th = -sol.lambda_a * 10f64.powf(u);
        let v = lambda_c(th, sol.lambda_a, sol.c)? / th;
        if v > best + 1e-9 * best.abs() {
            return Err(GrowthError::ConvergenceFailure(format!(
                "sup check: Λ/θ at {th} exceeds value at θ*"
            )));
        }
    }
    Ok(())
}

/// Tolerable adversarial stake fraction at zero delay, `1/(1+φ_c)`.
pub fn tolerance_fraction(c: u32) -> Result<f64, GrowthError> {
    Ok(1.0 / (1.0 + solve_theta_star(c, 1.0)?.phi_c))
}

/// `σ(c) = (c−1)(Δ + (1+κ)/λ_min)`.
pub fn sigma_c(c: u32, delta: f64, kappa: f64, lambda_min: f64) -> f64 {
    (c as f64 - 1.0) * (delta + (1.0 + kappa) / lambda_min)
}

/// Chernoff-type bound on `P(D(t) ≥ φ_c λ_a t + c x)` with `g` replaced by its limit.
pub fn depth_tail_bound(c: u32, lambda_a: f64, t: f64, x: f64) -> Result<f64, GrowthError> {
    let s = solve_theta_star(c, lambda_a)?;
    let m = tail_generation(&s, t, x);
    let g_cap = lambda_a / (-s.theta_star);
    Ok((-s.theta_star * t + (m as f64 - 1.0) * s.lambda_c_at_star).exp() * g_cap)
}

/// Superblock generation `m = ⌈η_c λ_a t + x⌉` used by the tail bound.
pub fn tail_generation(s: &GrowthSolution, t: f64, x: f64) -> u64 {
    (s.eta_c * s.lambda_a * t + x - 1e-12).ceil().max(1.0) as u64
}

#[derive(Clone, Debug)]
pub struct BrwConfig {
    pub c: u32,
    pub lambda_a: f64,
    pub horizon: f64,
    pub trials: usize,
    pub seed: u64,
    /// Keep only the earliest `beam` vertices per superblock generation; `None` is exact.
    pub beam: Option<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BrwStats {
    pub mean_depth_rate: f64,
    /// Half-width of the 95% normal interval of the mean.
    pub ci: f64,
    /// Final depth in blocks per trial.
    pub depths: Vec<u64>,
    /// Per trial, appearance time of the first vertex of each generation `1..`.
    pub first_passage: Vec<Vec<f64>>,
}

impl BrwStats {
    /// Depth in blocks reached by time `t` in trial `i`.
    pub fn depth_at(&self, c: u32, i: usize, t: f64) -> u64 {
        c as u64 * self.first_passage[i].iter().take_while(|&&q| q <= t).count() as u64
    }
}

/// Appearance times of one generation's children, earliest first, restricted to the horizon.
fn next_generation<R: Rng>(
    parents: &[f64],
    first_index: u32,
    exp: &Exp<f64>,
    horizon: f64,
    beam: Option<usize>,
    rng: &mut R,
) -> Vec<f64> {
    let mut first = Vec::with_capacity(parents.len());
    for (i, &p) in parents.iter().enumerate() {
        let mut t = p;
        for _ in 0..first_index {
            t += exp.sample(rng);
        }
        if t <= horizon {
            first.push(Reverse((OrdF64(t), i)));
        }
    }
    let mut heap = BinaryHeap::from(first);
    let cap = beam.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    while let Some(mut top) = heap.peek_mut() {
        let Reverse((OrdF64(t), i)) = *top;
        out.push(t);
        if out.len() >= cap {
            break;
        }
        let nt = t + exp.sample(rng);
        if nt <= horizon {
            // Replacing the top costs one sift instead of a pop and a push.
            *top = Reverse((OrdF64(nt), i));
        } else {
            PeekMut::pop(top);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for OrdF64 {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&o.0)
    }
}

/// One trial: first-passage times of each superblock generation.
pub fn brw_trial(cfg: &BrwConfig, trial: usize) -> Vec<f64> {
    let mut rng = stats::substream(cfg.seed, trial as u64);
    let exp = Exp::new(cfg.lambda_a).expect("positive rate");
    let mut passage = Vec::new();
    let mut gen = next_generation(&[0.0], 1, &exp, cfg.horizon, cfg.beam, &mut rng);
    while let Some(&first) = gen.first() {
        passage.push(first);
        gen = next_generation(&gen, cfg.c, &exp, cfg.horizon, cfg.beam, &mut rng);
    }
    passage
}

/// Monte Carlo of the labelled superblock tree; reports depth (blocks) per unit time.
pub fn brw_private_tree_mc(cfg: &BrwConfig) -> Result<BrwStats, GrowthError> {
    if cfg.trials == 0 || cfg.c == 0 || !(cfg.horizon > 0.0) || !(cfg.lambda_a > 0.0) {
        return Err(GrowthError::BadParameter(format!("{cfg:?}")));
    }
    let first_passage: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|i| brw_trial(cfg, i))
        .collect();
    let without = first_passage.iter().filter(|p| p.is_empty()).count();
    if 2 * without > cfg.trials {
        return Err(GrowthError::HorizonTooSmall {
            without,
            trials: cfg.trials,
        });
    }
    let depths: Vec<u64> = first_passage
        .iter()
        .map(|p| cfg.c as u64 * p.len() as u64)
        .collect();
    let rates: Vec<f64> = depths.iter().map(|&d| d as f64 / cfg.horizon).collect();
    let ci = if rates.len() > 1 {
        1.96 * stats::sample_sd(&rates) / (rates.len() as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(BrwStats {
        mean_depth_rate: stats::mean(&rates),
        ci,
        depths,
        first_passage,
    })
}
