//! Threshold sweeps, attack recipes and the growth table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::StrategySpec;
use crate::growth::{self, GrowthError};
use crate::simnet::config::{AdversaryCoinSpec, Baseline, HonestNodeSpec, SimConfig};
use crate::simnet::{self, SimError};
use crate::stats;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown attack `{0}` (expected private, costless_sim, enumeration, long_range, sybil)")]
    UnknownAttack(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

/// Seed of trial `i` under `base`. Every grid point and every arm of a recipe
/// reuses the same trial seeds.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    stats::mix(base, i as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiRow {
    pub c: u32,
    pub theta_star: f64,
    pub phi_c: f64,
    pub tolerance_fraction: f64,
}

pub fn solve_phi_table(c_max: u32) -> Result<Vec<PhiRow>, GrowthError> {
    (1..=c_max)
        .map(|c| {
            let s = growth::solve_theta_star(c, 1.0)?;
            Ok(PhiRow {
                c,
                theta_star: s.theta_star,
                phi_c: s.phi_c,
                tolerance_fraction: 1.0 / (1.0 + s.phi_c),
            })
        })
        .collect()
}

/// Knobs of the private-attack sweep. The honest side is one always-online
/// node of unit rate, `Δ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    pub c: u64,
    pub betas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_sweep_k")]
    pub k_confirm: usize,
    #[serde(default = "default_sweep_horizon")]
    pub horizon: f64,
    #[serde(default = "default_sweep_beam")]
    pub adversary_beam: Option<usize>,
    #[serde(default = "default_sweep_window")]
    pub prune_window: u64,
}

fn default_sweep_k() -> usize {
    80
}
fn default_sweep_horizon() -> f64 {
    800.0
}
fn default_sweep_beam() -> Option<usize> {
    Some(32)
}
fn default_sweep_window() -> u64 {
    10
}

impl ThresholdParams {
    pub fn new(c: u64, betas: Vec<f64>, trials: usize, seed: u64) -> Self {
        ThresholdParams {
            c,
            betas,
            trials,
            seed,
            k_confirm: default_sweep_k(),
            horizon: default_sweep_horizon(),
            adversary_beam: default_sweep_beam(),
            prune_window: default_sweep_window(),
        }
    }

    /// Complete scenario for one grid point and trial.
    pub fn point_config(&self, beta: f64, seed: u64) -> SimConfig {
        let lambda_a = beta / (1.0 - beta);
        let mut cfg = SimConfig::basic(self.c, 1.0, 1, lambda_a, 0.0, self.horizon, seed);
        cfg.k_confirm = self.k_confirm;
        cfg.adversary.strategy = StrategySpec::private_attack(1);
        cfg.stop_on_success = true;
        cfg.record_trace = false;
        cfg.adversary_beam = self.adversary_beam;
        cfg.prune_window = self.prune_window;
        cfg
    }
}

/// `start, start+step, ..` up to `stop` inclusive, rounded to 1e-9.
pub fn beta_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| ((start + step * i as f64) * 1e9).round() / 1e9)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub c: u64,
    pub beta: f64,
    pub trials: usize,
    pub successes: usize,
    pub freq: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub c: u64,
    pub points: Vec<SweepPoint>,
    /// Last grid β with frequency ≤ 0.05 below `band_hi`.
    pub band_lo: f64,
    /// First grid β with frequency ≥ 0.95.
    pub band_hi: f64,
    pub predicted: f64,
    pub contains_predicted: bool,
}

pub fn sweep_threshold(p: &ThresholdParams) -> Result<SweepResult, ExperimentError> {
    if p.trials == 0 {
        return Err(ExperimentError::Invalid("trials must be at least 1".into()));
    }
    if p.betas.is_empty() || p.betas.iter().any(|&b| !(b > 0.0 && b <= 0.5)) {
        return Err(ExperimentError::Invalid("grid must lie in (0, 0.5]".into()));
    }
    let mut betas = p.betas.clone();
    betas.sort_by(f64::total_cmp);
    let jobs: Vec<(usize, usize)> = (0..betas.len())
        .flat_map(|b| (0..p.trials).map(move |t| (b, t)))
        .collect();
    let wins: Vec<Result<bool, SimError>> = jobs
        .par_iter()
        .map(|&(b, t)| {
            let cfg = p.point_config(betas[b], trial_seed(p.seed, t));
            Ok(simnet::run(&cfg)?.summary.outcome.success)
        })
        .collect();
    let mut succ = vec![0usize; betas.len()];
    for (&(b, _), w) in jobs.iter().zip(wins) {
        succ[b] += w? as usize;
    }
    let points: Vec<SweepPoint> = betas
        .iter()
        .zip(&succ)
        .map(|(&beta, &s)| {
            let (lo, hi) = stats::wilson_interval(s, p.trials, 1.96);
            SweepPoint {
                c: p.c,
                beta,
                trials: p.trials,
                successes: s,
                freq: s as f64 / p.trials as f64,
                ci_lo: lo,
                ci_hi: hi,
            }
        })
        .collect();
    let hi_idx = points.iter().position(|q| q.freq >= 0.95);
    let band_hi = hi_idx.map(|i| points[i].beta).unwrap_or(0.5);
    let below = hi_idx.unwrap_or(points.len());
    let band_lo = points[..below]
        .iter()
        .rev()
        .find(|q| q.freq <= 0.05)
        .map(|q| q.beta)
        .unwrap_or(0.0);
    let predicted = growth::tolerance_fraction(p.c as u32)?;
    Ok(SweepResult {
        c: p.c,
        points,
        band_lo,
        band_hi,
        predicted,
        contains_predicted: band_lo <= predicted && predicted <= band_hi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub label: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean deepest valid private level per unit time.
    pub mean_growth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub procedure: String,
    pub alpha: f64,
    pub arms: Vec<Arm>,
    pub p_value: Option<f64>,
    pub pass: bool,
}

pub const ATTACKS: [&str; 5] = ["private", "costless_sim", "enumeration", "long_range", "sybil"];

#[derive(Clone, Copy, Debug)]
struct Run {
    success: bool,
    growth: f64,
}

fn run_arm(cfgs: Vec<SimConfig>) -> Result<Vec<Run>, SimError> {
    cfgs.par_iter()
        .map(|cfg| {
            let t = simnet::run(cfg)?;
            Ok(Run {
                success: t.summary.outcome.success,
                growth: t.summary.adv_max_valid_level as f64 / cfg.duration,
            })
        })
        .collect()
}

fn arm(label: &str, runs: &[Run]) -> Arm {
    let s = runs.iter().filter(|r| r.success).count();
    Arm {
        label: label.into(),
        trials: runs.len(),
        successes: s,
        success_rate: s as f64 / runs.len().max(1) as f64,
        mean_growth: stats::mean(&runs.iter().map(|r| r.growth).collect::<Vec<_>>()),
    }
}

fn trials_of<F: Fn(u64) -> SimConfig>(trials: usize, seed: u64, f: F) -> Vec<SimConfig> {
    (0..trials).map(|i| f(trial_seed(seed, i))).collect()
}

/// Runs the named recipe. `trials = None` uses the recipe's own count.
pub fn reproduce(attack: &str, trials: Option<usize>, seed: u64) -> Result<AttackReport, ExperimentError> {
    if trials == Some(0) {
        return Err(ExperimentError::Invalid("trials must be at least 1".into()));
    }
    match attack {
        "private" => private_recipe(trials.unwrap_or(200), seed),
        "costless_sim" => costless_recipe(trials.unwrap_or(100), seed),
        "enumeration" => enumeration_recipe(trials.unwrap_or(40), seed),
        "long_range" => long_range_recipe(trials.unwrap_or(100), seed),
        "sybil" => sybil_recipe(trials.unwrap_or(200), seed),
        other => Err(ExperimentError::UnknownAttack(other.to_string())),
    }
}

/// Private attack at c = 1 on both sides of the threshold with a 1.3x margin.
fn private_recipe(trials: usize, seed: u64) -> Result<AttackReport, ExperimentError> {
    let phi = growth::solve_theta_star(1, 1.0)?.phi_c;
    let delta = 0.1;
    let lambda_h = 1.0;
    let lambda_max = lambda_h;
    let safe_a = lambda_h / (1.0 + lambda_max * delta) / (1.3 * phi);
    let unsafe_a = 1.3 * lambda_h / phi;
    let base = |lambda_a: f64, s: u64| {
        let mut cfg = SimConfig::basic(1, lambda_h, 2, lambda_a, delta, 800.0, s);
        cfg.k_confirm = 80;
        cfg.lambda_max = Some(lambda_max);
        cfg.adversary.strategy = StrategySpec::private_attack(1);
        cfg.stop_on_success = true;
        cfg.record_trace = false;
        cfg.adversary_beam = Some(32);
        cfg.prune_window = 10;
        cfg
    };
    let safe = run_arm(trials_of(trials, seed, |s| base(safe_a, s)))?;
    let hot = run_arm(trials_of(trials, seed, |s| base(unsafe_a, s)))?;
    let (a, b) = (arm("safe", &safe), arm("unsafe", &hot));
    let pass = a.success_rate < 0.05 && b.success_rate > 0.90;
    Ok(AttackReport {
        attack: "private".into(),
        procedure: "success rate below 0.05 when the honest rate beats phi_c*lambda_a by 1.3x, above 0.90 when reversed".into(),
        alpha: 0.05,
        arms: vec![a, b],
        p_value: None,
        pass,
    })
}

/// Scenario for the costless-simulation recipe: a small honest node online
/// from the start, a large one and the adversary joining at `t = 100`.
pub fn costless_config(protocol: Baseline, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::basic(1, 1.0, 1, 0.0, 0.01, 150.0, seed);
    cfg.honest.push(HonestNodeSpec {
        coins: vec![9.0],
        online: vec![(100.0, f64::MAX)],
    });
    cfg.adversary.coins = vec![AdversaryCoinSpec {
        stake: 2.0,
        online: vec![(100.0, f64::MAX)],
    }];
    cfg.lambda_max = Some(10.0);
    cfg.k_confirm = 80;
    cfg.protocol = protocol;
    cfg.adversary.strategy = StrategySpec::costless_simulation_attack(Some(protocol));
    cfg.stop_on_success = true;
    cfg.record_trace = false;
    cfg
}

fn costless_recipe(trials: usize, seed: u64) -> Result<AttackReport, ExperimentError> {
    let vrf = run_arm(trials_of(trials, seed, |s| costless_config(Baseline::VrfLottery, s)))?;
    let posat = run_arm(trials_of(trials, seed, |s| costless_config(Baseline::Posat, s)))?;
    let (a, b) = (arm("vrf_lottery", &vrf), arm("posat", &posat));
    let pass = a.success_rate > 0.90 && b.success_rate < 0.05;
    Ok(AttackReport {
        attack: "costless_sim".into(),
        procedure: "paired seeds; vrf_lottery success rate above 0.90 and posat below 0.05".into(),
        alpha: 0.05,
        arms: vec![a, b],
        p_value: None,
        pass,
    })
}

/// Enumeration at c = 4 against a weak honest chain, with and without
/// time-ordering enforcement.
pub fn enumeration_config(time_ordering: bool, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::basic(4, 0.2, 1, 1.0, 0.0, 60.0, seed);
    cfg.time_ordering = time_ordering;
    cfg.adversary.strategy = StrategySpec::enumeration_attack();
    cfg.record_trace = false;
    cfg
}

fn enumeration_recipe(trials: usize, seed: u64) -> Result<AttackReport, ExperimentError> {
    let on = run_arm(trials_of(trials, seed, |s| enumeration_config(true, s)))?;
    let off = run_arm(trials_of(trials, seed, |s| enumeration_config(false, s)))?;
    let diffs: Vec<f64> = off.iter().zip(&on).map(|(x, y)| x.growth - y.growth).collect();
    let p = stats::paired_greater_p(&diffs);
    Ok(AttackReport {
        attack: "enumeration".into(),
        procedure: "paired one-sided t-test on private growth rate, enforcement off minus on".into(),
        alpha: 0.05,
        arms: vec![arm("ordering_on", &on), arm("ordering_off", &off)],
        p_value: Some(p),
        pass: p < 0.05,
    })
}

pub fn long_range_config(time_ordering: bool, strategy: StrategySpec, seed: u64) -> SimConfig {
    let mut cfg = SimConfig::basic(4, 1.0, 2, 0.3, 0.1, 300.0, seed);
    cfg.k_confirm = 10;
    cfg.time_ordering = time_ordering;
    cfg.adversary.strategy = strategy;
    cfg.stop_on_success = true;
    cfg.record_trace = false;
    cfg
}

fn long_range_recipe(trials: usize, seed: u64) -> Result<AttackReport, ExperimentError> {
    let lr = StrategySpec::long_range_attack;
    let on = run_arm(trials_of(trials, seed, |s| long_range_config(true, lr(), s)))?;
    let off = run_arm(trials_of(trials, seed, |s| long_range_config(false, lr(), s)))?;
    let private = run_arm(trials_of(trials, seed, |s| {
        long_range_config(false, StrategySpec::private_attack(1), s)
    }))?;
    let (a, b, c) = (arm("ordering_on", &on), arm("ordering_off", &off), arm("private", &private));
    let p = one_sided_greater(b.successes, c.successes, trials);
    let pass = a.successes == 0 && p < 0.05;
    Ok(AttackReport {
        attack: "long_range".into(),
        procedure: "zero successes with ordering on; one-sided two-proportion z-test, ordering off vs private".into(),
        alpha: 0.05,
        arms: vec![a, b, c],
        p_value: Some(p),
        pass,
    })
}

/// One-sided p-value for `s1/n > s2/n`.
fn one_sided_greater(s1: usize, s2: usize, n: usize) -> f64 {
    if s1 <= s2 {
        return 1.0;
    }
    let two = stats::two_proportion_p(s1, n, s2, n);
    two / 2.0
}

/// Private attack near the c = 1 transition with the stake held by one coin
/// or split across four.
pub fn sybil_config(coins: usize, seed: u64) -> SimConfig {
    let lambda_a = 0.21 / 0.79;
    let mut cfg = SimConfig::basic(1, 1.0, 1, lambda_a, 0.0, 400.0, seed);
    cfg.adversary.coins = (0..coins)
        .map(|_| AdversaryCoinSpec {
            stake: lambda_a / coins as f64,
            online: vec![(0.0, f64::MAX)],
        })
        .collect();
    cfg.k_confirm = 20;
    cfg.adversary.strategy = StrategySpec::private_attack(1);
    cfg.stop_on_success = true;
    cfg.record_trace = false;
    cfg.adversary_beam = Some(32);
    cfg.prune_window = 10;
    cfg
}

fn sybil_recipe(trials: usize, seed: u64) -> Result<AttackReport, ExperimentError> {
    let one = run_arm(trials_of(trials, seed, |s| sybil_config(1, s)))?;
    let four = run_arm(trials_of(trials, seed, |s| sybil_config(4, s)))?;
    let (a, b) = (arm("single_coin", &one), arm("split_4", &four));
    let p = stats::two_proportion_p(a.successes, trials, b.successes, trials);
    Ok(AttackReport {
        attack: "sybil".into(),
        procedure: "two-sided two-proportion z-test; neutral when p >= alpha".into(),
        alpha: 0.01,
        arms: vec![a, b],
        p_value: Some(p),
        pass: p >= 0.01,
    })
}

/// Sweep document: `c` and `beta` axes substituted into the sweep scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub c: Vec<u64>,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    #[serde(default = "default_beta_start")]
    pub beta_start: f64,
    #[serde(default = "default_beta_stop")]
    pub beta_stop: f64,
    #[serde(default = "default_beta_step")]
    pub beta_step: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sweep_k")]
    pub k_confirm: usize,
    #[serde(default = "default_sweep_horizon")]
    pub horizon: f64,
    #[serde(default = "default_sweep_beam")]
    pub adversary_beam: Option<usize>,
    #[serde(default = "default_sweep_window")]
    pub prune_window: u64,
}

fn default_beta_start() -> f64 {
    0.02
}
fn default_beta_stop() -> f64 {
    0.5
}
fn default_beta_step() -> f64 {
    0.02
}
fn default_trials() -> usize {
    100
}

impl SweepSpec {
    pub fn params(&self) -> Vec<ThresholdParams> {
        let betas = self
            .betas
            .clone()
            .unwrap_or_else(|| beta_grid(self.beta_start, self.beta_stop, self.beta_step));
        self.c
            .iter()
            .map(|&c| ThresholdParams {
                c,
                betas: betas.clone(),
                trials: self.trials,
                seed: self.seed,
                k_confirm: self.k_confirm,
                horizon: self.horizon,
                adversary_beam: self.adversary_beam,
                prune_window: self.prune_window,
            })
            .collect()
    }
}
