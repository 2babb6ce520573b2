use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::StrategySpec;
use crate::chaintypes::validate_intervals;
use crate::node::ResetPolicy;
use crate::randvdf::Realization;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
    #[error("costless simulation needs a baseline protocol")]
    BaselineRequired,
    #[error("parse error: {0}")]
    Parse(String),
}

fn invalid(field: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    #[default]
    Posat,
    VrfLottery,
}

/// Delivery delay chosen by the adversary for honest broadcasts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DelayPolicy {
    Zero,
    #[default]
    Max,
    /// `fraction * Δ` to the listed nodes, `Δ` to the rest.
    Split { fraction: f64, nodes: Vec<usize> },
    /// Uniform on `[0, Δ]`.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RevealPolicy {
    /// Every node receives a reveal after the same delay.
    #[default]
    Uniform,
    /// Node `i` of `n` receives it after `Δ·i/(n−1)`.
    StaggeredMaxDelta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HonestNodeSpec {
    /// Stake of each coin held by the node.
    pub coins: Vec<f64>,
    /// `[start, end)` intervals during which the node is online.
    #[serde(default = "always_online")]
    pub online: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryCoinSpec {
    pub stake: f64,
    #[serde(default = "always_online")]
    pub online: Vec<(f64, f64)>,
}

fn always_online() -> Vec<(f64, f64)> {
    vec![(0.0, f64::MAX)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub coins: Vec<AdversaryCoinSpec>,
    #[serde(default)]
    pub strategy: StrategySpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultInjection {
    /// Appends a tip record for node 0 pointing at genesis at the end of the run.
    pub corrupt_view: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub c: u64,
    pub delta: f64,
    pub k_confirm: usize,
    pub duration: f64,
    pub seed: u64,
    pub honest: Vec<HonestNodeSpec>,
    #[serde(default)]
    pub adversary: AdversarySpec,
    #[serde(default)]
    pub lambda_min: Option<f64>,
    #[serde(default)]
    pub lambda_max: Option<f64>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub reset_policy: ResetPolicy,
    /// Per-step win probability of one stake unit.
    #[serde(default = "default_p_unit")]
    pub p_unit: f64,
    /// Sequential iterations per second (shared by all parties).
    #[serde(default = "default_iter_rate")]
    pub iter_rate: f64,
    #[serde(default = "default_realization")]
    pub realization: Realization,
    #[serde(default = "yes")]
    pub time_ordering: bool,
    #[serde(default)]
    pub protocol: Baseline,
    #[serde(default)]
    pub delay_policy: DelayPolicy,
    #[serde(default)]
    pub reveal_policy: RevealPolicy,
    #[serde(default = "one")]
    pub adversary_speedup: f64,
    /// Transactions per second injected at every honest node.
    #[serde(default)]
    pub tx_rate: f64,
    #[serde(default = "yes")]
    pub record_trace: bool,
    #[serde(default)]
    pub stop_on_success: bool,
    /// Adversary processes anchored more than this many levels below the
    /// race frontier are dropped.
    #[serde(default = "default_prune")]
    pub prune_window: u64,
    /// At most this many private blocks per level anchor new processes
    /// (earliest first); `None` keeps all.
    #[serde(default = "default_beam")]
    pub adversary_beam: Option<usize>,
    #[serde(default)]
    pub fault_injection: Option<FaultInjection>,
}

fn default_kappa() -> f64 {
    1.0
}
fn default_p_unit() -> f64 {
    1e-6
}
fn default_iter_rate() -> f64 {
    1e6
}
fn default_realization() -> Realization {
    Realization::Simulated
}
fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn default_prune() -> u64 {
    24
}
fn default_beam() -> Option<usize> {
    Some(64)
}

impl SimConfig {
    /// `n` always-online honest nodes sharing total rate `lambda_h`, one adversary coin at `lambda_a`.
    pub fn basic(c: u64, lambda_h: f64, nodes: usize, lambda_a: f64, delta: f64, duration: f64, seed: u64) -> Self {
        let honest = (0..nodes)
            .map(|_| HonestNodeSpec {
                coins: vec![lambda_h / nodes as f64],
                online: always_online(),
            })
            .collect();
        let coins = if lambda_a > 0.0 {
            vec![AdversaryCoinSpec {
                stake: lambda_a,
                online: always_online(),
            }]
        } else {
            Vec::new()
        };
        SimConfig {
            c,
            delta,
            k_confirm: 6,
            duration,
            seed,
            honest,
            adversary: AdversarySpec {
                coins,
                strategy: StrategySpec::None,
            },
            lambda_min: None,
            lambda_max: None,
            kappa: default_kappa(),
            reset_policy: ResetPolicy::Continue,
            p_unit: default_p_unit(),
            iter_rate: default_iter_rate(),
            realization: Realization::Simulated,
            time_ordering: true,
            protocol: Baseline::Posat,
            delay_policy: DelayPolicy::Max,
            reveal_policy: RevealPolicy::Uniform,
            adversary_speedup: 1.0,
            tx_rate: 0.0,
            record_trace: true,
            stop_on_success: false,
            prune_window: default_prune(),
            adversary_beam: default_beam(),
            fault_injection: None,
        }
    }

    /// Wins per second per stake unit.
    pub fn rate_unit(&self) -> f64 {
        self.p_unit * self.iter_rate
    }

    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.c == 0 {
            return Err(invalid("c", "must be at least 1"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta", "must be finite and non-negative"));
        }
        if self.k_confirm == 0 {
            return Err(invalid("k_confirm", "must be at least 1"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", "must be positive"));
        }
        if self.honest.is_empty() {
            return Err(invalid("honest", "need at least one honest node"));
        }
        if !(self.p_unit > 0.0 && self.iter_rate > 0.0) {
            return Err(invalid("p_unit", "p_unit and iter_rate must be positive"));
        }
        if !(self.kappa > 0.0) {
            return Err(invalid("kappa", "must be positive"));
        }
        if !(self.adversary_speedup > 0.0) {
            return Err(invalid("adversary_speedup", "must be positive"));
        }
        if !(self.tx_rate >= 0.0) {
            return Err(invalid("tx_rate", "must be non-negative"));
        }
        for (i, n) in self.honest.iter().enumerate() {
            if n.coins.is_empty() || n.coins.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(invalid(&format!("honest[{i}].coins"), "stakes must be positive"));
            }
            if n.coins.iter().any(|&s| s * self.p_unit > 1.0) {
                return Err(invalid(&format!("honest[{i}].coins"), "stake too large for p_unit"));
            }
            validate_intervals(&n.online)
                .map_err(|e| invalid(&format!("honest[{i}].online"), e.to_string()))?;
        }
        for (i, a) in self.adversary.coins.iter().enumerate() {
            if !(a.stake > 0.0 && a.stake.is_finite()) {
                return Err(invalid(&format!("adversary.coins[{i}].stake"), "must be positive"));
            }
            validate_intervals(&a.online)
                .map_err(|e| invalid(&format!("adversary.coins[{i}].online"), e.to_string()))?;
        }
        if self.adversary_beam == Some(0) {
            return Err(invalid("adversary_beam", "must be at least 1"));
        }
        if let DelayPolicy::Split { fraction, nodes } = &self.delay_policy {
            if !(0.0..=1.0).contains(fraction) {
                return Err(invalid("delay_policy.fraction", "must lie in [0, 1]"));
            }
            if nodes.iter().any(|&n| n >= self.honest.len()) {
                return Err(invalid("delay_policy.nodes", "node index out of range"));
            }
        }
        if self.realization == crate::randvdf::Realization::HashChain
            && !matches!(self.adversary.strategy, StrategySpec::None)
        {
            return Err(invalid("realization", "hash_chain runs support only honest nodes"));
        }
        self.adversary.strategy.validate(self.c)?;
        let (lo, hi) = super::honest_rate_range(self);
        if let Some(m) = self.lambda_min {
            if !(m > 0.0) || lo < m - 1e-12 {
                return Err(invalid("lambda_min", format!("honest rate drops to {lo}")));
            }
        }
        if let Some(m) = self.lambda_max {
            if hi > m + 1e-12 {
                return Err(invalid("lambda_max", format!("honest rate reaches {hi}")));
            }
        }
        Ok(())
    }
}
