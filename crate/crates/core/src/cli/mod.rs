//! Command-line front end.

pub mod experiments;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{self, AnalysisReport};
use crate::simnet::config::{ConfigError, SimConfig};
use crate::simnet::trace::Trace;
use crate::simnet::{self, SimError};
use experiments::{ExperimentError, SweepSpec};

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "POSAT_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "posat", version, about = "PoSAT simulator and analysis toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
    /// Base seed, overriding the one in the config or spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trials per point or per arm.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = WORKERS_ENV, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one scenario and write its trace, analysis and summary row.
    Run { config: PathBuf },
    /// Private-attack success frequency over a grid of adversary fractions.
    Sweep { spec: PathBuf },
    /// Print c, phi_c and 1/(1+phi_c) as CSV.
    SolvePhi {
        #[arg(long, default_value_t = 10)]
        c_max: u32,
    },
    /// Run a canned attack recipe and print its verdict.
    Reproduce { attack: String },
    /// Analyze a JSON-lines trace.
    Analyze { trace: PathBuf },
}

pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    execute(&cli)
}

pub fn execute(cli: &Cli) -> i32 {
    if cli.workers > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global();
    }
    let res = match &cli.cmd {
        Command::Run { config } => cmd_run(config, cli.seed, &cli.out),
        Command::Sweep { spec } => cmd_sweep(spec, cli),
        Command::SolvePhi { c_max } => cmd_solve_phi(*c_max),
        Command::Reproduce { attack } => cmd_reproduce(attack, cli),
        Command::Analyze { trace } => cmd_analyze(trace),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAIL
        }
    }
}

/// Parses a scenario file, JSON when the extension says so and TOML otherwise.
pub fn load_config(path: &Path) -> Result<SimConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|x| x == "json") {
        SimConfig::from_json(&text)
    } else {
        SimConfig::from_toml(&text)
    }
}

/// First 16 hex digits of the SHA-256 of the config's JSON form.
pub fn config_hash(cfg: &SimConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

fn addressed_dir(out: &Path, kind: &str, bytes: &[u8]) -> PathBuf {
    out.join(format!("{kind}-{}", hex::encode(&Sha256::digest(bytes)[..8])))
}

/// One `results.csv` row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub config_hash: String,
    pub seed: u64,
    pub strategy: String,
    pub c: u64,
    pub delta: f64,
    pub k_confirm: usize,
    pub duration: f64,
    pub chain_length: u64,
    pub max_fork_depth: u64,
    pub honest_blocks: u64,
    pub adversary_blocks: u64,
    pub violations: u32,
    pub success: bool,
    pub reorg_depth: u64,
    pub time_of_success: Option<f64>,
}

impl ResultRow {
    pub fn new(cfg: &SimConfig, trace: &Trace, report: &AnalysisReport) -> Self {
        let s = &trace.summary;
        let checks = [
            report.persistence_ok,
            report.ledger.liveness_ok,
            report.nakamoto_stable,
            report.delivery.delta_synchrony_ok,
            report.delivery.withholding_ok,
        ];
        ResultRow {
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            strategy: cfg.adversary.strategy.name().to_string(),
            c: cfg.c,
            delta: cfg.delta,
            k_confirm: cfg.k_confirm,
            duration: cfg.duration,
            chain_length: s.chain_length,
            max_fork_depth: s.max_fork_depth,
            honest_blocks: s.honest_blocks,
            adversary_blocks: s.adversary_blocks,
            violations: checks.iter().filter(|ok| !**ok).count() as u32,
            success: s.outcome.success,
            reorg_depth: s.outcome.reorg_depth,
            time_of_success: s.outcome.time_of_success,
        }
    }
}

fn append_row(path: &Path, row: &ResultRow) -> anyhow::Result<()> {
    let fresh = !path.exists();
    let f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(f);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

/// True when the trace breaks a property every run must keep.
pub fn invariant_broken(report: &AnalysisReport) -> bool {
    !report.nakamoto_stable || !report.delivery.delta_synchrony_ok || !report.delivery.withholding_ok
}

fn cmd_run(path: &Path, seed: Option<u64>, out: &Path) -> anyhow::Result<i32> {
    let mut cfg = match load_config(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let trace = match simnet::run(&cfg) {
        Ok(t) => t,
        Err(SimError::ConfigInvalid(e)) => {
            eprintln!("config error: {e}");
            return Ok(EXIT_CONFIG);
        }
        Err(e @ SimError::InvariantViolation(_)) => {
            eprintln!("{e}");
            return Ok(EXIT_INVARIANT);
        }
    };
    let report = match analysis::analyze(&trace) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return Ok(EXIT_INVARIANT);
        }
    };
    let dir = out.join(format!("run-{}", config_hash(&cfg)));
    if dir.join("trace.jsonl").exists() {
        eprintln!("{} exists, leaving it untouched", dir.display());
    } else {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;
        fs::write(dir.join("trace.jsonl"), trace.to_jsonl())?;
        fs::write(dir.join("analysis.json"), serde_json::to_vec_pretty(&report)?)?;
    }
    append_row(&out.join("results.csv"), &ResultRow::new(&cfg, &trace, &report))?;
    println!("{}", dir.display());
    if invariant_broken(&report) {
        eprintln!("invariant violated: {}", serde_json::to_string(&report)?);
        return Ok(EXIT_INVARIANT);
    }
    Ok(EXIT_OK)
}

fn cmd_sweep(path: &Path, cli: &Cli) -> anyhow::Result<i32> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec: SweepSpec = match toml::from_str(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("spec error: {e}");
            return Ok(EXIT_CONFIG);
        }
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if let Some(t) = cli.trials {
        spec.trials = t;
    }
    let dir = addressed_dir(&cli.out, "sweep", &serde_json::to_vec(&spec)?);
    let mut points = Vec::new();
    let mut bands = Vec::new();
    for p in spec.params() {
        let r = match experiments::sweep_threshold(&p) {
            Ok(r) => r,
            Err(ExperimentError::Invalid(m)) => {
                eprintln!("spec error: {m}");
                return Ok(EXIT_CONFIG);
            }
            Err(e) => return Err(e.into()),
        };
        points.extend(r.points.iter().cloned());
        println!(
            "c={} band=[{:.2}, {:.2}] predicted={:.5} contains={}",
            r.c, r.band_lo, r.band_hi, r.predicted, r.contains_predicted
        );
        bands.push(BandRow {
            c: r.c,
            band_lo: r.band_lo,
            band_hi: r.band_hi,
            predicted: r.predicted,
            contains_predicted: r.contains_predicted,
        });
    }
    if dir.exists() {
        eprintln!("{} exists, leaving it untouched", dir.display());
        return Ok(EXIT_OK);
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("spec.json"), serde_json::to_vec_pretty(&spec)?)?;
    write_csv(&dir.join("sweep.csv"), &points)?;
    write_csv(&dir.join("bands.csv"), &bands)?;
    println!("{}", dir.display());
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BandRow {
    c: u64,
    band_lo: f64,
    band_hi: f64,
    predicted: f64,
    contains_predicted: bool,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The `solve-phi` table as CSV text.
pub fn phi_csv(c_max: u32) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["c", "phi_c", "tolerance_fraction"])?;
    for r in experiments::solve_phi_table(c_max)? {
        w.write_record([
            r.c.to_string(),
            format!("{:.10}", r.phi_c),
            format!("{:.10}", r.tolerance_fraction),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn cmd_solve_phi(c_max: u32) -> anyhow::Result<i32> {
    if c_max == 0 {
        eprintln!("--c-max must be at least 1");
        return Ok(EXIT_CONFIG);
    }
    print!("{}", phi_csv(c_max)?);
    Ok(EXIT_OK)
}

fn cmd_reproduce(attack: &str, cli: &Cli) -> anyhow::Result<i32> {
    let seed = cli.seed.unwrap_or(0);
    let report = match experiments::reproduce(attack, cli.trials, seed) {
        Ok(r) => r,
        Err(e @ (ExperimentError::UnknownAttack(_) | ExperimentError::Invalid(_))) => {
            eprintln!("{e}");
            return Ok(EXIT_CONFIG);
        }
        Err(e) => return Err(e.into()),
    };
    let json = serde_json::to_vec_pretty(&report)?;
    let key = format!("{attack}:{seed}:{:?}", cli.trials);
    let dir = addressed_dir(&cli.out, &format!("reproduce-{attack}"), key.as_bytes());
    if !dir.exists() {
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("report.json"), &json)?;
    }
    println!("{}", String::from_utf8(json)?);
    println!("verdict: {}", if report.pass { "pass" } else { "fail" });
    Ok(if report.pass { EXIT_OK } else { EXIT_FAIL })
}

fn cmd_analyze(path: &Path) -> anyhow::Result<i32> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let trace = match Trace::read_jsonl(BufReader::new(f)) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("malformed trace: {e}");
            return Ok(EXIT_INVARIANT);
        }
    };
    let report = match analysis::analyze(&trace) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return Ok(EXIT_INVARIANT);
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if invariant_broken(&report) { EXIT_INVARIANT } else { EXIT_OK })
}
