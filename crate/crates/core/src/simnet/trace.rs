//! Run artifacts and their JSON-lines encoding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use crate::chaintypes::{Block, CoinId};
use crate::node::InvalidReason;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub hash: u64,
    pub parent: Option<u64>,
    pub level: u64,
    pub slot: u64,
    pub coin: CoinId,
    pub honest: bool,
    pub proposal_time: f64,
    /// `None` for blocks never published.
    pub reveal_time: Option<f64>,
    /// Would honest nodes accept the block, given its ancestors.
    pub valid: bool,
    pub txs: Vec<u64>,
}

impl BlockRecord {
    pub fn from_block(b: &Block, valid: bool) -> Self {
        BlockRecord {
            hash: b.hash.0,
            parent: b.parent.map(|p| p.0),
            level: b.level,
            slot: b.slot,
            coin: b.coin_id,
            honest: b.honest,
            proposal_time: b.proposal_time,
            reveal_time: b.reveal_time.is_finite().then_some(b.reveal_time),
            valid,
            txs: b.txs.clone(),
        }
    }
}

/// Tip of `node` from `time` on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TipRecord {
    pub time: f64,
    pub node: usize,
    pub tip: u64,
    pub level: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "ev")]
pub enum TraceEvent {
    Join { time: f64, node: usize },
    Leave { time: f64, node: usize },
    /// Block entered the node's view.
    Recv { time: f64, node: usize, block: u64 },
    Drop { time: f64, node: usize, block: u64, reason: InvalidReason },
    Reveal { time: f64, blocks: Vec<u64> },
    TipSwitch { time: f64, node: usize, from: u64, to: u64 },
    Tx { time: f64, tx: u64 },
    Success { time: f64, node: usize, reorg_depth: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct AttackOutcome {
    pub strategy: String,
    pub success: bool,
    pub reorg_depth: u64,
    pub time_of_success: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub seed: u64,
    /// Longest honest-view chain at the end of the run.
    pub chain_length: u64,
    /// Deepest level difference between any honest tip and a dropped former tip.
    pub max_fork_depth: u64,
    pub honest_blocks: u64,
    pub adversary_blocks: u64,
    pub adv_max_valid_level: u64,
    pub adv_max_level: u64,
    pub drops_time_order: u64,
    pub drops_total: u64,
    pub tip_switches: u64,
    pub end_time: f64,
    pub events: u64,
    pub outcome: AttackOutcome,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trace {
    pub config: Option<SimConfig>,
    pub blocks: Vec<BlockRecord>,
    pub tips: Vec<TipRecord>,
    pub events: Vec<TraceEvent>,
    pub summary: RunSummary,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
enum Line {
    Config(Box<SimConfig>),
    Block(BlockRecord),
    Tip(TipRecord),
    Event(TraceEvent),
    Summary(RunSummary),
}

#[derive(Debug, thiserror::Error)]
pub enum TraceIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut put = |l: &Line| -> std::io::Result<()> {
            serde_json::to_writer(&mut w, l)?;
            w.write_all(b"\n")
        };
        if let Some(cfg) = &self.config {
            put(&Line::Config(Box::new(cfg.clone())))?;
        }
        for b in &self.blocks {
            put(&Line::Block(b.clone()))?;
        }
        for t in &self.tips {
            put(&Line::Tip(*t))?;
        }
        for e in &self.events {
            put(&Line::Event(e.clone()))?;
        }
        put(&Line::Summary(self.summary.clone()))
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Trace, TraceIoError> {
        let mut t = Trace::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| TraceIoError::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?;
            match parsed {
                Line::Config(c) => t.config = Some(*c),
                Line::Block(b) => t.blocks.push(b),
                Line::Tip(x) => t.tips.push(x),
                Line::Event(e) => t.events.push(e),
                Line::Summary(s) => t.summary = s,
            }
        }
        Ok(t)
    }

    pub fn delta(&self) -> f64 {
        self.config.as_ref().map(|c| c.delta).unwrap_or(0.0)
    }
}
