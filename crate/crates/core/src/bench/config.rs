//! Flat `key = value` experiment manifests.
//!
//! ```text
//! # comment
//! data = base.fbin          # or "synth" with the synth_* keys
//! k = 5000, 20000           # lists are comma-separated
//! n_cand = auto             # pool size derived from k
//! ```
//!
//! Keys accept `-` or `_` interchangeably, so every key can also be given as
//! a command-line flag of the same name.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::collectors::CollectorKind;
use crate::dataset::Distribution;
use crate::error::{invalid, BbcError, Result};
use crate::metric::Metric;
use crate::search::Pipeline;

/// Candidate pool size for the PQ pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NCand {
    Fixed(usize),
    /// Ratio to k sliding log-linearly from 10 at k = 5,000 to 5 at
    /// k = 100,000, clamped outside that range.
    Auto,
}

impl NCand {
    pub fn resolve(self, k: usize) -> usize {
        match self {
            NCand::Fixed(n) => n,
            NCand::Auto => {
                let t = ((k.max(1) as f64).ln() - 5_000f64.ln()) / (100_000f64.ln() - 5_000f64.ln());
                let ratio = 10.0 - 5.0 * t.clamp(0.0, 1.0);
                (k as f64 * ratio).round() as usize
            }
        }
    }
}

impl FromStr for NCand {
    type Err = BbcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "auto" => Ok(NCand::Auto),
            v => parse_num(v).map(NCand::Fixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Label written to the `dataset` column.
    pub dataset: String,
    /// Vector file, or `None` for a synthetic corpus.
    pub data: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub synth_distribution: Distribution,
    pub synth_n: usize,
    pub synth_d: usize,
    pub synth_queries: usize,
    pub metric: Metric,
    pub n_cluster: Option<usize>,
    pub iterations: usize,
    pub pq_sub_dim: usize,
    pub pq_bits: u32,
    pub bq_levels: usize,
    pub index: Option<PathBuf>,
    /// Ground-truth stem: `<gt>.ibin` and `<gt>.fbin`.
    pub gt: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Vec<usize>,
    pub n_probe: Vec<usize>,
    pub n_cand: Vec<NCand>,
    pub collector: Vec<CollectorKind>,
    pub pipeline: Vec<Pipeline>,
    pub repetitions: usize,
    pub workers: usize,
    pub l1_bytes: Option<usize>,
    pub seed: u64,
    /// Synthetic stream length for the collector benchmark.
    pub stream_len: usize,
    pub cluster_size: usize,
    pub warmup: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: "synth".into(),
            data: None,
            queries: None,
            synth_distribution: Distribution::Gaussian,
            synth_n: 100_000,
            synth_d: 128,
            synth_queries: 100,
            metric: Metric::Euclidean,
            n_cluster: None,
            iterations: 25,
            pq_sub_dim: crate::quant::DEFAULT_SUB_DIM,
            pq_bits: crate::quant::DEFAULT_BITS,
            bq_levels: crate::quant::DEFAULT_LEVELS,
            index: None,
            gt: None,
            out: None,
            k: vec![100],
            n_probe: vec![16],
            n_cand: vec![NCand::Auto],
            collector: vec![CollectorKind::BinaryHeap],
            pipeline: vec![Pipeline::IvfFlat],
            repetitions: 5,
            workers: 1,
            l1_bytes: None,
            seed: 42,
            stream_len: 2_000_000,
            cluster_size: 2_000,
            warmup: true,
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T> {
    let cleaned: String = v.trim().chars().filter(|&c| c != '_').collect();
    cleaned
        .parse()
        .map_err(|_| BbcError::InvalidParameter(format!("bad number '{v}'")))
}

fn parse_list<T, F>(v: &str, f: F) -> Result<Vec<T>>
where
    F: Fn(&str) -> Result<T>,
{
    let items = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return invalid(format!("empty list '{v}'"));
    }
    Ok(items)
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        other => invalid(format!("bad boolean '{other}'")),
    }
}

fn optional_path(v: &str) -> Option<PathBuf> {
    match v.trim() {
        "" | "synth" => None,
        p => Some(PathBuf::from(p)),
    }
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = v.to_string(),
            "data" => self.data = optional_path(v),
            "queries" => self.queries = optional_path(v),
            "synth_distribution" => self.synth_distribution = v.parse()?,
            "synth_n" => self.synth_n = parse_num(v)?,
            "synth_d" => self.synth_d = parse_num(v)?,
            "synth_queries" => self.synth_queries = parse_num(v)?,
            "metric" => self.metric = v.parse()?,
            "n_cluster" => {
                self.n_cluster = match v {
                    "auto" => None,
                    _ => Some(parse_num(v)?),
                }
            }
            "iterations" => self.iterations = parse_num(v)?,
            "pq_sub_dim" => self.pq_sub_dim = parse_num(v)?,
            "pq_bits" => self.pq_bits = parse_num(v)?,
            "bq_levels" => self.bq_levels = parse_num(v)?,
            "index" => self.index = optional_path(v),
            "gt" => self.gt = optional_path(v),
            "out" => self.out = optional_path(v),
            "k" => self.k = parse_list(v, parse_num)?,
            "n_probe" => self.n_probe = parse_list(v, parse_num)?,
            "n_cand" => self.n_cand = parse_list(v, str::parse)?,
            "collector" => self.collector = parse_list(v, str::parse)?,
            "pipeline" => self.pipeline = parse_list(v, str::parse)?,
            "repetitions" => self.repetitions = parse_num(v)?,
            "workers" => self.workers = parse_num(v)?,
            "l1_bytes" => {
                self.l1_bytes = match v {
                    "auto" => None,
                    _ => Some(parse_num(v)?),
                }
            }
            "seed" => self.seed = parse_num(v)?,
            "stream_len" => self.stream_len = parse_num(v)?,
            "cluster_size" => self.cluster_size = parse_num(v)?,
            "warmup" => self.warmup = parse_bool(v)?,
            other => return invalid(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return invalid(format!("line {}: expected 'key = value'", lineno + 1));
            };
            self.set(key, value)
                .map_err(|e| BbcError::InvalidParameter(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.n_probe.is_empty() || self.n_cand.is_empty() {
            return invalid("sweep lists must be non-empty");
        }
        if self.collector.is_empty() || self.pipeline.is_empty() {
            return invalid("collector and pipeline lists must be non-empty");
        }
        if self.k.contains(&0) {
            return invalid("k must be positive");
        }
        if self.workers == 0 || self.repetitions == 0 {
            return invalid("workers and repetitions must be positive");
        }
        Ok(())
    }

    pub fn k_max(&self) -> usize {
        self.k.iter().copied().max().unwrap_or(0)
    }
}
