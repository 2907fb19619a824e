//! Experiment driver: query batches, parameter sweeps, and CSV records.

mod config;

use std::io::{Read, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, NCand};

use crate::bbc::{select_num_buckets, DEFAULT_L1_BYTES};
use crate::collectors::{bench_collector, run_stream, CollectorKind, StreamSpec};
use crate::dataset::{brute_force_topk, read_dataset, synth_dataset, synth_queries, Dataset, GroundTruth};
use crate::error::{invalid, BbcError, Result};
use crate::eval::{recall_at_k, relative_error};
use crate::ivf::{IvfIndex, IvfParams};
use crate::metric::{distance_f64, ResultSet};
use crate::search::{search, Pipeline, QueryStats, SearchParams};

/// Environment override for the L1 data cache size used to pick the bucket
/// count.
pub const L1_ENV: &str = "BBC_L1_BYTES";

/// L1 size from `BBC_L1_BYTES`, falling back to the default.
pub fn l1_bytes_from_env() -> Result<usize> {
    match std::env::var(L1_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| BbcError::InvalidParameter(format!("{L1_ENV}='{v}' is not a byte count"))),
        Err(_) => Ok(DEFAULT_L1_BYTES),
    }
}

/// CSV row types with a fixed column order.
pub trait CsvRecord: Serialize + DeserializeOwned {
    const HEADER: &'static [&'static str];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub pipeline: String,
    pub collector: String,
    pub k: usize,
    pub n_probe: usize,
    pub n_cand: usize,
    pub recall: f64,
    pub relative_error: f64,
    pub qps: f64,
    pub mean_reranked: f64,
    pub mean_collector_ms: f64,
    pub mean_rerank_ms: f64,
    pub wall_seconds: f64,
}

impl CsvRecord for RunRecord {
    const HEADER: &'static [&'static str] = &[
        "dataset",
        "pipeline",
        "collector",
        "k",
        "n_probe",
        "n_cand",
        "recall",
        "relative_error",
        "qps",
        "mean_reranked",
        "mean_collector_ms",
        "mean_rerank_ms",
        "wall_seconds",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectorRecord {
    pub collector: String,
    pub k: usize,
    pub stream_len: usize,
    pub num_buckets: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl CsvRecord for CollectorRecord {
    const HEADER: &'static [&'static str] = &[
        "collector",
        "k",
        "stream_len",
        "num_buckets",
        "repetitions",
        "median_ms",
        "min_ms",
        "max_ms",
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRecord {
    pub dataset: String,
    pub pipeline: String,
    pub k: usize,
    pub n_probe: usize,
    pub n_cand: usize,
    pub queries: usize,
    pub mean_scanned: f64,
    pub mean_reranked: f64,
    pub mean_rerank_ms: f64,
    pub recall: f64,
}

impl CsvRecord for RerankRecord {
    const HEADER: &'static [&'static str] = &[
        "dataset",
        "pipeline",
        "k",
        "n_probe",
        "n_cand",
        "queries",
        "mean_scanned",
        "mean_reranked",
        "mean_rerank_ms",
        "recall",
    ];
}

/// Writes a header row and then every record.
pub fn write_csv<W: Write, T: CsvRecord>(out: W, records: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(T::HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses CSV produced by [`write_csv`], rejecting a different header.
pub fn read_csv<R: Read, T: CsvRecord>(input: R) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if !header.iter().eq(T::HEADER.iter().copied()) {
        return invalid(format!(
            "unexpected CSV header: {}",
            header.iter().collect::<Vec<_>>().join(",")
        ));
    }
    r.deserialize().map(|row| row.map_err(BbcError::from)).collect()
}

/// Data and queries named by the config: files when given, synthetic
/// otherwise.
pub fn load_corpus(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let data = match &cfg.data {
        Some(p) => read_dataset(p)?,
        None => synth_dataset(cfg.synth_n, cfg.synth_d, cfg.synth_distribution, cfg.seed)?,
    };
    let queries = match &cfg.queries {
        Some(p) => read_dataset(p)?,
        None => synth_queries(cfg.synth_queries, data.d, cfg.synth_distribution, cfg.seed)?,
    };
    if queries.d != data.d {
        return Err(BbcError::DimensionMismatch {
            expected: data.d,
            actual: queries.d,
        });
    }
    Ok((data, queries))
}

/// Builds the IVF index and attaches both PQ and bounded codes.
pub fn build_index(cfg: &ExperimentConfig, data: &Dataset) -> Result<IvfIndex> {
    let params = IvfParams {
        n_cluster: cfg.n_cluster,
        iterations: cfg.iterations,
        seed: cfg.seed,
        ..Default::default()
    };
    let mut index = IvfIndex::build(data, cfg.metric, params)?;
    index.train_pq(cfg.pq_sub_dim, cfg.pq_bits, cfg.seed)?;
    index.train_bq(cfg.bq_levels)?;
    Ok(index)
}

/// Ground truth at the largest k of the sweep.
pub fn ground_truth(cfg: &ExperimentConfig, data: &Dataset, queries: &Dataset) -> Result<GroundTruth> {
    let k = cfg.k_max();
    if k > data.n {
        return invalid(format!("k_max={k} exceeds the dataset size {}", data.n));
    }
    brute_force_topk(data, queries, k, cfg.metric)
}

/// Per-query outcomes of one batch plus its wall time.
#[derive(Debug, Clone)]
pub struct BatchRun {
    pub results: Vec<ResultSet>,
    pub stats: Vec<QueryStats>,
    pub wall_seconds: f64,
}

/// Runs every query through `p` on a pool of `workers` threads. Results are
/// in query order regardless of the worker count.
pub fn run_batch(index: &IvfIndex, queries: &Dataset, p: &SearchParams, workers: usize) -> Result<BatchRun> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BbcError::InvalidParameter(format!("worker pool: {e}")))?;
    let start = Instant::now();
    let outcomes: Result<Vec<(ResultSet, QueryStats)>> = pool.install(|| {
        (0..queries.n)
            .into_par_iter()
            .map(|i| search(index, queries.row(i), p))
            .collect()
    });
    let wall_seconds = start.elapsed().as_secs_f64();
    let (results, stats) = outcomes?.into_iter().unzip();
    Ok(BatchRun {
        results,
        stats,
        wall_seconds,
    })
}

/// Mean recall and relative error of a batch against ground truth.
pub fn accuracy(
    index: &IvfIndex,
    queries: &Dataset,
    truth: &GroundTruth,
    p: &SearchParams,
    run: &BatchRun,
) -> Result<(f64, f64)> {
    if truth.k < p.k || truth.num_queries() < queries.n {
        return invalid(format!(
            "ground truth covers k={} for {} queries; need k={} for {}",
            truth.k,
            truth.num_queries(),
            p.k,
            queries.n
        ));
    }
    let (mut recall, mut rel) = (0.0, 0.0);
    for (qi, res) in run.results.iter().enumerate() {
        let gt = truth.result(qi, p.k);
        recall += recall_at_k(res, &gt)?;
        // same distance routine as the ground truth, so exact results score 0
        let q = queries.row(qi);
        let mut dists = res
            .items
            .iter()
            .map(|c| distance_f64(q, index.vector(c.id), index.metric()).map(|d| d as f32))
            .collect::<Result<Vec<f32>>>()?;
        dists.sort_by(f32::total_cmp);
        rel += relative_error(&dists, truth.row_dists(qi))?.value;
    }
    let n = queries.n.max(1) as f64;
    Ok((recall / n, rel / n))
}

/// Collector column for pipelines with a built-in collector.
pub fn collector_label(p: &SearchParams) -> &'static str {
    match p.pipeline {
        Pipeline::IvfFlat | Pipeline::IvfPq | Pipeline::IvfBq => p.collector.as_str(),
        Pipeline::IvfPqBbc | Pipeline::IvfBqBbc => CollectorKind::BucketBuffer.as_str(),
        Pipeline::IvfBqMin => "two-heap",
        Pipeline::BruteForce => "full-sort",
    }
}

/// Warm-up pass (optional), timed pass, and one summary record.
pub fn run_cell(
    dataset: &str,
    index: &IvfIndex,
    queries: &Dataset,
    truth: &GroundTruth,
    p: &SearchParams,
    workers: usize,
    warmup: bool,
) -> Result<(RunRecord, BatchRun)> {
    if warmup {
        run_batch(index, queries, p, workers)?;
    }
    let run = run_batch(index, queries, p, workers)?;
    let (recall, relative_error) = accuracy(index, queries, truth, p, &run)?;
    let n = queries.n.max(1) as f64;
    let mean = |f: fn(&QueryStats) -> f64| run.stats.iter().map(f).sum::<f64>() / n;
    let record = RunRecord {
        dataset: dataset.to_string(),
        pipeline: p.pipeline.to_string(),
        collector: collector_label(p).to_string(),
        k: p.k,
        n_probe: p.n_probe,
        n_cand: if p.pipeline.uses_pq() { p.n_cand } else { 0 },
        recall,
        relative_error,
        qps: if run.wall_seconds > 0.0 {
            queries.n as f64 / run.wall_seconds
        } else {
            0.0
        },
        mean_reranked: mean(|s| s.reranked_count as f64),
        mean_collector_ms: mean(|s| s.collector_seconds * 1e3),
        mean_rerank_ms: mean(|s| s.rerank_seconds * 1e3),
        wall_seconds: run.wall_seconds,
    };
    Ok((record, run))
}

/// Cross product of the sweep lists. Collector kinds only multiply the
/// pipelines that take one, pool sizes only the PQ pipelines, and the
/// brute-force pipeline appears once per k. Cells with `n_probe` beyond the
/// index are skipped with a warning.
pub fn sweep_cells(cfg: &ExperimentConfig, index: &IvfIndex, l1_bytes: usize) -> Vec<SearchParams> {
    let mut cells = Vec::new();
    for &pipeline in &cfg.pipeline {
        let kinds: Vec<CollectorKind> = match pipeline {
            Pipeline::IvfFlat | Pipeline::IvfPq | Pipeline::IvfBq => cfg.collector.clone(),
            _ => vec![CollectorKind::BucketBuffer],
        };
        for &k in &cfg.k {
            if pipeline == Pipeline::BruteForce {
                cells.push(SearchParams {
                    l1_bytes,
                    ..SearchParams::new(pipeline, k, 0)
                });
                continue;
            }
            for &n_probe in &cfg.n_probe {
                if n_probe == 0 || n_probe > index.n_cluster() {
                    log::warn!(
                        "skipping {pipeline} k={k}: n_probe={n_probe} outside 1..={}",
                        index.n_cluster()
                    );
                    continue;
                }
                let pools: Vec<usize> = if pipeline.uses_pq() {
                    cfg.n_cand.iter().map(|c| c.resolve(k)).collect()
                } else {
                    vec![k]
                };
                for &n_cand in &pools {
                    if n_cand < k {
                        log::warn!("skipping {pipeline} k={k}: n_cand={n_cand} below k");
                        continue;
                    }
                    for &collector in &kinds {
                        cells.push(SearchParams {
                            k,
                            n_probe,
                            n_cand,
                            collector,
                            pipeline,
                            l1_bytes,
                            ..Default::default()
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Runs every sweep cell; records come out in sweep order.
pub fn search_sweep(
    cfg: &ExperimentConfig,
    index: &IvfIndex,
    queries: &Dataset,
    truth: &GroundTruth,
    l1_bytes: usize,
) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for p in sweep_cells(cfg, index, l1_bytes) {
        let (rec, _) = run_cell(&cfg.dataset, index, queries, truth, &p, cfg.workers, cfg.warmup)?;
        log::info!(
            "{} {} k={} n_probe={} n_cand={} recall={:.4} qps={:.1}",
            rec.pipeline,
            rec.collector,
            rec.k,
            rec.n_probe,
            rec.n_cand,
            rec.recall,
            rec.qps
        );
        out.push(rec);
    }
    Ok(out)
}

/// Isolated collector timings over one synthetic stream per configured
/// length. Every kind must return the same id set as a full sort before
/// anything is timed. Rows are sorted by (collector, k).
pub fn collector_sweep(cfg: &ExperimentConfig, l1_bytes: usize) -> Result<Vec<CollectorRecord>> {
    let spec = StreamSpec {
        n_items: cfg.stream_len,
        cluster_size: cfg.cluster_size,
        seed: cfg.seed,
        ..Default::default()
    };
    let stream = spec.generate()?;
    let m = select_num_buckets(l1_bytes, cfg.synth_d.div_ceil(cfg.pq_sub_dim), cfg.pq_bits)?;
    let mut out = Vec::new();
    for &k in &cfg.k {
        let mut sorted = stream.items.clone();
        let kk = k.min(sorted.len());
        if kk > 0 && kk < sorted.len() {
            sorted.select_nth_unstable_by(kk - 1, crate::metric::Candidate::cmp_key);
        }
        let mut oracle: Vec<u32> = sorted[..kk].iter().map(|c| c.id).collect();
        oracle.sort_unstable();
        for &kind in &cfg.collector {
            let mut got = run_stream(kind, &stream, k, m)?.ids();
            got.sort_unstable();
            if got != oracle {
                return Err(BbcError::InvalidParameter(format!(
                    "{kind} disagrees with the full-sort oracle at k={k}"
                )));
            }
        }
        for &kind in &cfg.collector {
            let t = bench_collector(kind, &stream, k, m, cfg.repetitions)?;
            let ms = |d: std::time::Duration| d.as_secs_f64() * 1e3;
            out.push(CollectorRecord {
                collector: kind.to_string(),
                k,
                stream_len: t.stream_len,
                num_buckets: m,
                repetitions: cfg.repetitions,
                median_ms: ms(t.median),
                min_ms: t.samples.iter().copied().map(ms).fold(f64::INFINITY, f64::min),
                max_ms: t.samples.iter().copied().map(ms).fold(0.0, f64::max),
            });
        }
    }
    out.sort_by(|a, b| a.collector.cmp(&b.collector).then(a.k.cmp(&b.k)));
    Ok(out)
}

/// Re-rank counts and times per pipeline, k, and n_probe.
pub fn rerank_sweep(
    cfg: &ExperimentConfig,
    index: &IvfIndex,
    queries: &Dataset,
    truth: &GroundTruth,
    l1_bytes: usize,
) -> Result<Vec<RerankRecord>> {
    let mut out = Vec::new();
    let mut pipelines: Vec<Pipeline> = cfg
        .pipeline
        .iter()
        .copied()
        .filter(|p| {
            matches!(
                p,
                Pipeline::IvfPq | Pipeline::IvfBq | Pipeline::IvfBqMin | Pipeline::IvfBqBbc
            )
        })
        .collect();
    if pipelines.is_empty() {
        pipelines = vec![Pipeline::IvfBq, Pipeline::IvfBqMin, Pipeline::IvfBqBbc];
    }
    let sweep = ExperimentConfig {
        pipeline: pipelines,
        collector: vec![CollectorKind::BinaryHeap],
        ..cfg.clone()
    };
    for p in sweep_cells(&sweep, index, l1_bytes) {
        if cfg.warmup {
            run_batch(index, queries, &p, cfg.workers)?;
        }
        let run = run_batch(index, queries, &p, cfg.workers)?;
        let (recall, _) = accuracy(index, queries, truth, &p, &run)?;
        let n = queries.n.max(1) as f64;
        out.push(RerankRecord {
            dataset: cfg.dataset.clone(),
            pipeline: p.pipeline.to_string(),
            k: p.k,
            n_probe: p.n_probe,
            n_cand: if p.pipeline.uses_pq() { p.n_cand } else { 0 },
            queries: queries.n,
            mean_scanned: run.stats.iter().map(|s| s.scanned_objects as f64).sum::<f64>() / n,
            mean_reranked: run.stats.iter().map(|s| s.reranked_count as f64).sum::<f64>() / n,
            mean_rerank_ms: run.stats.iter().map(|s| s.rerank_seconds * 1e3).sum::<f64>() / n,
            recall,
        });
    }
    Ok(out)
}
