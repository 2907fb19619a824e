use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bbc_core::bench::{
    build_index, collector_sweep, ground_truth, l1_bytes_from_env, load_corpus, rerank_sweep, search_sweep, write_csv,
    CsvRecord, ExperimentConfig, RerankRecord,
};
use bbc_core::dataset::{read_dataset, synth_queries, write_vectors, Dataset, GroundTruth, VecFormat};
use bbc_core::ivf::IvfIndex;
use bbc_core::BbcError;
use clap::{Args, Parser, Subcommand};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;

/// Bucket-based result collection for large-k ANN search.
#[derive(Parser)]
#[command(name = "bbc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an IVF index with PQ and bounded codes and save it.
    Build(Opts),
    /// Write brute-force ground truth (`<out>.ibin`, `<out>.fbin`) at the largest k.
    Gt(Opts),
    /// Run the search sweep and emit one CSV row per parameter cell.
    Search(Opts),
    /// Time every collector kind on a synthetic candidate stream.
    BenchCollector(Opts),
    /// Report re-ranked object counts and times per bounded pipeline.
    BenchRerank(Opts),
    /// Write a synthetic corpus and query set as fbin files.
    Synth(Opts),
}

/// Every flag is a config key; flags override the `--config` file.
#[derive(Args, Debug, Default, Clone)]
struct Opts {
    /// `key = value` experiment manifest.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    queries: Option<String>,
    #[arg(long)]
    index: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Ground-truth stem.
    #[arg(long)]
    gt: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    k: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    n_probe: Option<String>,
    /// Comma-separated list; `auto` derives the pool from k.
    #[arg(long)]
    n_cand: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    pipeline: Option<String>,
    /// Comma-separated list.
    #[arg(long)]
    collector: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    repetitions: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    /// Any other config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<BbcError> for Failure {
    fn from(e: BbcError) -> Self {
        let code = match e {
            BbcError::InvalidParameter(_) | BbcError::Unsupported(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        BbcError::from(e).into()
    }
}

type CliResult<T> = Result<T, Failure>;

fn config(opts: &Opts) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    let flags = [
        ("data", &opts.data),
        ("queries", &opts.queries),
        ("index", &opts.index),
        ("out", &opts.out),
        ("gt", &opts.gt),
        ("k", &opts.k),
        ("n_probe", &opts.n_probe),
        ("n_cand", &opts.n_cand),
        ("pipeline", &opts.pipeline),
        ("collector", &opts.collector),
        ("workers", &opts.workers),
        ("seed", &opts.seed),
        ("repetitions", &opts.repetitions),
        ("metric", &opts.metric),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    for pair in &opts.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    for path in [&cfg.data, &cfg.queries].into_iter().flatten() {
        require_file(path)?;
    }
    Ok(cfg)
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("no such file: {}", path.display())))
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
    value
        .as_ref()
        .ok_or_else(|| Failure::usage(format!("--{flag} is required")))
}

/// Creates the parent directory of an output path.
fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(std::fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn gt_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.display();
    (PathBuf::from(format!("{s}.ibin")), PathBuf::from(format!("{s}.fbin")))
}

fn l1_bytes(cfg: &ExperimentConfig) -> CliResult<usize> {
    match cfg.l1_bytes {
        Some(b) => Ok(b),
        None => Ok(l1_bytes_from_env()?),
    }
}

fn load_queries(cfg: &ExperimentConfig, d: usize) -> CliResult<Dataset> {
    let queries = match &cfg.queries {
        Some(p) => read_dataset(p)?,
        None => synth_queries(cfg.synth_queries, d, cfg.synth_distribution, cfg.seed)?,
    };
    if queries.d != d {
        return Err(BbcError::DimensionMismatch {
            expected: d,
            actual: queries.d,
        }
        .into());
    }
    Ok(queries)
}

fn load_index(cfg: &ExperimentConfig) -> CliResult<IvfIndex> {
    let path = required(&cfg.index, "index")?;
    require_file(path)?;
    Ok(IvfIndex::load(path)?)
}

fn load_truth(cfg: &ExperimentConfig, queries: &Dataset) -> CliResult<GroundTruth> {
    let (ids, dists) = gt_paths(required(&cfg.gt, "gt")?);
    require_file(&ids)?;
    require_file(&dists)?;
    let truth = GroundTruth::load(&ids, &dists)?;
    if truth.num_queries() != queries.n || truth.k < cfg.k_max() {
        return Err(Failure {
            code: EXIT_DATA,
            message: format!(
                "ground truth holds {} queries at k={}, need {} at k={}",
                truth.num_queries(),
                truth.k,
                queries.n,
                cfg.k_max()
            ),
        });
    }
    Ok(truth)
}

fn emit_csv<T: CsvRecord>(cfg: &ExperimentConfig, rows: &[T]) -> CliResult<()> {
    match &cfg.out {
        Some(path) => {
            ensure_parent(path)?;
            write_csv(BufWriter::new(File::create(path)?), rows)?;
            log::info!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_csv(&mut lock, rows)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn cmd_build(cfg: &ExperimentConfig) -> CliResult<()> {
    let path = required(&cfg.index, "index")?.clone();
    let (data, _) = load_corpus(cfg)?;
    let t = Instant::now();
    let index = build_index(cfg, &data)?;
    ensure_parent(&path)?;
    index.save(&path)?;
    log::info!(
        "built n={} d={} n_cluster={} in {:.1}s -> {}",
        index.len(),
        index.d(),
        index.n_cluster(),
        t.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(())
}

fn cmd_gt(cfg: &ExperimentConfig) -> CliResult<()> {
    let stem = cfg
        .out
        .as_ref()
        .or(cfg.gt.as_ref())
        .ok_or_else(|| Failure::usage("--out (or --gt) is required"))?;
    let (data, queries) = load_corpus(cfg)?;
    let truth = ground_truth(cfg, &data, &queries)?;
    let (ids, dists) = gt_paths(stem);
    ensure_parent(&ids)?;
    truth.save(&ids, &dists)?;
    log::info!(
        "ground truth for {} queries at k={} -> {}",
        queries.n,
        truth.k,
        ids.display()
    );
    Ok(())
}

fn cmd_search(cfg: &ExperimentConfig) -> CliResult<()> {
    let index = load_index(cfg)?;
    let queries = load_queries(cfg, index.d())?;
    let truth = load_truth(cfg, &queries)?;
    let rows = search_sweep(cfg, &index, &queries, &truth, l1_bytes(cfg)?)?;
    emit_csv(cfg, &rows)
}

fn cmd_bench_collector(cfg: &ExperimentConfig) -> CliResult<()> {
    let rows = collector_sweep(cfg, l1_bytes(cfg)?)?;
    emit_csv(cfg, &rows)
}

/// Logs any (k, n_probe) group where the bounded pipelines' mean counts are
/// out of order.
fn check_rerank_order(rows: &[RerankRecord]) {
    let mean = |pipeline: &str, k: usize, n_probe: usize| {
        rows.iter()
            .find(|r| r.pipeline == pipeline && r.k == k && r.n_probe == n_probe)
            .map(|r| r.mean_reranked)
    };
    for r in rows.iter().filter(|r| r.pipeline == "ivf-bq") {
        if let (Some(base), Some(bbc), Some(min)) = (
            Some(r.mean_reranked),
            mean("ivf-bq-bbc", r.k, r.n_probe),
            mean("ivf-bq-min", r.k, r.n_probe),
        ) {
            if !(min <= bbc && bbc <= base) {
                log::warn!(
                    "k={} n_probe={}: re-rank means out of order (min {min:.1}, bbc {bbc:.1}, baseline {base:.1})",
                    r.k,
                    r.n_probe
                );
            }
        }
    }
}

fn cmd_bench_rerank(cfg: &ExperimentConfig) -> CliResult<()> {
    let index = load_index(cfg)?;
    let queries = load_queries(cfg, index.d())?;
    let truth = load_truth(cfg, &queries)?;
    let rows = rerank_sweep(cfg, &index, &queries, &truth, l1_bytes(cfg)?)?;
    check_rerank_order(&rows);
    emit_csv(cfg, &rows)
}

fn cmd_synth(opts: &Opts) -> CliResult<()> {
    // outputs, so they must not be checked for existence
    let data_out = opts.data.clone().ok_or_else(|| Failure::usage("--data is required"))?;
    let queries_out = opts
        .queries
        .clone()
        .ok_or_else(|| Failure::usage("--queries is required"))?;
    let stripped = Opts {
        data: None,
        queries: None,
        ..opts.clone()
    };
    let cfg = config(&stripped)?;
    let (data, queries) = load_corpus(&cfg)?;
    ensure_parent(Path::new(&data_out))?;
    ensure_parent(Path::new(&queries_out))?;
    write_vectors(&data, Path::new(&data_out), format_of(&data_out)?)?;
    write_vectors(&queries, Path::new(&queries_out), format_of(&queries_out)?)?;
    log::info!(
        "wrote {}x{} to {data_out} and {} queries to {queries_out}",
        data.n,
        data.d,
        queries.n
    );
    Ok(())
}

fn format_of(path: &str) -> CliResult<VecFormat> {
    match VecFormat::from_path(Path::new(path)) {
        Some(f @ (VecFormat::Fbin | VecFormat::Fvecs)) => Ok(f),
        _ => Err(Failure::usage(format!("{path}: output must end in .fbin or .fvecs"))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Build(o) => cmd_build(&config(o)?),
        Command::Gt(o) => cmd_gt(&config(o)?),
        Command::Search(o) => cmd_search(&config(o)?),
        Command::BenchCollector(o) => cmd_bench_collector(&config(o)?),
        Command::BenchRerank(o) => cmd_bench_rerank(&config(o)?),
        Command::Synth(o) => cmd_synth(o),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
