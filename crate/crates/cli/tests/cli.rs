use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const RUN_HEADER: &str = "dataset,pipeline,collector,k,n_probe,n_cand,recall,relative_error,qps,mean_reranked,mean_collector_ms,mean_rerank_ms,wall_seconds";
const COLLECTOR_HEADER: &str = "collector,k,stream_len,num_buckets,repetitions,median_ms,min_ms,max_ms";
const RERANK_HEADER: &str =
    "dataset,pipeline,k,n_probe,n_cand,queries,mean_scanned,mean_reranked,mean_rerank_ms,recall";

const SYNTH: [&str; 8] = [
    "--set",
    "synth_n=4000",
    "--set",
    "synth_d=16",
    "--set",
    "synth_queries=12",
    "--set",
    "n_cluster=16",
];

fn bbc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bbc"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("spawn bbc")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bbc(dir, args);
    assert!(
        out.status.success(),
        "bbc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with(base: &[&'static str], extra: &[&'static str]) -> Vec<&'static str> {
    base.iter().chain(extra).copied().collect()
}

/// Header plus rows split on commas; no field in these schemas is quoted.
fn table(csv: &str) -> (String, Vec<Vec<String>>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap_or_default().to_string();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn col(header: &str, name: &str) -> usize {
    header.split(',').position(|h| h == name).unwrap()
}

fn num(row: &[String], i: usize) -> f64 {
    row[i].parse().unwrap()
}

/// Synthetic corpus, index and ground truth at k up to 200.
fn fixture() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(
        p,
        &with(&["synth", "--data", "base.fbin", "--queries", "q.fbin"], &SYNTH),
    );
    ok(
        p,
        &[
            "build",
            "--data",
            "base.fbin",
            "--index",
            "a.idx",
            "--set",
            "n_cluster=16",
            "--set",
            "pq_sub_dim=4",
        ],
    );
    ok(
        p,
        &[
            "gt",
            "--data",
            "base.fbin",
            "--queries",
            "q.fbin",
            "--out",
            "gt",
            "--k",
            "100,200",
        ],
    );
    dir
}

const SEARCH: [&str; 8] = [
    "search",
    "--queries",
    "q.fbin",
    "--index",
    "a.idx",
    "--gt",
    "gt",
    "--repetitions=1",
];

#[test]
fn search_csv_header_is_stable() {
    let dir = fixture();
    let csv = ok(dir.path(), &with(&SEARCH, &["--k", "100", "--n-probe", "4"]));
    let (header, rows) = table(&csv);
    assert_eq!(header, RUN_HEADER);
    assert_eq!(rows.len(), 1);
    assert!(rows.iter().all(|r| r.len() == 13));
}

#[test]
fn rebuild_and_gt_are_byte_identical() {
    let dir = fixture();
    let p = dir.path();
    ok(
        p,
        &[
            "build",
            "--data",
            "base.fbin",
            "--index",
            "b.idx",
            "--set",
            "n_cluster=16",
            "--set",
            "pq_sub_dim=4",
        ],
    );
    assert_eq!(fs::read(p.join("a.idx")).unwrap(), fs::read(p.join("b.idx")).unwrap());
    ok(
        p,
        &[
            "gt",
            "--data",
            "base.fbin",
            "--queries",
            "q.fbin",
            "--out",
            "gt2",
            "--k",
            "200",
        ],
    );
    for ext in ["ibin", "fbin"] {
        assert_eq!(
            fs::read(p.join(format!("gt.{ext}"))).unwrap(),
            fs::read(p.join(format!("gt2.{ext}"))).unwrap()
        );
    }
}

#[test]
fn search_sweep_rows_hold_their_invariants() {
    let dir = fixture();
    let csv = ok(
        dir.path(),
        &with(
            &SEARCH,
            &[
                "--k",
                "100,200",
                "--n-probe",
                "4,16,64",
                "--n-cand",
                "400",
                "--pipeline",
                "brute-force,ivf-flat,ivf-pq,ivf-pq-bbc,ivf-bq,ivf-bq-bbc,ivf-bq-min",
                "--collector",
                "binary-heap,bucket-buffer",
            ],
        ),
    );
    let (h, rows) = table(&csv);
    let (pipe, k, np, recall, rel) = (
        col(&h, "pipeline"),
        col(&h, "k"),
        col(&h, "n_probe"),
        col(&h, "recall"),
        col(&h, "relative_error"),
    );
    // n_probe 64 exceeds 16 clusters and is skipped
    assert!(rows.iter().all(|r| r[np] != "64"));
    let brute: Vec<_> = rows.iter().filter(|r| r[pipe] == "brute-force").collect();
    assert_eq!(brute.len(), 2);
    for r in brute {
        assert_eq!(num(r, recall), 1.0);
        assert_eq!(num(r, rel), 0.0);
    }
    for r in rows.iter().filter(|r| r[pipe] == "ivf-flat" && r[np] == "16") {
        assert_eq!(num(r, recall), 1.0);
    }
    for r in rows.iter().filter(|r| r[pipe] == "ivf-bq-bbc") {
        let base = rows
            .iter()
            .find(|b| b[pipe] == "ivf-bq" && b[k] == r[k] && b[np] == r[np])
            .unwrap();
        assert_eq!(num(r, recall), num(base, recall), "k={} n_probe={}", r[k], r[np]);
    }
    for r in &rows {
        assert!((0.0..=1.0).contains(&num(r, recall)));
        for c in ["qps", "mean_collector_ms", "mean_rerank_ms", "wall_seconds"] {
            assert!(num(r, col(&h, c)) >= 0.0);
        }
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = fixture();
    let cell = [
        "--k",
        "100",
        "--n-probe",
        "4",
        "--pipeline",
        "ivf-flat,ivf-bq-bbc,ivf-pq-bbc",
        "--n-cand",
        "300",
    ];
    let one = ok(dir.path(), &with(&with(&SEARCH, &cell), &["--workers", "1"]));
    let two = ok(dir.path(), &with(&with(&SEARCH, &cell), &["--workers", "2"]));
    let stable = |csv: &str| {
        let (h, rows) = table(csv);
        let keep: Vec<usize> = [
            "pipeline",
            "k",
            "n_probe",
            "n_cand",
            "recall",
            "relative_error",
            "mean_reranked",
        ]
        .iter()
        .map(|c| col(&h, c))
        .collect();
        rows.into_iter()
            .map(|r| keep.iter().map(|&i| r[i].clone()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(stable(&one), stable(&two));
}

#[test]
fn bench_rerank_orders_pipelines() {
    let dir = fixture();
    let csv = ok(
        dir.path(),
        &[
            "bench-rerank",
            "--queries",
            "q.fbin",
            "--index",
            "a.idx",
            "--gt",
            "gt",
            "--k",
            "100,200",
            "--n-probe",
            "4,16",
            "--n-cand",
            "150",
            "--pipeline",
            "ivf-pq,ivf-bq,ivf-bq-bbc,ivf-bq-min",
        ],
    );
    let (h, rows) = table(&csv);
    assert_eq!(h, RERANK_HEADER);
    let (pipe, k, np, re, sc, nc) = (
        col(&h, "pipeline"),
        col(&h, "k"),
        col(&h, "n_probe"),
        col(&h, "mean_reranked"),
        col(&h, "mean_scanned"),
        col(&h, "n_cand"),
    );
    let mean = |name: &str, kk: &str, p: &str| {
        rows.iter()
            .find(|r| r[pipe] == name && r[k] == kk && r[np] == p)
            .map(|r| num(r, re))
            .unwrap()
    };
    for kk in ["100", "200"] {
        for p in ["4", "16"] {
            let (min, bbc, base) = (
                mean("ivf-bq-min", kk, p),
                mean("ivf-bq-bbc", kk, p),
                mean("ivf-bq", kk, p),
            );
            assert!(min <= bbc && bbc <= base, "k={kk} n_probe={p}: {min} {bbc} {base}");
        }
        assert!(mean("ivf-bq", "200", "4") >= mean("ivf-bq", "100", "4"));
    }
    for r in rows.iter().filter(|r| r[pipe] == "ivf-pq") {
        assert_eq!(num(r, re), num(r, nc).min(num(r, sc)));
    }
}

#[test]
fn bench_collector_is_sorted_and_gated() {
    let dir = tempfile::tempdir().unwrap();
    let csv = ok(
        dir.path(),
        &[
            "bench-collector",
            "--k",
            "500,50",
            "--collector",
            "bucket-buffer,binary-heap,sorted-buffer",
            "--repetitions",
            "2",
            "--set",
            "stream_len=20000",
        ],
    );
    let (h, rows) = table(&csv);
    assert_eq!(h, COLLECTOR_HEADER);
    let keys: Vec<(String, usize)> = rows.iter().map(|r| (r[0].clone(), r[1].parse().unwrap())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert_eq!(rows.len(), 6);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = fixture();
    let p = dir.path();
    fs::write(
        p.join("run.conf"),
        "# sweep\nqueries = q.fbin\nindex = a.idx\ngt = gt\nk = 100\nn_probe = 4, 16\nrepetitions = 1\n",
    )
    .unwrap();
    let csv = ok(
        p,
        &["search", "--config", "run.conf", "--n-probe", "16", "--out", "runs/r.csv"],
    );
    assert!(csv.is_empty());
    let (h, rows) = table(&fs::read_to_string(p.join("runs/r.csv")).unwrap());
    assert_eq!(h, RUN_HEADER);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][col(&h, "n_probe")], "16");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let code = |args: &[&str]| bbc(p, args).status.code();
    assert_eq!(code(&["build", "--data", "missing.fbin", "--index", "x.idx"]), Some(2));
    assert_eq!(code(&["search", "--k", "abc"]), Some(2));
    assert_eq!(code(&["search", "--pipeline", "ivf-nope"]), Some(2));
    assert_eq!(code(&["nope"]), Some(2));
    assert_eq!(code(&["search", "--set", "novalue"]), Some(2));
    let out = bbc(p, &["build", "--data", "missing.fbin", "--index", "x.idx"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.fbin"));
}

#[test]
fn missing_artifacts_and_bad_data() {
    let dir = fixture();
    let p = dir.path();
    let code = |args: &[&str]| bbc(p, args).status.code();
    assert_eq!(code(&["search", "--queries", "q.fbin", "--gt", "gt"]), Some(2));
    assert_eq!(code(&["search", "--queries", "q.fbin", "--index", "a.idx"]), Some(2));
    fs::write(p.join("junk.idx"), b"not an index").unwrap();
    assert_eq!(
        code(&["search", "--queries", "q.fbin", "--index", "junk.idx", "--gt", "gt"]),
        Some(3)
    );
    // ground truth too shallow for the requested k
    assert_eq!(code(&with(&SEARCH, &["--k", "500"])), Some(3));
}
