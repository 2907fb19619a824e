//! Python module `bbc`: index build and search, the bucket result buffer, and
//! ground-truth helpers. Vectors cross the boundary as lists of floats.

use std::path::PathBuf;

use bbc_core::bbc::{build_codebook, select_num_buckets, BucketCodebook, ResultBuffer};
use bbc_core::collectors::CollectorKind;
use bbc_core::dataset::{brute_force_topk, Dataset};
use bbc_core::eval;
use bbc_core::ivf::{IvfIndex, IvfParams};
use bbc_core::search::{self, Pipeline, SearchParams};
use bbc_core::{BbcError, Candidate, Metric, ResultSet};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: BbcError) -> PyErr {
    match e {
        BbcError::Io(io) => PyIOError::new_err(io.to_string()),
        BbcError::Unsupported(m) => PyRuntimeError::new_err(m),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f32>>) -> PyResult<Dataset> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("all rows must have the same length"));
    }
    let n = rows.len();
    Dataset::new(n, d, rows.concat()).map_err(py_err)
}

fn split(res: &ResultSet) -> (Vec<u32>, Vec<f32>) {
    res.items.iter().map(|c| (c.id, c.dist)).unzip()
}

/// Per-query counters returned next to every search result.
#[pyclass(name = "QueryStats", get_all, frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyQueryStats {
    scanned_objects: usize,
    reranked_count: usize,
    scan_seconds: f64,
    collector_seconds: f64,
    rerank_seconds: f64,
    final_tau: Option<usize>,
    num_buckets: usize,
    pool_short: bool,
}

#[pymethods]
impl PyQueryStats {
    fn __repr__(&self) -> String {
        format!(
            "QueryStats(scanned_objects={}, reranked_count={}, final_tau={})",
            self.scanned_objects,
            self.reranked_count,
            self.final_tau.map_or("None".to_string(), |t| t.to_string())
        )
    }
}

/// IVF index holding raw vectors plus PQ and bounded codes.
#[pyclass(name = "Index", frozen)]
struct PyIndex {
    inner: IvfIndex,
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    #[pyo3(signature = (data, metric = "euclidean", n_cluster = None, seed = 42))]
    fn build(data: Vec<Vec<f32>>, metric: &str, n_cluster: Option<usize>, seed: u64) -> PyResult<Self> {
        let ds = matrix(data)?;
        let metric: Metric = metric.parse().map_err(py_err)?;
        let params = IvfParams {
            n_cluster,
            seed,
            ..Default::default()
        };
        let mut inner = IvfIndex::build(&ds, metric, params).map_err(py_err)?;
        let sub_dim = if ds.d % 4 == 0 { 4 } else { 1 };
        inner.train_pq(sub_dim, 4, seed).map_err(py_err)?;
        inner.train_bq(256).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: IvfIndex::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn n_cluster(&self) -> usize {
        self.inner.n_cluster()
    }

    #[getter]
    fn metric(&self) -> &'static str {
        self.inner.metric().as_str()
    }

    /// Returns `(ids, distances, stats)` sorted nearest first.
    #[pyo3(signature = (query, k, n_probe, pipeline = "ivf-flat", n_cand = None, collector = "binary-heap"))]
    fn search(
        &self,
        py: Python<'_>,
        query: Vec<f32>,
        k: usize,
        n_probe: usize,
        pipeline: &str,
        n_cand: Option<usize>,
        collector: &str,
    ) -> PyResult<(Vec<u32>, Vec<f32>, PyQueryStats)> {
        let pipeline: Pipeline = pipeline.parse().map_err(py_err)?;
        let collector: CollectorKind = collector.parse().map_err(py_err)?;
        let p = SearchParams {
            n_cand: n_cand.unwrap_or(k),
            collector,
            ..SearchParams::new(pipeline, k, n_probe)
        };
        let (res, s) = py.detach(|| search::search(&self.inner, &query, &p)).map_err(py_err)?;
        let (ids, dists) = split(&res.sorted());
        let stats = PyQueryStats {
            scanned_objects: s.scanned_objects,
            reranked_count: s.reranked_count,
            scan_seconds: s.scan_seconds,
            collector_seconds: s.collector_seconds,
            rerank_seconds: s.rerank_seconds,
            final_tau: s.final_tau,
            num_buckets: s.num_buckets,
            pool_short: s.pool_short,
        };
        Ok((ids, dists, stats))
    }
}

/// Equal-depth bucket codebook over a distance sample.
#[pyclass(name = "Codebook", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyCodebook {
    inner: BucketCodebook,
}

#[pymethods]
impl PyCodebook {
    #[new]
    fn new(sample: Vec<f32>, k: usize, m: usize) -> PyResult<Self> {
        Ok(Self {
            inner: build_codebook(&sample, k, m).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_buckets(&self) -> usize {
        self.inner.num_buckets()
    }

    #[getter]
    fn boundaries(&self) -> Vec<f32> {
        self.inner.boundaries().to_vec()
    }

    fn assign(&self, dist: f32) -> PyResult<usize> {
        self.inner.try_assign(dist).map_err(py_err)
    }
}

/// Bucket-based top-k collector.
#[pyclass(name = "ResultBuffer")]
struct PyResultBuffer {
    inner: ResultBuffer,
}

#[pymethods]
impl PyResultBuffer {
    #[new]
    fn new(codebook: &PyCodebook, k: usize) -> Self {
        Self {
            inner: ResultBuffer::new(codebook.inner.clone(), k),
        }
    }

    /// Appends unless the distance falls past the threshold bucket.
    fn push(&mut self, id: u32, dist: f32) -> PyResult<bool> {
        if dist.is_nan() {
            return Err(py_err(BbcError::NanDistance));
        }
        Ok(self.inner.push(id, dist))
    }

    fn extend(&mut self, ids: Vec<u32>, dists: Vec<f32>) -> PyResult<usize> {
        if ids.len() != dists.len() {
            return Err(PyValueError::new_err("ids and dists differ in length"));
        }
        let mut accepted = 0;
        for (id, d) in ids.into_iter().zip(dists) {
            accepted += usize::from(self.push(id, d)?);
        }
        Ok(accepted)
    }

    /// Refreshes the threshold bucket; returns it, or None while unbounded.
    fn update(&mut self) -> Option<usize> {
        self.inner.update()
    }

    #[getter]
    fn threshold_bucket(&self) -> Option<usize> {
        self.inner.threshold_bucket()
    }

    #[getter]
    fn relaxed_threshold(&self) -> f32 {
        self.inner.relaxed_threshold()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// The k smallest `(ids, distances)`, nearest first.
    fn collect(&mut self) -> (Vec<u32>, Vec<f32>) {
        split(&self.inner.collect().sorted())
    }
}

#[pyfunction]
fn num_buckets(l1_bytes: usize, n_sub: usize, bits: u32) -> PyResult<usize> {
    select_num_buckets(l1_bytes, n_sub, bits).map_err(py_err)
}

/// Exact top-k of every query: `(ids, distances)` as lists of rows.
#[pyfunction]
#[pyo3(signature = (data, queries, k, metric = "euclidean"))]
fn brute_force(
    py: Python<'_>,
    data: Vec<Vec<f32>>,
    queries: Vec<Vec<f32>>,
    k: usize,
    metric: &str,
) -> PyResult<(Vec<Vec<u32>>, Vec<Vec<f32>>)> {
    let metric: Metric = metric.parse().map_err(py_err)?;
    let (data, queries) = (matrix(data)?, matrix(queries)?);
    let gt = py
        .detach(|| brute_force_topk(&data, &queries, k, metric))
        .map_err(py_err)?;
    Ok((0..gt.num_queries())
        .map(|q| (gt.row_ids(q).to_vec(), gt.row_dists(q).to_vec()))
        .unzip())
}

/// Recall of retrieved ids against the true ids and distances.
#[pyfunction]
fn recall_at_k(
    retrieved: Vec<u32>,
    retrieved_dists: Vec<f32>,
    truth: Vec<u32>,
    truth_dists: Vec<f32>,
) -> PyResult<f64> {
    let set = |ids: Vec<u32>, dists: Vec<f32>| -> PyResult<ResultSet> {
        if ids.len() != dists.len() {
            return Err(PyValueError::new_err("ids and distances differ in length"));
        }
        let items: Vec<Candidate> = ids.into_iter().zip(dists).map(|(i, d)| Candidate::new(i, d)).collect();
        Ok(ResultSet::new(items.len(), items))
    };
    eval::recall_at_k(&set(retrieved, retrieved_dists)?, &set(truth, truth_dists)?).map_err(py_err)
}

#[pymodule]
fn bbc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIndex>()?;
    m.add_class::<PyQueryStats>()?;
    m.add_class::<PyCodebook>()?;
    m.add_class::<PyResultBuffer>()?;
    m.add_function(wrap_pyfunction!(num_buckets, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add(
        "PIPELINES",
        Pipeline::ALL.iter().map(|p| p.as_str()).collect::<Vec<_>>(),
    )?;
    m.add(
        "COLLECTORS",
        CollectorKind::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
