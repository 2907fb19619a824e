use std::collections::HashSet;

use super::*;
use crate::bbc::BucketCodebook;
use crate::dataset::{synth_dataset, synth_queries, Distribution};
use crate::ivf::IvfParams;
use crate::metric::Metric;

fn fixture(metric: Metric) -> (IvfIndex, Vec<Vec<f32>>) {
    let dist = Distribution::Clustered {
        centers: 24,
        spread: 0.6,
    };
    let ds = synth_dataset(4000, 16, dist, 11).unwrap();
    let params = IvfParams {
        n_cluster: Some(16),
        seed: 5,
        ..Default::default()
    };
    let mut index = IvfIndex::build(&ds, metric, params).unwrap();
    index.train_pq(4, 4, 5).unwrap();
    index.train_bq(256).unwrap();
    let qs = synth_queries(12, 16, dist, 99).unwrap();
    let queries = qs.rows().map(<[f32]>::to_vec).collect();
    (index, queries)
}

fn id_set(r: &ResultSet) -> HashSet<u32> {
    r.items.iter().map(|c| c.id).collect()
}

fn assert_exact(index: &IvfIndex, q: &[f32], p: &SearchParams, what: &str) {
    let (res, _) = search(index, q, p).unwrap();
    let oracle = restricted_exact_topk(index, q, p.n_probe, p.k).unwrap();
    assert_eq!(id_set(&res), id_set(&oracle), "{what} k={} n_probe={}", p.k, p.n_probe);
}

#[test]
fn ivf_flat_matches_oracle_for_every_collector() {
    let (index, queries) = fixture(Metric::Euclidean);
    for kind in CollectorKind::ALL {
        for (k, n_probe) in [(1, 1), (10, 2), (150, 4), (900, 16)] {
            let p = SearchParams {
                collector: kind,
                ..SearchParams::new(Pipeline::IvfFlat, k, n_probe)
            };
            for q in &queries {
                assert_exact(&index, q, &p, kind.as_str());
            }
        }
    }
}

#[test]
fn full_probe_matches_brute_force() {
    for metric in [Metric::Euclidean, Metric::InnerProduct, Metric::Cosine] {
        let (index, queries) = fixture(metric);
        for q in &queries {
            let flat = SearchParams::new(Pipeline::IvfFlat, 50, index.n_cluster());
            let bf = SearchParams::new(Pipeline::BruteForce, 50, 0);
            let (a, _) = search(&index, q, &flat).unwrap();
            let (b, _) = search(&index, q, &bf).unwrap();
            let overlap = id_set(&a).intersection(&id_set(&b)).count();
            assert!(overlap >= 49, "{metric}: overlap {overlap}");
        }
    }
}

#[test]
fn bounded_pipelines_are_exact_over_routed_clusters() {
    for metric in [Metric::Euclidean, Metric::InnerProduct, Metric::Cosine] {
        let (index, queries) = fixture(metric);
        for (k, n_probe) in [(1, 2), (20, 3), (300, 6), (4000, 16)] {
            for pipeline in [Pipeline::IvfBq, Pipeline::IvfBqMin, Pipeline::IvfBqBbc] {
                let p = SearchParams::new(pipeline, k, n_probe);
                for q in &queries {
                    assert_exact(&index, q, &p, &format!("{metric} {pipeline}"));
                }
            }
            let p = SearchParams {
                collector: CollectorKind::BucketBuffer,
                ..SearchParams::new(Pipeline::IvfBq, k, n_probe)
            };
            for q in &queries {
                assert_exact(&index, q, &p, "ivf-bq bucket");
            }
        }
    }
}

#[test]
fn pq_pipelines_are_exact_when_the_pool_covers_the_scan() {
    let (index, queries) = fixture(Metric::Euclidean);
    for pipeline in [Pipeline::IvfPq, Pipeline::IvfPqBbc] {
        let p = SearchParams {
            n_cand: 4000,
            collector: CollectorKind::BucketBuffer,
            ..SearchParams::new(pipeline, 40, 3)
        };
        for q in &queries {
            assert_exact(&index, q, &p, pipeline.as_str());
            let (_, stats) = search(&index, q, &p).unwrap();
            assert!(stats.pool_short);
        }
    }
}

#[test]
fn pq_bbc_returns_exact_distances_of_routed_objects() {
    let (index, queries) = fixture(Metric::InnerProduct);
    let p = SearchParams {
        n_cand: 400,
        ..SearchParams::new(Pipeline::IvfPqBbc, 50, 8)
    };
    for q in &queries {
        let (res, stats) = search(&index, q, &p).unwrap();
        assert_eq!(res.len(), 50);
        assert!(stats.reranked_count <= stats.scanned_objects);
        let pq_pool = search(
            &index,
            q,
            &SearchParams {
                pipeline: Pipeline::IvfPq,
                ..p
            },
        )
        .unwrap();
        assert_eq!(pq_pool.1.reranked_count, 400);
        let qn = index.prepare_query(q).unwrap();
        let routed: HashSet<u32> = index
            .route(&qn, 8)
            .unwrap()
            .into_iter()
            .flat_map(|c| index.cluster(c).ids().to_vec())
            .collect();
        for c in &res.items {
            assert!(routed.contains(&c.id));
            assert_eq!(c.dist, exact_by_id(&index, &qn, c.id));
        }
        assert!(res.items.windows(2).all(|w| w[0].cmp_key(&w[1]).is_lt()));
    }
}

#[test]
fn pq_recall_improves_with_pool_size() {
    let (index, queries) = fixture(Metric::Euclidean);
    let recall = |n_cand: usize, pipeline: Pipeline| -> usize {
        let p = SearchParams {
            n_cand,
            ..SearchParams::new(pipeline, 20, 4)
        };
        queries
            .iter()
            .map(|q| {
                let (r, _) = search(&index, q, &p).unwrap();
                let o = restricted_exact_topk(&index, q, 4, 20).unwrap();
                id_set(&r).intersection(&id_set(&o)).count()
            })
            .sum()
    };
    for pipeline in [Pipeline::IvfPq, Pipeline::IvfPqBbc] {
        let (lo, hi) = (recall(20, pipeline), recall(400, pipeline));
        assert!(hi >= lo, "{pipeline}: {lo} -> {hi}");
        assert!(hi as f64 >= 0.95 * (20 * queries.len()) as f64, "{pipeline}: {hi}");
    }
}

#[test]
fn min_rerank_never_exceeds_the_baseline_in_aggregate() {
    let (index, queries) = fixture(Metric::Euclidean);
    for k in [10, 200] {
        let count = |pipeline: Pipeline| -> usize {
            queries
                .iter()
                .map(|q| {
                    search(&index, q, &SearchParams::new(pipeline, k, 6))
                        .unwrap()
                        .1
                        .reranked_count
                })
                .sum()
        };
        let (base, min) = (count(Pipeline::IvfBq), count(Pipeline::IvfBqMin));
        assert!(min <= base, "k={k}: min {min} > baseline {base}");
    }
}

#[test]
fn traced_ids_match_counts() {
    let (index, queries) = fixture(Metric::Euclidean);
    for pipeline in [
        Pipeline::IvfBq,
        Pipeline::IvfBqMin,
        Pipeline::IvfBqBbc,
        Pipeline::IvfPqBbc,
    ] {
        let p = SearchParams {
            trace: true,
            n_cand: 100,
            ..SearchParams::new(pipeline, 30, 5)
        };
        let (_, stats) = search(&index, &queries[0], &p).unwrap();
        assert_eq!(stats.reranked_ids.len(), stats.reranked_count);
        let unique: HashSet<u32> = stats.reranked_ids.iter().copied().collect();
        assert_eq!(unique.len(), stats.reranked_count, "{pipeline} re-ranked an id twice");
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    let (index, queries) = fixture(Metric::Euclidean);
    let q = &queries[0];
    assert!(search(&index, q, &SearchParams::new(Pipeline::IvfFlat, 0, 1)).is_err());
    assert!(search(&index, q, &SearchParams::new(Pipeline::IvfFlat, 5, 0)).is_err());
    assert!(search(&index, q, &SearchParams::new(Pipeline::IvfFlat, 5, 17)).is_err());
    let short_pool = SearchParams {
        n_cand: 4,
        ..SearchParams::new(Pipeline::IvfPq, 5, 1)
    };
    assert!(matches!(
        search(&index, q, &short_pool),
        Err(BbcError::InvalidParameter(_))
    ));
    assert!(search(&index, &q[..3], &SearchParams::new(Pipeline::IvfFlat, 5, 1)).is_err());

    let ds = synth_dataset(500, 8, Distribution::Gaussian, 1).unwrap();
    let bare = IvfIndex::build(
        &ds,
        Metric::Euclidean,
        IvfParams {
            n_cluster: Some(4),
            ..Default::default()
        },
    )
    .unwrap();
    let q = vec![0.0; 8];
    for pipeline in [Pipeline::IvfPq, Pipeline::IvfBqBbc] {
        assert!(matches!(
            search(&bare, &q, &SearchParams::new(pipeline, 5, 1)),
            Err(BbcError::Unsupported(_))
        ));
    }
}

#[test]
fn pipeline_names_round_trip() {
    for p in Pipeline::ALL {
        assert_eq!(p.as_str().parse::<Pipeline>().unwrap(), p);
    }
    assert!("ivf".parse::<Pipeline>().is_err());
}

fn unit_codebook() -> BucketCodebook {
    let b: Vec<f32> = (0..=8).map(|x| x as f32).collect();
    BucketCodebook::from_boundaries(&b).unwrap()
}

/// (id, lb, ub, exact) for a top-2 query.
const TOY: [(u32, f32, f32, f32); 6] = [
    (7, 0.2, 0.8, 0.5),
    (30, 1.1, 1.9, 1.5),
    (45, 1.2, 3.6, 3.0),
    (12, 1.4, 2.5, 2.2),
    (60, 4.2, 6.0, 5.0),
    (88, 5.5, 7.5, 6.5),
];

fn toy_exact(id: u32) -> f32 {
    TOY.iter().find(|t| t.0 == id).unwrap().3
}

fn toy_lb(id: u32) -> f32 {
    TOY.iter().find(|t| t.0 == id).unwrap().1
}

#[test]
fn bucket_rerank_resolves_only_boundary_overlaps() {
    let mut col = BoundedBbc::new(unit_codebook(), 2);
    for (id, lb, ub, _) in TOY {
        col.offer(id, lb, ub);
    }
    col.seal();
    assert_eq!(col.threshold_bucket(), Some(2));
    let mut reranked = Vec::new();
    let res = col.finish(toy_exact, toy_lb, |id| reranked.push(id));
    reranked.sort_unstable();
    assert_eq!(reranked, vec![12, 45]);
    let mut ids = res.ids();
    ids.sort_unstable();
    assert_eq!(ids, vec![7, 30]);
}

#[test]
fn min_rerank_on_the_toy_instance() {
    let mut heaps = MinRerank::new(2);
    for (id, lb, ub, _) in TOY {
        heaps.offer(id, lb, ub);
    }
    assert_eq!(heaps.threshold(), 1.9);
    let mut reranked = Vec::new();
    let res = heaps.finish(toy_exact, |id| reranked.push(id));
    assert_eq!(reranked, vec![30, 45, 12]);
    let mut ids = res.ids();
    ids.sort_unstable();
    assert_eq!(ids, vec![7, 30]);
}

#[test]
fn bounded_collectors_handle_fewer_objects_than_k() {
    let mut col = BoundedBbc::new(unit_codebook(), 10);
    let mut heaps = MinRerank::new(10);
    for (id, lb, ub, _) in TOY {
        col.offer(id, lb, ub);
        heaps.offer(id, lb, ub);
    }
    col.seal();
    let a = col.finish(toy_exact, toy_lb, |_| {});
    let b = heaps.finish(toy_exact, |_| {});
    assert_eq!(a.len(), 6);
    assert_eq!(b.len(), 6);
    assert!(a.is_short());
}
