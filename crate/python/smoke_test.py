"""Smoke test for the `bbc` extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import random
import sys
import tempfile
import os

import bbc


def main():
    rng = random.Random(7)
    d = 16
    centers = [[rng.gauss(0, 4) for _ in range(d)] for _ in range(8)]
    data = []
    for i in range(3000):
        c = centers[i % len(centers)]
        data.append([x + rng.gauss(0, 1) for x in c])
    queries = [[x + rng.gauss(0, 1) for x in centers[j % 8]] for j in range(5)]
    k = 200

    index = bbc.Index.build(data, metric="euclidean", n_cluster=16, seed=1)
    assert len(index) == 3000 and index.d == d
    true_ids, true_dists = bbc.brute_force(data, queries, k)

    for pipeline in bbc.PIPELINES:
        recalls = []
        for q, tid, tdist in zip(queries, true_ids, true_dists):
            ids, dists, stats = index.search(q, k, 16, pipeline=pipeline, n_cand=4 * k)
            assert len(ids) == k and dists == sorted(dists)
            recalls.append(bbc.recall_at_k(ids, dists, tid, tdist))
        mean = sum(recalls) / len(recalls)
        print(f"{pipeline:12s} recall@{k} = {mean:.4f}  last: {stats}")
        if pipeline != "ivf-pq":
            assert mean > 0.999, pipeline

    ids_heap, _, _ = index.search(queries[0], k, 16, collector="binary-heap")
    ids_bucket, _, _ = index.search(queries[0], k, 16, collector="bucket-buffer")
    assert sorted(ids_heap) == sorted(ids_bucket)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "smoke.idx")
        index.save(path)
        again = bbc.Index.load(path)
        assert again.search(queries[1], k, 4)[0] == index.search(queries[1], k, 4)[0]

    m = bbc.num_buckets(32 * 1024, 32, 4)
    stream = [rng.random() for _ in range(20000)]
    cb = bbc.Codebook(stream[:1000], 50, m)
    buf = bbc.ResultBuffer(cb, 50)
    buf.extend(list(range(len(stream))), stream)
    buf.update()
    ids, dists = buf.collect()
    expected = sorted(range(len(stream)), key=lambda i: stream[i])[:50]
    assert sorted(ids) == sorted(expected)
    print(f"result buffer: m={m} tau={buf.threshold_bucket} top={dists[0]:.5f}")

    try:
        index.search(queries[0], 0, 4)
    except ValueError as e:
        print("invalid k rejected:", e)
    else:
        sys.exit("k=0 should raise")
    print("smoke test ok")


if __name__ == "__main__":
    main()
