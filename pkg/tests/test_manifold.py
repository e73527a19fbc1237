"""k-NN manifold metrics against an independent brute-force implementation.

The brute-force oracle below intentionally shares no code with the package:
plain loops over point pairs, one distance at a time. The main implementation
must match it bitwise on the counted memberships.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellforge.evalx import (
    EmbeddingSet,
    coverage_metric,
    knn_radii,
    manifold_metrics,
    precision_metric,
    recall_metric,
)


def brute_radii(points, k):
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    radii = np.empty(n)
    for i in range(n):
        dists = sorted(
            float(np.sqrt(np.sum((points[i] - points[j]) ** 2)))
            for j in range(n)
            if j != i
        )
        radii[i] = dists[k - 1]
    return radii


def brute_prdc(real, synth, k):
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    rr = brute_radii(real, k)
    sr = brute_radii(synth, k)

    def dist(a, b):
        return float(np.sqrt(np.sum((a - b) ** 2)))

    prec = sum(
        1 for y in synth if any(dist(x, y) <= rr[i] for i, x in enumerate(real))
    )
    rec = sum(
        1 for x in real if any(dist(y, x) <= sr[j] for j, y in enumerate(synth))
    )
    cov = sum(
        1 for i, x in enumerate(real) if any(dist(x, y) <= rr[i] for y in synth)
    )
    return prec / len(synth), rec / len(real), cov / len(real)


def test_radii_hand_case():
    radii = knn_radii(np.array([[0.0, 0.0], [1.0, 0.0]]), k=1)
    assert radii.tolist() == [1.0, 1.0]


def test_radii_duplicate_point_is_zero():
    pts = np.array([[2.0, 3.0], [2.0, 3.0], [9.0, 9.0]])
    radii = knn_radii(pts, k=1)
    assert radii[0] == 0.0 and radii[1] == 0.0


def test_radii_rejects_small_sets():
    with pytest.raises(ValueError):
        knn_radii(np.zeros((3, 2)), k=3)


def test_radii_match_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(4, 17))
        d = int(rng.integers(1, 5))
        pts = rng.normal(size=(n, d))
        for k in (1, 3):
            if k + 1 > n:
                continue
            got = knn_radii(pts, k)
            want = brute_radii(pts, k)
            assert np.array_equal(got, want), (trial, k)


def test_metrics_hand_case():
    real = np.array([[0.0, 0.0], [1.0, 0.0]])
    synth = np.array([[0.1, 0.0], [5.0, 5.0]])
    assert precision_metric(real, synth, k=1) == 0.5
    assert recall_metric(real, synth, k=1) == 1.0
    assert coverage_metric(real, synth, k=1) == 1.0


def test_identity_gives_ones():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(10, 3))
    assert precision_metric(pts, pts, k=2) == 1.0
    assert recall_metric(pts, pts, k=2) == 1.0
    assert coverage_metric(pts, pts, k=2) == 1.0


def test_coverage_zero_when_far():
    real = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    synth = np.array([[100.0, 100.0], [101.0, 100.0]])
    assert coverage_metric(real, synth, k=1) == 0.0


def test_random_instances_match_brute_force():
    # The acceptance gate runs 200 instances; this is the fast everyday slice.
    rng = np.random.default_rng(7)
    for trial in range(30):
        n = int(rng.integers(6, 33))
        m = int(rng.integers(6, 33))
        d = int(rng.integers(1, 9))
        k = int(rng.choice([1, 3, 5]))
        if k + 1 > min(n, m):
            continue
        real = rng.normal(size=(n, d))
        synth = rng.normal(size=(m, d)) * float(rng.uniform(0.5, 2.0))
        p, r, c = brute_prdc(real, synth, k)
        assert precision_metric(real, synth, k) == p, trial
        assert recall_metric(real, synth, k) == r, trial
        assert coverage_metric(real, synth, k) == c, trial


def test_near_duplicate_clusters_match_brute_force():
    # Heavy ties stress the boundary rule: points sitting exactly on ball
    # edges must count as inside for both implementations.
    rng = np.random.default_rng(3)
    base = rng.integers(0, 3, size=(20, 2)).astype(np.float64)
    synth = rng.integers(0, 3, size=(15, 2)).astype(np.float64)
    for k in (1, 3, 5):
        p, r, c = brute_prdc(base, synth, k)
        assert precision_metric(base, synth, k) == p
        assert recall_metric(base, synth, k) == r
        assert coverage_metric(base, synth, k) == c


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_permutation_invariance(data):
    rng_seed = data.draw(st.integers(0, 2**31 - 1))
    rng = np.random.default_rng(rng_seed)
    real = rng.normal(size=(8, 3))
    synth = rng.normal(size=(7, 3))
    perm_r = rng.permutation(8)
    perm_s = rng.permutation(7)
    assert precision_metric(real, synth, k=2) == precision_metric(
        real[perm_r], synth[perm_s], k=2
    )
    assert coverage_metric(real, synth, k=2) == coverage_metric(
        real[perm_r], synth[perm_s], k=2
    )
    assert recall_metric(real, synth, k=2) == recall_metric(
        real[perm_r], synth[perm_s], k=2
    )


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    n=st.integers(4, 12),
    m=st.integers(1, 12),
    k=st.integers(1, 3),
)
def test_metrics_stay_in_unit_range(seed, n, m, k):
    if k + 1 > n:
        n = k + 1
    rng = np.random.default_rng(seed)
    real = rng.normal(size=(n, 3))
    synth = rng.normal(size=(m, 3))
    assert 0.0 <= precision_metric(real, synth, k) <= 1.0
    assert 0.0 <= coverage_metric(real, synth, k) <= 1.0
    if m >= k + 1:
        assert 0.0 <= recall_metric(real, synth, k) <= 1.0


def test_empty_sets_rejected():
    pts = np.zeros((4, 2))
    empty = np.zeros((0, 2))
    with pytest.raises(ValueError):
        precision_metric(pts, empty, k=1)
    with pytest.raises(ValueError):
        coverage_metric(pts, empty, k=1)
    with pytest.raises(ValueError):
        recall_metric(empty, pts, k=1)


def test_embedding_set_wraps_points():
    rng = np.random.default_rng(2)
    real = EmbeddingSet.from_arrays(rng.normal(size=(8, 4)), ids=[f"r{i}" for i in range(8)])
    synth = EmbeddingSet.from_arrays(rng.normal(size=(6, 4)), ids=[f"s{i}" for i in range(6)])
    direct = precision_metric(real.points, synth.points, k=2)
    assert precision_metric(real, synth, k=2) == direct
    out = manifold_metrics(real, synth, k=2)
    assert set(out) == {"precision", "recall", "coverage", "k"}
    assert out["precision"] == direct
    assert out["k"] == 2


def test_embedding_set_rejects_nonfinite():
    with pytest.raises(ValueError):
        EmbeddingSet.from_arrays(np.array([[np.nan, 0.0]]), ids=["a"])
    with pytest.raises(ValueError):
        EmbeddingSet.from_arrays(np.ones((3, 2)), ids=["a", "b"])


def test_manifold_metrics_single_radii_pass():
    rng = np.random.default_rng(5)
    real = rng.normal(size=(20, 5))
    synth = rng.normal(size=(18, 5))
    out = manifold_metrics(real, synth, k=3)
    assert out["precision"] == precision_metric(real, synth, k=3)
    assert out["recall"] == recall_metric(real, synth, k=3)
    assert out["coverage"] == coverage_metric(real, synth, k=3)
