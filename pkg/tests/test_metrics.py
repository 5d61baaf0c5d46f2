import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbp.errors import DimensionError
from cbp.metrics import aggregate, delta_wade, min_ade6, wade6
from cbp.trajectory import TrajectoryGMM


def _const(offsets, probs, t=5):
    means = np.stack([np.tile(np.asarray(o, float), (t, 1)) for o in offsets])
    return TrajectoryGMM.from_probs(probs, means, np.ones_like(means))


def _random(k, t, seed):
    rng = np.random.default_rng(seed)
    return (TrajectoryGMM.from_logits(rng.normal(size=k) * 2, rng.normal(size=(k, t, 2)) * 5,
                                      np.ones((k, t, 2))),
            rng.normal(size=(t, 2)) * 5)


def _brute(dist, gt, renormalize=True, reduce="weighted"):
    probs = list(dist.probs)
    idx = sorted(range(len(probs)), key=lambda i: (-probs[i], i))[:6]
    errs = []
    for i in idx:
        total = 0.0
        for t in range(dist.horizon):
            dx = dist.means[i, t, 0] - gt[t, 0]
            dy = dist.means[i, t, 1] - gt[t, 1]
            total += (dx * dx + dy * dy) ** 0.5
        errs.append(total / dist.horizon)
    if reduce == "min":
        return min(errs)
    w = [probs[i] for i in idx]
    z = sum(w) if renormalize else 1.0
    return sum(wi / z * e for wi, e in zip(w, errs))


def test_constant_offset():
    d = _const([(3.0, 4.0)], [1.0])
    assert wade6(d, np.zeros((5, 2))) == pytest.approx(5.0)
    assert min_ade6(d, np.zeros((5, 2))) == pytest.approx(5.0)


def test_probability_weighted_average():
    d = _const([(0.0, 0.0), (10.0, 0.0)], [0.5, 0.5])
    assert wade6(d, np.zeros((5, 2))) == pytest.approx(5.0)


def test_min_ade_exact_match_mode():
    d = _const([(0.0, 0.0), (10.0, 0.0)], [0.3, 0.7])
    assert min_ade6(d, np.zeros((5, 2))) == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_random_k8_matches_brute_force(seed):
    d, gt = _random(8, 7, seed)
    assert wade6(d, gt) == pytest.approx(_brute(d, gt), rel=1e-12)
    assert wade6(d, gt, renormalize=False) == pytest.approx(_brute(d, gt, False), rel=1e-12)
    assert min_ade6(d, gt) == pytest.approx(_brute(d, gt, reduce="min"), rel=1e-12)


def test_horizon_mismatch():
    d = _const([(0.0, 0.0)], [1.0])
    with pytest.raises(DimensionError):
        wade6(d, np.zeros((4, 2)))
    with pytest.raises(DimensionError):
        min_ade6(d, np.zeros((6, 2)))


def test_delta_wade_examples():
    gt = np.zeros((5, 2))
    marg = _const([(5.0, 0.0)], [1.0])
    cond = _const([(1.0, 0.0)], [1.0])
    assert delta_wade(marg, cond, gt) == pytest.approx(4.0)
    assert delta_wade(cond, marg, gt) == pytest.approx(-4.0)
    assert delta_wade(marg, marg, gt) == 0.0


def test_aggregate_examples():
    s = aggregate([1, 1, 1, 1], "x")
    assert (s.mean, s.stderr, s.count, s.metric_name) == (1.0, 0.0, 4, "x")
    s = aggregate([0, 2])
    assert s.mean == pytest.approx(1.0)
    assert s.stderr == pytest.approx(1.0)
    s = aggregate(range(1, 101))
    assert s.percentiles[10] == pytest.approx(10.9)
    assert sorted(s.percentiles) == [10, 20, 30, 40, 60, 70, 80, 90]
    assert aggregate([3.0]).stderr == 0.0


def test_aggregate_rejects_empty():
    with pytest.raises(ValueError):
        aggregate([])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.integers(1, 9), t=st.integers(1, 8))
def test_min_ade_never_exceeds_wade(seed, k, t):
    d, gt = _random(k, t, seed)
    assert min_ade6(d, gt) <= wade6(d, gt) + 1e-12


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), dx=st.floats(-100, 100), dy=st.floats(-100, 100))
def test_metrics_translation_and_permutation_invariant(seed, dx, dy):
    d, gt = _random(5, 4, seed)
    off = np.array([dx, dy])
    assert wade6(d.shifted(off), gt + off) == pytest.approx(wade6(d, gt), abs=1e-9)
    assert min_ade6(d.shifted(off), gt + off) == pytest.approx(min_ade6(d, gt), abs=1e-9)
    order = np.random.default_rng(seed).permutation(5)
    assert wade6(d.permuted(order), gt) == pytest.approx(wade6(d, gt), abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000), k=st.integers(1, 6))
def test_unrenormalized_equals_full_weighted_ade_for_small_k(seed, k):
    d, gt = _random(k, 4, seed)
    full = float(np.dot(d.probs, np.linalg.norm(d.means - gt, axis=-1).mean(axis=-1)))
    assert wade6(d, gt, renormalize=False) == pytest.approx(full, rel=1e-12)
