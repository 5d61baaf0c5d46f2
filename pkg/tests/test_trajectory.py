import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from cbp.errors import DimensionError, NumericDomainError
from cbp.trajectory import (
    LOG_2PI, Trajectory, TrajectoryGMM, log_likelihood, mode_log_likelihoods, most_likely_modes, sample,
)


def _gmm(k=3, t=4, seed=0):
    rng = np.random.default_rng(seed)
    return TrajectoryGMM.from_logits(rng.normal(size=k), rng.normal(size=(k, t, 2)) * 3,
                                     rng.uniform(0.5, 2.0, size=(k, t, 2)))


def test_single_waypoint_standard_normal_at_mean():
    d = TrajectoryGMM.from_probs([1.0], np.zeros((1, 1, 2)), np.ones((1, 1, 2)))
    assert log_likelihood(d, [[0.0, 0.0]]) == pytest.approx(-1.837877, abs=1e-6)


def test_single_waypoint_one_unit_offset():
    d = TrajectoryGMM.from_probs([1.0], np.zeros((1, 1, 2)), np.ones((1, 1, 2)))
    assert log_likelihood(d, [[1.0, 1.0]]) == pytest.approx(-2.837877, abs=1e-6)
    assert log_likelihood(d, [[1.0, 0.0]]) == pytest.approx(-2.337877, abs=1e-6)


def test_equal_two_mode_mixture_halves_density():
    means = np.zeros((2, 1, 2))
    means[1] = 100.0
    d = TrajectoryGMM.from_probs([0.5, 0.5], means, np.ones((2, 1, 2)))
    assert log_likelihood(d, [[0.0, 0.0]]) == pytest.approx(-1.837877 - math.log(2), abs=1e-6)


def test_density_integrates_to_one():
    d = TrajectoryGMM.from_probs([0.3, 0.7], np.array([[[0.0, 1.0]], [[1.5, -0.5]]]),
                                 np.array([[[0.7, 1.2]], [[1.0, 0.5]]]))
    val, _ = integrate.dblquad(lambda y, x: math.exp(log_likelihood(d, [[x, y]])), -12, 12, -12, 12)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_std_below_floor_rejected():
    with pytest.raises(NumericDomainError):
        TrajectoryGMM.from_probs([1.0], np.zeros((1, 2, 2)), np.full((1, 2, 2), 1e-4))


def test_probs_must_sum_to_one():
    with pytest.raises(NumericDomainError):
        TrajectoryGMM(np.log([0.5, 0.4]), np.zeros((2, 1, 2)), np.ones((2, 1, 2)))


def test_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        TrajectoryGMM.from_probs([1.0], np.zeros((1, 3, 2)), np.ones((1, 2, 2)))
    with pytest.raises(DimensionError):
        log_likelihood(_gmm(t=4), np.zeros((3, 2)))


def test_trajectory_validates():
    with pytest.raises(DimensionError):
        Trajectory(np.zeros((3, 3)))
    with pytest.raises(NumericDomainError):
        Trajectory(np.array([[0.0, np.nan]]))
    t = Trajectory(np.zeros((5, 2)))
    assert t.horizon == len(t) == 5
    with pytest.raises(ValueError):
        t.states[0, 0] = 1.0


def test_mode_log_likelihood_matches_closed_form():
    d = _gmm(k=2, t=3, seed=4)
    s = np.random.default_rng(1).normal(size=(3, 2))
    z = (s - d.means[1]) / d.stds[1]
    expected = np.sum(-0.5 * z**2 - np.log(d.stds[1]) - 0.5 * LOG_2PI)
    assert mode_log_likelihoods(d, s)[1] == pytest.approx(expected, rel=1e-12)


def test_batch_evaluation_matches_single():
    d = _gmm()
    s = sample(d, 3, 5)
    batch = log_likelihood(d, s)
    assert batch.shape == (5,)
    for i in range(5):
        assert batch[i] == pytest.approx(log_likelihood(d, s[i]), rel=1e-12)


def test_sample_shape_and_determinism():
    d = _gmm()
    a = sample(d, 11, 7)
    assert a.shape == (7, 4, 2)
    np.testing.assert_array_equal(a, sample(d, 11, 7))
    with pytest.raises(ValueError):
        sample(d, 0, 0)


def test_sample_moments_single_mode():
    d = TrajectoryGMM.from_probs([1.0], np.full((1, 2, 2), 3.0), np.full((1, 2, 2), 2.0))
    s = sample(d, 0, 20000)
    np.testing.assert_allclose(s.mean(axis=0), 3.0, atol=0.06)
    np.testing.assert_allclose(s.std(axis=0), 2.0, atol=0.05)


def test_most_likely_modes_order_and_ties():
    d = TrajectoryGMM.from_probs([0.2, 0.4, 0.4], np.zeros((3, 1, 2)), np.ones((3, 1, 2)))
    top = most_likely_modes(d, 2)
    assert [i for _, i in top] == [1, 2]
    assert top[0][0] == pytest.approx(0.4)
    with pytest.raises(ValueError):
        most_likely_modes(d, 4)
    with pytest.raises(ValueError):
        most_likely_modes(d, 0)


def test_covariances_are_diagonal():
    d = _gmm()
    c = d.covariances
    assert c.shape == (3, 4, 2, 2)
    np.testing.assert_allclose(c[..., 0, 1], 0.0)
    np.testing.assert_allclose(c[..., 1, 1], d.stds[..., 1] ** 2)
    w = d.waypoint(1, 2)
    np.testing.assert_allclose(w.mean, d.means[1, 2])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), k=st.integers(1, 5), t=st.integers(1, 6))
def test_probabilities_normalized(seed, k, t):
    d = _gmm(k, t, seed)
    assert abs(d.probs.sum() - 1.0) < 1e-9


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), dx=st.floats(-50, 50), dy=st.floats(-50, 50))
def test_likelihood_translation_invariant(seed, dx, dy):
    d = _gmm(seed=seed)
    s = np.random.default_rng(seed).normal(size=(4, 2))
    off = np.array([dx, dy])
    assert log_likelihood(d.shifted(off), s + off) == pytest.approx(log_likelihood(d, s), abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_likelihood_mode_permutation_invariant(seed):
    d = _gmm(k=4, seed=seed)
    order = np.random.default_rng(seed).permutation(4)
    s = np.random.default_rng(seed + 1).normal(size=(4, 2))
    assert log_likelihood(d.permuted(order), s) == pytest.approx(log_likelihood(d, s), abs=1e-10)


def test_two_separated_modes_closed_form():
    means = np.zeros((2, 1, 2))
    means[1, 0, 0] = 10.0
    d = TrajectoryGMM.from_probs([0.5, 0.5], means, np.ones((2, 1, 2)))
    assert log_likelihood(d, [[0.0, 0.0]]) == pytest.approx(-2.531024, abs=1e-6)


def test_identical_modes_equal_single_mode():
    rng = np.random.default_rng(2)
    mu = rng.normal(size=(1, 3, 2))
    sd = rng.uniform(0.5, 1.5, size=(1, 3, 2))
    one = TrajectoryGMM.from_probs([1.0], mu, sd)
    two = TrajectoryGMM.from_probs([0.5, 0.5], np.repeat(mu, 2, axis=0), np.repeat(sd, 2, axis=0))
    s = rng.normal(size=(3, 2))
    assert log_likelihood(two, s) == pytest.approx(log_likelihood(one, s), abs=1e-12)


def test_sample_at_variance_floor_concentrates():
    mu = np.array([[[4.0, -2.0]]])
    d = TrajectoryGMM.from_probs([1.0], mu, np.full((1, 1, 2), 1e-3))
    s = sample(d, 5, 1)
    assert np.all(np.abs(s[0] - mu[0]) < 0.01)
    many = sample(d, 6, 10_000)
    assert np.all(np.abs(many.mean(axis=0) - mu[0]) < 3 * 1e-3 / math.sqrt(10_000))


def test_tie_break_single_selection():
    d = TrajectoryGMM.from_probs([0.5, 0.5], np.zeros((2, 1, 2)), np.ones((2, 1, 2)))
    assert most_likely_modes(d, 1)[0][1] == 0
    d3 = TrajectoryGMM.from_probs([0.2, 0.5, 0.3], np.zeros((3, 1, 2)), np.ones((3, 1, 2)))
    assert [i for _, i in most_likely_modes(d3, 3)] == [1, 2, 0]


def test_self_likelihood_beats_perturbed_means():
    d = _gmm(k=2, t=3, seed=9)
    s = sample(d, 0, 10_000)
    own = log_likelihood(d, s).mean()
    for delta in (0.3, -1.0, 2.0):
        other = TrajectoryGMM(d.log_probs, d.means + delta, d.stds)
        assert own >= log_likelihood(other, s).mean()
