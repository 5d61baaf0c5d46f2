"""Trajectories and Gaussian-mixture distributions over them.

A :class:`TrajectoryGMM` holds ``K`` modes, each a sequence of ``T``
independent 2-D Gaussian waypoints with diagonal covariance. The mixture
weight of a mode is shared by every waypoint of that mode, so the density of
a trajectory ``s`` is

    p(s) = sum_k pi_k prod_t N(s_t | mu_t^k, diag(sigma_t^k)^2)

and all evaluation is done in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionError, NumericDomainError

STD_FLOOR = 1e-3
LOG_2PI = math.log(2.0 * math.pi)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Trajectory:
    """Fixed-horizon sequence of (x, y) positions in meters.

    ``states[t]`` is the position at time ``(t + 1) * dt`` after the
    reference time of the scene.
    """

    states: np.ndarray
    dt: float = 0.2

    def __post_init__(self):
        states = _frozen(self.states)
        if states.ndim != 2 or states.shape[1] != 2 or states.shape[0] < 1:
            raise DimensionError(f"trajectory states must be (T, 2), got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise NumericDomainError("trajectory contains non-finite coordinates")
        if not self.dt > 0:
            raise NumericDomainError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "states", states)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    def __len__(self):
        return self.horizon

    def shifted(self, offset) -> "Trajectory":
        return Trajectory(self.states + np.asarray(offset, dtype=float), self.dt)


class WaypointGaussian(NamedTuple):
    mean: np.ndarray
    covariance: np.ndarray


@dataclass(frozen=True)
class TrajectoryGMM:
    """K-mode mixture over trajectories of length T.

    Parameters
    ----------
    log_probs : (K,) array
        Log mixture weights. Use :meth:`from_logits` to build from raw scores.
    means : (K, T, 2) array
        Per-mode, per-step waypoint means in meters.
    stds : (K, T, 2) array
        Per-mode, per-step standard deviations along x and y (diagonal
        covariance). Must be at least ``std_floor``.
    """

    log_probs: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    dt: float = 0.2
    std_floor: float = STD_FLOOR

    def __post_init__(self):
        log_probs = _frozen(self.log_probs)
        means = _frozen(self.means)
        stds = _frozen(self.stds)
        if log_probs.ndim != 1 or log_probs.size < 1:
            raise DimensionError(f"log_probs must be (K,), got {log_probs.shape}")
        k = log_probs.size
        if means.ndim != 3 or means.shape[0] != k or means.shape[2] != 2 or means.shape[1] < 1:
            raise DimensionError(f"means must be ({k}, T, 2), got {means.shape}")
        if stds.shape != means.shape:
            raise DimensionError(f"stds shape {stds.shape} != means shape {means.shape}")
        if not (np.all(np.isfinite(log_probs)) and np.all(np.isfinite(means))):
            raise NumericDomainError("non-finite mixture parameters")
        if not np.all(np.isfinite(stds)) or np.any(stds < self.std_floor * (1 - 1e-12)):
            raise NumericDomainError(
                f"covariance not positive definite above floor {self.std_floor}**2"
            )
        total = np.exp(logsumexp(log_probs))
        if abs(total - 1.0) > 1e-9:
            raise NumericDomainError(f"mode probabilities sum to {total}, expected 1")
        object.__setattr__(self, "log_probs", log_probs)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @classmethod
    def from_logits(cls, logits, means, stds, **kwargs) -> "TrajectoryGMM":
        logits = np.asarray(logits, dtype=float)
        return cls(logits - logsumexp(logits), means, stds, **kwargs)

    @classmethod
    def from_probs(cls, probs, means, stds, **kwargs) -> "TrajectoryGMM":
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise NumericDomainError("mode probabilities must be strictly positive")
        return cls(np.log(probs / probs.sum()), means, stds, **kwargs)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @property
    def mode_count(self) -> int:
        return self.log_probs.size

    @property
    def horizon(self) -> int:
        return self.means.shape[1]

    @property
    def covariances(self) -> np.ndarray:
        """(K, T, 2, 2) covariance matrices."""
        cov = np.zeros(self.means.shape + (2,))
        cov[..., 0, 0] = self.stds[..., 0] ** 2
        cov[..., 1, 1] = self.stds[..., 1] ** 2
        return cov

    def waypoint(self, k: int, t: int) -> WaypointGaussian:
        return WaypointGaussian(self.means[k, t].copy(), self.covariances[k, t])

    def shifted(self, offset) -> "TrajectoryGMM":
        return TrajectoryGMM(
            self.log_probs, self.means + np.asarray(offset, dtype=float), self.stds,
            self.dt, self.std_floor,
        )

    def permuted(self, order) -> "TrajectoryGMM":
        order = np.asarray(order)
        return TrajectoryGMM(
            self.log_probs[order], self.means[order], self.stds[order], self.dt, self.std_floor
        )


def as_states(traj) -> np.ndarray:
    """Positions of a Trajectory, or the array itself, as floats."""
    if isinstance(traj, Trajectory):
        return traj.states
    return np.asarray(traj, dtype=float)


def _check_horizon(dist: TrajectoryGMM, states: np.ndarray):
    if states.ndim < 2 or states.shape[-2:] != (dist.horizon, 2):
        raise DimensionError(
            f"trajectory shape {states.shape[-2:]} does not match horizon ({dist.horizon}, 2)"
        )


def mode_log_likelihoods(dist: TrajectoryGMM, traj) -> np.ndarray:
    """Per-mode log density ``log prod_t N(s_t | mu_t^k, Sigma_t^k)``.

    Accepts a single trajectory ``(T, 2)`` or a batch ``(..., T, 2)`` and
    returns an array of shape ``(..., K)``.
    """
    s = as_states(traj)
    _check_horizon(dist, s)
    z = (s[..., None, :, :] - dist.means) / dist.stds
    per_step = -0.5 * z**2 - np.log(dist.stds) - 0.5 * LOG_2PI
    return per_step.sum(axis=(-1, -2))


def log_likelihood(dist: TrajectoryGMM, traj):
    """Log mixture density of ``traj`` under ``dist``.

    Returns a float for a single trajectory, or an array for a batch.
    """
    ll = logsumexp(dist.log_probs + mode_log_likelihoods(dist, traj), axis=-1)
    if np.ndim(ll) == 0:
        return float(ll)
    return ll


def sample(dist: TrajectoryGMM, rng_seed, n: int) -> np.ndarray:
    """Draw ``n`` trajectories, returned as an ``(n, T, 2)`` array.

    Each draw picks a mode from the categorical weights and then samples every
    waypoint independently. ``rng_seed`` may be an int or a numpy Generator.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(rng_seed)
    modes = rng.choice(dist.mode_count, size=n, p=dist.probs / dist.probs.sum())
    noise = rng.standard_normal((n, dist.horizon, 2))
    return dist.means[modes] + dist.stds[modes] * noise


def most_likely_modes(dist: TrajectoryGMM, m: int) -> list[tuple[float, int]]:
    """The ``m`` most probable modes as ``(prob, index)``, highest first.

    Ties go to the lower mode index.
    """
    if not 1 <= m <= dist.mode_count:
        raise ValueError(f"m must be in [1, {dist.mode_count}], got {m}")
    order = np.lexsort((np.arange(dist.mode_count), -dist.log_probs))[:m]
    probs = dist.probs
    return [(float(probs[i]), int(i)) for i in order]
