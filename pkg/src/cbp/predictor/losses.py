"""Negative log-likelihood and overlap losses with their output gradients."""
from __future__ import annotations

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import DimensionError, NumericDomainError
from ..trajectory import LOG_2PI, TrajectoryGMM


def closest_mode(means, gt):
    """Index of the mode whose mean is closest to ``gt`` in summed per-step
    L2 distance. ``means`` is (..., K, T, 2) and ``gt`` (..., T, 2)."""
    dist = np.linalg.norm(means - gt[..., None, :, :], axis=-1).sum(axis=-1)
    return np.argmin(dist, axis=-1)


def nll_terms(logits, means, log_stds, gt, relax: float = 0.0):
    """Per-sample hard-assignment NLL and its gradients.

    With ``relax > 0`` (and more than one mode) the Gaussian term of the
    closest mode is weighted ``1 - relax`` and every other mode receives
    ``relax / (K - 1)`` of its own Gaussian term, which keeps modes that
    rarely win near the data. ``relax = 0`` is the pure hard assignment.

    Returns ``(loss (B,), d_logits, d_means, d_log_stds, kstar)`` where the
    gradients are of the per-sample losses (not averaged).
    """
    b, k = logits.shape
    rows = np.arange(b)
    kstar = closest_mode(means, gt)
    if k == 1:
        relax = 0.0
    weight = np.full((b, k), relax / max(k - 1, 1))
    weight[rows, kstar] = 1.0 - relax
    if relax == 0.0:
        # only the selected mode contributes; skip the others
        active = np.zeros((b, k), dtype=bool)
        active[rows, kstar] = True
    else:
        active = np.ones((b, k), dtype=bool)
    inv = np.exp(-log_stds)
    z = (gt[:, None] - means) * inv
    g = (0.5 * z**2 + log_stds + 0.5 * LOG_2PI).sum(axis=(2, 3))
    log_pi = log_softmax(logits, axis=1)
    loss = -log_pi[rows, kstar] + np.where(active, weight * g, 0.0).sum(axis=1)
    d_logits = softmax(logits, axis=1)
    d_logits[rows, kstar] -= 1.0
    wa = np.where(active, weight, 0.0)[:, :, None, None]
    d_means = -wa * z * inv
    d_log_stds = wa * (1.0 - z**2)
    return loss, d_logits, d_means, d_log_stds, kstar


def overlap_pairs(probs_a, means_a, probs_b, means_b, alpha):
    """Soft overlap penalty for a stack of agent pairs.

    ``probs_*`` are (P, K) and ``means_*`` (P, K, T, 2) in a shared frame.
    Returns ``(loss (P,), d_probs_a, d_means_a, d_probs_b, d_means_b)``. The
    max over time is a hard max whose gradient flows to the first maximizing
    step.
    """
    diff = means_a[:, :, None] - means_b[:, None, :]  # (P, Ka, Kb, T, 2)
    e = np.exp(-(diff**2).sum(axis=-1) / alpha)  # (P, Ka, Kb, T)
    tstar = np.argmax(e, axis=-1)
    m = np.take_along_axis(e, tstar[..., None], axis=-1)[..., 0]  # (P, Ka, Kb)
    loss = np.einsum("pi,pij,pj->p", probs_a, m, probs_b)
    d_pa = np.einsum("pij,pj->pi", m, probs_b)
    d_pb = np.einsum("pij,pi->pj", m, probs_a)
    # d m / d mu_a at t* = m * (-2/alpha) * diff(t*)
    diff_t = np.take_along_axis(diff, tstar[..., None, None], axis=3)[:, :, :, 0]  # (P,Ka,Kb,2)
    coeff = probs_a[:, :, None] * probs_b[:, None, :] * m * (-2.0 / alpha)  # (P,Ka,Kb)
    g = coeff[..., None] * diff_t
    p, ka, kb = m.shape
    d_ma = np.zeros_like(means_a)
    d_mb = np.zeros_like(means_b)
    pi_, ii, jj = np.meshgrid(np.arange(p), np.arange(ka), np.arange(kb), indexing="ij")
    np.add.at(d_ma, (pi_, ii, tstar), g)
    np.add.at(d_mb, (pi_, jj, tstar), -g)
    return loss, d_pa, d_ma, d_pb, d_mb


def softmax_backward(probs, d_probs):
    """Chain a gradient with respect to softmax outputs back to the logits."""
    return probs * (d_probs - (probs * d_probs).sum(axis=-1, keepdims=True))


def overlap_loss(dist_a: TrajectoryGMM, dist_b: TrajectoryGMM, alpha: float):
    """Overlap penalty ``sum_ij pi_i pi_j max_t exp(-|mu_i,t - mu_j,t|^2 / alpha)``.

    Returns ``(loss, (d_means_a, d_means_b))``.
    """
    if dist_a.horizon != dist_b.horizon:
        raise DimensionError(f"horizons differ: {dist_a.horizon} vs {dist_b.horizon}")
    if not alpha > 0:
        raise NumericDomainError(f"alpha must be positive, got {alpha}")
    loss, _, d_ma, _, d_mb = overlap_pairs(
        dist_a.probs[None], dist_a.means[None], dist_b.probs[None], dist_b.means[None], alpha
    )
    return float(loss[0]), (d_ma[0], d_mb[0])
