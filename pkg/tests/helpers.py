"""Shared fixtures-free helpers for the test suite."""
import numpy as np

from cbp.predictor.features import SceneEncoding
from cbp.predictor.model import Item, batch_loss, build_batch
from cbp.predictor.network import ModelConfig, PredictorParams
from cbp.sim import KINDS, SimConfig, generate_scene


def small_problem(seed: int):
    """A random small model and batch with overlap pairs, for gradient checks."""
    rng = np.random.default_rng(seed)
    h, t = int(rng.integers(2, 4)), int(rng.integers(2, 5))
    cfg = ModelConfig(history=h, horizon=t, modes=int(rng.integers(1, 4)), degree=int(rng.integers(0, 3)),
                      enc_width=int(rng.integers(2, 5)), trunk_width=int(rng.integers(3, 6)))
    sim = SimConfig(history=h, horizon=t, background_max=2)
    scene = generate_scene(sim, KINDS[seed % len(KINDS)], seed, seed)
    params = PredictorParams.init(cfg, seed)
    params = params.with_flat(params.flat() + 0.1 * rng.standard_normal(params.size))
    enc = SceneEncoding(scene, cfg)
    n = len(scene.agents)
    q = int(rng.integers(n))
    items = [Item(enc, i, q, enc.future[q], enc.future[i], 0) for i in range(n) if i != q]
    items.append(Item(enc, q, None, None, enc.future[q], 1))
    alpha = float(rng.uniform(20.0, 400.0))
    return params, build_batch(cfg, items), alpha


def gradient_check(params, batch, overlap_weight, alpha, eps=1e-4, query_penalty=0.0, relax=0.0):
    """Max relative error between analytic and central-difference gradients.

    Uses the fourth-order central stencil
    ``(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h``. Relative error is
    ``|a - n| / max(|a|, |n|, floor)`` per coordinate, where
    ``floor = max(1e-6, 1e-7 * |loss|)`` keeps roundoff in the differenced
    loss (about ``|loss| * 1e-16 / eps``) from dominating tiny gradients.
    """
    loss, grads, _ = batch_loss(params, batch, overlap_weight, alpha, query_penalty, relax)
    analytic = np.concatenate([g.ravel() for g in grads.values()])
    x = params.flat()
    numeric = np.zeros_like(x)

    def f(i, h):
        xs = x.copy()
        xs[i] += h
        return batch_loss(params.with_flat(xs), batch, overlap_weight, alpha, query_penalty, relax)[0]

    for i in range(x.size):
        numeric[i] = (-f(i, 2 * eps) + 8 * f(i, eps) - 8 * f(i, -eps) + f(i, -2 * eps)) / (12 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), max(1e-6, 1e-7 * abs(loss)))
    return float(rel.max()), analytic, numeric


def directional_check(params, batch, overlap_weight, alpha, seed=0, n_coords=48, eps=1e-4,
                      query_penalty=0.0, relax=0.0):
    """Gradient check along random directions, one per parameter tensor, plus sampled coordinates.

    Each direction ``v`` compares ``grad . v`` with the five-point difference
    of ``loss(x + h v)``; sampled coordinates are unit directions. Returns the
    max relative error with the same loss-scaled floor as ``gradient_check``.
    """
    rng = np.random.default_rng(seed)
    loss, grads, _ = batch_loss(params, batch, overlap_weight, alpha, query_penalty, relax)
    analytic = np.concatenate([g.ravel() for g in grads.values()])
    x = params.flat()
    dirs, start = [], 0
    for g in grads.values():
        v = np.zeros_like(x)
        v[start:start + g.size] = rng.standard_normal(g.size) / np.sqrt(g.size)
        dirs.append(v)
        start += g.size
    for i in rng.choice(x.size, min(n_coords, x.size), replace=False):
        v = np.zeros_like(x)
        v[i] = 1.0
        dirs.append(v)

    def f(v, h):
        return batch_loss(params.with_flat(x + h * v), batch, overlap_weight, alpha, query_penalty, relax)[0]

    floor = max(1e-6, 1e-7 * abs(loss))
    worst = 0.0
    for v in dirs:
        a = float(analytic @ v)
        n = (-f(v, 2 * eps) + 8 * f(v, eps) - 8 * f(v, -eps) + f(v, -2 * eps)) / (12 * eps)
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), floor))
    return worst
