"""Prediction and loss evaluation on scenes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from ..trajectory import TrajectoryGMM, as_states
from .features import ConditionalQuery, SceneEncoding, nbr_dim, query_features
from .losses import nll_terms, overlap_pairs, softmax_backward
from .network import PredictorParams, backward, forward


@dataclass
class Batch:
    own: np.ndarray
    nbr: np.ndarray
    nbr_mask: np.ndarray
    qry: np.ndarray
    origin: np.ndarray
    gt: np.ndarray | None
    group: np.ndarray


@dataclass
class Item:
    """One prediction request on an encoded scene (row indices, not ids)."""

    enc: SceneEncoding
    target: int
    query: int | None = None
    plan: np.ndarray | None = None
    gt: np.ndarray | None = None
    group: int = 0


def build_batch(cfg, items) -> Batch:
    b = len(items)
    nn = max((it.enc.nbr.shape[1] for it in items), default=0)
    own = np.stack([it.enc.own[it.target] for it in items])
    nbr = np.zeros((b, nn, nbr_dim(cfg)))
    mask = np.zeros((b, nn), dtype=bool)
    for i, it in enumerate(items):
        m = it.enc.nbr.shape[1]
        nbr[i, :m] = it.enc.nbr[it.target]
        mask[i, :m] = True
    qry = np.stack([query_features(it.enc, it.target, it.query, it.plan, cfg) for it in items])
    origin = np.stack([it.enc.origin[it.target] for it in items])
    if all(it.gt is not None for it in items):
        gt = np.stack([as_states(it.gt) for it in items]) - origin[:, None, :]
    else:
        gt = None
    group = np.array([it.group for it in items])
    return Batch(own, nbr, mask, qry, origin, gt, group)


def run(params: PredictorParams, batch: Batch):
    return forward(params, batch.own, batch.nbr, batch.nbr_mask, batch.qry)


def to_gmms(params: PredictorParams, out, origin) -> list:
    cfg = params.config
    res = []
    for i in range(out.logits.shape[0]):
        res.append(TrajectoryGMM.from_logits(
            out.logits[i], out.means[i] + origin[i], np.exp(out.log_stds[i]),
            dt=cfg.dt, std_floor=cfg.std_min,
        ))
    return res


def _resolve(scene, enc, target_id, query):
    target = enc.index(target_id)
    if query is None:
        return target, None, None
    if not isinstance(query, ConditionalQuery):
        query = ConditionalQuery(*query)
    if query.agent_id == target_id:
        raise ValueError(f"query agent {query.agent_id} is the target")
    return target, enc.index(query.agent_id), query.plan.states


def predict_many(params: PredictorParams, scene, requests, enc: SceneEncoding | None = None) -> list:
    """Predict for several ``(target_id, query)`` pairs of one scene in one pass."""
    enc = enc if enc is not None else SceneEncoding(scene, params.config)
    items = []
    for target_id, query in requests:
        t, q, plan = _resolve(scene, enc, target_id, query)
        items.append(Item(enc, t, q, plan))
    if not items:
        return []
    batch = build_batch(params.config, items)
    out, _ = run(params, batch)
    return to_gmms(params, out, batch.origin)


def predict(params: PredictorParams, scene, target_id, query: ConditionalQuery | None = None) -> TrajectoryGMM:
    """Trajectory distribution of ``target_id``, conditioned on ``query`` when
    given and marginal otherwise. Means are in the world frame."""
    return predict_many(params, scene, [(target_id, query)])[0]


def batch_loss(params: PredictorParams, batch: Batch, overlap_weight=0.0, alpha=4.0, query_penalty=0.0,
               relax=0.0):
    """Mean NLL over batch rows plus ``overlap_weight`` times the mean overlap
    penalty over all row pairs sharing a group, plus ``query_penalty`` times
    the size of the query-head correction measured like a KL divergence from
    the marginal (see ``_query_penalty``). ``relax`` is passed to ``nll_terms``.

    Returns ``(loss, grads, info)``.
    """
    out, cache = run(params, batch)
    b = batch.own.shape[0]
    nll, d_logits, d_means, d_ls, kstar = nll_terms(out.logits, out.means, out.log_stds, batch.gt, relax)
    loss = nll.mean()
    d_logits /= b
    d_means /= b
    d_ls /= b
    ov = 0.0
    ia, ib = _pairs(batch.group)
    if overlap_weight > 0 and ia.size:
        probs = softmax(out.logits, axis=1)
        world = out.means + batch.origin[:, None, None, :]
        lp, dpa, dma, dpb, dmb = overlap_pairs(probs[ia], world[ia], probs[ib], world[ib], alpha)
        ov = lp.mean()
        scale = overlap_weight / ia.size
        d_probs = np.zeros_like(probs)
        np.add.at(d_probs, ia, dpa * scale)
        np.add.at(d_probs, ib, dpb * scale)
        np.add.at(d_means, ia, dma * scale)
        np.add.at(d_means, ib, dmb * scale)
        d_logits += softmax_backward(probs, d_probs)
        loss = loss + overlap_weight * ov
    qp, d_q = 0.0, None
    if query_penalty > 0:
        qp, d_q, d_ls_q = _query_penalty(params.config, out.query_terms, batch.qry[:, -1:], out.log_stds,
                                         query_penalty)
        d_ls = d_ls + d_ls_q
        loss = loss + query_penalty * qp
    grads = backward(params, cache, d_logits, d_means, d_ls, d_q)
    info = {"nll": float(nll.mean()), "overlap": float(ov), "query": qp, "kstar": kstar, "out": out}
    return float(loss), grads, info


def _query_penalty(cfg, terms, flag, log_stds, weight):
    """Size of the query correction of conditional rows, in KL-like units.

    The shared waypoint shift is measured against each mode's predicted
    standard deviation, ``0.5 * (shift / std)**2`` averaged over modes, steps
    and axes; the logit correction adds its mean square. Returns
    the value, gradients with respect to the query terms, and the gradient
    with respect to the output log-stds.
    """
    b = flag.shape[0]
    ql, qc = terms
    basis = cfg.basis()
    shift = cfg.coef_scale * np.einsum("bcd,td->btc", qc.reshape(b, 2, -1), basis)  # (B, T, 2)
    inv2 = np.exp(-2.0 * log_stds)                                                  # (B, K, T, 2)
    n = inv2.size
    r = shift[:, None] ** 2 * inv2
    f4 = flag[:, :, None, None]
    value = float(0.5 * (f4 * r).sum() / n + (flag * ql**2).mean())
    g_shift = weight * flag[:, :, None] * shift * inv2.sum(axis=1) / n
    g_coef = cfg.coef_scale * np.einsum("btc,td->bcd", g_shift, basis).reshape(b, -1)
    d_ls = -weight * f4 * r / n
    return value, [weight * 2.0 * flag * ql / ql.size, g_coef], d_ls


def _pairs(group):
    ia, ib = [], []
    for g in np.unique(group):
        rows = np.nonzero(group == g)[0]
        for x in range(len(rows)):
            for y in range(x + 1, len(rows)):
                ia.append(rows[x])
                ib.append(rows[y])
    return np.array(ia, dtype=int), np.array(ib, dtype=int)


def nll_loss(params: PredictorParams, scene, target_id, query, gt):
    """Hard-assignment NLL of ``gt`` for one target and its weight gradients.

    Returns ``(loss, grads)`` with ``grads`` keyed like ``params.weights``.
    """
    enc = SceneEncoding(scene, params.config)
    t, q, plan = _resolve(scene, enc, target_id, query)
    batch = build_batch(params.config, [Item(enc, t, q, plan, as_states(gt))])
    loss, grads, _ = batch_loss(params, batch)
    return loss, grads
