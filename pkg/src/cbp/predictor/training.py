"""Mini-batch training with query dropout."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, TrainingError
from ..metrics import wade6
from ..trajectory import log_likelihood
from .features import SceneEncoding
from .model import Item, batch_loss, build_batch, run, to_gmms
from .network import PredictorParams

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimizer and sampling settings.

    ``query_rate`` is the fraction of training samples that receive the query
    agent's ground-truth future; the rest are trained as marginal predictions.
    The step size follows a cosine decay from ``lr`` to zero over all steps.
    ``optimizer`` is ``"adam"`` (``momentum`` is its first-moment decay) or
    ``"sgd"`` (heavy-ball momentum). Gradients are rescaled to a global norm
    of at most ``grad_clip`` (``inf`` disables clipping) before either update. ``query_penalty`` weights
    the mean squared query-head correction, which keeps conditional
    predictions at the marginal unless the query actually helps. ``relax``
    is the share of the Gaussian NLL given to non-selected modes.
    """

    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    grad_clip: float = math.inf
    query_rate: float = 0.95
    overlap_weight: float = 0.1
    overlap_alpha: float = 4.0
    query_penalty: float = 1.0
    relax: float = 0.2
    seed: int = 0
    optimizer: str = "adam"
    beta2: float = 0.999

    def validate(self):
        if self.epochs < 0:
            raise ConfigError("must be >= 0", "epochs")
        if self.batch_size < 1:
            raise ConfigError("must be >= 1", "batch_size")
        if not self.lr > 0:
            raise ConfigError("must be positive", "lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must be in [0, 1)", "momentum")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}", "optimizer")
        if not 0 <= self.beta2 < 1:
            raise ConfigError("must be in [0, 1)", "beta2")
        if not 0 <= self.query_rate <= 1:
            raise ConfigError("must be in [0, 1]", "query_rate")
        if self.overlap_weight < 0:
            raise ConfigError("must be >= 0", "overlap_weight")
        if not self.grad_clip > 0:
            raise ConfigError("must be positive", "grad_clip")
        if not 0 <= self.relax < 1:
            raise ConfigError("must be in [0, 1)", "relax")
        if self.query_penalty < 0:
            raise ConfigError("must be >= 0", "query_penalty")
        if not self.overlap_alpha > 0:
            raise ConfigError("must be positive", "overlap_alpha")
        return self


def _scene_items(enc, scene_idx, rng, query_rate):
    n = len(enc.ids)
    q = int(rng.integers(n))
    conditional = rng.random() < query_rate
    # the query agent itself has nothing to condition on and is always a marginal target
    items = [Item(enc, q, None, None, enc.future[q], scene_idx)]
    for t in range(n):
        if t == q:
            continue
        if conditional:
            items.append(Item(enc, t, q, enc.future[q], enc.future[t], scene_idx))
        else:
            items.append(Item(enc, t, None, None, enc.future[t], scene_idx))
    return items


def _update(params, grads, scale, lr, first, second, step, config):
    b1, b2 = config.momentum, config.beta2
    for k, g in grads.items():
        g = g * scale
        if config.optimizer == "sgd":
            first[k] = b1 * first[k] - lr * g
            params.weights[k] = params.weights[k] + first[k]
        else:
            first[k] = b1 * first[k] + (1 - b1) * g
            second[k] = b2 * second[k] + (1 - b2) * g * g
            m_hat = first[k] / (1 - b1**step)
            v_hat = second[k] / (1 - b2**step)
            params.weights[k] = params.weights[k] - lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def evaluate(params: PredictorParams, encodings) -> dict:
    """Validation metrics over every ordered (query, target) pair.

    Conditional terms use the query agent's ground-truth future; marginal
    terms are computed once per target agent.
    """
    cfg = params.config
    cond_items, marg_items = [], []
    for enc in encodings:
        n = len(enc.ids)
        for t in range(n):
            marg_items.append(Item(enc, t, gt=enc.future[t]))
            for q in range(n):
                if q != t:
                    cond_items.append(Item(enc, t, q, enc.future[q], enc.future[t]))
    res = {}
    for name, items in (("marginal", marg_items), ("conditional", cond_items)):
        nll, wade = [], []
        for start in range(0, len(items), 256):
            chunk = items[start:start + 256]
            batch = build_batch(cfg, chunk)
            out, _ = run(params, batch)
            for dist, it in zip(to_gmms(params, out, batch.origin), chunk):
                nll.append(-log_likelihood(dist, it.gt))
                wade.append(wade6(dist, it.gt))
        res[f"val_nll_{name}"] = float(np.mean(nll)) if nll else math.nan
        res[f"val_wade6_{name}"] = float(np.mean(wade)) if wade else math.nan
    return res


def train(params_init: PredictorParams, train_scenes, config: TrainConfig, val_scenes=None):
    """Train from ``params_init``; returns ``(params, log)``.

    ``log`` is a list of per-epoch dicts with ``epoch``, ``train_loss``,
    ``train_nll``, ``train_overlap`` and, when validation scenes are given,
    ``val_nll_*`` / ``val_wade6_*`` for marginal and conditional predictions.
    Deterministic for a fixed ``config.seed``.
    """
    config.validate()
    if not train_scenes:
        raise ConfigError("training set is empty", "train_scenes")
    cfg = params_init.config
    params = params_init.copy()
    encs = [SceneEncoding(s, cfg) for s in train_scenes]
    val_encs = [SceneEncoding(s, cfg) for s in val_scenes] if val_scenes else []
    rng = np.random.default_rng(config.seed)
    velocity = params.zeros_like()
    second = params.zeros_like()
    n = len(encs)
    steps_per_epoch = math.ceil(n / config.batch_size)
    total_steps = max(config.epochs * steps_per_epoch, 1)
    step = 0
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        losses, nlls, ovs, qps = [], [], [], []
        for bi in range(steps_per_epoch):
            idx = order[bi * config.batch_size:(bi + 1) * config.batch_size]
            items = []
            for i in idx:
                items.extend(_scene_items(encs[i], int(i), rng, config.query_rate))
            batch = build_batch(cfg, items)
            loss, grads, info = batch_loss(params, batch, config.overlap_weight, config.overlap_alpha,
                                           config.query_penalty, config.relax)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi} (scenes {idx.tolist()})")
            norm = math.sqrt(sum(float((g**2).sum()) for g in grads.values()))
            scale = min(1.0, config.grad_clip / norm) if norm > 0 else 1.0
            lr = 0.5 * config.lr * (1.0 + math.cos(math.pi * step / total_steps))
            _update(params, grads, scale, lr, velocity, second, step + 1, config)
            if not params.all_finite():
                raise TrainingError(f"non-finite weights after epoch {epoch}, batch {bi}")
            step += 1
            losses.append(loss)
            nlls.append(info["nll"])
            ovs.append(info["overlap"])
            qps.append(info["query"])
        row = {"epoch": epoch + 1, "train_loss": float(np.mean(losses)),
               "train_nll": float(np.mean(nlls)), "train_overlap": float(np.mean(ovs)), "train_query": float(np.mean(qps))}
        if val_encs:
            row.update(evaluate(params, val_encs))
        log.info("epoch %d: %s", epoch + 1, row)
        history.append(row)
    return params, history
