"""Encoder/trunk/head network with hand-written backpropagation.

Layout::

    own past  -> MLP(2) ---------------+-> trunk MLP(2) ---------> context heads --\\
    neighbors -> MLP(2) -> max-pool ---+                                           +-> sum
    query     -> MLP(2) ---------------+-> query trunk MLP(2) -> query heads x flag -/

Heads: K mode logits, per-mode polynomial coefficients for x and y
(degree D, constant term included), and per-mode, per-step log standard
deviations for x and y. The context heads read the trunk output and the raw
own-past features; the query heads read the query trunk output and the raw
query features, and their output is multiplied by the query presence flag.
The query heads give per-mode logit corrections and a single coefficient
correction shared by every mode: a query shifts the whole distribution and
re-weights its modes but leaves the spreads alone.
A marginal prediction is therefore exactly the context part, and a query
only ever adds a correction to it, so both share one mode layout. All hidden
layers use ELU.
"""
from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from .features import nbr_dim, own_dim, query_dim

CHECKPOINT_FORMAT = "cbp-checkpoint/1"


@dataclass
class ModelConfig:
    history: int = 10
    horizon: int = 30
    dt: float = 0.2
    modes: int = 6
    degree: int = 3
    enc_width: int = 64
    trunk_width: int = 128
    pos_scale: float = 10.0
    vel_scale: float = 10.0
    query_scale: float = 5.0
    coef_scale: float = 20.0
    std_min: float = 1e-3
    std_max: float = 50.0
    std_init: float = 2.0

    def validate(self):
        for name in ("history", "horizon", "modes", "enc_width", "trunk_width"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", name)
        if not 0 <= self.degree <= 10:
            raise ConfigError("must be in [0, 10]", "degree")
        if not 0 < self.std_min < self.std_max:
            raise ConfigError("need 0 < std_min < std_max", "std_min")
        return self

    @property
    def log_std_bounds(self):
        return math.log(self.std_min), math.log(self.std_max)

    def basis(self) -> np.ndarray:
        """(T, D+1) polynomial basis evaluated at t*dt / (T*dt), t = 1..T."""
        tau = np.arange(1, self.horizon + 1) / self.horizon
        return tau[:, None] ** np.arange(self.degree + 1)[None, :]


HEADS = ("head", "qhead")
_PARTS = {"head": "lcs", "qhead": "lc"}


def head_input_dim(cfg: ModelConfig, which: str = "head") -> int:
    extra = own_dim(cfg) if which == "head" else query_dim(cfg)
    return cfg.trunk_width + extra


def param_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    e, w = cfg.enc_width, cfg.trunk_width
    k, d, t = cfg.modes, cfg.degree + 1, cfg.horizon
    shapes = OrderedDict()
    for name, din in (("own", own_dim(cfg)), ("nbr", nbr_dim(cfg)), ("qry", query_dim(cfg))):
        shapes[f"{name}.W1"] = (din, e)
        shapes[f"{name}.b1"] = (e,)
        shapes[f"{name}.W2"] = (e, e)
        shapes[f"{name}.b2"] = (e,)
    for name, din in (("trunk", 2 * e), ("qtrunk", 3 * e)):
        shapes[f"{name}.W1"] = (din, w)
        shapes[f"{name}.b1"] = (w,)
        shapes[f"{name}.W2"] = (w, w)
        shapes[f"{name}.b2"] = (w,)
    for name in HEADS:
        hin = head_input_dim(cfg, name)
        # the query coefficient correction is shared by all modes
        per = k if name == "head" else 1
        shapes[f"{name}.Wl"] = (hin, k)
        shapes[f"{name}.bl"] = (k,)
        shapes[f"{name}.Wc"] = (hin, per * 2 * d)
        shapes[f"{name}.bc"] = (per * 2 * d,)
    shapes["head.Ws"] = (head_input_dim(cfg, "head"), k * t * 2)
    shapes["head.bs"] = (k * t * 2,)
    return shapes


class PredictorParams:
    """Model configuration plus a named set of weight arrays."""

    def __init__(self, config: ModelConfig, weights: dict):
        self.config = config
        shapes = param_shapes(config)
        if set(weights) != set(shapes):
            raise ConfigError(f"weight names {sorted(set(weights) ^ set(shapes))} mismatch", "weights")
        self.weights = OrderedDict()
        for name, shape in shapes.items():
            arr = np.asarray(weights[name], dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"shape {arr.shape} != expected {shape}", name)
            self.weights[name] = arr

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "PredictorParams":
        config.validate()
        rng = np.random.default_rng(seed)
        weights = {}
        for name, shape in param_shapes(config).items():
            if len(shape) == 2:
                weights[name] = rng.standard_normal(shape) * math.sqrt(1.0 / shape[0])
            else:
                weights[name] = np.zeros(shape)
        weights["head.Wc"] *= 0.1
        weights["head.Ws"] *= 0.1
        for name in ("qhead.Wl", "qhead.Wc"):
            weights[name] *= 0.01
        weights["head.bs"][:] = math.log(config.std_init)
        return cls(config, weights)

    def __getitem__(self, name):
        return self.weights[name]

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.config, {k: v.copy() for k, v in self.weights.items()})

    def zeros_like(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.weights.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.weights.values()])

    def with_flat(self, vec) -> "PredictorParams":
        out, i = {}, 0
        for name, v in self.weights.items():
            out[name] = np.asarray(vec[i:i + v.size], dtype=float).reshape(v.shape)
            i += v.size
        return PredictorParams(self.config, out)

    @property
    def size(self) -> int:
        return sum(v.size for v in self.weights.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.weights.values())

    def save(self, path, extra: dict | None = None):
        meta = {"format": CHECKPOINT_FORMAT, "config": asdict(self.config), "extra": extra or {}}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **self.weights)

    @classmethod
    def load(cls, path, expect_config: ModelConfig | None = None) -> "PredictorParams":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ConfigError(f"unsupported checkpoint format {meta.get('format')!r}", "checkpoint")
            config = ModelConfig(**meta["config"])
            if expect_config is not None and asdict(expect_config) != asdict(config):
                raise ConfigError("checkpoint config does not match expected model config", "checkpoint")
            weights = {k: data[k] for k in data.files if k != "__meta__"}
        return cls(config, weights)

    @staticmethod
    def read_extra(path) -> dict:
        with np.load(path, allow_pickle=False) as data:
            return json.loads(str(data["__meta__"])).get("extra", {})


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _mlp2(w, prefix, x):
    h1 = x @ w[f"{prefix}.W1"] + w[f"{prefix}.b1"]
    a1 = _elu(h1)
    h2 = a1 @ w[f"{prefix}.W2"] + w[f"{prefix}.b2"]
    return _elu(h2), (x, h1, a1, h2)


def _mlp2_backward(w, prefix, cache, d_out, grads):
    x, h1, a1, h2 = cache
    d_h2 = d_out * _elu_grad(h2)
    lead = tuple(range(d_h2.ndim - 1))
    grads[f"{prefix}.W2"] += np.tensordot(a1, d_h2, axes=(lead, lead))
    grads[f"{prefix}.b2"] += d_h2.sum(axis=lead)
    d_h1 = (d_h2 @ w[f"{prefix}.W2"].T) * _elu_grad(h1)
    grads[f"{prefix}.W1"] += np.tensordot(x, d_h1, axes=(lead, lead))
    grads[f"{prefix}.b1"] += d_h1.sum(axis=lead)


@dataclass
class Outputs:
    logits: np.ndarray      # (B, K)
    means: np.ndarray       # (B, K, T, 2), target frame
    log_stds: np.ndarray    # (B, K, T, 2), clipped
    query_terms: list       # query-head logits and coefficients before the presence flag


def forward(params: PredictorParams, own, nbr, nbr_mask, qry):
    """Run the network on a batch.

    Parameters
    ----------
    own : (B, own_dim)
    nbr : (B, Nn, nbr_dim)
    nbr_mask : (B, Nn) bool, True where a neighbor slot is filled
    qry : (B, query_dim); all zeros for a marginal prediction
    """
    cfg = params.config
    w = params.weights
    b = own.shape[0]
    k, d, t = cfg.modes, cfg.degree + 1, cfg.horizon
    own_e, own_c = _mlp2(w, "own", own)
    qry_e, qry_c = _mlp2(w, "qry", qry)
    if nbr.shape[1] > 0:
        nbr_e, nbr_c = _mlp2(w, "nbr", nbr)
        masked = np.where(nbr_mask[..., None], nbr_e, -np.inf)
        arg = np.argmax(masked, axis=1)  # (B, E)
        has = nbr_mask.any(axis=1)
        pooled = np.where(has[:, None], np.take_along_axis(nbr_e, arg[:, None, :], axis=1)[:, 0], 0.0)
    else:
        nbr_e, nbr_c, arg, has = None, None, None, np.zeros(b, dtype=bool)
        pooled = np.zeros((b, cfg.enc_width))
    z, trunk_c = _mlp2(w, "trunk", np.concatenate([own_e, pooled], axis=1))
    zq, qtrunk_c = _mlp2(w, "qtrunk", np.concatenate([own_e, pooled, qry_e], axis=1))
    flag = qry[:, -1:]
    hin = {"head": np.concatenate([z, own], axis=1), "qhead": np.concatenate([zq, qry], axis=1)}
    raw = {h: [hin[h] @ w[f"{h}.W{x}"] + w[f"{h}.b{x}"] for x in _PARTS[h]] for h in HEADS}
    hl, hc, hs = raw["head"]
    ql, qc = raw["qhead"]
    logits = hl + flag * ql
    coef = hc.reshape(b, k, 2, d) + (flag * qc).reshape(b, 1, 2, d)
    raw_ls = hs.reshape(b, k, t, 2)
    lo, hi = cfg.log_std_bounds
    log_stds = np.clip(raw_ls, lo, hi)
    means = cfg.coef_scale * np.einsum("bkcd,td->bktc", coef, cfg.basis())
    cache = dict(own_c=own_c, qry_c=qry_c, nbr_c=nbr_c, arg=arg, has=has, nbr_shape=nbr.shape,
                 hin=hin, flag=flag, trunk_c=trunk_c, qtrunk_c=qtrunk_c, clip_mask=(raw_ls >= lo) & (raw_ls <= hi))
    return Outputs(logits, means, log_stds, raw["qhead"]), cache


def backward(params: PredictorParams, cache, d_logits, d_means, d_log_stds, d_query_terms=None):
    """Gradients of a scalar loss with respect to every weight, given its
    gradients with respect to the network outputs (and optionally with respect
    to ``Outputs.query_terms``)."""
    cfg = params.config
    w = params.weights
    grads = params.zeros_like()
    b = d_logits.shape[0]
    d_coef = cfg.coef_scale * np.einsum("bktc,td->bkcd", d_means, cfg.basis()).reshape(b, -1)
    d_ls = (d_log_stds * cache["clip_mask"]).reshape(b, -1)
    tw, e = cfg.trunk_width, cfg.enc_width
    d_trunk = {}
    for h, trunk in zip(HEADS, ("trunk", "qtrunk")):
        hin = cache["hin"][h]
        if h == "head":
            parts = {"l": d_logits, "c": d_coef, "s": d_ls}
        else:
            sc = cache["flag"]
            parts = {"l": sc * d_logits, "c": sc * d_coef.reshape(b, cfg.modes, -1).sum(axis=1)}
            if d_query_terms is not None:
                parts = {"l": parts["l"] + d_query_terms[0], "c": parts["c"] + d_query_terms[1]}
        d_z = 0.0
        for x, dx in parts.items():
            grads[f"{h}.W{x}"] += hin.T @ dx
            grads[f"{h}.b{x}"] += dx.sum(axis=0)
            d_z = d_z + dx @ w[f"{h}.W{x}"][:tw].T
        x, h1, a1, h2 = cache[f"{trunk}_c"]
        d_h2 = d_z * _elu_grad(h2)
        grads[f"{trunk}.W2"] += a1.T @ d_h2
        grads[f"{trunk}.b2"] += d_h2.sum(axis=0)
        d_h1 = (d_h2 @ w[f"{trunk}.W2"].T) * _elu_grad(h1)
        grads[f"{trunk}.W1"] += x.T @ d_h1
        grads[f"{trunk}.b1"] += d_h1.sum(axis=0)
        d_trunk[trunk] = d_h1 @ w[f"{trunk}.W1"].T
    d_c = d_trunk["qtrunk"]
    d_c[:, :2 * e] += d_trunk["trunk"]
    _mlp2_backward(w, "own", cache["own_c"], d_c[:, :e], grads)
    _mlp2_backward(w, "qry", cache["qry_c"], d_c[:, 2 * e:], grads)
    if cache["nbr_c"] is not None:
        d_pool = d_c[:, e:2 * e] * cache["has"][:, None]
        d_nbr = np.zeros(cache["nbr_shape"][:2] + (e,))
        rows = np.arange(b)[:, None]
        cols = np.arange(e)[None, :]
        d_nbr[rows, cache["arg"], cols] = d_pool
        _mlp2_backward(w, "nbr", cache["nbr_c"], d_nbr, grads)
    return grads
