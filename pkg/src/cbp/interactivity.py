"""Degree of influence, interactivity score and ground-truth surprise.

The interactivity score of a query agent A on a target agent B is the mutual
information between their futures, estimated as

    I(A, B) ~= sum_k w_k * (1/M) sum_m [log p(s_m | x, a_k) - log p(s_m | x)],
    s_m ~ p(. | x, a_k),

where the ``a_k`` are the mean trajectories of the six most likely modes of
A's marginal prediction and ``w_k`` their probabilities (renormalized over the
selected modes by default). Each inner average is a Monte Carlo estimate of
the KL divergence from B's marginal to its conditional distribution.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericDomainError
from .metrics import delta_wade as _delta_wade
from .predictor.features import SceneEncoding
from .predictor.model import Item, build_batch, run, to_gmms
from .trajectory import TrajectoryGMM, log_likelihood, most_likely_modes, sample

QUERY_MODES = 6
DEFAULT_M = 1000
REPORT_SCHEMA = "cbp-interactivity/1"
REPORT_COLUMNS = ("scene_id", "query_id", "target_id", "mi", "stderr", "delta_ll", "delta_wade", "M",
                  "log_query_marginal")


@dataclass
class InteractivityReport:
    """Interactivity of one ordered (query, target) pair.

    ``per_mode_terms`` holds ``(weight, query_mode_prob, kl, kl_stderr)`` per
    query plan. ``delta_ll``, ``delta_wade`` and ``log_query_marginal`` are
    ``None`` when ground-truth futures are unavailable.
    """

    query_id: int
    target_id: int
    mi_estimate: float
    stderr: float
    per_mode_terms: list
    mc_samples_M: int
    diagnostics: dict = field(default_factory=dict)
    delta_ll: float | None = None
    delta_wade: float | None = None
    log_query_marginal: float | None = None
    scene_id: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.mi_estimate):
            raise NumericDomainError(f"non-finite MI estimate for pair {self.query_id}->{self.target_id}")
        if len(self.per_mode_terms) > QUERY_MODES:
            raise ValueError(f"at most {QUERY_MODES} query modes, got {len(self.per_mode_terms)}")
        if self.mc_samples_M < 1:
            raise ValueError("mc_samples_M must be >= 1")


def delta_ll(cond: TrajectoryGMM, marg: TrajectoryGMM, gt_target) -> float:
    """``log p_cond(gt) - log p_marg(gt)``; positive when the query made the truth more likely."""
    return log_likelihood(cond, gt_target) - log_likelihood(marg, gt_target)


def _log_ratios(cond: TrajectoryGMM, marg: TrajectoryGMM, m: int, rng_seed) -> np.ndarray:
    if cond.horizon != marg.horizon:
        raise DimensionError(f"horizons differ: {cond.horizon} vs {marg.horizon}")
    if m < 2:
        raise ValueError(f"M must be >= 2, got {m}")
    s = sample(cond, rng_seed, m)
    lp = log_likelihood(cond, s)
    lq = log_likelihood(marg, s)
    if not np.all(np.isfinite(lq)):
        raise NumericDomainError("marginal assigns zero density to a conditional sample")
    return lp - lq


def kl_mc(cond: TrajectoryGMM, marg: TrajectoryGMM, M: int, rng_seed) -> tuple[float, float]:
    """Monte Carlo ``KL(cond || marg)`` from ``M`` samples of ``cond``.

    Returns ``(estimate, stderr)``, the sample mean of the log density ratio
    and its standard error (``ddof=1``).
    """
    r = _log_ratios(cond, marg, M, rng_seed)
    return float(r.mean()), float(r.std(ddof=1) / math.sqrt(M))


def mi_from_distributions(query_marg: TrajectoryGMM, conds, target_marg: TrajectoryGMM, M: int,
                          rng_seed, renormalize: bool = True):
    """Plug-in interactivity estimate from explicit distributions.

    Parameters
    ----------
    query_marg : TrajectoryGMM
        Marginal of the query agent; its top modes supply the plan weights.
    conds : sequence of TrajectoryGMM
        Target distribution conditioned on each of the top modes of
        ``query_marg``, in ``most_likely_modes`` order.
    target_marg : TrajectoryGMM
    M : int
        Samples per query plan.
    rng_seed : int or numpy Generator
    renormalize : bool
        Rescale the selected plan probabilities to sum to one. With ``False``
        the raw mixture weights are used.

    Returns
    -------
    estimate, stderr, per_mode_terms, diagnostics
    """
    top = most_likely_modes(query_marg, min(QUERY_MODES, query_marg.mode_count))
    if len(conds) != len(top):
        raise ValueError(f"expected {len(top)} conditional distributions, got {len(conds)}")
    probs = np.array([p for p, _ in top])
    w = probs / probs.sum() if renormalize else probs
    streams = np.random.default_rng(rng_seed).spawn(len(top))
    terms, all_r = [], []
    for wk, pk, cond, rng in zip(w, probs, conds, streams):
        r = _log_ratios(cond, target_marg, M, rng)
        terms.append((float(wk), float(pk), float(r.mean()), float(r.std(ddof=1) / math.sqrt(M))))
        all_r.append(r)
    est = math.fsum(t[0] * t[2] for t in terms)
    se = math.sqrt(math.fsum((t[0] * t[3]) ** 2 for t in terms))
    r = np.concatenate(all_r)
    # Kish effective sample size of marginal-over-conditional importance weights
    lw = -r - (-r).max()
    iw = np.exp(lw)
    diag = {"min_log_ratio": float(r.min()), "max_log_ratio": float(r.max()),
            "ess": float(iw.sum() ** 2 / (iw**2).sum())}
    return est, se, terms, diag


def pair_seed(rng_seed: int, scene_id, query_idx: int, target_idx: int) -> np.random.SeedSequence:
    """Per-pair RNG stream derived from the master seed and the pair's position."""
    return np.random.SeedSequence([int(rng_seed), int(scene_id or 0), int(query_idx), int(target_idx)])


def score_pairs(params, scene, pairs, M: int = DEFAULT_M, rng_seed: int = 0, renormalize: bool = True,
                enc: SceneEncoding | None = None) -> list:
    """Interactivity reports for ``(query_id, target_id)`` pairs of one scene.

    All network evaluations for the scene are batched into one forward pass.
    Ground-truth terms are filled in when the scene carries futures.
    """
    cfg = params.config
    enc = enc if enc is not None else SceneEncoding(scene, cfg)
    idx = [(enc.index(q), enc.index(t)) for q, t in pairs]
    for (qi, ti), (q, _) in zip(idx, pairs):
        if qi == ti:
            raise ValueError(f"query agent {q} is the target")
    agents = sorted({i for p in idx for i in p})
    marg_items = [Item(enc, a) for a in agents]
    margs = dict(zip(agents, _predict_items(params, marg_items)))
    plans = {}
    for qi in sorted({q for q, _ in idx}):
        top = most_likely_modes(margs[qi], min(QUERY_MODES, margs[qi].mode_count))
        plans[qi] = [margs[qi].means[k] for _, k in top]
    have_gt = enc.future is not None
    items, slots = [], []
    for qi, ti in idx:
        for plan in plans[qi]:
            items.append(Item(enc, ti, qi, plan))
        if have_gt:
            items.append(Item(enc, ti, qi, enc.future[qi]))
        slots.append(len(items))
    preds = _predict_items(params, items)
    reports, start = [], 0
    for (qi, ti), stop in zip(idx, slots):
        group = preds[start:stop]
        start = stop
        n_plans = len(plans[qi])
        est, se, terms, diag = mi_from_distributions(
            margs[qi], group[:n_plans], margs[ti], M, pair_seed(rng_seed, scene.scene_id, qi, ti), renormalize)
        rep = InteractivityReport(enc.ids[qi], enc.ids[ti], est, se, terms, M, diag, scene_id=scene.scene_id)
        if have_gt:
            cond_gt = group[n_plans]
            rep.delta_ll = delta_ll(cond_gt, margs[ti], enc.future[ti])
            rep.delta_wade = _delta_wade(margs[ti], cond_gt, enc.future[ti])
            rep.log_query_marginal = log_likelihood(margs[qi], enc.future[qi])
        reports.append(rep)
    return reports


def _predict_items(params, items, chunk=512):
    out = []
    for s in range(0, len(items), chunk):
        batch = build_batch(params.config, items[s:s + chunk])
        res, _ = run(params, batch)
        out.extend(to_gmms(params, res, batch.origin))
    return out


def mutual_information(params, scene, query_id, target_id, M: int = DEFAULT_M, rng_seed: int = 0,
                       renormalize: bool = True) -> InteractivityReport:
    """Interactivity score of ``query_id`` on ``target_id`` in ``scene``."""
    if query_id == target_id:
        raise ValueError(f"query agent {query_id} is the target")
    return score_pairs(params, scene, [(query_id, target_id)], M, rng_seed, renormalize)[0]


def pairwise_scores(params, scene, M: int = DEFAULT_M, rng_seed: int = 0, renormalize: bool = True) -> list:
    """Reports for every ordered agent pair, ordered by (query, target) scene position."""
    if len(scene.agents) < 2:
        raise ValueError("pairwise scores need at least 2 agents")
    ids = [a.agent_id for a in scene.agents]
    pairs = [(q, t) for q in ids for t in ids if q != t]
    return score_pairs(params, scene, pairs, M, rng_seed, renormalize)


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_rows(reports):
    for r in reports:
        yield {"scene_id": "" if r.scene_id is None else r.scene_id, "query_id": r.query_id,
               "target_id": r.target_id, "mi": _fmt(r.mi_estimate), "stderr": _fmt(r.stderr),
               "delta_ll": _fmt(r.delta_ll), "delta_wade": _fmt(r.delta_wade), "M": r.mc_samples_M,
               "log_query_marginal": _fmt(r.log_query_marginal)}


def write_reports_csv(path, reports):
    """Write reports as CSV preceded by a ``# schema=`` line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={REPORT_SCHEMA}\n")
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(report_rows(reports))
