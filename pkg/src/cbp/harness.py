"""Experiment workflows behind the command-line interface.

Run configuration is a flat ``key = value`` text file. Blank lines and lines
starting with ``#`` are ignored. Recognised keys (defaults in brackets):

``seed`` [0]
    Master seed. Per-task streams derive from ``(seed, task id)``.
``out`` [``out``]
    Output directory, created if missing.
``dataset``
    Dataset JSONL for ``train`` / ``score`` / ``mine`` / ``prune``.
``checkpoint``
    Model checkpoint read by ``score`` / ``mine`` / ``prune`` and, when
    ``resume = true``, by ``train``.
``n`` [100]
    Scene count for ``datagen``.
``sim.<field>``
    Any ``SimConfig`` field, e.g. ``sim.horizon = 30``; the scenario mix is
    ``mix.<kind> = fraction``.
``model.<field>`` / ``train.<field>``
    ``ModelConfig`` / ``TrainConfig`` fields.
``val_fraction`` [0.1]
    Share of the dataset held out for per-epoch validation in ``train``.
``resume`` [false]
    Continue training from ``checkpoint``.
``m_samples`` [1000], ``renormalize`` [true]
    Interactivity estimator samples per query plan and plan-weight rule.
``hist_bin_width`` [0.25]
    Histogram bin width in nats.
``top_n`` [20]
    Number of pairs kept by ``mine``.
``low_lq_quantile`` [0.1]
    Pairs whose query log-likelihood under its own marginal falls below this
    quantile of all scored pairs are flagged ``low_query_likelihood``.
``n_keep`` [``1,2,3,4``], ``strategy`` [``mi,distance``]
    Pruning sizes and ranking strategies.
"""
from __future__ import annotations

import csv
import dataclasses
import datetime
import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np

from . import interactivity as ia
from .errors import ConfigError
from .metrics import aggregate, wade6
from .predictor import ModelConfig, PredictorParams, SceneEncoding, TrainConfig, evaluate, predict_many, train
from .sim import KINDS, SimConfig, generate_dataset, read_dataset, split_dataset, write_dataset

log = logging.getLogger(__name__)

# Output file schemas: name -> (version tag, columns)
SCHEMAS = {
    "train_log": ("cbp-train-log/1", ("epoch", "train_loss", "train_nll", "train_overlap",
                                      "val_nll_marginal", "val_nll_conditional",
                                      "val_wade6_marginal", "val_wade6_conditional")),
    "scores": (ia.REPORT_SCHEMA, ia.REPORT_COLUMNS),
    "histogram": ("cbp-histogram/1", ("bin_lo", "bin_hi", "count")),
    "mined": ("cbp-mined/1", ("rank", "scene_id", "scenario_kind", "query_id", "target_id", "mi", "stderr",
                              "delta_wade", "delta_ll", "log_query_marginal", "low_query_likelihood")),
    "mined_trajectories": ("cbp-mined-traj/1", ("rank", "scene_id", "agent_id", "series", "mode", "prob",
                                                "t", "x", "y")),
    "prune": ("cbp-prune/1", ("strategy", "n_keep", "condition", "metric", "mean_delta", "stderr", "count")),
}

_DEFAULTS = {
    "seed": "0", "out": "out", "n": "100", "val_fraction": "0.1", "resume": "false",
    "m_samples": str(ia.DEFAULT_M), "renormalize": "true", "hist_bin_width": "0.25", "top_n": "20",
    "low_lq_quantile": "0.1", "n_keep": "1,2,3,4", "strategy": "mi,distance",
}
_PLAIN_KEYS = set(_DEFAULTS) | {"dataset", "checkpoint"}


# --------------------------------------------------------------------------
# Configuration


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines into a dict of strings."""
    out = {}
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected key = value", "config")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {no}: empty key", "config")
        out[key] = value
    return out


def _convert(value: str, like):
    try:
        if isinstance(like, bool):
            v = value.lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return v in ("true", "1", "yes")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"cannot parse {value!r} as {type(like).__name__}") from None
    return value


def _build(cls, prefix: str, kv: dict):
    obj = cls()
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in kv.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in names or name == "mix":
            raise ConfigError(f"unknown key", key)
        try:
            setattr(obj, name, _convert(value, getattr(obj, name)))
        except ConfigError as e:
            raise ConfigError(str(e), key) from None
    return obj


@dataclasses.dataclass
class RunConfig:
    """Resolved run settings."""

    raw: dict
    seed: int
    out: Path
    sim: SimConfig
    model: ModelConfig
    train: TrainConfig

    def get(self, key, cast=str):
        value = self.raw.get(key, _DEFAULTS.get(key))
        if value is None:
            raise ConfigError("required but not set", key)
        if cast is bool:
            return _convert(value, True)
        try:
            return cast(value)
        except ValueError:
            raise ConfigError(f"cannot parse {value!r}", key) from None

    def path(self, key) -> Path:
        return Path(self.get(key))

    def int_list(self, key) -> list:
        try:
            return [int(s) for s in self.get(key).split(",") if s.strip()]
        except ValueError:
            raise ConfigError(f"expected comma-separated integers, got {self.get(key)!r}", key) from None


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (optional) and apply ``overrides`` on top."""
    kv = {}
    if path is not None:
        try:
            kv.update(parse_config_text(Path(path).read_text()))
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e.strerror}", "config") from None
    kv.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
    for key in kv:
        if key in _PLAIN_KEYS or key.split(".", 1)[0] in ("sim", "model", "train", "mix"):
            continue
        raise ConfigError("unknown key", key)
    sim = _build(SimConfig, "sim.", kv)
    mix = {k[4:]: v for k, v in kv.items() if k.startswith("mix.")}
    if mix:
        for k in mix:
            if k not in KINDS:
                raise ConfigError(f"unknown scenario kind {k!r}", f"mix.{k}")
        sim.mix = {k: _convert(v, 0.0) for k, v in mix.items()}
    sim.validate()
    model = _build(ModelConfig, "model.", kv).validate()
    model.history, model.horizon, model.dt = sim.history, sim.horizon, sim.dt
    trn = _build(TrainConfig, "train.", kv)
    seed = _convert(kv.get("seed", _DEFAULTS["seed"]), 0)
    trn.seed = seed if "train.seed" not in kv else trn.seed
    trn.validate()
    return RunConfig(kv, seed, Path(kv.get("out", _DEFAULTS["out"])), sim, model, trn)


# --------------------------------------------------------------------------
# Output helpers


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path, schema: str, rows):
    """Write a schema-tagged CSV. ``rows`` are dicts keyed by column name."""
    tag, cols = SCHEMAS[schema]
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={tag}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])


def read_csv(path):
    """Read a schema-tagged CSV; returns ``(schema_tag, rows)``."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema="):
            raise ConfigError("missing '# schema=' line", str(path))
        rows = list(csv.DictReader(fh))
    return first[len("# schema="):], rows


def validate_file(path) -> str:
    """Check an output file against its declared schema; returns the schema tag.

    Handles every CSV schema in ``SCHEMAS``, dataset JSONL files and
    manifest JSON files.
    """
    path = Path(path)
    if path.suffix == ".jsonl":
        header, scenes = read_dataset(path)
        return header["schema"]
    if path.suffix == ".json":
        m = json.loads(path.read_text())
        if m.get("schema") != MANIFEST_SCHEMA:
            raise ConfigError(f"unknown manifest schema {m.get('schema')!r}", str(path))
        missing = {"total", "counts", "sha256", "dataset"} - set(m)
        if missing:
            raise ConfigError(f"manifest lacks {sorted(missing)}", str(path))
        return m["schema"]
    tag, rows = read_csv(path)
    known = {t: cols for t, cols in SCHEMAS.values()}
    if tag not in known:
        raise ConfigError(f"unknown schema {tag!r}", str(path))
    with open(path, newline="") as fh:
        fh.readline()
        header = next(csv.reader(fh), [])
    if tuple(header) != known[tag]:
        raise ConfigError(f"columns {header} do not match schema {tag}", str(path))
    for i, r in enumerate(rows, 1):
        if None in r or any(v is None for v in r.values()):
            raise ConfigError(f"row {i} has the wrong number of fields", str(path))
    return tag


def _out_dir(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def _load_scenes(cfg: RunConfig):
    path = cfg.path("dataset")
    if not path.exists():
        raise ConfigError(f"{path} does not exist", "dataset")
    return read_dataset(path)[1]


def _load_params(cfg: RunConfig) -> PredictorParams:
    path = cfg.path("checkpoint")
    if not path.exists():
        raise ConfigError(f"{path} does not exist", "checkpoint")
    return PredictorParams.load(path)


# --------------------------------------------------------------------------
# Commands

MANIFEST_SCHEMA = "cbp-manifest/1"


def cmd_datagen(cfg: RunConfig) -> dict:
    """Generate a dataset; writes ``scenes.jsonl`` and ``manifest.json``."""
    out = _out_dir(cfg)
    n = cfg.get("n", int)
    scenes = generate_dataset(cfg.sim, n, cfg.seed)
    digest = write_dataset(out / "scenes.jsonl", scenes, cfg.sim, cfg.seed)
    counts = {k: 0 for k in KINDS if cfg.sim.mix.get(k, 0) > 0}
    for s in scenes:
        counts[s.scenario_kind] += 1
    manifest = {"schema": MANIFEST_SCHEMA, "dataset": "scenes.jsonl", "total": len(scenes), "counts": counts,
                "seed": cfg.seed, "sha256": digest,
                "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _log_rows(history):
    return [{k: row.get(k) for k in SCHEMAS["train_log"][1]} for row in history]


def cmd_train(cfg: RunConfig) -> dict:
    """Train on ``dataset``; writes ``model.npz`` and ``train_log.csv``.

    A share ``val_fraction`` of the scenes (stratified by kind) is held out
    for per-epoch validation. The first log row (epoch 0) evaluates the
    starting weights.
    """
    out = _out_dir(cfg)
    scenes = _load_scenes(cfg)
    vf = cfg.get("val_fraction", float)
    if not 0 < vf < 1:
        raise ConfigError("must be in (0, 1)", "val_fraction")
    tr, va, te = split_dataset(scenes, [1 - vf, vf / 2, vf / 2], cfg.seed)
    va = sorted(va + te, key=lambda s: s.scene_id)
    if cfg.get("resume", bool):
        params = PredictorParams.load(cfg.path("checkpoint"), expect_config=cfg.model)
        start = int(PredictorParams.read_extra(cfg.path("checkpoint")).get("epochs", 0))
    else:
        params = PredictorParams.init(cfg.model, cfg.seed)
        start = 0
    val_encs = [SceneEncoding(s, cfg.model) for s in va]
    first = {"epoch": start}
    if val_encs:
        first.update(evaluate(params, val_encs))
    params, history = train(params, tr, cfg.train, val_scenes=va)
    for row in history:
        row["epoch"] += start
    history = [first] + history
    total = start + cfg.train.epochs
    ckpt = out / "model.npz"
    params.save(ckpt, extra={"epochs": total, "seed": cfg.seed})
    write_csv(out / "train_log.csv", "train_log", _log_rows(history))
    return {"checkpoint": str(ckpt), "epochs": total, "log": history}


def score_scenes(params, scenes, m: int, seed: int, renormalize: bool = True) -> list:
    """Pairwise interactivity reports for every scene, in scene then pair order."""
    reports = []
    for s in scenes:
        if len(s.agents) >= 2:
            reports.extend(ia.pairwise_scores(params, s, m, seed, renormalize))
    return reports


def histogram(values, width: float):
    """Fixed-width bins starting at ``floor(min / width) * width``."""
    if not width > 0:
        raise ConfigError("must be positive", "hist_bin_width")
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return []
    lo = math.floor(v.min() / width) * width
    n = max(int(math.floor((v.max() - lo) / width)) + 1, 1)
    idx = np.clip(np.floor((v - lo) / width).astype(int), 0, n - 1)
    counts = np.bincount(idx, minlength=n)
    return [{"bin_lo": lo + i * width, "bin_hi": lo + (i + 1) * width, "count": int(c)}
            for i, c in enumerate(counts)]


_GNUPLOT = """# gnuplot script for the interactivity histogram
set datafile separator ','
set xlabel 'mutual information (nats)'
set ylabel 'pairs'
set logscale y
set style fill solid 0.6
set boxwidth {width} absolute
plot '< tail -n +3 histogram.csv' using (($1+$2)/2):3 with boxes notitle
"""


def cmd_score(cfg: RunConfig) -> dict:
    """Score all ordered pairs; writes ``scores.csv``, ``histogram.csv`` and ``histogram.gp``."""
    out = _out_dir(cfg)
    params = _load_params(cfg)
    scenes = _load_scenes(cfg)
    reports = score_scenes(params, scenes, cfg.get("m_samples", int), cfg.seed, cfg.get("renormalize", bool))
    ia.write_reports_csv(out / "scores.csv", reports)
    width = cfg.get("hist_bin_width", float)
    hist = histogram([r.mi_estimate for r in reports], width)
    write_csv(out / "histogram.csv", "histogram", hist)
    (out / "histogram.gp").write_text(_GNUPLOT.format(width=width))
    return {"reports": reports, "histogram": hist}


def mine(reports, scenes, top_n: int, low_quantile: float = 0.1) -> list:
    """Rank pairs by MI (ties by larger delta_wade, then scene/pair order).

    Returns up to ``top_n`` rows. ``low_query_likelihood`` marks pairs whose
    query future is unlikely under the query's own marginal, i.e. below the
    ``low_quantile`` of that statistic over all reports.
    """
    if top_n < 0:
        raise ConfigError("must be >= 0", "top_n")
    kinds = {s.scene_id: s.scenario_kind for s in scenes}
    lq = [r.log_query_marginal for r in reports if r.log_query_marginal is not None]
    thresh = float(np.quantile(lq, low_quantile)) if lq else -math.inf
    order = sorted(range(len(reports)), key=lambda i: (-reports[i].mi_estimate,
                                                       -(reports[i].delta_wade or 0.0), i))
    rows = []
    for rank, i in enumerate(order[:top_n], 1):
        r = reports[i]
        rows.append({"rank": rank, "scene_id": r.scene_id, "scenario_kind": kinds.get(r.scene_id, ""),
                     "query_id": r.query_id, "target_id": r.target_id, "mi": r.mi_estimate, "stderr": r.stderr,
                     "delta_wade": r.delta_wade, "delta_ll": r.delta_ll,
                     "log_query_marginal": r.log_query_marginal,
                     "low_query_likelihood": int(r.log_query_marginal is not None and r.log_query_marginal < thresh)})
    return rows


def _dump_rows(params, scene, row):
    """Marginal and conditional mode means of the target, plus both true futures."""
    q, t = row["query_id"], row["target_id"]
    plan = scene.agent(q).future
    marg, cond = predict_many(params, scene, [(t, None), (t, (q, plan))])
    rows = []
    for series, dist in (("marginal", marg), ("conditional", cond)):
        for k in range(dist.mode_count):
            for step in range(dist.horizon):
                x, y = dist.means[k, step]
                rows.append({"series": series, "agent_id": t, "mode": k, "prob": float(dist.probs[k]),
                             "t": step + 1, "x": float(x), "y": float(y)})
    for series, aid in (("target_truth", t), ("query_truth", q)):
        for step, (x, y) in enumerate(scene.agent(aid).future.states):
            rows.append({"series": series, "agent_id": aid, "mode": "", "prob": "", "t": step + 1,
                         "x": float(x), "y": float(y)})
    for r in rows:
        r.update(rank=row["rank"], scene_id=row["scene_id"])
    return rows


def cmd_mine(cfg: RunConfig) -> dict:
    """Rank pairs by interactivity; writes ``mined.csv`` and ``mined_trajectories.csv``."""
    out = _out_dir(cfg)
    params = _load_params(cfg)
    scenes = _load_scenes(cfg)
    reports = score_scenes(params, scenes, cfg.get("m_samples", int), cfg.seed, cfg.get("renormalize", bool))
    rows = mine(reports, scenes, cfg.get("top_n", int), cfg.get("low_lq_quantile", float))
    write_csv(out / "mined.csv", "mined", rows)
    by_id = {s.scene_id: s for s in scenes}
    dumps = []
    for r in rows:
        dumps.extend(_dump_rows(params, by_id[r["scene_id"]], r))
    write_csv(out / "mined_trajectories.csv", "mined_trajectories", dumps)
    return {"rows": rows, "reports": reports}


CONDITIONS = ("removal", "context")


def _av_id(scene):
    for a in scene.agents:
        if a.role_tag == "av":
            return a.agent_id
    return None


def rank_agents(params, scene, av, strategy: str, m: int, seed: int) -> list:
    """Other agents ordered by salience to ``av``, most salient first.

    ``mi`` ranks by the interactivity score with the other agent as query and
    the AV as target; ``distance`` by current Euclidean distance. Ties go to
    scene order.
    """
    others = [a.agent_id for a in scene.agents if a.agent_id != av]
    if strategy == "distance":
        p = scene.agent(av).position
        key = {o: float(np.linalg.norm(scene.agent(o).position - p)) for o in others}
        return sorted(others, key=lambda o: (key[o], scene.index_of(o)))
    if strategy == "mi":
        reps = ia.score_pairs(params, scene, [(o, av) for o in others], m, seed)
        key = {r.query_id: r.mi_estimate for r in reps}
        return sorted(others, key=lambda o: (-key[o], scene.index_of(o)))
    raise ConfigError(f"unknown strategy {strategy!r}", "strategy")


def prune_deltas(params, scenes, strategies, n_keeps, m: int, seed: int) -> dict:
    """Per-scene AV wADE6 change under pruning, keyed by ``(strategy, n_keep, condition)``.

    ``removal`` predicts the AV from a scene containing only the AV and the
    kept agents. ``context`` keeps every agent as encoder input and drops
    the pruned ones only from the set of agents being predicted; the AV's
    own prediction is then unchanged, so its delta is zero.
    """
    deltas = {(s, n, c): [] for s in strategies for n in n_keeps for c in CONDITIONS}
    for scene in scenes:
        av = _av_id(scene)
        if av is None:
            continue
        gt = scene.agent(av).future
        base_dist = predict_many(params, scene, [(av, None)])[0]
        base = wade6(base_dist, gt)
        for strat in strategies:
            ranked = rank_agents(params, scene, av, strat, m, seed)
            for n in n_keeps:
                if n < 0:
                    raise ConfigError("must be >= 0", "n_keep")
                kept = scene.subset([av] + ranked[:n])
                deltas[(strat, n, "removal")].append(wade6(predict_many(params, kept, [(av, None)])[0], gt) - base)
                ctx = predict_many(params, scene, [(av, None)])[0]
                deltas[(strat, n, "context")].append(wade6(ctx, gt) - base)
    return deltas


def cmd_prune(cfg: RunConfig) -> dict:
    """Salient-agent pruning; writes ``prune.csv`` (mean AV wADE6 change vs the full scene)."""
    out = _out_dir(cfg)
    params = _load_params(cfg)
    scenes = _load_scenes(cfg)
    strategies = [s.strip() for s in cfg.get("strategy").split(",") if s.strip()]
    for s in strategies:
        if s not in ("mi", "distance"):
            raise ConfigError(f"unknown strategy {s!r}", "strategy")
    deltas = prune_deltas(params, scenes, strategies, cfg.int_list("n_keep"), cfg.get("m_samples", int), cfg.seed)
    rows = []
    for (strat, n, cond), vals in deltas.items():
        if not vals:
            raise ConfigError("no scene has an av-tagged agent", "dataset")
        s = aggregate(vals, f"{strat}/{n}/{cond}")
        rows.append({"strategy": strat, "n_keep": n, "condition": cond, "metric": "wade6",
                     "mean_delta": s.mean, "stderr": s.stderr, "count": s.count})
    write_csv(out / "prune.csv", "prune", rows)
    return {"rows": rows, "deltas": deltas}


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

