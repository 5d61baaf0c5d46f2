"""Synthetic multi-agent driving scenes with known causal structure.

Every scene contains a core pair of agents whose relationship is fixed by the
scenario kind, plus optional background agents in free lanes that evolve
independently:

``car_follow``
    A follower tracks a leader in the same lane with a reaction delay, using an
    IDM law plus an anticipation term on the leader's delayed acceleration.
``cut_in``
    An agent in the adjacent lane may (latent 50/50 intent) merge in front of
    the follower, which then brakes for it.
``yield_turn``
    The query agent may turn left across the oncoming lane; the oncoming agent
    yields when it sees the turn begin.
``independent``
    Two agents in separated lanes driven by disjoint random processes.
``confounded_stop``
    Two agents in parallel lanes brake at a shared scripted time (a stand-in
    for a signal change) with no coupling between them.

Lanes are straight and parallel to the x axis, ``lane_width`` meters apart.
Time index 0 is the current time; the past covers ``history`` samples ending
at the current state and the future covers ``horizon`` samples after it.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError
from .trajectory import Trajectory

SCHEMA = "cbp-scenes/1"
KINDS = ("car_follow", "cut_in", "yield_turn", "independent", "confounded_stop")
ROLES = ("leader", "follower", "independent", "av")
INTERACTIVE_KINDS = ("car_follow", "cut_in", "yield_turn")

_BURN_IN = 6
_MAX_DECEL = 9.0
_MAX_ACCEL = 4.0


@dataclass(frozen=True)
class IDMParams:
    v0: float = 30.0
    time_headway: float = 1.2
    a_max: float = 1.5
    b_comf: float = 2.0
    s0: float = 2.0
    delta: float = 4.0


def idm_acceleration(v, gap, approach_rate, p: IDMParams):
    """IDM acceleration for speed ``v``, bumper gap ``gap`` and closing speed
    ``approach_rate = v - v_lead``. ``gap=inf`` gives the free-road term."""
    free = 1.0 - (v / p.v0) ** p.delta
    if not np.isfinite(gap):
        return p.a_max * free
    s_star = p.s0 + max(0.0, v * p.time_headway + v * approach_rate / (2.0 * math.sqrt(p.a_max * p.b_comf)))
    return p.a_max * (free - (s_star / max(gap, 0.1)) ** 2)


def idm_equilibrium_gap(v, p: IDMParams):
    return (p.s0 + v * p.time_headway) / math.sqrt(1.0 - (v / p.v0) ** p.delta)


@dataclass
class SimConfig:
    """Scene generator settings. Distances in meters, times in seconds."""

    history: int = 10
    horizon: int = 30
    dt: float = 0.2
    n_max: int = 8
    background_min: int = 0
    background_max: int = 3
    mix: dict = field(default_factory=lambda: {
        "car_follow": 0.25, "cut_in": 0.2, "yield_turn": 0.15,
        "independent": 0.25, "confounded_stop": 0.15,
    })
    lane_width: float = 3.7
    v_max: float = 40.0
    accel_noise: float = 1.5
    follower_noise: float = 0.15
    reaction_delay: float = 0.4
    anticipation_gain: float = 0.8
    layout: str = "standard"  # "standard" or "pruning"
    tag_av: bool = False

    def validate(self):
        for name in ("history", "horizon", "n_max"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be a positive integer", name)
        for name in ("dt", "lane_width", "v_max"):
            if not getattr(self, name) > 0:
                raise ConfigError("must be positive", name)
        for name in ("accel_noise", "follower_noise", "reaction_delay", "anticipation_gain"):
            if getattr(self, name) < 0:
                raise ConfigError("must be non-negative", name)
        if self.n_max < 2:
            raise ConfigError("scenes need at least 2 agents", "n_max")
        if not 0 <= self.background_min <= self.background_max:
            raise ConfigError("need 0 <= background_min <= background_max", "background_max")
        unknown = set(self.mix) - set(KINDS)
        if unknown:
            raise ConfigError(f"unknown scenario kinds {sorted(unknown)}", "mix")
        if any(v < 0 for v in self.mix.values()):
            raise ConfigError("proportions must be non-negative", "mix")
        if abs(sum(self.mix.values()) - 1.0) > 1e-9:
            raise ConfigError(f"proportions sum to {sum(self.mix.values()):.6g}, expected 1", "mix")
        if self.layout not in ("standard", "pruning"):
            raise ConfigError(f"unknown layout {self.layout!r}", "layout")
        return self

    @property
    def delay_steps(self) -> int:
        return int(round(self.reaction_delay / self.dt))


@dataclass
class AgentTrack:
    agent_id: int
    lane_index: int
    past: np.ndarray  # (H, 4): x, y, vx, vy; last row is the current state
    future: Trajectory
    role_tag: str

    @property
    def position(self) -> np.ndarray:
        return self.past[-1, :2]

    @property
    def velocity(self) -> np.ndarray:
        return self.past[-1, 2:]


@dataclass
class Scene:
    scene_id: int
    agents: list
    scenario_kind: str
    rng_seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate agent ids in scene {self.scene_id}")

    @property
    def agent_ids(self) -> list:
        return [a.agent_id for a in self.agents]

    def agent(self, agent_id) -> AgentTrack:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(f"agent {agent_id} not in scene {self.scene_id}")

    def index_of(self, agent_id) -> int:
        for i, a in enumerate(self.agents):
            if a.agent_id == agent_id:
                return i
        raise KeyError(f"agent {agent_id} not in scene {self.scene_id}")

    def subset(self, agent_ids) -> "Scene":
        keep = set(agent_ids)
        return Scene(self.scene_id, [a for a in self.agents if a.agent_id in keep],
                     self.scenario_kind, self.rng_seed, dict(self.meta))

    def translated(self, offset) -> "Scene":
        off = np.asarray(offset, dtype=float)
        agents = []
        for a in self.agents:
            past = a.past.copy()
            past[:, :2] += off
            agents.append(AgentTrack(a.agent_id, a.lane_index, past, a.future.shifted(off), a.role_tag))
        return Scene(self.scene_id, agents, self.scenario_kind, self.rng_seed, dict(self.meta))

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "scenario_kind": self.scenario_kind,
            "rng_seed": self.rng_seed,
            "meta": self.meta,
            "agents": [
                {
                    "agent_id": a.agent_id,
                    "lane_index": a.lane_index,
                    "role_tag": a.role_tag,
                    "dt": a.future.dt,
                    "past": a.past.tolist(),
                    "future": a.future.states.tolist(),
                }
                for a in self.agents
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        agents = [
            AgentTrack(
                int(a["agent_id"]), int(a["lane_index"]), np.asarray(a["past"], dtype=float),
                Trajectory(np.asarray(a["future"], dtype=float), float(a["dt"])), a["role_tag"],
            )
            for a in d["agents"]
        ]
        return cls(int(d["scene_id"]), agents, d["scenario_kind"], int(d["rng_seed"]), d.get("meta", {}))


# --------------------------------------------------------------------------
# Simulation primitives


class _Lane1D:
    """Longitudinal state history of one agent moving along a straight lane."""

    def __init__(self, n_steps, x0, v0, lane, direction, lane_width):
        self.x = np.zeros(n_steps)
        self.v = np.zeros(n_steps)
        self.a = np.zeros(n_steps)
        self.y = np.full(n_steps, lane * lane_width)
        self.x[0], self.v[0] = x0, v0
        self.lane = lane
        self.direction = direction

    def step(self, n, accel, dt, v_max):
        v_next = min(max(self.v[n] + accel * dt, 0.0), v_max)
        self.a[n] = (v_next - self.v[n]) / dt
        self.v[n + 1] = v_next
        self.x[n + 1] = self.x[n] + self.direction * v_next * dt



def _maneuver_profile(rng, n_steps, dt, t0_index, mild=False):
    """Latent future maneuver: cruise, brake or accelerate, starting after the
    current time so the observed past does not reveal it."""
    prof = np.zeros(n_steps)
    kind = rng.choice(3, p=(0.3, 0.4, 0.3))
    onset = t0_index + 1 + int(rng.uniform(0.0, 3.0) / dt)
    dur = int(rng.uniform(1.5, 3.5) / dt)
    scale = 0.5 if mild else 1.0
    if kind == 1:
        prof[onset:onset + dur] = -scale * rng.uniform(2.0, 4.0)
    elif kind == 2:
        prof[onset:onset + dur] = scale * rng.uniform(1.0, 2.0)
    return prof


def _idm_sample(rng) -> IDMParams:
    return IDMParams(
        v0=rng.uniform(22.0, 32.0),
        time_headway=rng.uniform(1.0, 1.8),
        a_max=rng.uniform(1.0, 2.0),
        b_comf=rng.uniform(1.5, 3.0),
        s0=rng.uniform(2.0, 4.0),
    )


def _drive_free(agent, rng, cfg, n_total, t0, mild=False):
    """Exogenous random driver: latent maneuver plus white acceleration noise."""
    prof = _maneuver_profile(rng, n_total, cfg.dt, t0, mild)
    noise = cfg.accel_noise * rng.standard_normal(n_total)
    for n in range(n_total - 1):
        agent.step(n, prof[n] + noise[n], cfg.dt, cfg.v_max)


def simulate_follower(leader_x, leader_v, leader_a, x0, v0, p: IDMParams, cfg: SimConfig,
                      noise=None, leader_length=0.0):
    """Roll out a follower behind a given leader trajectory (1-D, +x).

    Acceleration at step n is the IDM response to the gap and closing speed
    seen ``delay_steps`` ago plus ``anticipation_gain`` times the leader's
    acceleration at that delayed step. Returns ``(x, v, a)`` arrays.
    """
    n_total = len(leader_x)
    d = cfg.delay_steps
    f = _Lane1D(n_total, x0, v0, 0, 1, cfg.lane_width)
    if noise is None:
        noise = np.zeros(n_total)
    for n in range(n_total - 1):
        m = max(n - d, 0)
        gap = leader_x[m] - f.x[m] - leader_length
        acc = idm_acceleration(f.v[n], gap, f.v[n] - leader_v[m], p)
        acc += cfg.anticipation_gain * leader_a[m]
        acc = min(max(acc, -_MAX_DECEL), _MAX_ACCEL) + noise[n]
        f.step(n, acc, cfg.dt, cfg.v_max)
    return f.x, f.v, f.a


def _car_follow(rng, cfg, n_total, t0, layout):
    w = cfg.lane_width
    lead = _Lane1D(n_total, 0.0, 0.0, 0, 1, w)
    p = _idm_sample(rng)
    if layout == "pruning":
        v_lead = rng.uniform(8.0, 14.0)
        v_fol = v_lead + rng.uniform(2.0, 5.0)
        gap = rng.uniform(25.0, 40.0)
    else:
        v_lead = rng.uniform(8.0, 20.0)
        v_fol = max(v_lead + rng.uniform(-1.0, 4.0), 1.0)
        gap = idm_equilibrium_gap(min(v_fol, 0.9 * p.v0), p) * rng.uniform(0.8, 1.6)
    lead.v[0] = v_lead
    _drive_free(lead, rng, cfg, n_total, t0)
    noise = cfg.follower_noise * rng.standard_normal(n_total)
    fx, fv, fa = simulate_follower(lead.x, lead.v, lead.a, -gap, v_fol, p, cfg, noise)
    fol = _Lane1D(n_total, 0.0, 0.0, 0, 1, w)
    fol.x, fol.v, fol.a = fx, fv, fa
    return [(lead, "leader"), (fol, "follower")], {"leader": 0, "follower": 1}


def _cut_in(rng, cfg, n_total, t0):
    w = cfg.lane_width
    dt = cfg.dt
    cutter = _Lane1D(n_total, 0.0, rng.uniform(10.0, 20.0), 1, 1, w)
    _drive_free(cutter, rng, cfg, n_total, t0, mild=True)
    intent = bool(rng.random() < 0.5)
    t_cut = t0 + 1 + int(rng.uniform(0.0, 2.5) / dt)
    dur = int(2.0 / dt)
    if intent:
        u = np.clip((np.arange(n_total) - t_cut) / dur, 0.0, 1.0)
        cutter.y = w + (0.0 - w) * (1 - np.cos(np.pi * u)) / 2
    v_fol = cutter.v[0] + rng.uniform(-1.0, 2.0)
    p = _idm_sample(rng)
    p = IDMParams(v_fol + rng.uniform(1.0, 4.0), p.time_headway, p.a_max, p.b_comf, p.s0)
    fol = _Lane1D(n_total, -rng.uniform(12.0, 30.0), v_fol, 0, 1, w)
    d = cfg.delay_steps
    noise = cfg.follower_noise * rng.standard_normal(n_total)
    for n in range(n_total - 1):
        m = max(n - d, 0)
        in_lane = abs(cutter.y[m]) < 0.5 * w and cutter.x[m] > fol.x[m]
        if in_lane:
            acc = idm_acceleration(fol.v[n], cutter.x[m] - fol.x[m], fol.v[n] - cutter.v[m], p)
            acc += cfg.anticipation_gain * cutter.a[m]
        else:
            acc = idm_acceleration(fol.v[n], math.inf, 0.0, p)
        acc = min(max(acc, -_MAX_DECEL), _MAX_ACCEL) + noise[n]
        fol.step(n, acc, dt, cfg.v_max)
    return [(cutter, "leader"), (fol, "follower")], {"leader": 0, "follower": 1, "intent": intent}


class _TurnPath:
    """Straight +x approach, quarter-circle left turn, then straight +y."""

    def __init__(self, x_turn, radius):
        self.x_turn = x_turn
        self.radius = radius
        self.arc = 0.5 * math.pi * radius

    def pose(self, s, turning):
        if not turning or s <= self.x_turn:
            return s, 0.0, 0.0
        r = self.radius
        u = s - self.x_turn
        if u <= self.arc:
            phi = u / r
            return self.x_turn + r * math.sin(phi), r * (1 - math.cos(phi)), phi
        return self.x_turn + r, r + (u - self.arc), 0.5 * math.pi


def _yield_turn(rng, cfg, n_total, t0):
    w = cfg.lane_width
    dt = cfg.dt
    d = cfg.delay_steps
    radius = 10.0
    lead_dist = rng.uniform(4.0, 14.0)
    turning = bool(rng.random() < 0.5)
    # Query agent: arclength s along its path; the turn point is placed
    # lead_dist ahead of its current position.
    s = np.zeros(n_total)
    v = np.zeros(n_total)
    v[0] = rng.uniform(8.0, 12.0)
    noise = 0.3 * cfg.accel_noise * rng.standard_normal(n_total)
    x_turn = math.inf
    arc = 0.5 * math.pi * radius
    for n in range(n_total - 1):
        if n == t0:
            x_turn = s[t0] + lead_dist
        if turning and n >= t0:
            acc = 1.0 * (6.0 - v[n]) if s[n] < x_turn + arc else 1.0
        else:
            acc = 0.0
        v[n + 1] = min(max(v[n] + (acc + noise[n]) * dt, 0.0), cfg.v_max)
        s[n + 1] = s[n] + v[n + 1] * dt
    path = _TurnPath(x_turn, radius)
    qa = np.array([path.pose(si, turning) for si in s])
    # Oncoming agent in lane 1 heading -x, timed to reach the conflict zone
    # around when the query agent reaches the turn.
    phi_c = math.acos(1 - w / radius)
    x_conflict = x_turn + radius * math.sin(phi_c)
    stop_x = x_conflict + 5.0
    reach = np.nonzero(s >= x_turn)[0]
    n_arrive = reach[0] if reach.size else n_total
    p = _idm_sample(rng)
    vb0 = rng.uniform(8.0, 14.0)
    p = IDMParams(vb0 + rng.uniform(1.0, 4.0), p.time_headway, p.a_max, p.b_comf, p.s0)
    xb0 = stop_x + vb0 * (n_arrive * dt + rng.uniform(1.5, 3.5))
    onc = _Lane1D(n_total, xb0, vb0, 1, -1, w)
    bnoise = cfg.follower_noise * rng.standard_normal(n_total)
    for n in range(n_total - 1):
        m = max(n - d, 0)
        gap = onc.x[n] - stop_x
        yielding = qa[m, 2] > 0.05 and qa[m, 1] < w + 2.5 and gap > onc.v[n] ** 2 / 16.0
        if yielding:
            acc = idm_acceleration(onc.v[n], gap, onc.v[n], p)
        else:
            acc = idm_acceleration(onc.v[n], math.inf, 0.0, p)
        acc = min(max(acc, -_MAX_DECEL), _MAX_ACCEL) + bnoise[n]
        onc.step(n, acc, dt, cfg.v_max)
    query = _Lane1D(n_total, 0.0, 0.0, 0, 1, w)
    query.x, query.y = qa[:, 0], qa[:, 1]
    query.v = v
    query.heading = qa[:, 2]
    return [(query, "leader"), (onc, "follower")], {
        "leader": 0, "follower": 1, "intent": turning,
    }


def _independent(rng, cfg, n_total, t0):
    w = cfg.lane_width
    a = _Lane1D(n_total, 0.0, rng.uniform(8.0, 22.0), 0, 1, w)
    b = _Lane1D(n_total, rng.uniform(-30.0, 30.0), rng.uniform(8.0, 22.0), 2, 1, w)
    rng_a, rng_b = rng.spawn(2)
    _drive_free(a, rng_a, cfg, n_total, t0)
    _drive_free(b, rng_b, cfg, n_total, t0)
    return [(a, "independent"), (b, "independent")], {}


def _confounded_stop(rng, cfg, n_total, t0):
    w = cfg.lane_width
    dt = cfg.dt
    t_stop = t0 + 1 + int(rng.uniform(0.0, 3.5) / dt)
    dur = int(2.0 / dt)
    agents = []
    for lane, sub in zip((0, 1), rng.spawn(2)):
        ag = _Lane1D(n_total, sub.uniform(-15.0, 15.0), sub.uniform(10.0, 20.0), lane, 1, w)
        decel = sub.uniform(1.5, 3.0)
        noise = cfg.accel_noise * sub.standard_normal(n_total)
        for n in range(n_total - 1):
            acc = -decel if t_stop <= n < t_stop + dur else 0.0
            ag.step(n, acc + noise[n], dt, cfg.v_max)
        agents.append((ag, "independent"))
    return agents, {"stop_index": int(t_stop - t0), "stop_duration_steps": dur}


_CORE_LANES = {
    "car_follow": (0,), "cut_in": (0, 1), "yield_turn": (0, 1),
    "independent": (0, 2), "confounded_stop": (0, 1),
}
_FREE_LANES = {
    "car_follow": (-2, -1, 1, 2), "cut_in": (-2, -1, 2, 3), "yield_turn": (-3, -2, -1),
    "independent": (-2, -1, 1, 3), "confounded_stop": (-2, -1, 2, 3),
}


def _to_track(agent, role, agent_id, cfg, t0):
    h, t = cfg.history, cfg.horizon
    dt = cfg.dt
    if hasattr(agent, "heading"):
        vx = agent.v * np.cos(agent.heading)
        vy = agent.v * np.sin(agent.heading)
    else:
        vx = agent.direction * agent.v
        vy = np.gradient(agent.y) / dt
    state = np.stack([agent.x, agent.y, vx, vy], axis=1)
    past = state[t0 - h + 1:t0 + 1].copy()
    future = state[t0 + 1:t0 + 1 + t, :2].copy()
    return AgentTrack(agent_id, int(agent.lane), past, Trajectory(future, dt), role)


def generate_scene(cfg: SimConfig, kind: str, scene_id: int, rng_seed: int) -> Scene:
    """Simulate one scene. The RNG stream is derived from ``(rng_seed, scene_id)``."""
    rng = np.random.default_rng([rng_seed, scene_id])
    t0 = _BURN_IN + cfg.history - 1
    n_total = t0 + cfg.horizon + 1
    if kind == "car_follow":
        core, meta = _car_follow(rng, cfg, n_total, t0, cfg.layout)
    elif kind == "cut_in":
        core, meta = _cut_in(rng, cfg, n_total, t0)
    elif kind == "yield_turn":
        core, meta = _yield_turn(rng, cfg, n_total, t0)
    elif kind == "independent":
        core, meta = _independent(rng, cfg, n_total, t0)
    elif kind == "confounded_stop":
        core, meta = _confounded_stop(rng, cfg, n_total, t0)
    else:
        raise ConfigError(f"unknown scenario kind {kind!r}", "kind")

    agents = list(core)
    ref_x = core[0][0].x[t0] if kind != "car_follow" else core[1][0].x[t0]
    if cfg.layout == "pruning" and kind == "car_follow":
        # Three independent distractors closer to the follower than its leader.
        for lane, sub in zip((-1, 1, 2), rng.spawn(3)):
            bg = _Lane1D(n_total, 0.0, core[1][0].v[t0] + sub.uniform(-2.0, 2.0), lane, 1, cfg.lane_width)
            _drive_free(bg, sub, cfg, n_total, t0)
            bg.x += ref_x + sub.uniform(-10.0, 2.0) - bg.x[t0]
            agents.append((bg, "independent"))
    else:
        room = cfg.n_max - len(core)
        n_bg = int(rng.integers(min(cfg.background_min, room), min(cfg.background_max, room) + 1))
        lanes = rng.permutation(_FREE_LANES[kind])[:n_bg]
        for lane, sub in zip(lanes, rng.spawn(n_bg)):
            bg = _Lane1D(n_total, 0.0, sub.uniform(8.0, 22.0), int(lane), 1, cfg.lane_width)
            _drive_free(bg, sub, cfg, n_total, t0)
            bg.x += ref_x + sub.uniform(-30.0, 30.0) - bg.x[t0]
            agents.append((bg, "independent"))

    tracks = []
    for i, (ag, role) in enumerate(agents):
        tracks.append(_to_track(ag, role, i, cfg, t0))
    if cfg.tag_av:
        av = meta.get("follower", int(rng.integers(len(tracks))))
        tracks[av].role_tag = "av"
    return Scene(scene_id, tracks, kind, rng_seed, meta)


def kind_counts(mix: dict, n: int) -> dict:
    """Largest-remainder allocation of ``n`` scenes to kinds."""
    kinds = [k for k in KINDS if mix.get(k, 0) > 0]
    raw = {k: mix[k] * n for k in kinds}
    counts = {k: int(math.floor(raw[k])) for k in kinds}
    rest = n - sum(counts.values())
    for k in sorted(kinds, key=lambda k: (-(raw[k] - counts[k]), KINDS.index(k)))[:rest]:
        counts[k] += 1
    return counts


def generate_dataset(cfg: SimConfig, n_scenes: int, rng_seed: int) -> list:
    """Generate ``n_scenes`` scenes with kinds allocated by ``cfg.mix``."""
    cfg.validate()
    if n_scenes < 1:
        raise ConfigError("must be >= 1", "n_scenes")
    counts = kind_counts(cfg.mix, n_scenes)
    kinds = [k for k in KINDS for _ in range(counts.get(k, 0))]
    order = np.random.default_rng([rng_seed, 2**31 - 1]).permutation(len(kinds))
    return [generate_scene(cfg, kinds[j], i, rng_seed) for i, j in enumerate(order)]


def split_dataset(scenes, fractions, rng_seed):
    """Disjoint, exhaustive train/val/test split stratified by scenario kind.

    Split sizes follow ``fractions`` exactly (largest remainder). Scenes are
    grouped by kind, shuffled within each kind, and dealt to splits with a
    low-discrepancy sequence, so each kind's share of every split is within
    one scene of its global share.
    """
    scenes = list(scenes)
    fr = np.asarray(fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigError("need three positive fractions summing to 1", "fractions")
    by_kind = {}
    for s in scenes:
        by_kind.setdefault(s.scenario_kind, []).append(s)
    if len(scenes) < max(len(by_kind), 3):
        raise ConfigError("fewer scenes than strata", "fractions")
    rng = np.random.default_rng(rng_seed)
    ordered = []
    for k in sorted(by_kind, key=KINDS.index):
        group = by_kind[k]
        ordered.extend(group[i] for i in rng.permutation(len(group)))
    n = len(ordered)
    sizes = np.array(_largest_remainder(fr * n))
    taken = np.zeros(3)
    parts = ([], [], [])
    for i, s in enumerate(ordered):
        lag = sizes * (i + 1) / n - taken
        lag[taken >= sizes] = -np.inf
        j = int(np.argmax(lag))
        taken[j] += 1
        parts[j].append(s)
    return tuple(sorted(p, key=lambda s: s.scene_id) for p in parts)


def _largest_remainder(raw):
    raw = np.asarray(raw, dtype=float)
    base = np.floor(raw).astype(int)
    rest = int(round(raw.sum())) - int(base.sum())
    for i in np.argsort(-(raw - base), kind="stable")[:rest]:
        base[i] += 1
    return [int(b) for b in base]


# --------------------------------------------------------------------------
# JSON Lines dataset files


def _config_dict(cfg: SimConfig) -> dict:
    return asdict(cfg)


def dumps_dataset(scenes: Iterable, cfg: SimConfig | None = None, rng_seed=None) -> str:
    scenes = list(scenes)
    header = {"schema": SCHEMA, "count": len(scenes), "rng_seed": rng_seed,
              "units": {"position": "m", "velocity": "m/s", "dt": "s"},
              "config": _config_dict(cfg) if cfg is not None else None}
    lines = [json.dumps(header, sort_keys=True)]
    lines.extend(json.dumps(s.to_dict(), sort_keys=True) for s in scenes)
    return "\n".join(lines) + "\n"


def write_dataset(path, scenes, cfg=None, rng_seed=None) -> str:
    """Write scenes as JSON Lines. Returns the sha256 of the file content."""
    text = dumps_dataset(scenes, cfg, rng_seed)
    with open(path, "w") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def read_dataset(path):
    """Read a dataset file; returns ``(header, scenes)``."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != SCHEMA:
            raise ConfigError(f"unsupported dataset schema {header.get('schema')!r}", "dataset")
        scenes = [Scene.from_dict(json.loads(line)) for line in fh if line.strip()]
    if header.get("count") not in (None, len(scenes)):
        raise ConfigError(f"header count {header['count']} != {len(scenes)} scenes", "dataset")
    return header, scenes


def longitudinal_accel(track: AgentTrack, dt=None) -> np.ndarray:
    """Acceleration along the direction of travel over the future, from
    second differences of position (length T-1)."""
    dt = track.future.dt if dt is None else dt
    pos = np.vstack([track.past[-1:, :2], track.future.states])
    vel = np.diff(pos, axis=0) / dt
    speed = np.linalg.norm(vel, axis=1)
    return np.diff(speed) / dt
