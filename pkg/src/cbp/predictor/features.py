"""Agent-relative input features.

Every feature is expressed relative to the target agent's current position
(and, for neighbor velocities, its current velocity), so translating a whole
scene leaves the features unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError
from ..trajectory import Trajectory, as_states


@dataclass(frozen=True)
class ConditionalQuery:
    """Future plan of ``agent_id`` supplied as model input."""

    agent_id: int
    plan: Trajectory

    def __post_init__(self):
        if not isinstance(self.plan, Trajectory):
            object.__setattr__(self, "plan", Trajectory(as_states(self.plan)))


def own_dim(cfg) -> int:
    return 4 * cfg.history


def nbr_dim(cfg) -> int:
    return 4 * cfg.history + 2


def query_dim(cfg) -> int:
    return 4 * cfg.horizon + 8


class SceneEncoding:
    """Query-independent features for every agent of a scene.

    Attributes
    ----------
    ids : list of agent ids, in scene order
    own : (N, own_dim) past-track features per agent
    nbr : (N, N-1, nbr_dim) neighbor features, neighbors in scene order
    origin : (N, 2) current positions
    velocity : (N, 2) current velocities
    future : (N, T, 2) ground-truth futures in world frame, or None
    """

    def __init__(self, scene, cfg):
        agents = scene.agents
        n = len(agents)
        h = cfg.history
        past = np.stack([np.asarray(a.past, dtype=float) for a in agents])
        if past.shape[1] != h:
            raise DimensionError(f"past length {past.shape[1]} != configured history {h}")
        self.ids = [a.agent_id for a in agents]
        self.origin = past[:, -1, :2].copy()
        self.velocity = past[:, -1, 2:].copy()
        rel = (past[:, :, :2] - self.origin[:, None, :]) / cfg.pos_scale
        vel = past[:, :, 2:] / cfg.vel_scale
        self.own = np.concatenate([rel.reshape(n, -1), vel.reshape(n, -1)], axis=1)
        lanes = np.array([a.lane_index for a in agents], dtype=float)
        self.lanes = lanes
        self.nbr = np.zeros((n, max(n - 1, 0), nbr_dim(cfg)))
        for i in range(n):
            others = [j for j in range(n) if j != i]
            if not others:
                continue
            o = np.array(others)
            prel = (past[o, :, :2] - self.origin[i]) / cfg.pos_scale
            vrel = (past[o, :, 2:] - self.velocity[i]) / cfg.vel_scale
            lane_diff = (lanes[o] - lanes[i])[:, None]
            same = (lanes[o] == lanes[i]).astype(float)[:, None]
            self.nbr[i] = np.concatenate(
                [prel.reshape(len(o), -1), vrel.reshape(len(o), -1), lane_diff / 2.0, same], axis=1
            )
        fut = [a.future.states if a.future is not None else None for a in agents]
        self.future = None if any(f is None for f in fut) else np.stack(fut)

    def index(self, agent_id) -> int:
        try:
            return self.ids.index(agent_id)
        except ValueError:
            raise KeyError(f"agent {agent_id} not in scene") from None


def query_features(enc: SceneEncoding, target: int, query_idx: int | None, plan, cfg) -> np.ndarray:
    """Query-encoder input for target row ``target``; zeros when no query.

    Blocks: the plan minus the target's constant-velocity extrapolation (where
    the query goes relative to the target's path), the plan minus the query
    agent's own constant-velocity extrapolation (the query's maneuver), the
    query agent's offset and velocity relative to the target, the lane
    difference and a same-lane flag, the closest approach of the plan to the
    target's constant-velocity path, and a presence flag.
    """
    out = np.zeros(query_dim(cfg))
    if query_idx is None:
        return out
    plan = as_states(plan)
    if plan.shape != (cfg.horizon, 2):
        raise DimensionError(f"query plan shape {plan.shape} != ({cfg.horizon}, 2)")
    t = cfg.horizon
    steps = np.arange(1, t + 1)[:, None] * cfg.dt
    o = enc.origin[target]
    cv = o + steps * enc.velocity[target]
    q = cfg.query_scale
    q_cv = enc.origin[query_idx] + steps * enc.velocity[query_idx]
    out[: 2 * t] = ((plan - cv) / q).ravel()
    out[2 * t: 4 * t] = ((plan - q_cv) / q).ravel()
    out[4 * t: 4 * t + 2] = (enc.origin[query_idx] - o) / cfg.pos_scale
    out[4 * t + 2: 4 * t + 4] = (enc.velocity[query_idx] - enc.velocity[target]) / cfg.vel_scale
    out[4 * t + 4] = (enc.lanes[query_idx] - enc.lanes[target]) / 2.0
    out[4 * t + 5] = float(enc.lanes[query_idx] == enc.lanes[target])
    out[4 * t + 6] = np.linalg.norm(plan - cv, axis=1).min() / cfg.pos_scale
    out[4 * t + 7] = 1.0
    return out
