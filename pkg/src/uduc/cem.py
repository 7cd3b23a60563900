"""Cross-entropy-method MPC over the ensemble's target models.

Candidates are ranked by mean trajectory-sampling return, highest first. That
is the same ordering as ranking by exp(-return) ascending, without the
underflow. Each iteration's particle noise comes from a counter stream keyed
by (plan step, iteration), and within it by (candidate, particle), so the
scores do not depend on evaluation order.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .config import CemConfig
from .ensemble import Ensemble, rollout_states
from .env import THETA_LIMIT, X_LIMIT, is_upright
from .rng import SeededRng, counter_key
from .types import ACTION_HIGH, ACTION_LOW

__all__ = ["CemConfig", "PlanResult", "MpcController", "cem_optimize", "cem_plan", "score_candidate",
           "score_population", "mpc_act"]

log = logging.getLogger(__name__)


def score_population(ensemble: Ensemble, s0, actions, particles, key, arrays=None):
    """Mean return over ``particles`` rollouts for each row of ``actions`` (N, H).

    ``arrays`` may carry precomputed ``ensemble.physics_arrays("targets")``.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if ensemble.kind == "physics":
        m, l, std = ensemble.physics_arrays("targets") if arrays is None else arrays
        first = ensemble.targets[0]
        return _kernels.rollout_returns(s0, actions, m, l, std, particles, key, first.cart_mass,
                                        first.gravity, first.dt, ACTION_HIGH, X_LIMIT, THETA_LIMIT)
    states = rollout_states(ensemble.targets, s0, actions, particles, key)
    return is_upright(states).sum(axis=-1).mean(axis=-1).astype(np.float64)


def score_candidate(actions, ensemble: Ensemble, s0, P, rng: SeededRng):
    """Mean cumulative reward of one action sequence over P rollouts."""
    return float(score_population(ensemble, s0, np.asarray(actions, dtype=np.float64)[None], P, rng.key())[0])


@dataclass
class PlanResult:
    mean: np.ndarray
    variance: np.ndarray
    best_returns: list = field(default_factory=list)
    elite_means: list = field(default_factory=list)

    @property
    def action(self):
        return float(np.clip(self.mean[0], ACTION_LOW, ACTION_HIGH))


def cem_optimize(scorer: Callable, horizon, cfg: CemConfig, rng: SeededRng, init_mean=None,
                 low=ACTION_LOW, high=ACTION_HIGH):
    """Generic CEM over length-``horizon`` sequences.

    ``scorer(X, iteration)`` returns one score per row of X (higher is better).
    The best candidate of each iteration is carried into the next population
    so the best elite score never decreases under a deterministic scorer.
    """
    mean = np.zeros(horizon) if init_mean is None else np.array(init_mean, dtype=np.float64)
    var = np.full(horizon, cfg.init_std**2)
    result = PlanResult(mean, var)
    carry = None
    for j in range(cfg.iterations):
        X = mean + np.sqrt(var) * rng.normal(size=(cfg.population, horizon))
        if carry is not None:
            X[-1] = carry
        np.clip(X, low, high, out=X)
        scores = np.asarray(scorer(X, j), dtype=np.float64)
        order = np.argsort(-scores, kind="stable")
        elites = X[order[: cfg.elite_count]]
        mean = elites.mean(axis=0)
        var = np.maximum(elites.var(axis=0), cfg.variance_floor)
        carry = X[order[0]].copy()
        result.best_returns.append(float(scores[order[0]]))
        result.elite_means.append(float(scores[order[: cfg.elite_count]].mean()))
    result.mean, result.variance = mean, var
    return result


def cem_plan(ensemble: Ensemble, s0, cfg: CemConfig, rng: SeededRng, init_mean=None, key=None,
             return_result=False):
    """Plan from ``s0`` and return the first action of the refitted mean, clamped."""
    base = rng.key() if key is None else np.uint64(key)
    s0 = np.asarray(s0, dtype=np.float64)
    arrays = ensemble.physics_arrays("targets") if ensemble.kind == "physics" else None

    def scorer(X, j):
        return score_population(ensemble, s0, X, cfg.particles, counter_key(base, j), arrays)

    result = cem_optimize(scorer, cfg.horizon, cfg, rng, init_mean)
    return result if return_result else result.action


class MpcController:
    """Receding-horizon controller; replans every ``cfg.replan_frequency`` steps."""

    def __init__(self, ensemble: Ensemble, cfg: CemConfig, rng: SeededRng):
        self.ensemble = ensemble
        self.cfg = cfg
        self.rng = rng
        self.base_key = rng.key()
        self.steps = 0
        self.plan = None
        self.plan_calls = 0
        self.last: Optional[PlanResult] = None

    def reset(self):
        self.plan = None
        self.steps = 0

    def _initial_mean(self):
        if self.plan is None or not self.cfg.warm_start:
            return np.zeros(self.cfg.horizon)
        k = self.cfg.replan_frequency
        shifted = np.zeros(self.cfg.horizon)
        if k < self.cfg.horizon:
            shifted[: self.cfg.horizon - k] = self.plan[k:]
        return shifted

    def act(self, observation):
        k = self.cfg.replan_frequency
        offset = self.steps % k
        if offset == 0 or self.plan is None:
            key = counter_key(self.base_key, self.plan_calls)
            self.last = cem_plan(self.ensemble, observation, self.cfg, self.rng,
                                 init_mean=self._initial_mean(), key=key, return_result=True)
            self.plan = self.last.mean
            self.plan_calls += 1
            offset = 0
        self.steps += 1
        idx = min(offset, self.cfg.horizon - 1)
        return float(np.clip(self.plan[idx], ACTION_LOW, ACTION_HIGH))

    def diagnostics(self):
        if self.last is None:
            return {"best_return": float("nan"), "elite_mean_norm": float("nan"), "elite_var_norm": float("nan")}
        return {"best_return": self.last.best_returns[-1],
                "elite_mean_norm": float(np.linalg.norm(self.last.mean)),
                "elite_var_norm": float(np.linalg.norm(self.last.variance))}


def mpc_act(controller: MpcController, observation):
    return controller.act(observation)
