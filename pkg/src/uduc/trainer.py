"""Online MPC training loop: act with CEM, store transitions, refit the ensemble.

Every ``model_update_frequency`` env steps the sub-datasets are re-drawn
from the buffer, each member runs one epoch of minibatch Adam on the batch
objective (negatives from targets frozen for the whole event), and the
targets take one Polyak step. Planning always uses the targets.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .cem import MpcController
from .config import CemConfig, ExperimentConfig, validate_config
from .diffnum import AdamState, adam_step
from .ensemble import Ensemble, bootstrap, build_sample_set, polyak_update
from .env import NOMINAL, EnvInstance, PhysicsParams, make_env
from .losses import LossBreakdown, objective_value_and_grad
from .rng import SeededRng
from .types import STATE_DIM, ReplayBuffer, UDUCSampleSet

__all__ = ["TrainingDiverged", "StepRecord", "LossRecord", "TrainLog", "TrainRunState", "init_run",
           "update_models", "run_training", "write_train_log", "write_loss_log",
           "STEP_COLUMNS", "LOSS_COLUMNS"]

log = logging.getLogger(__name__)

STEP_COLUMNS = ("step", "episode", "action", "reward", "episode_return", "plan_best_return", "update")
LOSS_COLUMNS = ("step", "member", "minibatch", "total", "nll", "contrastive", "l2", "grad_norm")


class TrainingDiverged(RuntimeError):
    """A non-finite loss or gradient; ``diagnostics`` holds the state at failure."""

    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class StepRecord:
    step: int
    episode: int
    action: float
    reward: float
    episode_return: float
    plan_best_return: float
    update: int


@dataclass(frozen=True)
class LossRecord:
    step: int
    member: int
    minibatch: int
    total: float
    nll: float
    contrastive: float
    l2: float
    grad_norm: float


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    update_events: list = field(default_factory=list)

    @property
    def n_updates(self):
        return len(self.update_events)


@dataclass
class TrainRunState:
    step: int
    env: EnvInstance
    ensemble: Ensemble
    buffer: ReplayBuffer
    adam_states: list
    log: TrainLog
    controller: MpcController
    bootstrap_rng: SeededRng
    negatives_rng: SeededRng


def init_run(cfg: ExperimentConfig, cem_cfg: CemConfig, ensemble: Optional[Ensemble] = None,
             nominal: PhysicsParams = NOMINAL):
    """Fresh run state; every random consumer gets its own stream of ``cfg.seed``."""
    validate_config(cfg, cem_cfg)
    if ensemble is None:
        init = SeededRng(cfg.seed, "ensemble-init")
        if cfg.model_type == "physics":
            ensemble = Ensemble.physics(cfg.ensemble_size, init, nominal)
        else:
            ensemble = Ensemble.mlp(cfg.ensemble_size, init)
    env = make_env(nominal, cfg.seed, episode_length=cfg.episode_length)
    adam = [AdamState.zeros(m.params.values.size, cfg.model_learning_rate) for m in ensemble.members]
    controller = MpcController(ensemble, cem_cfg, SeededRng(cfg.seed, "cem"))
    return TrainRunState(0, env, ensemble, ReplayBuffer(cfg.capacity), adam, TrainLog(), controller,
                         SeededRng(cfg.seed, "bootstrap"), SeededRng(cfg.seed, "negatives"))


def _sample_set(ensemble, b, data, cfg, rng):
    if cfg.plain_pe:
        # the contrastive term is dropped, so negatives would never be read
        n = len(data)
        return UDUCSampleSet(data.next_states.copy(), np.empty((n, 0, STATE_DIM)), data.states.copy(),
                             data.actions.copy())
    return build_sample_set(ensemble, b, data.states, data.actions, data.next_states,
                            cfg.self_regularization, rng)


def _diagnostics(run, b, minibatch, batch, params):
    return {"step": run.step, "member": b, "minibatch": minibatch,
            "params": np.array(params, copy=True),
            "live": run.ensemble.live_matrix(), "targets": run.ensemble.target_matrix(),
            "batch_states": batch.state.copy(), "batch_actions": batch.action.copy()}


def update_models(run: TrainRunState, cfg: ExperimentConfig):
    """One update event. Returns the mean LossBreakdown of each member over its minibatches."""
    if len(run.buffer) == 0:
        raise ValueError("cannot update models from an empty buffer")
    ens = run.ensemble
    B = ens.size
    N = cfg.bootstrap_samples or len(run.buffer)
    subs = bootstrap(run.buffer, B, N, run.bootstrap_rng)
    ens.sub_buffers = subs
    bs = cfg.model_batch_size
    n_batches = math.ceil(N / bs)
    schedule = [(e, k) for e in range(cfg.update_epochs) for k in range(n_batches)]
    summaries = []
    for b in range(B):
        data = subs[b]
        cached = None if cfg.resample_negatives else _sample_set(ens, b, data, cfg, run.negatives_rng)
        rows = []
        for e, k in schedule:
            idx = np.arange(k * bs, min((k + 1) * bs, N))
            batch = cached.take(idx) if cached is not None else _sample_set(
                ens, b, data.take(idx), cfg, run.negatives_rng)
            member = ens.members[b]
            try:
                bd, g = objective_value_and_grad(member, batch, cfg.tau, cfg.l2_coefficient)
            except FloatingPointError as err:
                raise TrainingDiverged(f"member {b} diverged at step {run.step}: {err}",
                                       _diagnostics(run, b, k, batch, member.params.values)) from err
            if not (math.isfinite(bd.total) and np.all(np.isfinite(g))):
                raise TrainingDiverged(f"non-finite loss for member {b} at step {run.step}",
                                       _diagnostics(run, b, k, batch, member.params.values))
            params, run.adam_states[b] = adam_step(member.params, g, run.adam_states[b])
            ens.members[b] = member.clone(params.values)
            gn = float(np.linalg.norm(g))
            run.log.losses.append(LossRecord(run.step, b, e * n_batches + k, bd.total, bd.nll_term, bd.contrastive_term,
                                             bd.l2_term, gn))
            rows.append((bd.total, bd.nll_term, bd.contrastive_term, bd.l2_term))
        summaries.append(LossBreakdown(*(float(v) for v in np.mean(rows, axis=0))))
    polyak_update(ens, cfg.rho)
    run.log.update_events.append(run.step)
    log.debug("update at step %d: mean total %.4f", run.step, np.mean([s.total for s in summaries]))
    return summaries


def run_training(cfg: ExperimentConfig, cem_cfg: CemConfig, ensemble: Optional[Ensemble] = None,
                 on_update: Optional[Callable[[TrainRunState], None]] = None,
                 nominal: PhysicsParams = NOMINAL):
    """Run ``cfg.max_training_steps`` env steps. Returns (ensemble, TrainLog).

    ``on_update`` is called after every update event (checkpointing hook).
    """
    run = init_run(cfg, cem_cfg, ensemble, nominal)
    train_loop(run, cfg, on_update)
    return run.ensemble, run.log


def train_loop(run: TrainRunState, cfg: ExperimentConfig, on_update=None):
    env, ctrl = run.env, run.controller
    state = env.reset()
    ctrl.reset()
    episode, ep_return = 0, 0.0
    for t in range(1, cfg.max_training_steps + 1):
        action = ctrl.act(state)
        nxt, r, done = env.step(action)
        run.buffer.add(state, action, r, nxt)
        run.step = t
        ep_return += r
        updated = t % cfg.model_update_frequency == 0
        if updated:
            update_models(run, cfg)
            if on_update is not None:
                on_update(run)
        best = ctrl.last.best_returns[-1] if ctrl.last is not None else float("nan")
        run.log.steps.append(StepRecord(t, episode, float(action), float(r), ep_return, best, int(updated)))
        state = nxt
        if done:
            run.log.episode_returns.append(ep_return)
            log.info("episode %d return %.0f", episode, ep_return)
            episode += 1
            ep_return = 0.0
            state = env.reset()
            ctrl.reset()
    return run


def _write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(getattr(row, c)) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_train_log(train_log: TrainLog, path):
    """One row per env step."""
    _write_rows(path, STEP_COLUMNS, train_log.steps)


def write_loss_log(train_log: TrainLog, path):
    """One row per (update event, member, minibatch)."""
    _write_rows(path, LOSS_COLUMNS, train_log.losses)
