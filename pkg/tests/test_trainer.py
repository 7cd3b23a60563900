import csv
import math

import numpy as np
import pytest

import uduc.trainer as trainer_mod
from oracles import semi_implicit_euler_batch, wrapped_residual
from uduc.config import CemConfig, ExperimentConfig
from uduc.ensemble import Ensemble, PhysicsMember, ensemble_digest
from uduc.env import DT, NOMINAL, make_env
from uduc.losses import LossBreakdown
from uduc.rng import SeededRng
from uduc.trainer import (LOSS_COLUMNS, STEP_COLUMNS, TrainingDiverged, init_run, run_training, update_models,
                          write_loss_log, write_train_log)

SMALL_CEM = CemConfig(horizon=15, population=30, elite_count=3, iterations=2, particles=2)
SMALL = ExperimentConfig(ensemble_size=3, max_training_steps=120, model_update_frequency=50, seed=1)


def offline_run(cfg, n=1000, members=None, seed=0):
    """A run whose buffer holds ``n`` random-action transitions from the nominal env."""
    run = init_run(cfg, SMALL_CEM, members and Ensemble(members))
    env = make_env(NOMINAL, seed, 99)
    r = np.random.default_rng(seed)
    s = env.reset()
    for _ in range(n):
        a = r.uniform(-10, 10)
        nxt, rew, done = env.step(a)
        run.buffer.add(s, a, rew, nxt)
        s = env.reset() if done else nxt
    return run


def grid_mle(buffer, m_grid, l_grid):
    data = buffer.view()
    best, arg = math.inf, None
    for m in m_grid:
        pred = semi_implicit_euler_batch(data.states[None], data.actions[None], m, l_grid[:, None], DT)
        nll = np.sum(wrapped_residual(pred, data.next_states[None]) ** 2, axis=(1, 2))
        i = int(np.argmin(nll))
        if nll[i] < best:
            best, arg = nll[i], (m, l_grid[i])
    return arg


def log_spread(ensemble):
    logs = np.log([[m.pole_mass, m.pole_length] for m in ensemble.members])
    return logs.std(axis=0)


# ---- cadence ----------------------------------------------------------------------

def test_table_settings_give_five_updates():
    cfg = ExperimentConfig()
    assert (cfg.max_training_steps, cfg.model_update_frequency, cfg.model_batch_size, cfg.ensemble_size) == \
        (500, 100, 32, 9)
    _, log = run_training(cfg, SMALL_CEM)
    assert log.n_updates == 5 and log.update_events == [100, 200, 300, 400, 500]
    assert len(log.steps) == 500 and sum(r.update for r in log.steps) == 5


@pytest.mark.parametrize("steps,F", [(120, 50), (100, 100), (99, 100), (90, 30)])
def test_update_cadence(steps, F):
    _, log = run_training(SMALL.replace(max_training_steps=steps, model_update_frequency=F), SMALL_CEM)
    assert log.n_updates == steps // F
    assert log.update_events == [F * (k + 1) for k in range(steps // F)]


def test_no_trigger_returns_initial_ensemble():
    cfg = SMALL.replace(model_update_frequency=1000)
    ens, log = run_training(cfg, SMALL_CEM)
    fresh = Ensemble.physics(3, SeededRng(cfg.seed, "ensemble-init"))
    assert log.n_updates == 0 and log.losses == []
    assert ensemble_digest(ens) == ensemble_digest(fresh)


def test_episode_resets():
    _, log = run_training(SMALL.replace(max_training_steps=250, model_update_frequency=1000), SMALL_CEM)
    assert len(log.episode_returns) == 2
    assert [r.episode for r in log.steps][::100] == [0, 1, 2]
    assert log.episode_returns[0] == log.steps[99].episode_return


# ---- behaviour --------------------------------------------------------------------

def test_loss_choice_cannot_act_before_first_update():
    _, pe = run_training(SMALL.replace(tau=math.inf), SMALL_CEM)
    _, uduc = run_training(SMALL.replace(tau=1.0), SMALL_CEM)
    F = SMALL.model_update_frequency
    assert [r.action for r in pe.steps[:F]] == [r.action for r in uduc.steps[:F]]
    assert pe.losses[0].contrastive == 0.0 and uduc.losses[0].contrastive != 0.0


def test_data_conservation():
    seen = []

    def hook(run):
        seen.append((run.step, len(run.buffer)))
        # the step row is logged after the update, so the buffer is one ahead of the log
        assert np.array_equal(run.buffer.view().actions[:-1], [r.action for r in run.log.steps])
    run_training(SMALL, SMALL_CEM, on_update=hook)
    assert seen == [(50, 50), (100, 100)]


def test_buffer_holds_every_transition():
    run = init_run(SMALL, SMALL_CEM)
    trainer_mod.train_loop(run, SMALL)
    assert len(run.buffer) == SMALL.max_training_steps
    assert np.array_equal(run.buffer.view().actions, [r.action for r in run.log.steps])
    assert np.array_equal(run.buffer.view().rewards, [r.reward for r in run.log.steps])


def test_run_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        ens, log = run_training(SMALL, SMALL_CEM)
        write_train_log(log, tmp_path / f"t{k}.csv")
        write_loss_log(log, tmp_path / f"l{k}.csv")
        outs.append(ensemble_digest(ens))
    assert outs[0] == outs[1]
    assert (tmp_path / "t0.csv").read_bytes() == (tmp_path / "t1.csv").read_bytes()
    assert (tmp_path / "l0.csv").read_bytes() == (tmp_path / "l1.csv").read_bytes()


def test_targets_lag_live_after_update():
    run = offline_run(SMALL.replace(rho=0.5), n=200)
    update_models(run, SMALL.replace(rho=0.5))
    assert np.linalg.norm(run.ensemble.target_matrix() - run.ensemble.live_matrix()) > 0
    run1 = offline_run(SMALL.replace(rho=1.0), n=200)
    update_models(run1, SMALL.replace(rho=1.0))
    assert np.array_equal(run1.ensemble.target_matrix(), run1.ensemble.live_matrix())


def test_minibatch_schedule():
    cfg = SMALL.replace(bootstrap_samples=70, model_batch_size=32, update_epochs=2)
    run = offline_run(cfg, n=200)
    summaries = update_models(run, cfg)
    assert len(summaries) == 3 and all(isinstance(s, LossBreakdown) for s in summaries)
    assert len(run.log.losses) == 3 * 2 * 3
    assert [r.minibatch for r in run.log.losses[:6]] == list(range(6))
    assert all(len(d) == 70 for d in run.ensemble.sub_buffers)


def test_single_member_is_pure_regression():
    """With one member and no self-regularization the set is the positive alone.

    Then the loss is (1 - 1/tau) * PE, and Adam's scale invariance makes the
    update coincide with plain PE for any tau > 1.
    """
    member = PhysicsMember(0.14, 0.8)
    cfg_pe = SMALL.replace(ensemble_size=1, tau=math.inf, self_regularization=False, model_learning_rate=1e-2)
    cfg_u = cfg_pe.replace(tau=2.0)
    pe, uduc = offline_run(cfg_pe, 300, [member]), offline_run(cfg_u, 300, [member])
    for _ in range(3):
        update_models(pe, cfg_pe)
        update_models(uduc, cfg_u)
    np.testing.assert_allclose(uduc.ensemble.live_matrix(), pe.ensemble.live_matrix(), rtol=1e-6)
    rec = uduc.log.losses[0]
    assert rec.contrastive == pytest.approx(-rec.nll / 2.0, rel=1e-12)


def test_empty_buffer_update():
    with pytest.raises(ValueError):
        update_models(init_run(SMALL, SMALL_CEM), SMALL)


@pytest.mark.parametrize("failure", ["nan", "fpe"])
def test_nan_aborts_with_diagnostics(monkeypatch, failure):
    def broken(member, batch, tau, l2):
        if failure == "fpe":
            raise FloatingPointError("log produced nan")
        return LossBreakdown(math.nan, math.nan, 0.0, 0.0), np.full(member.params.values.size, math.nan)

    monkeypatch.setattr(trainer_mod, "objective_value_and_grad", broken)
    with pytest.raises(TrainingDiverged) as err:
        run_training(SMALL, SMALL_CEM)
    d = err.value.diagnostics
    assert d["step"] == 50 and d["member"] == 0 and d["minibatch"] == 0
    assert d["live"].shape == (3, 2) and d["targets"].shape == (3, 2) and d["batch_states"].shape[1] == 4


# ---- what the updates learn -------------------------------------------------------

FAR = [PhysicsMember(0.3, 2.0), PhysicsMember(0.035, 0.5), PhysicsMember(0.2, 0.6)]


def test_plain_pe_identifies_parameters():
    cfg = SMALL.replace(tau=math.inf, model_learning_rate=1e-2, model_batch_size=100)
    run = offline_run(cfg, 1000, FAR)
    # mass is weakly identified (its effect is small next to the noise), so this needs many events
    for _ in range(400):
        update_models(run, cfg)
    oracle = grid_mle(run.buffer, np.exp(np.linspace(np.log(0.05), np.log(0.2), 61)),
                      np.exp(np.linspace(np.log(0.5), np.log(2.0), 61)))
    assert abs(oracle[0] / 0.1 - 1) < 0.1 and abs(oracle[1] - 1) < 0.1
    for m in run.ensemble.targets:
        assert abs(m.pole_mass / 0.1 - 1) < 0.1 and abs(m.pole_length - 1) < 0.1
        assert abs(math.log(m.pole_mass / oracle[0])) < 0.1 and abs(math.log(m.pole_length / oracle[1])) < 0.1


def test_uduc_spreads_members_more_than_pe():
    base = SMALL.replace(ensemble_size=9, model_learning_rate=1e-2, model_batch_size=100, seed=0)
    spreads = {}
    for name, tau in (("pe", math.inf), ("uduc", 1.0)):
        cfg = base.replace(tau=tau)
        run = offline_run(cfg, 1000)
        for _ in range(30):
            update_models(run, cfg)
        spreads[name] = log_spread(run.ensemble)
    assert spreads["uduc"].sum() > spreads["pe"].sum()


# ---- logs -------------------------------------------------------------------------

def test_csv_logs(tmp_path):
    _, log = run_training(SMALL, SMALL_CEM)
    write_train_log(log, tmp_path / "train.csv")
    write_loss_log(log, tmp_path / "loss.csv")
    with open(tmp_path / "train.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == STEP_COLUMNS and len(rows) == 120
    assert [int(r["step"]) for r in rows] == list(range(1, 121))
    assert [int(r["update"]) for r in rows].count(1) == 2
    with open(tmp_path / "loss.csv") as fh:
        losses = list(csv.DictReader(fh))
    assert tuple(losses[0]) == LOSS_COLUMNS
    # 2 update events: buffers of 50 and 100 -> 2 and 4 minibatches per member
    assert len(losses) == 3 * (2 + 4)
    for r in losses:
        assert float(r["total"]) == pytest.approx(float(r["nll"]) + float(r["contrastive"]))
        assert float(r["grad_norm"]) >= 0
