"""Acceptance criteria 1-11, one test each.

Each test records a PASS/FAIL line in ``RESULTS``; conftest prints them in
the terminal summary. Criteria 5-7 share one set of training runs.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

import uduc.cli as cli
from oracles import central_differences, gaussian_nll, mlp_forward_stacked, pe_objective, uduc_objective
from uduc.cem import cem_optimize
from uduc.config import DEFAULT_CEM, CemConfig, ExperimentConfig
from uduc.diffnum import tape, value_and_grad
from uduc.ensemble import MlpMember
from uduc.env import DEFAULT_RANGES, NOMINAL, make_grid
from uduc.losses import info_nce, objective_value_and_grad, pe_loss, uduc_loss
from uduc.rng import SeededRng
from uduc.robustness import (RobustCurve, evaluate_episodes, evaluate_sweep, make_baseline_ensemble, make_report,
                             robust_auc)
from uduc.trainer import run_training
from uduc.types import UDUCSampleSet

RESULTS = {}

SEEDS = range(5)
TRAIN_CEM = CemConfig(population=100, elite_count=10, iterations=3, particles=4)
EVAL_CEM = CemConfig(population=60, elite_count=6, iterations=3, particles=3)
GRID_POINTS, GRID_EPISODES = 20, 20


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[n]


def random_case(seed, n=None, min_set=0):
    """Random member, tau and a set drawn around the member's own prediction.

    Samples sit 0.5 to 3 predicted standard deviations out, like real
    positives and negatives, so the losses stay at their usual scale.
    """
    r = np.random.default_rng(seed)
    member = MlpMember.init(SeededRng(seed, "ensemble-init"))
    k = int(r.integers(min_set, 10))
    m = 1 if n is None else n
    states, actions = r.normal(size=(m, 4)), r.uniform(-10, 10, size=m)
    mean, var = (np.asarray(v) for v in member.mean_var(member.params.values, states, actions))
    scale = np.sqrt(var)[:, None, :] * r.uniform(0.5, 3.0, size=(m, k + 1, 1))
    samples = mean[:, None, :] + scale * r.normal(size=(m, k + 1, 4))
    ss = UDUCSampleSet(samples[:, 0], samples[:, 1:], states, actions)
    if n is None:
        ss = ss.take(0)
    return member, ss, float(np.exp(r.uniform(np.log(0.1), np.log(10.0))))


def test_1_loss_identity():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(1000):
        member, ss, tau = random_case(seed)
        direct = uduc_loss(member, ss, tau).total
        rewritten = (1 - 1 / tau) * pe_loss(member, ss.state, ss.action, ss.positive) + info_nce(member, ss, tau)
        worst = max(worst, abs(direct - rewritten))
    elapsed = time.perf_counter() - t0
    record(1, worst < 1e-10 and elapsed < 5, f"max |difference| {worst:.1e} over 1000 draws in {elapsed:.1f}s")


def _fd_error(member, ss, loss):
    layout = member.params.layout
    if loss == "pe":
        _, g = value_and_grad(lambda x: tape.mean(pe_loss(member, ss.state, ss.action, ss.positive, flat=x)),
                              member.params.values)
    else:
        _, g = objective_value_and_grad(member, ss, 1.0)

    def stacked(rows):
        mean, var = mlp_forward_stacked(rows, layout, ss.state, ss.action, member.var_min, member.var_max)
        nll = gaussian_nll(mean, var, ss.all_samples())
        return pe_objective(nll) if loss == "pe" else uduc_objective(nll, 1.0)

    fd = central_differences(stacked, member.params.values, chunk=256)
    return np.max(np.abs(g - fd)) / np.max(np.abs(fd))


def test_2_gradients_match_finite_differences():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(100):
        member, ss, _ = random_case(seed, n=4, min_set=1)
        worst = max(worst, _fd_error(member, ss, "pe"), _fd_error(member, ss, "uduc"))
    elapsed = time.perf_counter() - t0
    record(2, worst < 1e-4 and elapsed < 60, f"max relative error {worst:.1e} over 100 seeds in {elapsed:.1f}s")


def test_3_high_temperature_limit():
    worst = 0.0
    for seed in range(20):
        member, ss, _ = random_case(seed, n=8, min_set=1)
        _, g_pe = value_and_grad(lambda x: tape.mean(pe_loss(member, ss.state, ss.action, ss.positive, flat=x)),
                                 member.params.values)
        _, g = objective_value_and_grad(member, ss, 1e6)
        worst = max(worst, np.linalg.norm(g - g_pe) / np.linalg.norm(g_pe))
    record(3, worst < 1e-4, f"max relative gradient gap {worst:.1e} at tau=1e6 over 20 seeds")


def test_4_nominal_control():
    t0 = time.perf_counter()
    medians = {}
    for name, tau in (("plain PE", math.inf), ("UDUC", 1.0)):
        ens, _ = run_training(ExperimentConfig(tau=tau, seed=0), DEFAULT_CEM)
        returns = evaluate_episodes(ens, DEFAULT_CEM, NOMINAL, seed=100, n_episodes=20)
        medians[name] = float(np.median(returns))
    elapsed = time.perf_counter() - t0
    ok = all(m >= 90 for m in medians.values()) and elapsed < 20 * 60
    record(4, ok, f"median nominal return {medians} (full planner), {elapsed:.0f}s")


# ---- criteria 5-7: shared runs ------------------------------------------------------

@pytest.fixture(scope="session")
def trained():
    """Ensembles per (method, seed); hyperparameters as in the table, cheaper planner."""
    modes = {"pe": dict(tau=math.inf), "uduc": dict(tau=1.0), "uduc-noself": dict(tau=1.0, self_regularization=False)}
    return {(name, s): run_training(ExperimentConfig(seed=s, **kw), TRAIN_CEM)[0]
            for name, kw in modes.items() for s in SEEDS}


def spread(ensemble):
    """Total std of (log m, log l) across the live members."""
    logs = np.log([[m.pole_mass, m.pole_length] for m in ensemble.members])
    return float(np.sqrt(np.sum(logs.var(axis=0))))


@pytest.fixture(scope="session")
def sweeps(trained):
    cache = {}

    def get(method, seed, param):
        key = (method, seed, param)
        if key not in cache:
            lo, hi = DEFAULT_RANGES[param]
            grid = make_grid(param, lo, hi, GRID_POINTS, GRID_EPISODES, "log")
            # evaluation seed depends on the training seed only, so methods are paired
            curve = evaluate_sweep(trained[(method, seed)], EVAL_CEM, grid, seed=1000 + seed)
            cache[key] = make_report(curve, getattr(NOMINAL, param))
        return cache[key]
    return get


def test_5_uduc_learns_more_diverse_members(trained):
    pairs = [(spread(trained[("uduc", s)]), spread(trained[("pe", s)])) for s in SEEDS]
    wins = sum(u > p for u, p in pairs)
    detail = ", ".join(f"{u:.4f} vs {p:.4f}" for u, p in pairs)
    record(5, wins == 5, f"UDUC > PE spread in {wins}/5 seeds ({detail})")


GRID_6 = {}


@pytest.mark.parametrize("param", ["pole_mass", "pole_length"])
def test_6_uduc_more_robust(sweeps, param):
    pairs = [(sweeps("uduc", s, param).auc, sweeps("pe", s, param).auc) for s in SEEDS]
    wins = sum(u > p for u, p in pairs)
    detail = ", ".join(f"{u:.4f} vs {p:.4f}" for u, p in pairs)
    GRID_6[param] = (wins >= 4, f"{param}: UDUC > PE Robust-AUC in {wins}/5 seeds ({detail})")
    # one summary line covers both grids; each test still asserts its own grid
    ok = all(g for g, _ in GRID_6.values())
    RESULTS[6] = f"criterion  6: {'PASS' if ok else 'FAIL'}  " + "; ".join(d for _, d in GRID_6.values())
    assert GRID_6[param][0], GRID_6[param][1]


def test_7_self_regularization(sweeps):
    with_self = np.mean([sweeps("uduc", s, "pole_mass").auc for s in SEEDS])
    without = np.mean([sweeps("uduc-noself", s, "pole_mass").auc for s in SEEDS])
    record(7, with_self >= without, f"mean pole_mass Robust-AUC {with_self:.4f} with vs {without:.4f} without")


# ---- criteria 8-11 -----------------------------------------------------------------

def test_8_baseline_placements():
    single = make_baseline_ensemble("single", NOMINAL, 9)
    ok_single = all((m.pole_mass, m.pole_length) == (0.1, 1.0) for m in single.members + single.targets)
    uniform = make_baseline_ensemble("uniform", NOMINAL, 9, 2.0)
    factors = np.exp(np.linspace(-np.log(2.0), np.log(2.0), 3))
    expected = [(0.1 * fm, 1.0 * fl) for fm in factors for fl in factors]
    got = [(m.pole_mass, m.pole_length) for m in uniform.members]
    diagonal = [got[0], got[4], got[8]]
    ok_uniform = got == expected and np.allclose(diagonal, [(0.05, 0.5), (0.1, 1.0), (0.2, 2.0)], rtol=1e-15)
    record(8, ok_single and ok_uniform, f"single exact: {ok_single}; uniform 3x3 log grid exact: {ok_uniform}")


def test_9_robust_auc_oracle():
    def auc(values, medians):
        return robust_auc(RobustCurve("pole_mass", tuple(values), tuple(medians), tuple(medians), tuple(medians), 1))
    errors = [abs(auc((0.3, 3.0), (42.0, 42.0)) - 0.42),
              abs(auc((1e-3, 1.0 + 1e-3), (0.0, 100.0)) - 0.5),
              abs(auc((1.0, 2.0, 3.0), (100.0, 100.0, 0.0)) - 0.75)]
    record(9, max(errors) < 1e-12, f"max error {max(errors):.1e} on the hand trapezoids")


def test_10_determinism(tmp_path):
    config = Path(__file__).resolve().parents[1] / "configs" / "quick.conf"
    small = ["--config", str(config), "--override", "max_training_steps=200", "--override", "ensemble_size=4"]
    grid = ["--points", "4", "--episodes", "3", "--override", "cem.population=40", "--override",
            "cem.elite_count=4"]
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["train", *small, "--out", str(out)]) == 0
        assert cli.main(["eval", str(out / "checkpoint.bin"), *grid, "--out", str(out)]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    record(10, all(same) and len(files) >= 6, f"{sum(same)}/{len(files)} artifacts byte-identical")


def test_11_cem_oracle():
    t0 = time.perf_counter()
    cfg = CemConfig(horizon=3, population=500, elite_count=50, iterations=5)
    grid = np.linspace(-3, 3, 121)
    hits, worst = 0, 0.0
    for seed in range(10):
        r = np.random.default_rng(seed)
        target = r.uniform(-2, 2, 3)
        # exhaustive search over the 0.05 lattice, one coordinate at a time (the oracle is separable)
        best = np.array([grid[np.argmin((grid - t) ** 2)] for t in target])
        mean = cem_optimize(lambda X, j: -np.sum((X - target) ** 2, axis=1), 3, cfg, SeededRng(seed, "cem")).mean
        err = float(np.max(np.abs(mean - best)))
        worst = max(worst, err)
        hits += err < 0.05
    elapsed = time.perf_counter() - t0
    record(11, hits == 10 and elapsed < 10, f"{hits}/10 seeds within 0.05 (worst {worst:.3f}) in {elapsed:.2f}s")
