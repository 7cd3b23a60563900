"""Perturbation sweeps, Robust-AUC and the fixed-parameter comparison ensembles.

Episode (grid index i, episode e) of a sweep run with ``seed`` always uses
the env-noise stream ``(seed, "eval", i, e, 0)`` and the planner stream
``(seed, "eval", i, e, 1)``, so two methods evaluated with one seed face the
same initial states and the same noise draws.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .cem import MpcController
from .config import CemConfig
from .ensemble import Ensemble, PhysicsMember
from .env import MAX_RETURN, NOISE_STD, NOMINAL, EnvInstance, PerturbationGrid, PhysicsParams
from .rng import SeededRng

__all__ = ["RobustCurve", "RobustAucReport", "ComparisonRow", "evaluate_episodes", "evaluate_sweep",
           "robust_auc", "make_report", "make_baseline_ensemble", "compare_methods", "write_curve_csv",
           "read_curve_csv", "summary_dict", "write_summary_json"]


@dataclass(frozen=True)
class RobustCurve:
    parameter_name: str
    values: tuple
    median_return: tuple
    q25: tuple
    q75: tuple
    episodes_per_value: int

    def __post_init__(self):
        n = len(self.values)
        if not (len(self.median_return) == len(self.q25) == len(self.q75) == n):
            raise ValueError("curve columns must have equal length")
        lo, med, hi = map(np.asarray, (self.q25, self.median_return, self.q75))
        if np.any(lo > med) or np.any(med > hi):
            raise ValueError("quartiles must bracket the median")

    @classmethod
    def from_returns(cls, name, values, returns):
        """``returns``: (n_values, n_episodes) per-episode returns."""
        r = np.asarray(returns, dtype=np.float64)
        q25, med, q75 = np.percentile(r, [25, 50, 75], axis=1)
        return cls(name, tuple(float(v) for v in values), tuple(map(float, med)), tuple(map(float, q25)),
                   tuple(map(float, q75)), int(r.shape[1]))


@dataclass(frozen=True)
class RobustAucReport:
    curve: RobustCurve
    auc: float
    nominal_value: float

    def __post_init__(self):
        if not 0.0 <= self.auc <= 1.0:
            raise ValueError(f"auc must lie in [0, 1], got {self.auc}")

    @property
    def nominal_median(self):
        i = int(np.argmin(np.abs(np.asarray(self.curve.values) - self.nominal_value)))
        return self.curve.median_return[i]


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    auc: float
    nominal_median: float


def _run_episode(ensemble, cem_cfg, params, seed, i, e, noise_std, episode_length):
    env = EnvInstance(params, SeededRng(seed, "eval", (i, e, 0)), noise_std=noise_std,
                      episode_length=episode_length)
    ctrl = MpcController(ensemble, cem_cfg, SeededRng(seed, "eval", (i, e, 1)))
    s = env.reset()
    total, done = 0.0, False
    while not done:
        s, r, done = env.step(ctrl.act(s))
        total += r
    return total


def evaluate_episodes(ensemble: Ensemble, cem_cfg: CemConfig, params: PhysicsParams, seed, n_episodes,
                      index=0, noise_std=NOISE_STD, episode_length=100):
    """Returns of ``n_episodes`` test episodes at ``params``; ``index`` selects the seed block."""
    return np.array([_run_episode(ensemble, cem_cfg, params, seed, index, e, noise_std, episode_length)
                     for e in range(n_episodes)])


def _point(args):
    ensemble, cem_cfg, params, seed, i, n, noise_std, episode_length = args
    return evaluate_episodes(ensemble, cem_cfg, params, seed, n, i, noise_std, episode_length)


def evaluate_sweep(ensemble: Ensemble, cem_cfg: CemConfig, grid: PerturbationGrid, seed,
                   nominal: PhysicsParams = NOMINAL, jobs=1, noise_std=NOISE_STD, episode_length=100):
    """Median and quartile returns at every grid value. The ensemble is only read."""
    tasks = [(ensemble, cem_cfg, nominal.with_value(grid.parameter_name, v), seed, i,
              grid.episodes_per_value, noise_std, episode_length) for i, v in enumerate(grid.values)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            returns = list(pool.map(_point, tasks))
    else:
        returns = [_point(t) for t in tasks]
    return RobustCurve.from_returns(grid.parameter_name, grid.values, returns)


def robust_auc(curve: RobustCurve, max_return=MAX_RETURN):
    """Trapezoid area under the median curve over (value range * max_return)."""
    x = np.asarray(curve.values, dtype=np.float64)
    y = np.asarray(curve.median_return, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need >= 2 grid points")
    span = x[-1] - x[0]
    if not span > 0:
        raise ValueError("grid values must be increasing")
    area = float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))
    return area / (span * max_return)


def make_report(curve: RobustCurve, nominal_value, max_return=MAX_RETURN):
    return RobustAucReport(curve, robust_auc(curve, max_return), float(nominal_value))


def make_baseline_ensemble(kind, nominal: PhysicsParams = NOMINAL, B=9, spread=2.0,
                           fixed_variance=NOISE_STD**2):
    """Physics ensembles with hand-set parameters.

    ``single``: B copies of the nominal parameters. ``uniform``: a sqrt(B) x
    sqrt(B) grid, log-evenly spaced over [nominal/spread, nominal*spread] in
    both mass and length, row-major with mass as the slow index.
    """
    if B < 1:
        raise ValueError("B must be positive")
    if kind == "single":
        pairs = [(nominal.pole_mass, nominal.pole_length)] * B
    elif kind == "uniform":
        k = math.isqrt(B)
        if k * k != B:
            raise ValueError(f"uniform baseline needs a perfect-square B, got {B}")
        if not spread > 1:
            raise ValueError("spread must exceed 1")
        factors = np.exp(np.linspace(-math.log(spread), math.log(spread), k))
        pairs = [(nominal.pole_mass * fm, nominal.pole_length * fl) for fm in factors for fl in factors]
    else:
        raise ValueError(f"unknown baseline kind {kind!r}; expected 'single' or 'uniform'")
    members = [PhysicsMember(m, l, fixed_variance, nominal.cart_mass, nominal.gravity) for m, l in pairs]
    return Ensemble(members)


def compare_methods(reports: dict):
    """Rows sorted by auc (descending), ties by method name."""
    if not reports:
        return []
    grids = {(r.curve.parameter_name, r.curve.values) for r in reports.values()}
    if len(grids) != 1:
        raise ValueError("reports were computed on different grids")
    rows = [ComparisonRow(name, r.auc, r.nominal_median) for name, r in reports.items()]
    return sorted(rows, key=lambda row: (-row.auc, row.method))


def write_curve_csv(curve: RobustCurve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["value", "median", "q25", "q75"])
        for row in zip(curve.values, curve.median_return, curve.q25, curve.q75):
            w.writerow([repr(float(v)) for v in row])


def read_curve_csv(path, parameter_name, episodes_per_value):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    col = lambda k: tuple(float(r[k]) for r in rows)  # noqa: E731
    return RobustCurve(parameter_name, col("value"), col("median"), col("q25"), col("q75"),
                       int(episodes_per_value))


def summary_dict(method, report: RobustAucReport, seeds, spacing=None):
    c = report.curve
    out = {"method": method, "parameter": c.parameter_name, "auc": report.auc,
           "nominal_value": report.nominal_value, "nominal_median": report.nominal_median,
           "grid": list(c.values), "episodes_per_value": c.episodes_per_value,
           "seeds": [int(s) for s in seeds], "curve": {k: list(v) for k, v in asdict(c).items()
                                                      if k in ("median_return", "q25", "q75")}}
    if spacing is not None:
        out["spacing"] = spacing
    return out


def write_summary_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
