import os
import statistics
import subprocess
import sys

import numpy as np
import pytest

from uduc import _kernels
from uduc._kernels import _numpy
from uduc.env import CART_MASS, DT, GRAVITY, THETA_LIMIT, X_LIMIT


def _rollout(impl, particles=5, key=99, n_cand=40, horizon=15, B=9, seed=0):
    r = np.random.default_rng(seed)
    m = 0.1 * np.exp(r.uniform(-0.5, 0.5, B))
    l = np.exp(r.uniform(-0.5, 0.5, B))
    actions = r.uniform(-12, 12, (n_cand, horizon))
    s0 = r.uniform(-0.1, 0.1, 4)
    return _kernels.rollout_returns(s0, actions, m, l, np.full(4, 0.01), particles, np.uint64(key),
                                    CART_MASS, GRAVITY, DT, 10.0, X_LIMIT, THETA_LIMIT, impl=impl)


def test_backends_agree_on_step():
    r = np.random.default_rng(3)
    states = r.uniform(-4, 4, (500, 4))
    forces = r.uniform(-15, 15, 500)
    m = r.uniform(0.05, 10, 500)
    l = r.uniform(0.3, 3, 500)
    a = _kernels.cartpole_step(states, forces, m, l, CART_MASS, GRAVITY, DT, 10.0, impl="numpy")
    b = _kernels.cartpole_step(states, forces, m, l, CART_MASS, GRAVITY, DT, 10.0, impl="numba")
    np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("seed", range(3))
def test_backends_agree_on_rollout_returns(seed):
    assert np.array_equal(_rollout("numpy", seed=seed), _rollout("numba", seed=seed))


def test_rollout_key_changes_noise(backend):
    a = _rollout(backend, key=1)
    assert np.array_equal(a, _rollout(backend, key=1))
    assert not np.array_equal(a, _rollout(backend, key=2))


def test_rollout_matches_hand_oracle(backend):
    """Re-derive each candidate's return from its own (candidate, particle) sub-streams."""
    from oracles import semi_implicit_euler

    r = np.random.default_rng(5)
    B, H, P = 3, 10, 2
    m = np.array([0.08, 0.1, 0.15])
    l = np.array([0.9, 1.0, 1.2])
    actions = r.uniform(-5, 5, (4, H))
    s0 = np.array([0.0, 0.0, 0.05, 0.0])
    key = np.uint64(2024)
    got = _kernels.rollout_returns(s0, actions, m, l, np.full(4, 0.01), P, key, CART_MASS, GRAVITY, DT, 10.0,
                                   X_LIMIT, THETA_LIMIT, impl=backend)
    for c in range(actions.shape[0]):
        total = 0.0
        for p in range(P):
            st = _kernels.substream(key, c, p)
            s = s0.copy()
            for t in range(H):
                u, z = _kernels.step_normals(st, t)
                b = min(int(float(u) * B), B - 1)
                s = semi_implicit_euler(s, actions[c, t], m[b], l[b], DT) + 0.01 * z
                s[2] = float(_kernels.wrap_angle(np.array([s[2]]))[0])
                total += float(abs(s[2]) <= THETA_LIMIT and abs(s[0]) <= X_LIMIT)
        assert got[c] == total / P


def test_returns_bounded_by_horizon(backend):
    out = _rollout(backend, horizon=7)
    assert np.all((out >= 0) & (out <= 7))


def test_normal_quantile_accuracy():
    p = np.concatenate([np.linspace(1e-12, 0.02425, 200), np.linspace(0.02425, 0.97575, 400),
                        np.linspace(0.97575, 1 - 1e-12, 200)])
    ref = np.array([statistics.NormalDist().inv_cdf(x) for x in p])
    got = _numpy.normal_quantile(p)
    assert np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)) < 1.2e-9


def test_step_normals_are_standard_normal():
    states = _kernels.substream(np.uint64(7), np.arange(20000), 0)
    _, z = _kernels.step_normals(states, 3)
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1.0) < 0.02


def test_wrap_angle_range():
    th = np.array([0.0, np.pi, -np.pi, 3 * np.pi, -3 * np.pi + 1e-9, 7.0, -7.0])
    w = _kernels.wrap_angle(th)
    assert np.all((w > -np.pi) & (w <= np.pi))
    np.testing.assert_allclose(np.cos(w), np.cos(th), atol=1e-12)
    assert w[1] == np.pi and w[2] == np.pi


def test_disable_flag_selects_numpy():
    code = "from uduc import _kernels; print(_kernels.BACKEND)"
    env = dict(os.environ, UDUC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["UDUC_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numba"


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.backend("cuda")


def test_benchmark_script_runs():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    out = subprocess.run([sys.executable, os.path.join(root, "benchmarks", "bench_kernels.py"), "--repeat", "1",
                          "--population", "20", "--particles", "2"], capture_output=True, text=True, check=True)
    assert out.stdout.count("backends agree: exactly") + out.stdout.count("backends agree: to 1e-12") == 2
