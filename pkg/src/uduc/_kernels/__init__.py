"""Hot-kernel dispatch.

The numba path is used when numba imports cleanly and ``UDUC_DISABLE_NUMBA``
is unset (or "0"); otherwise the pure-numpy path runs. Both are importable
directly as ``uduc._kernels._numpy`` and ``uduc._kernels._numba`` for
cross-checking and benchmarking.
"""
import os

import numpy as np

from . import _numpy

_disabled = os.environ.get("UDUC_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

if _disabled:
    _impl = None
else:
    try:
        from . import _numba as _impl
    except ImportError:  # pragma: no cover - numba missing
        _impl = None

USING_NUMBA = _impl is not None
BACKEND = "numba" if USING_NUMBA else "numpy"


def backend(name=None):
    """Kernel module for ``name`` ("numba" / "numpy"), or the active one."""
    if name is None:
        name = BACKEND
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba
        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


def cartpole_step(states, forces, m, l, cart_mass, gravity, dt, force_max, impl=None):
    states = np.ascontiguousarray(states, dtype=np.float64).reshape(-1, 4)
    n = states.shape[0]
    forces = np.ascontiguousarray(np.broadcast_to(np.asarray(forces, dtype=np.float64), (n,)))
    m = np.ascontiguousarray(np.broadcast_to(np.asarray(m, dtype=np.float64), (n,)))
    l = np.ascontiguousarray(np.broadcast_to(np.asarray(l, dtype=np.float64), (n,)))
    mod = backend(impl)
    return mod.cartpole_step(states, forces, m, l, float(cart_mass), float(gravity),
                             float(dt), float(force_max))


def rollout_returns(s0, actions, m_b, l_b, noise_std, particles, key, cart_mass, gravity,
                    dt, force_max, x_limit, theta_limit, impl=None):
    mod = backend(impl)
    return mod.rollout_returns(
        np.ascontiguousarray(s0, dtype=np.float64),
        np.ascontiguousarray(actions, dtype=np.float64),
        np.ascontiguousarray(m_b, dtype=np.float64),
        np.ascontiguousarray(l_b, dtype=np.float64),
        np.ascontiguousarray(noise_std, dtype=np.float64),
        int(particles),
        np.uint64(key),
        float(cart_mass), float(gravity), float(dt), float(force_max),
        float(x_limit), float(theta_limit),
    )


# counter RNG helpers are integer-exact; numpy versions serve both paths
mix64 = _numpy.mix64
substream = _numpy.substream
draw = _numpy.draw
step_normals = _numpy.step_normals
to_unit = _numpy.to_unit
wrap_angle = _numpy.wrap_angle
DRAWS_PER_STEP = _numpy.DRAWS_PER_STEP
