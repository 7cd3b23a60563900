"""Cart-pole simulator with configurable pole mass and length.

Frictionless cart-pole (Barto et al. equations, as in the Gym cart-pole)
integrated with semi-implicit Euler: velocities first, then positions with
the new velocities. ``pole_length`` is the pivot-to-centre-of-mass distance.
Episodes never terminate early; the reward just drops to 0 once the pole is
out of the upright band.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .rng import SeededRng
from .types import ACTION_HIGH, STATE_DIM, as_state, clamp_action

CART_MASS = 1.0
GRAVITY = 9.8
DT = 0.02
NOISE_STD = 0.01
THETA_LIMIT = 0.2
X_LIMIT = 2.4
EPISODE_LENGTH = 100
INIT_RANGE = 0.05
MAX_RETURN = float(EPISODE_LENGTH)

PARAMETER_NAMES = ("pole_mass", "pole_length")


@dataclass(frozen=True)
class PhysicsParams:
    pole_mass: float = 0.1
    pole_length: float = 1.0
    cart_mass: float = CART_MASS
    gravity: float = GRAVITY

    def __post_init__(self):
        for name in ("pole_mass", "pole_length", "cart_mass", "gravity"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    def with_value(self, name, value):
        if name not in PARAMETER_NAMES:
            raise ValueError(f"unknown physical parameter {name!r}")
        return PhysicsParams(**{**self.__dict__, name: float(value)})


NOMINAL = PhysicsParams()


def dynamics_mean(s, a, p: PhysicsParams = NOMINAL, dt=DT):
    """Noiseless next state; the force is clamped to the action bounds."""
    out = _kernels.cartpole_step(np.asarray(s, dtype=np.float64).reshape(1, STATE_DIM), a,
                                 p.pole_mass, p.pole_length, p.cart_mass, p.gravity, dt, ACTION_HIGH)
    return out[0]


def dynamics_mean_batch(states, actions, pole_mass, pole_length, cart_mass=CART_MASS,
                        gravity=GRAVITY, dt=DT):
    """Vectorised ``dynamics_mean``; masses and lengths may be per-row arrays."""
    return _kernels.cartpole_step(states, actions, pole_mass, pole_length, cart_mass, gravity,
                                  dt, ACTION_HIGH)


def is_upright(s):
    s = np.asarray(s)
    return (np.abs(s[..., 2]) <= THETA_LIMIT) & (np.abs(s[..., 0]) <= X_LIMIT)


def reward(s):
    """1.0 inside the upright band, else 0.0. Depends on the state only."""
    return float(is_upright(s))


def total_energy(s, p: PhysicsParams = NOMINAL):
    """Mechanical energy of the cart plus a uniform rod with centre of mass at ``pole_length``."""
    x, xd, th, thd = np.asarray(s, dtype=np.float64)
    m, l, big_m, g = p.pole_mass, p.pole_length, p.cart_mass, p.gravity
    kinetic = 0.5 * (big_m + m) * xd**2 + m * l * xd * thd * np.cos(th) + (2.0 / 3.0) * m * l**2 * thd**2
    return kinetic + m * g * l * np.cos(th)


class EpisodeDone(RuntimeError):
    pass


@dataclass
class EnvInstance:
    params: PhysicsParams
    rng: SeededRng
    noise_std: np.ndarray = field(default_factory=lambda: np.full(STATE_DIM, NOISE_STD))
    dt: float = DT
    episode_length: int = EPISODE_LENGTH

    def __post_init__(self):
        self.noise_std = np.broadcast_to(np.asarray(self.noise_std, dtype=np.float64), (STATE_DIM,)).copy()
        if np.any(self.noise_std < 0):
            raise ValueError("noise_std must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        self.steps = 0
        self.state = np.zeros(STATE_DIM)
        self.done = False

    def reset(self, state=None):
        if state is None:
            state = self.rng.uniform(-INIT_RANGE, INIT_RANGE, STATE_DIM)
        self.state = as_state(state)
        self.steps = 0
        self.done = False
        return self.state.copy()

    def step(self, action):
        """Advance one step; returns (next_state, reward, done)."""
        if self.done:
            raise EpisodeDone("episode finished; call reset() first")
        nxt = dynamics_mean(self.state, clamp_action(action), self.params, self.dt)
        if np.any(self.noise_std > 0):
            nxt = nxt + self.noise_std * self.rng.normal(size=STATE_DIM)
            nxt[2] = _kernels.wrap_angle(nxt[2:3])[0]
        self.state = nxt
        self.steps += 1
        self.done = self.steps >= self.episode_length
        return nxt.copy(), reward(nxt), self.done


def env_step(env: EnvInstance, a):
    return env.step(a)


def make_env(params=NOMINAL, seed=0, *path, noise_std=NOISE_STD, episode_length=EPISODE_LENGTH):
    return EnvInstance(params, SeededRng(seed, "env-noise", path), noise_std=noise_std,
                       episode_length=episode_length)


@dataclass(frozen=True)
class PerturbationGrid:
    parameter_name: str
    values: tuple
    episodes_per_value: int = 100

    def __post_init__(self):
        if self.parameter_name not in PARAMETER_NAMES:
            raise ValueError(f"parameter_name must be one of {PARAMETER_NAMES}")
        v = np.asarray(self.values, dtype=np.float64)
        if v.size == 0:
            raise ValueError("grid must be nonempty")
        if np.any(v <= 0):
            raise ValueError("grid values must be positive")
        if np.any(np.diff(v) <= 0):
            raise ValueError("grid values must be strictly increasing")
        if self.episodes_per_value < 1:
            raise ValueError("episodes_per_value must be positive")

    def __len__(self):
        return len(self.values)


def make_grid(name, lo, hi, n, episodes_per_value=100, spacing="linear"):
    """``n`` values from ``lo`` to ``hi`` inclusive, evenly spaced (linear or log)."""
    if n < 2:
        raise ValueError("need >= 2 grid points")
    if not lo < hi:
        raise ValueError("lo must be < hi")
    if spacing == "linear":
        values = np.linspace(lo, hi, n)
    elif spacing == "log":
        values = np.geomspace(lo, hi, n)
    else:
        raise ValueError(f"spacing must be 'linear' or 'log', got {spacing!r}")
    values[0], values[-1] = lo, hi
    return PerturbationGrid(name, tuple(float(v) for v in values), episodes_per_value)


DEFAULT_RANGES = {"pole_mass": (0.05, 10.0), "pole_length": (0.3, 3.0)}
