"""Gradients and first-order optimisation for the ensemble members."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .tape import NonFiniteError, Var, value_and_grad


@dataclass
class ParamVector:
    """Flat parameter vector plus named segments ``name -> (start, stop, shape)``."""
    values: np.ndarray
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not self.layout:
            self.layout = {"params": (0, self.values.size, self.values.shape)}
        spans = sorted((start, stop) for start, stop, _ in self.layout.values())
        pos = 0
        for start, stop in spans:
            if start != pos or stop < start:
                raise ValueError("layout segments must be disjoint and contiguous")
            pos = stop
        if pos != self.values.size:
            raise ValueError("layout does not cover the parameter vector")

    def __len__(self):
        return self.values.size

    def segment(self, name, flat=None):
        """Segment ``name`` of ``flat`` (defaults to own values), reshaped. Works on tape Vars."""
        start, stop, shape = self.layout[name]
        src = self.values if flat is None else flat
        return tape.reshape(tape.index(src, slice(start, stop)), shape)

    def with_values(self, values):
        return ParamVector(np.array(values, dtype=np.float64), self.layout)

    def copy(self):
        return self.with_values(self.values.copy())


def _flat(at):
    return at.values if isinstance(at, ParamVector) else np.asarray(at, dtype=np.float64)


def grad(loss_fn, at):
    """Reverse-mode gradient of scalar ``loss_fn`` (a function of a flat Var) at ``at``."""
    return value_and_grad(loss_fn, _flat(at))[1]


def fd_step(x):
    return 1e-5 * (1.0 + np.abs(x))


def grad_fd(loss_fn, at, h=None):
    """Central finite differences; ``h`` scalar, per-coordinate array, or the default 1e-5*(1+|x|)."""
    x = np.array(_flat(at), dtype=np.float64, copy=True)
    steps = fd_step(x) if h is None else np.broadcast_to(np.asarray(h, dtype=np.float64), x.shape)
    g = np.zeros_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + steps[i]
        up = float(tape.value(loss_fn(x)))
        x[i] = orig - steps[i]
        down = float(tape.value(loss_fn(x)))
        x[i] = orig
        g[i] = (up - down) / (2.0 * steps[i])
    return g


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    learning_rate: float = 1e-3
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n, learning_rate=1e-3):
        return cls(np.zeros(n), np.zeros(n), learning_rate)

    def copy(self):
        return AdamState(self.first_moment.copy(), self.second_moment.copy(), self.learning_rate,
                         self.step_count, self.beta1, self.beta2, self.epsilon)


def adam_step(params, g, state: AdamState):
    """One bias-corrected Adam update. Returns new (params, state); inputs are untouched."""
    x = _flat(params)
    g = np.asarray(g, dtype=np.float64)
    if g.shape != x.shape or state.first_moment.shape != x.shape:
        raise ValueError(f"shape mismatch: params {x.shape}, grad {g.shape}, "
                         f"moments {state.first_moment.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * g
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_x = x - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, state.learning_rate, t, state.beta1, state.beta2, state.epsilon)
    if isinstance(params, ParamVector):
        return params.with_values(new_x), new_state
    return new_x, new_state


__all__ = ["ParamVector", "AdamState", "NonFiniteError", "Var", "adam_step", "grad", "grad_fd",
           "fd_step", "tape", "value_and_grad"]
