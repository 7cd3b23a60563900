"""numba twins of the kernels in ``_numpy.py``.

Loops replace the vectorised expressions; the arithmetic order is kept so
the two paths agree to rounding. All integer constants are typed uint64 to
stop numba from promoting mixed signed/unsigned arithmetic to float.
"""
import math

import numpy as np
from numba import njit

from ._numpy import ACK_A, ACK_B, ACK_C, ACK_D, DRAWS_PER_STEP, P_LOW

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0
PI = math.pi
TWO_PI = 2.0 * math.pi

OPTS = dict(cache=True, nogil=True, fastmath=False)


@njit(**OPTS)
def _mix64(z):
    z = (z ^ (z >> S30)) * MIX1
    z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


@njit(**OPTS)
def _substream(key, i, j):
    return _mix64(_mix64(key + (np.uint64(i) + ONE) * GOLDEN) + (np.uint64(j) + ONE) * GOLDEN)


@njit(**OPTS)
def _draw(state, k):
    return _mix64(state + (np.uint64(k) + ONE) * GOLDEN)


@njit(**OPTS)
def _unit(x):
    return np.float64(x >> S11) * INV53


@njit(**OPTS)
def _unit_mid(x):
    return (np.float64(x >> S11) + 0.5) * INV53


A0, A1, A2, A3, A4, A5 = ACK_A
B0, B1, B2, B3, B4 = ACK_B
C0, C1, C2, C3, C4, C5 = ACK_C
D0, D1, D2, D3 = ACK_D


@njit(**OPTS)
def _tail(q):
    num = ((((C0 * q + C1) * q + C2) * q + C3) * q + C4) * q + C5
    den = (((D0 * q + D1) * q + D2) * q + D3) * q + 1.0
    return num / den


@njit(**OPTS)
def _quantile(p):
    if p < P_LOW:
        return _tail(math.sqrt(-2.0 * math.log(p)))
    if p > 1.0 - P_LOW:
        return -_tail(math.sqrt(-2.0 * math.log(1.0 - p)))
    q = p - 0.5
    r = q * q
    num = (((((A0 * r + A1) * r + A2) * r + A3) * r + A4) * r + A5) * q
    den = ((((B0 * r + B1) * r + B2) * r + B3) * r + B4) * r + 1.0
    return num / den


@njit(**OPTS)
def _wrap(th):
    if th > PI or th <= -PI:
        th = th - TWO_PI * math.floor((th + PI) / TWO_PI)
        if th <= -PI:
            th += TWO_PI
    return th


@njit(**OPTS)
def _step_into(out, x, xd, th, thd, force, m, l, cart_mass, gravity, dt, force_max):
    f = min(max(force, -force_max), force_max)
    sin = math.sin(th)
    cos = math.cos(th)
    total = cart_mass + m
    temp = (f + m * l * thd * thd * sin) / total
    thacc = (gravity * sin - cos * temp) / (l * (4.0 / 3.0 - m * cos * cos / total))
    xacc = temp - m * l * thacc * cos / total
    xd2 = xd + dt * xacc
    out[0] = x + dt * xd2
    out[1] = xd2
    thd2 = thd + dt * thacc
    out[2] = _wrap(th + dt * thd2)
    out[3] = thd2


@njit(**OPTS)
def cartpole_step(states, forces, m, l, cart_mass, gravity, dt, force_max):
    n = states.shape[0]
    out = np.empty((n, 4))
    for i in range(n):
        _step_into(out[i], states[i, 0], states[i, 1], states[i, 2], states[i, 3],
                   forces[i], m[i], l[i], cart_mass, gravity, dt, force_max)
    return out


@njit(**OPTS)
def rollout_returns(s0, actions, m_b, l_b, noise_std, particles, key,
                    cart_mass, gravity, dt, force_max, x_limit, theta_limit):
    n_cand, horizon = actions.shape
    n_members = m_b.shape[0]
    ret = np.zeros(n_cand)
    s = np.empty(4)
    z = np.empty(4)
    for c in range(n_cand):
        acc = 0.0
        for p in range(particles):
            st = _substream(key, c, p)
            s[:] = s0
            for t in range(horizon):
                k = DRAWS_PER_STEP * t
                b = int(_unit(_draw(st, k)) * n_members)
                if b > n_members - 1:
                    b = n_members - 1
                for d in range(4):
                    z[d] = _quantile(_unit_mid(_draw(st, k + 1 + d)))
                _step_into(s, s[0], s[1], s[2], s[3], actions[c, t], m_b[b], l_b[b],
                           cart_mass, gravity, dt, force_max)
                for d in range(4):
                    s[d] = s[d] + noise_std[d] * z[d]
                s[2] = _wrap(s[2])
                if abs(s[2]) <= theta_limit and abs(s[0]) <= x_limit:
                    acc += 1.0
        ret[c] = acc / particles
    return ret
