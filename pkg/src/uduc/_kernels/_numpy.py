"""Pure-numpy implementations of the hot kernels.

Every function here has a numba twin in ``_numba.py`` with the same
signature. The two paths follow the same operation order so results agree
to rounding; the counter RNG is integer-exact on both.
"""
import numpy as np

PI = np.pi
TWO_PI = 2.0 * np.pi

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
S30 = np.uint64(30)
S27 = np.uint64(27)
S31 = np.uint64(31)
S11 = np.uint64(11)
ONE = np.uint64(1)
INV53 = 1.0 / 9007199254740992.0  # 2**-53

# draws consumed per rollout step: one member pick + four normals
DRAWS_PER_STEP = 5


def mix64(z):
    """splitmix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> S30)) * MIX1
        z = (z ^ (z >> S27)) * MIX2
    return z ^ (z >> S31)


def substream(key, i, j):
    """Key of the (i, j) child stream of ``key``; all args broadcast."""
    key = np.asarray(key, dtype=np.uint64)
    i = np.asarray(i, dtype=np.uint64)
    j = np.asarray(j, dtype=np.uint64)
    with np.errstate(over="ignore"):
        inner = mix64(key + (i + ONE) * GOLDEN)
        return mix64(inner + (j + ONE) * GOLDEN)


def draw(state, k):
    """k-th raw 64-bit output of the counter stream ``state``."""
    with np.errstate(over="ignore"):
        return mix64(np.asarray(state, dtype=np.uint64) + np.uint64(k + 1) * GOLDEN)


def to_unit(x):
    """uint64 -> float64 in [0, 1)."""
    return (x >> S11).astype(np.float64) * INV53


def to_unit_mid(x):
    """uint64 -> float64 strictly inside (0, 1)."""
    return ((x >> S11).astype(np.float64) + 0.5) * INV53


# rational approximation of the standard normal quantile (P. J. Acklam),
# relative error below 1.2e-9
ACK_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
ACK_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
ACK_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
ACK_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
P_LOW = 0.02425


def _tail(q):
    a, b, c, d, e, f = ACK_C
    num = ((((a * q + b) * q + c) * q + d) * q + e) * q + f
    den = (((ACK_D[0] * q + ACK_D[1]) * q + ACK_D[2]) * q + ACK_D[3]) * q + 1.0
    return num / den


def normal_quantile(p):
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    r = q * q
    a0, a1, a2, a3, a4, a5 = ACK_A
    b0, b1, b2, b3, b4 = ACK_B
    num = (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q
    den = ((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0
    out = num / den
    lo = p < P_LOW
    hi = p > 1.0 - P_LOW
    if lo.any():
        out = np.where(lo, _tail(np.sqrt(-2.0 * np.log(np.where(lo, p, 0.5)))), out)
    if hi.any():
        out = np.where(hi, -_tail(np.sqrt(-2.0 * np.log(np.where(hi, 1.0 - p, 0.5)))), out)
    return out


def step_normals(state, t):
    """Member uniform and four standard normals for rollout step ``t``."""
    k = DRAWS_PER_STEP * t
    u_member = to_unit(draw(state, k))
    z = np.stack([normal_quantile(to_unit_mid(draw(state, k + 1 + d))) for d in range(4)], axis=-1)
    return u_member, z


def wrap_angle(th):
    th = np.array(th, dtype=np.float64, copy=True)
    out = (th > PI) | (th <= -PI)
    if out.any():
        w = th[out] - TWO_PI * np.floor((th[out] + PI) / TWO_PI)
        w[w <= -PI] += TWO_PI
        th[out] = w
    return th


def cartpole_step(states, forces, m, l, cart_mass, gravity, dt, force_max):
    """Semi-implicit Euler step of the frictionless cart-pole, batched.

    ``states`` is (n, 4); ``forces``, ``m`` and ``l`` broadcast against n.
    ``l`` is the pivot-to-centre-of-mass distance of the pole.
    """
    states = np.asarray(states, dtype=np.float64)
    x = states[:, 0]
    xd = states[:, 1]
    th = states[:, 2]
    thd = states[:, 3]
    f = np.minimum(np.maximum(np.asarray(forces, dtype=np.float64), -force_max), force_max)
    sin = np.sin(th)
    cos = np.cos(th)
    total = cart_mass + m
    temp = (f + m * l * thd * thd * sin) / total
    thacc = (gravity * sin - cos * temp) / (l * (4.0 / 3.0 - m * cos * cos / total))
    xacc = temp - m * l * thacc * cos / total
    xd2 = xd + dt * xacc
    x2 = x + dt * xd2
    thd2 = thd + dt * thacc
    th2 = wrap_angle(th + dt * thd2)
    out = np.empty((states.shape[0], 4))
    out[:, 0] = x2
    out[:, 1] = xd2
    out[:, 2] = th2
    out[:, 3] = thd2
    return out


def upright(states, x_limit, theta_limit):
    states = np.asarray(states)
    return (np.abs(states[..., 2]) <= theta_limit) & (np.abs(states[..., 0]) <= x_limit)


def rollout_returns(s0, actions, m_b, l_b, noise_std, particles, key,
                    cart_mass, gravity, dt, force_max, x_limit, theta_limit):
    """Mean trajectory-sampling return of each action sequence.

    actions: (N, H). Members are physics models given by ``m_b``/``l_b``;
    particle p of candidate c draws from substream(key, c, p).
    """
    actions = np.asarray(actions, dtype=np.float64)
    n_cand, horizon = actions.shape
    n_members = m_b.shape[0]
    cand = np.repeat(np.arange(n_cand, dtype=np.uint64), particles)
    part = np.tile(np.arange(particles, dtype=np.uint64), n_cand)
    streams = substream(key, cand, part)
    s = np.tile(np.asarray(s0, dtype=np.float64), (n_cand * particles, 1))
    total = np.zeros(n_cand * particles)
    for t in range(horizon):
        u, z = step_normals(streams, t)
        b = np.minimum((u * n_members).astype(np.int64), n_members - 1)
        a = np.repeat(actions[:, t], particles)
        s = cartpole_step(s, a, m_b[b], l_b[b], cart_mass, gravity, dt, force_max)
        s = s + noise_std * z
        s[:, 2] = wrap_angle(s[:, 2])
        total += upright(s, x_limit, theta_limit)
    return total.reshape(n_cand, particles).mean(axis=1)
