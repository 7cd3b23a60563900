"""Probabilistic ensemble dynamics models.

Two member families share one interface, ``mean_var(flat, states, actions)``:

* :class:`PhysicsMember` - the analytic cart-pole with learnable pole mass and
  length (stored as logs so they stay positive) and a fixed, known noise
  variance. Predicts the absolute next state.
* :class:`MlpMember` - two SiLU hidden layers with a delta-state mean head and
  a bounded log-variance head.

Each ensemble keeps slow target copies. Negatives for the contrastive loss and
all planning rollouts come from the targets.
"""
from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .diffnum import ParamVector, tape
from .env import ACTION_HIGH, CART_MASS, DT, GRAVITY, NOISE_STD, NOMINAL, PhysicsParams, dynamics_mean_batch
from .rng import SeededRng
from .types import STATE_DIM, ReplayBuffer, UDUCSampleSet

VAR_MIN = 1e-6
VAR_MAX = 10.0
HIDDEN = 64
INPUT_DIM = STATE_DIM + 1


@dataclass
class GaussianPrediction:
    mean: np.ndarray
    variance: np.ndarray


class PhysicsMember:
    kind = "physics"

    def __init__(self, pole_mass, pole_length, fixed_variance=NOISE_STD**2,
                 cart_mass=CART_MASS, gravity=GRAVITY, dt=DT):
        if not (pole_mass > 0 and pole_length > 0):
            raise ValueError("pole_mass and pole_length must be positive")
        self.params = ParamVector(np.log([pole_mass, pole_length]),
                                  {"log_m": (0, 1, ()), "log_l": (1, 2, ())})
        # exp(log(x)) need not round-trip, so remember the values we were given
        self._exact = (self.params.values.copy(), (float(pole_mass), float(pole_length)))
        self.fixed_variance = np.broadcast_to(np.asarray(fixed_variance, dtype=np.float64), (STATE_DIM,)).copy()
        self.cart_mass = cart_mass
        self.gravity = gravity
        self.dt = dt

    def _natural(self):
        logs, exact = self._exact
        if np.array_equal(logs, self.params.values):
            return exact
        return tuple(float(v) for v in np.exp(self.params.values))

    @property
    def pole_mass(self):
        return self._natural()[0]

    @property
    def pole_length(self):
        return self._natural()[1]

    def physics(self):
        return PhysicsParams(self.pole_mass, self.pole_length, self.cart_mass, self.gravity)

    def clone(self, values=None):
        out = PhysicsMember.__new__(PhysicsMember)
        out.params = self.params.with_values(self.params.values if values is None else values).copy()
        out._exact = self._exact
        out.fixed_variance = self.fixed_variance.copy()
        out.cart_mass, out.gravity, out.dt = self.cart_mass, self.gravity, self.dt
        return out

    def mean_var(self, flat, states, actions):
        flat = tape.value(flat)
        states = np.asarray(states, dtype=np.float64).reshape(-1, STATE_DIM)
        mean = dynamics_mean_batch(states, actions, np.exp(flat[0]), np.exp(flat[1]),
                                   self.cart_mass, self.gravity, self.dt)
        return mean, np.broadcast_to(self.fixed_variance, mean.shape)


class MlpMember:
    kind = "mlp"

    def __init__(self, params: ParamVector, hidden=HIDDEN, var_min=VAR_MIN, var_max=VAR_MAX):
        self.params = params
        self.hidden = hidden
        self.var_min = float(var_min)
        self.var_max = float(var_max)

    @staticmethod
    def layout(hidden=HIDDEN):
        shapes = [("w1", (INPUT_DIM, hidden)), ("b1", (hidden,)),
                  ("w2", (hidden, hidden)), ("b2", (hidden,)),
                  ("wm", (hidden, STATE_DIM)), ("bm", (STATE_DIM,)),
                  ("wv", (hidden, STATE_DIM)), ("bv", (STATE_DIM,))]
        layout, pos = {}, 0
        for name, shape in shapes:
            n = int(np.prod(shape))
            layout[name] = (pos, pos + n, shape)
            pos += n
        return layout, pos

    @classmethod
    def init(cls, rng: SeededRng, hidden=HIDDEN, var_min=VAR_MIN, var_max=VAR_MAX):
        layout, n = cls.layout(hidden)
        values = np.zeros(n)
        for name, (start, stop, shape) in layout.items():
            if name.startswith("w"):
                values[start:stop] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), stop - start)
        return cls(ParamVector(values, layout), hidden, var_min, var_max)

    def clone(self, values=None):
        params = self.params.with_values(self.params.values if values is None else values).copy()
        return MlpMember(params, self.hidden, self.var_min, self.var_max)

    def mean_var(self, flat, states, actions):
        """Forward pass; ``flat`` may be a tape Var, in which case outputs are Vars."""
        seg = lambda name: self.params.segment(name, flat)  # noqa: E731
        states = np.asarray(states, dtype=np.float64).reshape(-1, STATE_DIM)
        actions = np.asarray(actions, dtype=np.float64).reshape(-1, 1)
        x = np.concatenate([states, actions / ACTION_HIGH], axis=1)
        h = tape.silu(tape.affine(x, seg("w1"), seg("b1")))
        h = tape.silu(tape.affine(h, seg("w2"), seg("b2")))
        mean = tape.add(states, tape.affine(h, seg("wm"), seg("bm")))
        raw = tape.affine(h, seg("wv"), seg("bv"))
        lo, hi = np.log(self.var_min), np.log(self.var_max)
        var = tape.exp(tape.add(lo, tape.mul(hi - lo, tape.sigmoid(raw))))
        if not isinstance(var, tape.Var):
            var = np.clip(var, self.var_min, self.var_max)
        return mean, var


def predict(member, s, a):
    """Gaussian over the next state for a single (s, a) or a batch."""
    states = np.asarray(s, dtype=np.float64)
    single = states.ndim == 1
    mean, var = member.mean_var(member.params.values, states.reshape(-1, STATE_DIM),
                                np.asarray(a, dtype=np.float64).reshape(-1))
    mean, var = np.asarray(mean), np.asarray(var)
    if single:
        return GaussianPrediction(mean[0].copy(), var[0].copy())
    return GaussianPrediction(mean.copy(), var.copy())


def sample_next(member, s, a, rng: SeededRng):
    pred = predict(member, s, a)
    return pred.mean + np.sqrt(pred.variance) * rng.normal(size=pred.mean.shape)


class Ensemble:
    """B live members, B target copies and the B bootstrap views."""

    def __init__(self, members, targets=None):
        if len(members) < 1:
            raise ValueError("ensemble needs at least one member")
        kinds = {m.kind for m in members}
        if len(kinds) != 1:
            raise ValueError("members must all be of one kind")
        self.members = list(members)
        self.targets = [m.clone() for m in members] if targets is None else list(targets)
        if len(self.targets) != len(self.members) or any(
                t.params.values.shape != m.params.values.shape for t, m in zip(self.targets, self.members)):
            raise ValueError("targets must mirror members")
        self.sub_buffers = [None] * len(self.members)

    @property
    def size(self):
        return len(self.members)

    @property
    def kind(self):
        return self.members[0].kind

    def __len__(self):
        return len(self.members)

    @classmethod
    def physics(cls, B, rng: SeededRng, nominal: PhysicsParams = NOMINAL, spread=0.2,
                fixed_variance=NOISE_STD**2):
        """Members log-uniform within +-``spread`` of nominal mass and length."""
        lo, hi = np.log1p(-spread), np.log1p(spread)
        factors = np.exp(rng.uniform(lo, hi, size=(B, 2)))
        members = [PhysicsMember(nominal.pole_mass * f[0], nominal.pole_length * f[1], fixed_variance,
                                 nominal.cart_mass, nominal.gravity) for f in factors]
        return cls(members)

    @classmethod
    def mlp(cls, B, rng: SeededRng, hidden=HIDDEN, var_min=VAR_MIN, var_max=VAR_MAX):
        return cls([MlpMember.init(rng, hidden, var_min, var_max) for _ in range(B)])

    def copy(self):
        out = Ensemble([m.clone() for m in self.members], [t.clone() for t in self.targets])
        out.sub_buffers = list(self.sub_buffers)
        return out

    def live_matrix(self):
        return np.stack([m.params.values for m in self.members])

    def target_matrix(self):
        return np.stack([t.params.values for t in self.targets])

    def set_member(self, b, values):
        self.members[b] = self.members[b].clone(np.asarray(values, dtype=np.float64))

    def physics_arrays(self, which="targets"):
        """(pole_mass, pole_length, noise_std) arrays for the physics fast path."""
        group = self.targets if which == "targets" else self.members
        m = np.array([g.pole_mass for g in group])
        l = np.array([g.pole_length for g in group])
        return m, l, np.sqrt(group[0].fixed_variance)


def build_sample_set(ensemble: Ensemble, b, s, a, s_true, self_reg, rng: SeededRng):
    """Positive = copy of the true next state; negatives drawn from target members.

    One negative per target ``i != b`` (in index order), plus one from target
    ``b`` itself when ``self_reg``. Works on a single (s, a) or a batch.
    """
    B = ensemble.size
    if not 0 <= b < B:
        raise IndexError(f"member index {b} out of range for B={B}")
    states = np.asarray(s, dtype=np.float64)
    single = states.ndim == 1
    states = states.reshape(-1, STATE_DIM)
    actions = np.asarray(a, dtype=np.float64).reshape(-1)
    positive = np.array(s_true, dtype=np.float64, copy=True).reshape(-1, STATE_DIM)
    sources = [i for i in range(B) if i != b] + ([b] if self_reg else [])
    n = states.shape[0]
    negatives = np.empty((n, len(sources), STATE_DIM))
    if sources:
        noise = rng.normal(size=(n, len(sources), STATE_DIM))
        for j, i in enumerate(sources):
            pred = predict(ensemble.targets[i], states, actions)
            negatives[:, j] = pred.mean + np.sqrt(pred.variance) * noise[:, j]
    if single:
        return UDUCSampleSet(positive[0], negatives[0], states[0].copy(), actions[0].copy())
    return UDUCSampleSet(positive, negatives, states.copy(), actions.copy())


def bootstrap(buffer: ReplayBuffer, B, N, rng: SeededRng):
    """B sub-datasets of exactly N transitions drawn with replacement."""
    n = len(buffer)
    if n == 0:
        raise ValueError("cannot bootstrap from an empty buffer")
    data = buffer.view()
    idx = rng.integers(0, n, size=(B, N))
    return [data.take(row) for row in idx]


def polyak_update(ensemble: Ensemble, rho):
    """target <- rho * live + (1 - rho) * target, for every member."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    for i, (live, tgt) in enumerate(zip(ensemble.members, ensemble.targets)):
        ensemble.targets[i] = tgt.clone(rho * live.params.values + (1.0 - rho) * tgt.params.values)
    return ensemble


def rollout_states(members, s0, actions, particles, key):
    """Trajectory-sampling rollouts for any member kind.

    ``actions`` is (N, H); returns (N, particles, H, 4). Particle p of sequence
    c uses counter stream ``substream(key, c, p)``: at step t, one uniform picks
    the member and four normals perturb its mean (same draw layout as the
    compiled physics kernel).
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    n_cand, horizon = actions.shape
    B = len(members)
    cand = np.repeat(np.arange(n_cand, dtype=np.uint64), particles)
    part = np.tile(np.arange(particles, dtype=np.uint64), n_cand)
    streams = _kernels.substream(np.uint64(key), cand, part)
    s = np.tile(np.asarray(s0, dtype=np.float64), (n_cand * particles, 1))
    out = np.empty((n_cand * particles, horizon, STATE_DIM))
    for t in range(horizon):
        u, z = _kernels.step_normals(streams, t)
        pick = np.minimum((u * B).astype(np.int64), B - 1)
        a = np.repeat(actions[:, t], particles)
        nxt = np.empty_like(s)
        for b in np.unique(pick):
            rows = pick == b
            pred = predict(members[b], s[rows], a[rows])
            nxt[rows] = pred.mean + np.sqrt(pred.variance) * z[rows]
        nxt[:, 2] = _kernels.wrap_angle(nxt[:, 2])
        s = nxt
        out[:, t] = s
    return out.reshape(n_cand, particles, horizon, STATE_DIM)


def ts_rollout(ensemble_or_members, s0, actions, rng: SeededRng):
    """One trajectory-sampling rollout over the target members; returns (H, 4)."""
    members = ensemble_or_members.targets if isinstance(ensemble_or_members, Ensemble) else ensemble_or_members
    actions = np.asarray(actions, dtype=np.float64).reshape(1, -1)
    if actions.shape[1] < 1:
        raise ValueError("horizon must be >= 1")
    return rollout_states(members, s0, actions, 1, rng.key())[0, 0]


def member_choices(B, horizon, key, n_cand=1, particles=1):
    """Member indices a rollout with ``key`` will use; shape (n_cand, particles, horizon)."""
    cand = np.repeat(np.arange(n_cand, dtype=np.uint64), particles)
    part = np.tile(np.arange(particles, dtype=np.uint64), n_cand)
    streams = _kernels.substream(np.uint64(key), cand, part)
    picks = np.empty((n_cand * particles, horizon), dtype=np.int64)
    for t in range(horizon):
        u = _kernels.to_unit(_kernels.draw(streams, _kernels.DRAWS_PER_STEP * t))
        picks[:, t] = np.minimum((u * B).astype(np.int64), B - 1)
    return picks.reshape(n_cand, particles, horizon)


# ---- checkpoints ------------------------------------------------------------

MAGIC = b"UDUCENS\x00"
VERSION = 1
_KIND_TAG = {"physics": 0, "mlp": 1}
_HEADER = struct.Struct("<8sHBBIIIdd4d")


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(ensemble: Ensemble):
    first = ensemble.members[0]
    n = first.params.values.size
    if ensemble.kind == "physics":
        hidden, vmin, vmax = 0, 0.0, 0.0
        extra = tuple(first.fixed_variance)
    else:
        hidden, vmin, vmax = first.hidden, first.var_min, first.var_max
        extra = (0.0,) * 4
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, _KIND_TAG[ensemble.kind], 0, ensemble.size, n, hidden,
                           vmin, vmax, *extra))
    buf.write(ensemble.live_matrix().astype("<f8").tobytes())
    buf.write(ensemble.target_matrix().astype("<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(ensemble: Ensemble, path):
    data = checkpoint_bytes(ensemble)
    with open(path, "wb") as fh:
        fh.write(data)
    return path


def load_checkpoint(path):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e.strerror or e}") from None
    return checkpoint_from_bytes(data)


def checkpoint_from_bytes(data):
    if len(data) < _HEADER.size:
        raise CheckpointError("checkpoint truncated")
    magic, version, tag, _, B, n, hidden, vmin, vmax, *extra = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError("not an ensemble checkpoint (bad magic bytes)")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} not supported (expected {VERSION})")
    expected = _HEADER.size + 2 * B * n * 8
    if len(data) != expected:
        raise CheckpointError(f"checkpoint size {len(data)} does not match header ({expected})")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    live = body[: B * n].reshape(B, n)
    tgt = body[B * n:].reshape(B, n)
    if tag == 0:
        proto = PhysicsMember(1.0, 1.0, np.array(extra))
        members = [proto.clone(row) for row in live]
        targets = [proto.clone(row) for row in tgt]
    elif tag == 1:
        layout, size = MlpMember.layout(hidden)
        if size != n:
            raise CheckpointError("mlp parameter count does not match hidden width")
        members = [MlpMember(ParamVector(row.copy(), layout), hidden, vmin, vmax) for row in live]
        targets = [MlpMember(ParamVector(row.copy(), layout), hidden, vmin, vmax) for row in tgt]
    else:
        raise CheckpointError(f"unknown member type tag {tag}")
    return Ensemble(members, targets)


def ensemble_digest(ensemble: Ensemble):
    return hashlib.sha256(checkpoint_bytes(ensemble)).hexdigest()
