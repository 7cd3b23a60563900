"""Training objectives for one ensemble member.

``pe``: Gaussian negative log-likelihood with diagonal covariance,
    sum_i (mu_i - x_i)^2 / var_i + sum_i log var_i   (no 1/2, no 2*pi).
``info_nce``: -log softmax of the positive among the set, scores -pe/tau.
``uduc``: pe(positive) + logsumexp_x(-pe(x)/tau) over the whole set, which
    equals (1 - 1/tau) * pe(positive) + info_nce.

Every function takes the member and an optional flat parameter array/Var so
the same code produces values (numpy) and gradients (tape). Sample sets are
materialised arrays, so no gradient can reach the target networks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffnum import grad_fd, tape
from .diffnum.tape import value_and_grad
from .types import STATE_DIM, UDUCSampleSet

__all__ = ["LossBreakdown", "UDUCSampleSet", "pe_from_prediction", "pe_loss", "info_nce", "uduc_loss",
           "l2_reg", "batch_objective", "objective_value_and_grad"]


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    nll_term: float
    contrastive_term: float
    l2_term: float


def pe_from_prediction(mean, var, samples):
    """NLL of each sample under N(mean, diag(var)).

    mean, var: (n, d); samples: (n, k, d). Returns (n, k).
    """
    n = tape.value(mean).shape[0]
    mu = tape.reshape(mean, (n, 1, STATE_DIM))
    v = tape.reshape(var, (n, 1, STATE_DIM))
    resid = tape.square(tape.add(mu, -np.asarray(samples, dtype=np.float64)))
    quad = tape.sum(tape.div(resid, v), axis=-1)
    logdet = tape.reshape(tape.sum(tape.log(var), axis=-1), (n, 1))
    return tape.add(quad, logdet)


def _flat(member, flat):
    return member.params.values if flat is None else flat


def _as_batch(sample_set: UDUCSampleSet):
    if sample_set.batched:
        return sample_set, False
    return UDUCSampleSet(np.asarray(sample_set.positive)[None], np.asarray(sample_set.negatives)[None],
                         np.asarray(sample_set.state)[None], np.atleast_1d(sample_set.action)), True


def _set_scores(member, flat, sample_set):
    """(n, K) pe of positive (column 0) and negatives under the member."""
    mean, var = member.mean_var(_flat(member, flat), sample_set.state, sample_set.action)
    return pe_from_prediction(mean, var, sample_set.all_samples())


def _scalar_or_array(x, single):
    x = tape.value(x)
    return float(x[0]) if single else x


def pe_loss(member, s, a, s_prime, flat=None):
    """NLL of ``s_prime``; scalar for a single transition, (n,) for a batch."""
    states = np.asarray(s, dtype=np.float64)
    single = states.ndim == 1
    states = states.reshape(-1, STATE_DIM)
    mean, var = member.mean_var(_flat(member, flat), states, np.asarray(a, dtype=np.float64).reshape(-1))
    out = pe_from_prediction(mean, var, np.asarray(s_prime, dtype=np.float64).reshape(-1, 1, STATE_DIM))
    out = tape.reshape(out, (states.shape[0],))
    if isinstance(out, tape.Var):
        return out
    return _scalar_or_array(out, single)


def _contrastive(scores, tau):
    return tape.logsumexp(tape.mul(scores, -1.0 / tau), axis=-1)


def info_nce(member, sample_set: UDUCSampleSet, tau, flat=None):
    """-log [exp(-pe(pos)/tau) / sum_x exp(-pe(x)/tau)], computed stably."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    batch, single = _as_batch(sample_set)
    scores = _set_scores(member, flat, batch)
    pos = tape.index(scores, (slice(None), 0))
    out = tape.add(tape.mul(pos, 1.0 / tau), _contrastive(scores, tau))
    if isinstance(out, tape.Var):
        return out
    return _scalar_or_array(out, single)


def _uduc_terms(member, flat, batch, tau):
    scores = _set_scores(member, flat, batch)
    nll = tape.index(scores, (slice(None), 0))
    if math.isinf(tau):
        return nll, None
    return nll, _contrastive(scores, tau)


def uduc_loss(member, sample_set: UDUCSampleSet, tau, flat=None):
    """pe(positive) + log sum_x exp(-pe(x)/tau), as a LossBreakdown (mean over a batch)."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    batch, _ = _as_batch(sample_set)
    nll, con = _uduc_terms(member, flat, batch, tau)
    nll_v = float(np.mean(tape.value(nll)))
    con_v = 0.0 if con is None else float(np.mean(tape.value(con)))
    total = float(np.mean(tape.value(nll) + (0.0 if con is None else tape.value(con))))
    return LossBreakdown(total, nll_v, con_v, 0.0)


def l2_reg(params):
    """Euclidean norm of the flat parameter vector."""
    x = params.values if hasattr(params, "values") else params
    return tape.sqrt(tape.sum(tape.square(x)))


def _objective(member, flat, batch, tau, l2_coefficient):
    """(total, nll, contrastive, l2); each a Var when ``flat`` is one."""
    nll, con = _uduc_terms(member, flat, batch, tau)
    nll_m = tape.mean(nll)
    con_m = 0.0 if con is None else tape.mean(con)
    total = tape.add(nll_m, con_m)
    l2 = 0.0
    if l2_coefficient > 0:
        l2 = l2_reg(_flat(member, flat))
        total = tape.add(total, tape.mul(l2, l2_coefficient))
    return total, nll_m, con_m, l2


def batch_objective(member, sample_set: UDUCSampleSet, tau, l2_coefficient=0.0, flat=None):
    """Mean per-sample UDUC loss plus ``l2_coefficient * ||theta||`` (added once).

    ``tau = inf`` is the plain-ensemble baseline: the contrastive term is
    dropped and the negatives are ignored.
    """
    batch, _ = _as_batch(sample_set)
    if batch.positive.shape[0] == 0:
        raise ValueError("empty batch")
    if not tau > 0:
        raise ValueError("tau must be > 0")
    total, nll, con, l2 = _objective(member, flat, batch, tau, l2_coefficient)
    l2_value = float(tape.value(l2)) if l2_coefficient > 0 else float(tape.value(l2_reg(_flat(member, flat))))
    return LossBreakdown(float(tape.value(total)), float(tape.value(nll)), float(tape.value(con)), l2_value)


def objective_value_and_grad(member, sample_set: UDUCSampleSet, tau, l2_coefficient=0.0):
    """LossBreakdown and gradient w.r.t. the member's flat parameters.

    MLP members use reverse mode; physics members (two log-parameters) use
    central finite differences.
    """
    batch, _ = _as_batch(sample_set)
    if batch.positive.shape[0] == 0:
        raise ValueError("empty batch")
    breakdown = batch_objective(member, batch, tau, l2_coefficient)
    if member.kind == "physics":
        g = grad_fd(lambda x: _objective(member, x, batch, tau, l2_coefficient)[0], member.params.values)
    else:
        _, g = value_and_grad(lambda x: _objective(member, x, batch, tau, l2_coefficient)[0],
                              member.params.values)
    return breakdown, g
