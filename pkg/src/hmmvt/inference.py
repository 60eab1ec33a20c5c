"""Decoding, Baum-Welch, Viterbi training and exact finite-N free energies."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from hmmvt import _kernels
from hmmvt.core import HmmModel, _check_obs, build_model, joint_log_prob, observed_log_prob
from hmmvt.errors import GuardError, HmmError, UnreachableSequenceError

TIE_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Posteriors:
    state: np.ndarray  # (N+1, L)
    pair: np.ndarray  # (N, L, L), pair[i-1, s, s_prev] = P(s_i=s, s_{i-1}=s_prev | x)
    log_likelihood: float


@dataclass(frozen=True)
class FreeEnergyEstimate:
    beta: float
    value_per_symbol: float
    method: str
    std_error: float = 0.0


def _logs(model):
    with np.errstate(divide="ignore"):
        return np.log(model.transition), np.log(model.emission), np.log(model.stationary)


def viterbi_decode(model: HmmModel, x):
    """Most probable hidden path for ``x``.

    Returns ``(path, tie_count)``; ``path`` has ``len(x) + 1`` entries.
    Ties within a relative 1e-12 are broken toward the lowest state index
    and counted along the returned path.
    """
    path, _, ties = viterbi_decode_scored(model, x)
    return path, ties


def viterbi_decode_scored(model: HmmModel, x):
    x = _check_obs(model, x)
    log_p, log_e, log_0 = _logs(model)
    path, score, ties = _kernels.viterbi(log_p, log_e, log_0, x, TIE_RTOL)
    if score == -np.inf:
        raise UnreachableSequenceError()
    return path, float(score), int(ties)


def forward_backward(model: HmmModel, x) -> Posteriors:
    x = _check_obs(model, x)
    loglik, gamma, pair = _kernels.posteriors(
        model.transition, model.emission, model.stationary, x
    )
    if loglik == -np.inf:
        raise UnreachableSequenceError()
    return Posteriors(gamma, pair, float(loglik))


def _reestimate(model, trans_counts, emis_counts):
    """Column-normalise counts; columns with no mass keep their previous values."""
    P = model.transition.copy()
    E = model.emission.copy()
    occ = trans_counts.sum(axis=0)
    ok = occ > 0
    P[:, ok] = trans_counts[:, ok] / occ[ok]
    occ = emis_counts.sum(axis=0)
    ok = occ > 0
    E[:, ok] = emis_counts[:, ok] / occ[ok]
    # renormalise away the last ulp so the stochasticity check is exact
    P /= P.sum(axis=0)
    E /= E.sum(axis=0)
    return build_model(P, E, require_mixing=False)


def _blend(old, new, w):
    return build_model(
        (1 - w) * old.transition + w * new.transition,
        (1 - w) * old.emission + w * new.emission,
        require_mixing=False,
    )


def baum_welch_step(model: HmmModel, x, *, return_loglik=False):
    """One EM update of transition and emission probabilities.

    The initial distribution is tied to the stationary vector of the
    transition matrix, which the standard M-step ignores; if that makes the
    likelihood drop, the step is halved (at most 40 times) along the segment
    to the M-step target so that ``ln P(x)`` never decreases by more than 1e-9.
    """
    x = _check_obs(model, x)
    old_ll, tc, ec = _kernels.expected_counts(
        model.transition, model.emission, model.stationary, x
    )
    if old_ll == -np.inf:
        raise UnreachableSequenceError()
    target = _reestimate(model, tc, ec)
    new, new_ll, w = target, observed_log_prob(target, x), 1.0
    for _ in range(40):
        if new_ll >= old_ll - 1e-10:
            break
        w *= 0.5
        new = _blend(model, target, w)
        new_ll = observed_log_prob(new, x)
    else:
        new, new_ll = model, old_ll
    return (new, new_ll) if return_loglik else new


def _path_counts(model, path, x):
    L, M = model.num_hidden, model.num_observed
    tc = np.zeros((L, L))
    np.add.at(tc, (path[1:], path[:-1]), 1.0)
    ec = np.zeros((M, L))
    np.add.at(ec, (x, path[1:]), 1.0)
    return tc, ec


def viterbi_training_step(model: HmmModel, x) -> HmmModel:
    """Decode, then re-estimate from the decoded path's counts (segmental K-means)."""
    x = _check_obs(model, x)
    path, _ = viterbi_decode(model, x)
    tc, ec = _path_counts(model, path, x)
    return _reestimate(model, tc, ec)


def parameter_distance(a: HmmModel, b: HmmModel) -> float:
    return float(
        max(np.max(np.abs(a.transition - b.transition)), np.max(np.abs(a.emission - b.emission)))
    )


@dataclass
class TrainResult:
    model: HmmModel
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def train(model: HmmModel, x, method="bw", max_iter=500, tol=1e-8, params=None) -> TrainResult:
    """Iterate ``baum_welch_step`` ("bw") or ``viterbi_training_step`` ("vt").

    Stops when the L-infinity parameter change is at most ``tol`` or after
    ``max_iter`` steps. ``params`` maps a model to the tuple of values
    recorded in the trace (defaults to all transition and emission entries).
    Each trace row is ``(iteration, loglik_per_symbol, params..., delta)``.
    """
    if method not in ("bw", "vt"):
        raise HmmError(f"unknown training method {method!r}")
    x = _check_obs(model, x)
    params = params or (lambda m: tuple(np.concatenate([m.transition.ravel(), m.emission.ravel()])))
    n = x.size
    ll = observed_log_prob(model, x)
    trace = [(0, ll / n, *params(model), np.nan)]
    current = model
    for it in range(1, max_iter + 1):
        if method == "bw":
            nxt, ll = baum_welch_step(current, x, return_loglik=True)
        else:
            nxt = viterbi_training_step(current, x)
            ll = observed_log_prob(nxt, x)
        delta = parameter_distance(current, nxt)
        trace.append((it, ll / n, *params(nxt), delta))
        current = nxt
        if delta <= tol:
            return TrainResult(current, it, True, trace)
    return TrainResult(current, max_iter, False, trace)


def decode_overlap(s_true, s_decoded) -> float:
    a = np.asarray(s_true)
    b = np.asarray(s_decoded)
    if a.shape != b.shape:
        raise HmmError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise HmmError("empty sequences")
    return float(np.mean(a == b))


def all_sequences(m, n):
    """Every length-n word over ``range(m)`` as rows of an (m**n, n) array."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    return np.array(list(itertools.product(range(m), repeat=n)), dtype=np.int64)


def _log_partition(model, words, beta):
    """ln sum_s P^beta(s, x) for every row of ``words`` (beta=inf: max_s ln P)."""
    log_t = np.log(model.transfer_matrices())
    log_v = np.log(model.stationary)
    n_words = words.shape[0]
    if np.isinf(beta):
        v = np.broadcast_to(log_v, (n_words, log_v.size)).copy()
        for i in range(words.shape[1]):
            v = np.max(log_t[words[:, i]] + v[:, None, :], axis=2)
        return np.max(v, axis=1)
    v = np.broadcast_to(beta * log_v, (n_words, log_v.size)).copy()
    for i in range(words.shape[1]):
        v = logsumexp(beta * log_t[words[:, i]] + v[:, None, :], axis=2)
    return logsumexp(v, axis=1)


def gibbs_free_energy_exact(true_model: HmmModel, trial_model: HmmModel, beta, n) -> FreeEnergyEstimate:
    """Exact F_beta / N = -(1/(beta N)) sum_x P(x) ln sum_s Phat^beta(s, x).

    The outer sum enumerates all M**n observation words; the inner sum over
    hidden paths is done exactly by a tempered forward recursion.
    ``beta=np.inf`` gives the max-path (Viterbi) free energy.
    """
    if true_model.num_observed != trial_model.num_observed or true_model.num_hidden != trial_model.num_hidden:
        raise HmmError("true and trial models must have matching dimensions")
    if not beta > 0:
        raise HmmError("beta must be positive")
    M, L = true_model.num_observed, true_model.num_hidden
    if n < 1 or n > 10 or M**n * L * L > 3**10 * 9:
        raise GuardError(f"exact enumeration guard: n={n}, M={M}, L={L}")
    words = all_sequences(M, n)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_px = _log_partition(true_model, words, 1.0)
        log_z = _log_partition(trial_model, words, beta)
        px = np.exp(log_px)
        contrib = np.where(px > 0, px * log_z, 0.0)
    total = contrib.sum()
    scale = 1.0 if np.isinf(beta) else beta
    return FreeEnergyEstimate(float(beta), float(-total / (scale * n)), "exact-enumeration", 0.0)


def enumerate_paths(model: HmmModel, x):
    """Log joint probability of every hidden path for ``x``; shape (L**(N+1),)."""
    x = _check_obs(model, x)
    paths = all_sequences(model.num_hidden, x.size + 1)
    return paths, np.array([joint_log_prob(model, p, x) for p in paths])


__all__ = [
    "Posteriors",
    "FreeEnergyEstimate",
    "TrainResult",
    "viterbi_decode",
    "viterbi_decode_scored",
    "forward_backward",
    "baum_welch_step",
    "viterbi_training_step",
    "train",
    "decode_overlap",
    "gibbs_free_energy_exact",
    "parameter_distance",
    "enumerate_paths",
    "all_sequences",
]
