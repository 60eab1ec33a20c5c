"""Discrete hidden Markov models, transfer matrices and exact probabilities.

Matrix convention used everywhere in the package: ``transition[s, s_prev]``
is p(s | s_prev), so every *column* of the transition matrix sums to one,
and ``emission[x, s]`` is pi(x | s). The transfer matrix of symbol ``x`` is
``T(x)[s, s_prev] = emission[x, s] * transition[s, s_prev]``, and a sequence
probability is ``1^T T(x_N) ... T(x_1) p_st``.

Hidden states and symbols are 0-based integer arrays in memory; text files
use 1-based labels (see :mod:`hmmvt.io`). A state path for ``N``
observations has ``N + 1`` entries because ``s_0`` emits nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hmmvt import _kernels
from hmmvt.errors import HmmError, NonMixingError, NonStochasticError

STOCHASTIC_TOL = 1e-12
MIXING_GAP = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class HmmModel:
    transition: np.ndarray
    emission: np.ndarray
    stationary: np.ndarray
    mixing: bool = True

    @property
    def num_hidden(self) -> int:
        return self.transition.shape[0]

    @property
    def num_observed(self) -> int:
        return self.emission.shape[0]

    def transfer_matrices(self) -> np.ndarray:
        """Stack of all transfer matrices, shape (M, L, L)."""
        return self.emission[:, :, None] * self.transition[None, :, :]


def _check_columns(kind, mat):
    if np.any(mat < 0.0) or np.any(mat > 1.0):
        col = int(np.argwhere((mat < 0.0) | (mat > 1.0))[0][1])
        raise NonStochasticError(kind, col, float(abs(mat[:, col].sum() - 1.0)))
    dev = np.abs(mat.sum(axis=0) - 1.0)
    bad = np.flatnonzero(dev > STOCHASTIC_TOL)
    if bad.size:
        raise NonStochasticError(kind, int(bad[0]), float(dev[bad[0]]))


def second_eigenvalue_modulus(transition) -> float:
    moduli = np.sort(np.abs(np.linalg.eigvals(np.asarray(transition, dtype=float))))
    return float(moduli[-2]) if moduli.size > 1 else 0.0


def stationary_distribution(transition, tol=1e-14, max_iter=100_000) -> np.ndarray:
    """Fixed point of ``transition @ p = p`` normalised to one.

    Direct solve of (P - I) with one row replaced by the normalisation
    constraint; power iteration for large chains or a singular system.
    """
    P = np.asarray(transition, dtype=float)
    L = P.shape[0]
    if L <= 50:
        A = P - np.eye(L)
        A[-1, :] = 1.0
        b = np.zeros(L)
        b[-1] = 1.0
        try:
            p = np.linalg.solve(A, b)
            if np.all(np.isfinite(p)) and np.all(p > -1e-12):
                p = np.clip(p, 0.0, None)
                return p / p.sum()
        except np.linalg.LinAlgError:
            pass
    # lazy chain has the same fixed point and no periodicity
    Q = 0.5 * (P + np.eye(L))
    p = np.full(L, 1.0 / L)
    for _ in range(max_iter):
        nxt = Q @ p
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - p)) <= tol:
            return nxt
        p = nxt
    return p


def build_model(transition, emission, require_mixing=True) -> HmmModel:
    """Validate a transition/emission pair and attach its stationary vector.

    With ``require_mixing=False`` a non-mixing chain is accepted and
    flagged through ``HmmModel.mixing`` instead of raising; training loops
    use this for intermediate iterates.
    """
    P = np.array(transition, dtype=float)
    E = np.array(emission, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] < 1:
        raise HmmError(f"transition must be a square L x L matrix, got shape {P.shape}")
    if E.ndim != 2 or E.shape[1] != P.shape[0] or E.shape[0] < 1:
        raise HmmError(f"emission must be M x L with L={P.shape[0]}, got shape {E.shape}")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(E))):
        raise HmmError("transition and emission entries must be finite")
    _check_columns("transition", P)
    _check_columns("emission", E)
    modulus = second_eigenvalue_modulus(P)
    mixing = modulus < 1.0 - MIXING_GAP
    if require_mixing and not mixing:
        raise NonMixingError(modulus)
    return HmmModel(_frozen(P), _frozen(E), _frozen(stationary_distribution(P)), mixing)


def transfer_matrix(model: HmmModel, x: int) -> np.ndarray:
    if not 0 <= x < model.num_observed:
        raise HmmError(f"symbol {x} out of range 0..{model.num_observed - 1}")
    return model.emission[x][:, None] * model.transition


def _check_obs(model, x):
    x = np.asarray(x, dtype=np.int64)
    if x.ndim != 1:
        raise HmmError("observation sequence must be one-dimensional")
    if x.size and (x.min() < 0 or x.max() >= model.num_observed):
        raise HmmError(f"observation labels must lie in 0..{model.num_observed - 1}")
    return x


def _check_states(model, s):
    s = np.asarray(s, dtype=np.int64)
    if s.ndim != 1 or s.size == 0:
        raise HmmError("state sequence must be a non-empty 1-d array")
    if s.min() < 0 or s.max() >= model.num_hidden:
        raise HmmError(f"state labels must lie in 0..{model.num_hidden - 1}")
    return s


def sample(model: HmmModel, n: int, seed: int):
    """Draw ``(states, obs)`` with ``len(states) == n + 1`` and ``s_0 ~ p_st``."""
    if n < 1:
        raise HmmError("sequence length must be at least 1")
    rng = np.random.default_rng(seed)
    u_state = rng.random(n + 1)
    u_obs = rng.random(n)
    return _kernels.sample_path(
        np.cumsum(model.transition, axis=0),
        np.cumsum(model.emission, axis=0),
        np.cumsum(model.stationary),
        u_state,
        u_obs,
    )


def joint_log_prob(model: HmmModel, s, x) -> float:
    """ln P(s, x) in nats; ``-inf`` when the path has probability zero."""
    s = _check_states(model, s)
    x = _check_obs(model, x)
    if s.size != x.size + 1:
        raise HmmError(f"length mismatch: {x.size} observations need {x.size + 1} states, got {s.size}")
    with np.errstate(divide="ignore"):
        terms = np.log(model.emission[x, s[1:]] * model.transition[s[1:], s[:-1]])
        return float(np.log(model.stationary[s[0]]) + terms.sum())


def observed_log_prob(model: HmmModel, x, scaling="max") -> float:
    """ln P(x) by a rescaled transfer-matrix product.

    ``scaling`` selects the per-step normaliser: ``"max"`` (largest entry)
    or ``"sum"`` (l1 norm). The result does not depend on the choice.
    """
    x = _check_obs(model, x)
    if scaling not in ("max", "sum"):
        raise HmmError(f"unknown scaling {scaling!r}")
    loglik, _, _ = _kernels.forward(
        model.transition, model.emission, model.stationary, x, scaling == "max"
    )
    return float(loglik)


def observed_log_prob_unscaled(model: HmmModel, x) -> float:
    """Plain product without rescaling; underflows for long sequences."""
    x = _check_obs(model, x)
    v = model.stationary.copy()
    for xi in x:
        v = transfer_matrix(model, int(xi)) @ v
    total = v.sum()
    return float(np.log(total)) if total > 0 else -np.inf


def conditional_log_increments(model: HmmModel, x) -> np.ndarray:
    """ln P(x_i | x_1..x_{i-1}) for each position; they sum to ln P(x)."""
    x = _check_obs(model, x)
    _, _, log_scales = _kernels.forward(
        model.transition, model.emission, model.stationary, x, False
    )
    return log_scales[1:].copy()
