"""HMMs whose symbol 0 can only be emitted by hidden state 0.

State 0 emits symbol 0 with probability ``1 - epsilon`` and symbol 1 with
probability ``epsilon``; every other state emits symbol 1. Hence ``T(0)``
has a single nonzero row and every quantity of interest reduces to the
return weights ``t_k = <0| T(0) T(1)**k |0>`` and the Perron root ``tau``
of ``T(1)``:

    xi(z, n) = (1 - z tau tau_hat**n) (1 - sum_k t_k t_hat_k**n z**(k+1)).

Labels are 0-based, so the unambiguous symbol and its state are both index 0;
files and reports written by the CLI shift them to 1.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from hmmvt.core import HmmModel, _check_columns, build_model
from hmmvt.errors import HmmError
from hmmvt.zeta import GeometricTail, ZetaSeries, _dpow, _pow0, _stack, perron_eigenvalue

EIG_COND_LIMIT = 1e8


@dataclass(frozen=True, eq=False)
class UnambiguousHmm:
    L: int
    epsilon: float
    P: np.ndarray
    T1: np.ndarray  # transfer matrix of the unambiguous symbol
    T2: np.ndarray

    def emission(self) -> np.ndarray:
        E = np.zeros((2, self.L))
        E[0, 0] = 1.0 - self.epsilon
        E[1, 0] = self.epsilon
        E[1, 1:] = 1.0
        return E

    def to_hmm(self, require_mixing=True) -> HmmModel:
        return build_model(self.P, self.emission(), require_mixing=require_mixing)

    def stack(self) -> np.ndarray:
        return np.stack([self.T1, self.T2])


def unambiguous_transfer(P, epsilon):
    P = np.asarray(P, dtype=float)
    T1 = np.zeros_like(P)
    T1[0, :] = (1.0 - epsilon) * P[0, :]
    return T1, P - T1


def build_unambiguous(L, epsilon, P) -> UnambiguousHmm:
    P = np.array(P, dtype=float)
    if P.shape != (L, L) or L < 2:
        raise HmmError(f"transition must be {L} x {L} with L >= 2, got {P.shape}")
    if not np.all(np.isfinite(P)):
        raise HmmError("transition entries must be finite")
    _check_columns("transition", P)
    if not 0.0 <= epsilon < 1.0:
        raise HmmError(f"epsilon must lie in [0, 1), got {epsilon}")
    T1, T2 = unambiguous_transfer(P, epsilon)
    for a in (P, T1, T2):
        a.setflags(write=False)
    return UnambiguousHmm(L, float(epsilon), P, T1, T2)


def _pair(obj):
    if isinstance(obj, UnambiguousHmm):
        return obj.T1, obj.T2
    st = _stack(obj)
    if st.shape[0] != 2 or np.any(st[0, 1:, :]):
        raise HmmError("not a one-unambiguous-symbol transfer set")
    return st[0], st[1]


# --------------------------------------------------------------------------
# Spectral form of the return weights

@dataclass(frozen=True, eq=False)
class SpectralData:
    taus: np.ndarray  # eigenvalues of T2, ordered by (|tau|, Re tau); taus[-1] is the Perron root
    psi: np.ndarray
    right: np.ndarray  # columns are right eigenvectors
    left: np.ndarray  # rows are left eigenvectors, left @ right = I
    condition: float
    available: bool

    def t(self, k) -> float:
        return float(np.real(np.sum(self.psi * self.taus ** k)))


def spectral_data(model) -> SpectralData:
    """Eigen-decomposition of T2 and weights psi_a = <0|T1|R_a><L_a|0>.

    When the eigenvector matrix is ill conditioned (> 1e8) the spectral
    form is flagged unavailable; :func:`t_weights` then relies on direct
    products only.
    """
    T1, T2 = _pair(model)
    vals, R = np.linalg.eig(T2)
    order = np.lexsort((np.round(vals.real, 14), np.round(np.abs(vals), 14)))
    vals, R = vals[order], R[:, order]
    cond = float(np.linalg.cond(R))
    if not np.isfinite(cond) or cond > EIG_COND_LIMIT:
        nan = np.full(vals.shape, np.nan)
        return SpectralData(vals, nan, R, np.full(R.shape, np.nan), cond, False)
    Lm = np.linalg.inv(R)
    psi = (T1[0, :] @ R) * Lm[:, 0]
    return SpectralData(vals, psi, R, Lm, cond, True)


def t_weights(model, k_max) -> np.ndarray:
    """t_0..t_{k_max} by repeated products <0|T1 T2^k|0>."""
    T1, T2 = _pair(model)
    if k_max < 0:
        raise HmmError("k_max must be nonnegative")
    out = np.empty(k_max + 1)
    row = T1[0, :].copy()
    for k in range(k_max + 1):
        out[k] = row[0]
        row = row @ T2
    return out


def log_t_weights(model, k_max) -> np.ndarray:
    """ln t_0..ln t_{k_max}, propagating a normalised row so deep weights do not underflow.

    Entries are -inf only where t_k is structurally zero.
    """
    T1, T2 = _pair(model)
    if k_max < 0:
        raise HmmError("k_max must be nonnegative")
    out = np.empty(k_max + 1)
    row = T1[0, :].copy()
    log_scale = 0.0
    with np.errstate(divide="ignore"):
        for k in range(k_max + 1):
            out[k] = np.log(row[0]) + log_scale
            row = row @ T2
            norm = np.abs(row).max()
            if norm == 0.0:
                out[k + 1 :] = -np.inf
                break
            row /= norm
            log_scale += np.log(norm)
    return out


def t_moments(model):
    """Exact (sum_k t_k, sum_k (k+1) t_k) from the resolvent of T2."""
    T1, T2 = _pair(model)
    R = np.linalg.inv(np.eye(T2.shape[0]) - T2)
    row = T1[0, :] @ R
    return float(row[0]), float((row @ R)[0])


def _tail_mass_cut(model, tol=1e-17, k_cap=200_000):
    """Smallest K with sum_{k>K} (k+1) t_k <= tol * sum_k (k+1) t_k, plus t_0..t_K.

    The remainder after K is (K+2) r R e_0 + r (R^2 - R) e_0 with
    r = row_{K+1} and R = (I - T2)^-1; every term is nonnegative, so it is
    evaluated directly rather than as a difference of two sums.
    """
    T1, T2 = _pair(model)
    R = np.linalg.inv(np.eye(T2.shape[0]) - T2)
    a = R[:, 0]
    b = (R @ R)[:, 0] - a
    first = float(T1[0, :] @ (R @ R)[:, 0])
    ts = []
    row = T1[0, :].copy()
    for k in range(k_cap):
        ts.append(row[0])
        row = row @ T2
        rest = (k + 2) * (row @ a) + row @ b
        if k >= 2 and rest <= tol * max(first, 1.0):
            break
    return np.array(ts)


# --------------------------------------------------------------------------
# Closed-form zeta function

def _perron_T2(T2):
    return perron_eigenvalue(T2)


def closed_form_coefficients(true_model, trial, n, k_max):
    """Coefficients c_0..c_{k_max} of xi(z, n) and their n-derivatives."""
    T1, T2 = _pair(true_model)
    H1, H2 = _pair(trial)
    t = t_weights(np.stack([T1, T2]), k_max)
    th = t_weights(np.stack([H1, H2]), k_max)
    tau, tau_h = _perron_T2(T2), _perron_T2(H2)
    u = t * _pow0(th, n)
    with np.errstate(invalid="ignore"):
        du = _dpow(t, th, n)
        dv = _dpow(tau, tau_h, n)
    v = tau * _pow0(tau_h, n)
    diverges = bool(np.any(np.isneginf(du)) or np.isneginf(dv))
    du = np.where(np.isfinite(du), du, 0.0)
    dv = float(dv) if np.isfinite(dv) else 0.0
    c = np.zeros(k_max + 1)
    dc = np.zeros(k_max + 1)
    c[0] = 1.0
    if k_max >= 1:
        c[1] = -(u[0] + v)
        dc[1] = -(du[0] + dv)
    for k in range(2, k_max + 1):
        c[k] = v * u[k - 2] - u[k - 1]
        dc[k] = dv * u[k - 2] + v * du[k - 2] - du[k - 1]
    return c, dc, diverges


def _detect_tail(c, dc, K, rtol=1e-9):
    """Geometric tail of period 1 or 2 fitted on c_0..c_{K+2}; None if absent."""
    for d in (2, 1):
        if K - 2 * d < 2:
            continue
        idx = np.arange(K - d + 1, K + 3)
        base = c[idx - d]
        if np.any(base == 0.0):
            continue
        ratios = c[idx] / base
        rho = c[K] / c[K - d]
        if np.all(np.abs(ratios - rho) <= rtol * abs(rho)) and abs(rho) < 1.0:
            drho = (dc[K] * c[K - d] - c[K] * dc[K - d]) / c[K - d] ** 2
            return GeometricTail(K, d, c[K - d + 1 : K + 1].copy(), dc[K - d + 1 : K + 1].copy(), float(rho), float(drho))
    return None


def closed_form_series(true_model, trial, n=0.0, k_max=40, tail=True) -> ZetaSeries:
    """xi(z, n) of the unambiguous model through order ``k_max``.

    If the coefficients follow a period-1 or period-2 geometric recurrence
    (as in the three-state scenario, where t_{k+2} = tau**2 t_k), the
    remainder beyond ``k_max`` is summed analytically.
    """
    T = np.stack(_pair(true_model))
    H = np.stack(_pair(trial))

    def build(nn):
        c, dc, diverges = closed_form_coefficients(T, H, nn, k_max + 2)
        geo = _detect_tail(c, dc, k_max) if tail else None
        return ZetaSeries(
            k_max, "closed-form", float(nn), c[: k_max + 1], dc[: k_max + 1], diverges, geo, build
        )

    return build(float(n))


def exact_zeta(true_model, trial, z, n, k_max=40) -> float:
    if abs(z) > 1.0:
        raise HmmError("exact_zeta is evaluated for |z| <= 1")
    return closed_form_series(true_model, trial, n, k_max).value(z)


def exact_zeta_at_one(true_model, trial, n) -> float:
    """Factorised xi(1, n) = (1 - tau_hat**n tau)(1 - sum_k t_hat_k**n t_k)."""
    T = np.stack(_pair(true_model))
    H = np.stack(_pair(trial))
    t = _tail_mass_cut(T)
    th = t_weights(H, t.size - 1)
    tau, tau_h = _perron_T2(T[1]), _perron_T2(H[1])
    return float((1.0 - _pow0(tau_h, n) * tau) * (1.0 - np.sum(_pow0(th, n) * t)))


def likelihood_rate_exact(true_model, trial) -> float:
    """sum_k t_k ln t_hat_k / sum_k (k+1) t_k, i.e. -F_1 / N.

    The numerator is summed until the remaining first moment of ``t_k`` is
    below 1e-17; the denominator is exact (resolvent). Returns ``-inf`` with
    a warning naming the offending k when the trial gives t_hat_k = 0 where
    t_k > 0.
    """
    T = np.stack(_pair(true_model))
    H = np.stack(_pair(trial))
    t = _tail_mass_cut(T)
    log_th = log_t_weights(H, t.size - 1)
    bad = np.flatnonzero((t > 0) & np.isneginf(log_th))
    if bad.size:
        warnings.warn(f"support mismatch: t_hat_k = 0 where t_k > 0 for k in {bad[:10].tolist()}")
        return -np.inf
    _, first = t_moments(T)
    pos = t > 0
    return float(np.sum(t[pos] * log_th[pos]) / first)


# --------------------------------------------------------------------------
# Identifiability

def free_parameters(P, epsilon) -> np.ndarray:
    """Off-diagonal transition entries column by column, then epsilon."""
    P = np.asarray(P)
    L = P.shape[0]
    mask = ~np.eye(L, dtype=bool)
    return np.concatenate([P.T[mask.T], [epsilon]])


def _from_free(theta, L):
    P = np.zeros((L, L), dtype=theta.dtype)
    mask = ~np.eye(L, dtype=bool)
    Pt = P.T.copy()
    Pt[mask.T] = theta[:-1]
    P = Pt.T.copy()
    P[np.diag_indices(L)] = 1.0 - (P.sum(axis=0) - np.diag(P))
    return P, theta[-1]


def _charpoly(A):
    """Coefficients a_1..a_L of det(lambda I - A) by Faddeev-LeVerrier."""
    L = A.shape[0]
    Mk = np.zeros_like(A)
    a = [1.0]
    for k in range(1, L + 1):
        Mk = A @ Mk + a[-1] * np.eye(L)
        a.append(-np.trace(A @ Mk) / k)
    return np.array(a[1:])


def _invariants(theta, L):
    P, eps = _from_free(theta, L)
    T1 = np.zeros_like(P)
    T1[0, :] = (1.0 - eps) * P[0, :]
    T2 = P - T1
    row = T1[0, :]
    ts = []
    for _ in range(L):
        ts.append(row[0])
        row = row @ T2
    return np.concatenate([_charpoly(T2), np.array(ts)])


def identifiability_jacobian(P, epsilon) -> np.ndarray:
    """Jacobian of (tau_a, psi_a) w.r.t. the L(L-1)+1 free parameters.

    The polynomial map to (characteristic coefficients of T2, t_0..t_{L-1})
    is differentiated by complex step (exact to rounding), then pulled back
    through the analytic Jacobian of (tau, psi) -> (coefficients, t). Real
    and imaginary parts are stacked, so the result has shape (4L, L(L-1)+1).
    """
    P = np.asarray(P, dtype=float)
    L = P.shape[0]
    theta = free_parameters(P, epsilon).astype(complex)
    h = 1e-30
    J_ct = np.empty((2 * L, theta.size))
    for j in range(theta.size):
        th = theta.copy()
        th[j] += 1j * h
        J_ct[:, j] = np.imag(_invariants(th, L)) / h
    sd = spectral_data(build_unambiguous(L, epsilon, P))
    if not sd.available:
        raise HmmError("T2 eigenvectors are ill conditioned; spectral parameters undefined")
    taus, psi = sd.taus, sd.psi
    # d(a_1..a_L, t_0..t_{L-1}) / d(tau_1..tau_L, psi_1..psi_L)
    D = np.zeros((2 * L, 2 * L), dtype=complex)
    for a in range(L):
        D[:L, a] = -np.poly(np.delete(taus, a))
        for k in range(L):
            D[L + k, a] = k * psi[a] * taus[a] ** (k - 1) if k else 0.0
            D[L + k, L + a] = taus[a] ** k
    J = np.linalg.solve(D, J_ct.astype(complex))
    return np.vstack([J.real, J.imag])


def effective_rank(P, epsilon, big=1e-6):
    """(rank, normalised singular values) of :func:`identifiability_jacobian`."""
    sv = np.linalg.svd(identifiability_jacobian(P, epsilon), compute_uv=False)
    sv = sv / sv[0]
    return int(np.sum(sv > big)), sv
