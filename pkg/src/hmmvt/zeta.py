"""Generating function and zeta-function machinery for likelihood rates.

For a true model with transfer matrices ``T`` and a trial set ``That``,
the weight of a word ``w = (x_1..x_k)`` is

    phi_n(w) = lambda[T(x_k)...T(x_1)] * lambda[That(x_k)...That(x_1)] ** n

with ``lambda`` the Perron root. The zeta function is the power series

    xi(z, n) = prod over primitive cycles G of (1 - z**|G| phi_n(G))
             = exp(-sum_m z**m / m * sum_{|w|=m} phi_n(w))

and the expected log-likelihood rate is ``d_n xi(1, 0) / d_z xi(1, 0)``.
Coefficients are carried together with their exact n-derivatives (a
forward-mode dual), so the rate needs no finite differencing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from hmmvt.core import HmmModel
from hmmvt.errors import GuardError, HmmError, TruncationError


# --------------------------------------------------------------------------
# Perron roots

def perron_eigenvalue(matrix) -> float:
    """Spectral radius of a nonnegative square matrix.

    Closed form for L <= 2, characteristic polynomial for L = 3, shifted
    power iteration above that (with a dense eigensolver as fallback).
    """
    A = np.asarray(matrix, dtype=float)
    L = A.shape[0]
    if not np.any(A):
        return 0.0
    if L == 1:
        return float(A[0, 0])
    if L == 2:
        half_tr = 0.5 * (A[0, 0] + A[1, 1])
        disc = (0.5 * (A[0, 0] - A[1, 1])) ** 2 + A[0, 1] * A[1, 0]
        return float(half_tr + np.sqrt(max(disc, 0.0)))
    if L == 3:
        tr = np.trace(A)
        minors = (
            A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
            + A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]
            + A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]
        )
        det = np.linalg.det(A)
        return _polish_cubic(_cubic_max_root(tr, minors, det), tr, minors, det)
    return _power_iteration(A)


def _cubic_max_root(tr, minors, det):
    """Largest real root of x**3 - tr x**2 + minors x - det (the Perron root)."""
    a2, a1, a0 = -tr, minors, -det
    p = a1 - a2 * a2 / 3.0
    q = 2.0 * a2**3 / 27.0 - a2 * a1 / 3.0 + a0
    shift = -a2 / 3.0
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    if p == 0.0:
        return shift + np.cbrt(-q)
    if disc > 0.0:
        sq = np.sqrt(disc)
        return shift + np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
    m = 2.0 * np.sqrt(-p / 3.0)
    arg = np.clip(3.0 * q / (p * m), -1.0, 1.0)
    return shift + m * np.cos(np.arccos(arg) / 3.0)


def _polish_cubic(r, tr, minors, det):
    # two guarded Newton steps on the characteristic polynomial
    for _ in range(2):
        f = ((r - tr) * r + minors) * r - det
        df = (3.0 * r - 2.0 * tr) * r + minors
        if df <= 0.0:
            break
        step = f / df
        if not np.isfinite(step) or abs(step) > 1e-6 * max(r, 1e-300):
            break
        r -= step
    return float(max(r, 0.0))


def _power_iteration(A, tol=1e-15, max_iter=20_000):
    B = A + np.eye(A.shape[0])
    v = np.full(A.shape[0], 1.0 / A.shape[0])
    rho = 0.0
    for _ in range(max_iter):
        w = B @ v
        nxt = w.sum()
        w /= nxt
        if abs(nxt - rho) <= tol * nxt and np.max(np.abs(w - v)) <= 1e-13:
            return float(nxt - 1.0)
        v, rho = w, nxt
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def perron_batch(stack) -> np.ndarray:
    """Perron roots of a stack of nonnegative (K, L, L) matrices."""
    stack = np.asarray(stack, dtype=float)
    L = stack.shape[-1]
    if L == 1:
        return stack[:, 0, 0].copy()
    if L == 2:
        half_tr = 0.5 * (stack[:, 0, 0] + stack[:, 1, 1])
        disc = (0.5 * (stack[:, 0, 0] - stack[:, 1, 1])) ** 2 + stack[:, 0, 1] * stack[:, 1, 0]
        return half_tr + np.sqrt(np.clip(disc, 0.0, None))
    return np.max(np.abs(np.linalg.eigvals(stack)), axis=-1)


def _pow0(base, n):
    """base**n with 0**0 == 1."""
    base = np.asarray(base, dtype=float)
    if n == 0:
        return np.ones_like(base)
    return base**n


def _dpow(lam, lam_hat, n):
    """d/dn of lam * lam_hat**n; -inf where lam > 0 and lam_hat == 0 at n == 0."""
    lam = np.asarray(lam, dtype=float)
    lam_hat = np.asarray(lam_hat, dtype=float)
    out = np.zeros(np.broadcast(lam, lam_hat).shape)
    pos = lam_hat > 0
    out[pos] = (lam * np.where(pos, lam_hat, 1.0) ** n * np.log(np.where(pos, lam_hat, 1.0)))[pos]
    if n == 0:
        out[(~pos) & (lam > 0)] = -np.inf
    return out


# --------------------------------------------------------------------------
# Trial deformation

@dataclass(frozen=True, eq=False)
class DeformedTransferSet:
    """Per-symbol matrices pi_hat(x|s)**beta * p_hat(s|s')**beta (not stochastic)."""

    matrices: np.ndarray  # (M, L, L)
    beta: float

    @property
    def num_observed(self):
        return self.matrices.shape[0]


def beta_deform(trial_model: HmmModel, beta) -> DeformedTransferSet:
    if not np.isfinite(beta):
        raise HmmError("beta must be finite here; use the closed forms for beta = inf")
    if beta <= 0:
        raise HmmError("beta must be positive")
    E = trial_model.emission ** beta
    P = trial_model.transition ** beta
    mats = E[:, :, None] * P[None, :, :]
    mats.setflags(write=False)
    return DeformedTransferSet(mats, float(beta))


def _stack(obj) -> np.ndarray:
    if isinstance(obj, HmmModel):
        return obj.transfer_matrices()
    if isinstance(obj, DeformedTransferSet):
        return obj.matrices
    arr = np.asarray(obj, dtype=float)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise HmmError("expected an HmmModel, DeformedTransferSet or (M, L, L) array")
    return arr


def _check_pair(true_model, trial):
    T = _stack(true_model)
    That = _stack(trial)
    if T.shape != That.shape:
        raise HmmError(f"true and trial transfer sets differ in shape: {T.shape} vs {That.shape}")
    return T, That


# --------------------------------------------------------------------------
# Orbits and weights

@dataclass(frozen=True, order=True)
class OrbitClass:
    period: int
    word: tuple  # minimal rotation, 0-based symbols

    def label(self) -> str:
        return "".join(str(s + 1) for s in self.word)


def lyndon_words(m, max_len):
    """Duval's algorithm: aperiodic minimal rotations up to ``max_len`` in lex order."""
    w = [-1]
    while w:
        w[-1] += 1
        yield tuple(w)
        k = len(w)
        while len(w) < max_len:
            w.append(w[len(w) - k])
        while w and w[-1] == m - 1:
            w.pop()


def orbit_classes(m: int, p_max: int) -> list:
    """One representative per primitive cyclic class, sorted by period then word."""
    if m < 1 or p_max < 1:
        raise HmmError("alphabet size and period must be positive")
    if p_max > 16 or m > 4:
        raise GuardError(f"orbit enumeration guard: need p_max <= 16 and M <= 4, got {p_max}, {m}")
    return sorted(OrbitClass(len(w), w) for w in lyndon_words(m, p_max))


def _word_product(stack, word):
    prod = np.eye(stack.shape[1])
    for x in word:
        prod = stack[x] @ prod
    return prod


def phi_weight(true_model, trial, n, word) -> float:
    """lambda[T(x_k)...T(x_1)] * lambda[That(x_k)...That(x_1)]**n (0**0 = 1)."""
    if len(word) == 0:
        raise HmmError("word must be nonempty")
    T, That = _check_pair(true_model, trial)
    lam = perron_eigenvalue(_word_product(T, word))
    lam_hat = perron_eigenvalue(_word_product(That, word))
    return float(lam * _pow0(lam_hat, n))


# --------------------------------------------------------------------------
# Series

@dataclass(frozen=True)
class GeometricTail:
    """Sum over k > K of c_k z**k when c_{k+d} = rho * c_k beyond K - d."""

    K: int
    d: int
    head: np.ndarray  # c_{K-d+1} .. c_K
    dhead: np.ndarray
    rho: float
    drho: float

    def _powers(self, z):
        ks = np.arange(self.K - self.d + 1, self.K + 1)
        return ks, z ** ks

    def value(self, z):
        _, zk = self._powers(z)
        g = self.rho * z**self.d / (1.0 - self.rho * z**self.d)
        return float(np.dot(self.head, zk) * g)

    def dz(self, z):
        ks, zk = self._powers(z)
        u = self.rho * z**self.d
        g = u / (1.0 - u)
        dg = self.d * self.rho * z ** (self.d - 1) / (1.0 - u) ** 2
        h = np.dot(self.head, zk)
        dh = np.dot(self.head * ks, z ** (ks - 1))
        return float(dh * g + h * dg)

    def dn(self, z):
        _, zk = self._powers(z)
        u = self.rho * z**self.d
        g = u / (1.0 - u)
        dg_drho = z**self.d / (1.0 - u) ** 2
        return float(np.dot(self.dhead, zk) * g + np.dot(self.head, zk) * dg_drho * self.drho)


@dataclass(frozen=True, eq=False)
class ZetaSeries:
    """Truncated xi(z, n) = sum_k c[k] z**k at a fixed n, with dc/dn alongside.

    ``diverges`` marks a support mismatch: some cycle has lambda > 0 while
    the trial assigns it lambda_hat = 0, so d/dn at n = 0 is -inf.
    """

    k_max: int
    method: str
    n: float
    c: np.ndarray
    dc: np.ndarray
    diverges: bool = False
    tail: Optional[GeometricTail] = None
    builder: Optional[Callable] = field(default=None, repr=False)

    def at(self, n) -> "ZetaSeries":
        if n == self.n:
            return self
        if self.builder is None:
            raise HmmError("this series cannot be re-evaluated at a different n")
        return self.builder(n)

    def value(self, z) -> float:
        out = float(np.polyval(self.c[::-1], z))
        return out + (self.tail.value(z) if self.tail else 0.0)

    def dz(self, z) -> float:
        k = np.arange(1, self.c.size)
        out = float(np.dot(k * self.c[1:], z ** (k - 1)))
        return out + (self.tail.dz(z) if self.tail else 0.0)

    def dn(self, z) -> float:
        if self.diverges:
            return -np.inf
        out = float(np.polyval(self.dc[::-1], z))
        return out + (self.tail.dn(z) if self.tail else 0.0)

    def dn_central(self, z, h=1e-6) -> float:
        """Central finite difference in n; cross-check for :meth:`dn`."""
        return (self.at(self.n + h).value(z) - self.at(self.n - h).value(z)) / (2 * h)


def _shift_sub(poly, dpoly, phi, dphi, p):
    """Multiply the dual polynomial (poly, dpoly) by (1 - z**p phi)."""
    new = poly.copy()
    dnew = dpoly.copy()
    new[p:] -= phi * poly[:-p]
    dnew[p:] -= phi * dpoly[:-p]
    if dphi != 0.0:
        dnew[p:] -= dphi * poly[:-p]
    return new, dnew


def zeta_series_cycle(true_model, trial, n=0.0, k_max=8) -> ZetaSeries:
    """Cycle expansion: the orbit product truncated at order ``k_max``."""
    if k_max < 1 or k_max > 12:
        raise GuardError(f"cycle expansion guard: 1 <= k_max <= 12, got {k_max}")
    T, That = _check_pair(true_model, trial)
    orbits = orbit_classes(T.shape[0], k_max)
    lam = np.array([perron_eigenvalue(_word_product(T, o.word)) for o in orbits])
    lam_hat = np.array([perron_eigenvalue(_word_product(That, o.word)) for o in orbits])
    periods = np.array([o.period for o in orbits])

    def build(nn):
        phi = lam * _pow0(lam_hat, nn)
        with np.errstate(invalid="ignore"):
            dphi = _dpow(lam, lam_hat, nn)
        diverges = bool(np.any(np.isneginf(dphi)))
        dphi = np.where(np.isfinite(dphi), dphi, 0.0)
        poly = np.zeros(k_max + 1)
        poly[0] = 1.0
        dpoly = np.zeros(k_max + 1)
        for p, f, df in zip(periods, phi, dphi):
            poly, dpoly = _shift_sub(poly, dpoly, f, df, p)
        return ZetaSeries(k_max, "cycle-expansion", float(nn), poly, dpoly, diverges, None, build)

    return build(float(n))


def _word_products(stack, m):
    """Products T(x_m)...T(x_1) for all M**m words in lexicographic order."""
    M, L, _ = stack.shape
    prods = stack.copy()
    for _ in range(1, m):
        prods = np.einsum("xij,ojk->oxik", stack, prods).reshape(-1, L, L)
    return prods


def _series_exp(f, df):
    """exp of a power series with f[0] == 0, and its derivative exp(f) * df."""
    K = f.size - 1
    e = np.zeros(K + 1)
    e[0] = 1.0
    for k in range(1, K + 1):
        j = np.arange(1, k + 1)
        e[k] = np.dot(j * f[j], e[k - j]) / k
    de = np.convolve(e, df)[: K + 1]
    return e, de


def cumulant_sums(true_model, trial, n, k_max):
    """Lambda^m(n, m) = sum over all M**m words of phi_n, and d/dn, for m = 1..k_max."""
    T, That = _check_pair(true_model, trial)
    a = np.zeros(k_max + 1)
    da = np.zeros(k_max + 1)
    diverges = False
    for m in range(1, k_max + 1):
        lam = perron_batch(_word_products(T, m))
        lam_hat = perron_batch(_word_products(That, m))
        a[m] = np.sum(lam * _pow0(lam_hat, n))
        with np.errstate(invalid="ignore"):
            d = _dpow(lam, lam_hat, n)
        diverges |= bool(np.any(np.isneginf(d)))
        da[m] = np.sum(np.where(np.isfinite(d), d, 0.0))
    return a, da, diverges


def zeta_series_cumulant(true_model, trial, n=0.0, k_max=8) -> ZetaSeries:
    """exp(-sum_m z**m Lambda^m(n, m) / m) truncated at order ``k_max``."""
    if k_max < 1 or k_max > 10:
        raise GuardError(f"cumulant expansion guard: 1 <= k_max <= 10, got {k_max}")
    T, That = _check_pair(true_model, trial)
    if T.shape[0] ** k_max > 4**10:
        raise GuardError("cumulant expansion guard: M**k_max too large")

    def build(nn):
        a, da, diverges = cumulant_sums(T, That, nn, k_max)
        m = np.arange(k_max + 1)
        m[0] = 1
        c, dc = _series_exp(-a / m, -da / m)
        return ZetaSeries(k_max, "cumulant", float(nn), c, dc, diverges, None, build)

    return build(float(n))


# --------------------------------------------------------------------------
# Roots and rates

def zeta_root(series: ZetaSeries, n=None, z_lo=1e-9, z_hi=5.0, tol=1e-13) -> float:
    """Lambda(n) = 1 / z* with z* the smallest positive real root of xi(z, n)."""
    s = series if n is None else series.at(n)
    if abs(s.c[0] - 1.0) > 1e-12:
        raise HmmError("zeta series must have c[0] == 1")
    grid = np.linspace(z_lo, z_hi, 20001)
    vals = np.array([s.value(z) for z in grid])
    sign = np.sign(vals)
    idx = np.flatnonzero(sign[:-1] * sign[1:] <= 0)
    if idx.size == 0:
        raise TruncationError(
            f"truncation too short: no sign change of xi on ({z_lo}, {z_hi}] at k_max={s.k_max}"
        )
    lo, hi = grid[idx[0]], grid[idx[0] + 1]
    f_lo = s.value(lo)
    if f_lo == 0.0:
        return 1.0 / lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = s.value(mid)
        if f_mid == 0.0:
            lo = hi = mid
            break
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 1.0 / (0.5 * (lo + hi))


def rate_from_series(series: ZetaSeries) -> float:
    """d_n xi(1, n) / d_z xi(1, n), the expected log-likelihood per symbol."""
    if series.diverges:
        return -np.inf
    return series.dn(1.0) / series.dz(1.0)


def _is_unambiguous(stack):
    # symbol 0 may only be emitted by state 0: every T(0) row but the first is zero
    return stack.shape[0] == 2 and not np.any(stack[0, 1:, :])


def zeta_series(true_model, trial, n=0.0, k_max=8, method="cycle") -> ZetaSeries:
    if method == "cycle":
        return zeta_series_cycle(true_model, trial, n, k_max)
    if method == "cumulant":
        return zeta_series_cumulant(true_model, trial, n, k_max)
    if method == "exact":
        T, That = _check_pair(true_model, trial)
        if not (_is_unambiguous(T) and _is_unambiguous(That)):
            raise HmmError("method='exact' needs the one-unambiguous-symbol structure in both models")
        from hmmvt.unambiguous.model import closed_form_series

        return closed_form_series(T, That, n, k_max)
    raise HmmError(f"unknown series method {method!r}")


def likelihood_rate(true_model, trial_model, beta=1.0, k_max=8, method="cycle") -> float:
    """-beta F_beta / N from the zeta function of the beta-deformed trial.

    At ``beta=1`` this is the expected per-symbol log-likelihood of the trial
    model under data from the true model. Returns ``-inf`` when the trial
    gives zero weight to a cycle the true model realises.
    """
    trial = trial_model if isinstance(trial_model, DeformedTransferSet) else beta_deform(trial_model, beta)
    return rate_from_series(zeta_series(true_model, trial, 0.0, k_max, method))


def brute_force_lambda(true_model, trial, n, N) -> float:
    """[sum over all M**N words of phi_n(word)] ** (1/N)."""
    T, That = _check_pair(true_model, trial)
    M = T.shape[0]
    if N < 1 or N > 12 or M**N > 3**12:
        raise GuardError(f"brute-force guard: N={N}, M={M}")
    lam = perron_batch(_word_products(T, N))
    lam_hat = perron_batch(_word_products(That, N))
    return float(np.sum(lam * _pow0(lam_hat, n)) ** (1.0 / N))


def orbit_table(true_model, trial, p_max):
    """Rows (period, representative, lambda_true, lambda_trial, phi_n0, dphi_dn)."""
    T, That = _check_pair(true_model, trial)
    rows = []
    for o in orbit_classes(T.shape[0], p_max):
        lam = perron_eigenvalue(_word_product(T, o.word))
        lam_hat = perron_eigenvalue(_word_product(That, o.word))
        with np.errstate(invalid="ignore"):
            d = float(_dpow(lam, lam_hat, 0.0))
        rows.append((o.period, o.label(), lam, lam_hat, lam, d))
    return rows
