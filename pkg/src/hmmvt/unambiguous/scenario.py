"""Closed forms for the three-state, error-free scenario.

Transition matrix (columns = previous state, 0-based states 0, 1, 2)::

    [[p0, q1, r1],
     [p1,  0, r2],
     [p2, q2,  0]]

with p0 = 1 - p1 - p2, q2 = 1 - q1, r2 = 1 - r1 and epsilon = 0. The
observed process depends on the four free parameters only through the
effective parameters

    t0 = p0,  t1 = p1 q1 + p2 r1,  t2 = p1 r1 q2 + p2 q1 r2,  tau^2 = q2 r2,

tied by tau^2 (1 - t0) = 1 - t0 - t1 - t2. Free energies are per symbol.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from hmmvt.errors import HmmError
from hmmvt.unambiguous.model import UnambiguousHmm, build_unambiguous

PARAM_NAMES = ("p1", "p2", "q1", "r1")


@dataclass(frozen=True)
class ScenarioParams:
    p1: float
    p2: float
    q1: float
    r1: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not (np.isfinite(v) and -1e-15 <= v <= 1.0 + 1e-15):
                raise HmmError(f"{name}={v} is not a probability")
        if self.p1 + self.p2 > 1.0 + 1e-12:
            raise HmmError(f"p1 + p2 = {self.p1 + self.p2} exceeds 1")

    @property
    def p0(self):
        return 1.0 - self.p1 - self.p2

    @property
    def q2(self):
        return 1.0 - self.q1

    @property
    def r2(self):
        return 1.0 - self.r1

    def as_array(self) -> np.ndarray:
        return np.array([self.p1, self.p2, self.q1, self.r1])

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in PARAM_NAMES}

    @classmethod
    def from_array(cls, a) -> "ScenarioParams":
        return cls(*(float(v) for v in a))

    def transition(self) -> np.ndarray:
        return np.array(
            [
                [self.p0, self.q1, self.r1],
                [self.p1, 0.0, self.r2],
                [self.p2, self.q2, 0.0],
            ]
        )

    def model(self) -> UnambiguousHmm:
        P = self.transition()
        P = np.clip(P, 0.0, None)
        P /= P.sum(axis=0)
        return build_unambiguous(3, 0.0, P)


REFERENCE = ScenarioParams(0.3, 0.2, 0.4, 0.5)


def params_from_transition(P) -> ScenarioParams:
    """Read (p1, p2, q1, r1) back from a 3 x 3 column-stochastic matrix."""
    P = np.asarray(P)
    return ScenarioParams(float(P[1, 0]), float(P[2, 0]), float(P[0, 1]), float(P[0, 2]))


def random_params(rng, interior=0.02) -> ScenarioParams:
    """Uniform-ish draw with every parameter and p0 at least ``interior``."""
    while True:
        p = rng.dirichlet([1.0, 1.0, 1.0])
        q1, r1 = rng.uniform(interior, 1.0 - interior, size=2)
        if p.min() >= interior:
            return ScenarioParams(p[1], p[2], q1, r1)


@dataclass(frozen=True)
class ScenarioStats:
    t0: float
    t1: float
    t2: float
    tau2: float

    @property
    def mu(self) -> float:
        return 1.0 - self.tau2 + self.t2 + (1.0 - self.t0) * (1.0 + self.tau2)

    def as_array(self) -> np.ndarray:
        return np.array([self.t0, self.t1, self.t2, self.tau2])

    def constraint_residual(self) -> float:
        return self.tau2 * (1.0 - self.t0) - (1.0 - self.t0 - self.t1 - self.t2)


def scenario_stats(params: ScenarioParams) -> ScenarioStats:
    p1, p2, q1, r1 = params.p1, params.p2, params.q1, params.r1
    q2, r2 = params.q2, params.r2
    return ScenarioStats(params.p0, p1 * q1 + p2 * r1, p1 * r1 * q2 + p2 * q1 * r2, q2 * r2)


def _xlogy(a, b):
    """a * ln b with 0 * ln 0 = 0 and +-inf for a > 0, b = 0."""
    if a == 0.0:
        return 0.0
    if b <= 0.0:
        return -np.inf
    return a * np.log(b)


def _weights(true: ScenarioStats):
    """Coefficients of ln t0_hat, ln t1_hat, ln t2_hat, ln tau2_hat in -mu F / N."""
    return (
        (1.0 - true.tau2) * true.t0,
        true.t1,
        true.t2,
        (1.0 - true.t0) * true.tau2,
    )


def _rate(true: ScenarioStats, logs) -> float:
    s = sum(logs)
    return -s / true.mu


def f1_rate(true: ScenarioStats, trial: ScenarioStats) -> float:
    """F_1 / N, the negative expected log-likelihood per symbol."""
    w = _weights(true)
    vals = (trial.t0, trial.t1, trial.t2, trial.tau2)
    return _rate(true, [_xlogy(a, b) for a, b in zip(w, vals)])


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def fbeta_rate(true: ScenarioStats, trial: ScenarioParams, beta) -> float:
    """F_beta / N for finite beta > 0 (tempered effective parameters).

    The tempered route weights are combined in log space, so large beta
    does not underflow.
    """
    if not (0 < beta < np.inf):
        raise HmmError("beta must be positive and finite; use finf_rate for beta = inf")
    b = float(beta)
    lp0, lp1, lp2 = _log(trial.p0), _log(trial.p1), _log(trial.p2)
    lq1, lq2, lr1, lr2 = _log(trial.q1), _log(trial.q2), _log(trial.r1), _log(trial.r2)
    log_hat = (
        b * lp0,
        logsumexp([b * (lp1 + lq1), b * (lp2 + lr1)]),
        logsumexp([b * (lp1 + lr1 + lq2), b * (lp2 + lq1 + lr2)]),
        b * (lq2 + lr2),
    )
    w = _weights(true)
    logs = [0.0 if a == 0.0 else a * lh for a, lh in zip(w, log_hat)]
    return _rate(true, logs) / b


def finf_rate(true: ScenarioStats, trial: ScenarioParams) -> float:
    """F_inf / N, the zero-temperature (best-path) free energy per symbol."""
    p0, p1, p2 = trial.p0, trial.p1, trial.p2
    q1, q2, r1, r2 = trial.q1, trial.q2, trial.r1, trial.r2
    hat = (p0, max(p1 * q1, p2 * r1), max(p2 * q1 * r2, p1 * r1 * q2), q2 * r2)
    w = _weights(true)
    return _rate(true, [_xlogy(a, h) for a, h in zip(w, hat)])


# --------------------------------------------------------------------------
# Viterbi-training fixed points

@dataclass(frozen=True)
class VtFixedPoint:
    nullified: str
    params: ScenarioParams
    f_inf: float

    def as_dict(self, true: ScenarioStats) -> dict:
        st = scenario_stats(self.params)
        return {
            "nullified": self.nullified,
            "params": self.params.as_dict(),
            "f_inf": self.f_inf,
            "f_1": f1_rate(true, st),
            "stats_residual": float(np.max(np.abs(st.as_array()[:3] - true.as_array()[:3]))),
        }


def _branch(true: ScenarioStats, which: str) -> ScenarioParams:
    t0, t1, t2 = true.t0, true.t1, true.t2
    a = 1.0 - t0
    if which == "p1":
        return ScenarioParams(0.0, a, t2 / (a - t1), t1 / a)
    if which == "p2":
        return ScenarioParams(a, 0.0, t1 / a, t2 / (a - t1))
    if which == "q1":
        r1 = (t1 + t2) / a
        return ScenarioParams(t2 / r1, t1 / r1, 0.0, r1)
    if which == "r1":
        q1 = (t1 + t2) / a
        return ScenarioParams(t1 / q1, t2 / q1, q1, 0.0)
    raise HmmError(f"unknown parameter {which!r}")


def vt_fixed_points(true: ScenarioStats) -> list:
    """The four sparse minimisers of F_inf, one per nullified parameter.

    Each reproduces (t0, t1, t2) exactly. With degenerate stats (some t_i
    or 1 - t0 equal to zero) fewer distinct points exist; duplicates and
    undefined branches are dropped with a warning.
    """
    out = []
    for name in PARAM_NAMES:
        try:
            with np.errstate(divide="raise", invalid="raise"):
                p = _branch(true, name)
        except (FloatingPointError, ZeroDivisionError, HmmError):
            continue
        if any(np.allclose(p.as_array(), o.params.as_array(), atol=1e-12) for o in out):
            continue
        out.append(VtFixedPoint(name, p, finf_rate(true, p)))
    if len(out) < 4:
        warnings.warn(f"degenerate effective parameters: only {len(out)} distinct VT fixed points")
    return out


def vt_chi(trial: ScenarioParams, beta=np.inf):
    """(chi1, chi2, tie) posterior weights of the two odd/even gap routes."""
    p1, p2, q1, q2, r1, r2 = trial.p1, trial.p2, trial.q1, trial.q2, trial.r1, trial.r2
    a1, b1 = p1 * q1, p2 * r1
    a2, b2 = p1 * r1 * q2, p2 * r2 * q1
    if np.isinf(beta):
        tie = a1 == b1 or a2 == b2
        return float(a1 > b1), float(a2 > b2), tie
    a1, b1, a2, b2 = a1**beta, b1**beta, a2**beta, b2**beta
    chi1 = a1 / (a1 + b1) if a1 + b1 > 0 else 0.0
    chi2 = a2 / (a2 + b2) if a2 + b2 > 0 else 0.0
    return chi1, chi2, False


def vt_iterate(true: ScenarioStats, trial: ScenarioParams, beta=np.inf) -> ScenarioParams:
    """One Viterbi-EM update in the infinite-data limit.

    At ``beta=inf`` the route weights are 0 or 1; an exact tie resolves to 0
    and is reported with a warning.
    """
    t0, t1, t2, tau2 = true.t0, true.t1, true.t2, true.tau2
    chi1, chi2, tie = vt_chi(trial, beta)
    if tie:
        warnings.warn("exact tie in VT route comparison; resolved toward chi = 0")
    rest = (1.0 - t0) * tau2

    def ratio(num, den, fallback):
        return num / den if den > 0 else fallback

    p1 = ratio(t1 * chi1 + t2 * chi2, t1 + t2 + t0 * (1.0 - tau2), trial.p1)
    p2 = max(1.0 - t0 - p1, 0.0)
    q1 = ratio(t1 * chi1 + t2 * (1.0 - chi2), t1 * chi1 + t2 + rest, trial.q1)
    r1 = ratio(t1 * (1.0 - chi1) + t2 * chi2, t2 + t1 * (1.0 - chi1) + rest, trial.r1)
    return ScenarioParams(p1, p2, q1, r1)


# --------------------------------------------------------------------------
# The ML-degenerate manifold

def _manifold_roots(true, p1):
    t0, t1, t2 = true.t0, true.t1, true.t2
    a, b = p1, 1.0 - t0 - p1
    A = a * (a + b)
    B = (a + b) * (b - a - t1)
    C = a * t1 - b * t2
    if abs(A) < 1e-300:
        return [-C / B] if B != 0 else []
    disc = B * B - 4 * A * C
    if disc < 0:
        return []
    sq = np.sqrt(disc)
    # numerically stable pair
    qq = -0.5 * (B + np.copysign(sq, B))
    r_a = qq / A
    r_b = C / qq if qq != 0 else r_a
    return sorted([r_a, r_b])


def _manifold_point(true, p1, q1):
    b = 1.0 - true.t0 - p1
    r1 = (true.t1 - p1 * q1) / b
    return p1, b, q1, r1


def _polish_manifold(true, p1, q1, r1):
    """Newton on the 2 x 2 system t1(q1, r1) = t1, t2(q1, r1) = t2 at fixed p1."""
    b = 1.0 - true.t0 - p1
    for _ in range(20):
        f = np.array(
            [p1 * q1 + b * r1 - true.t1, p1 * r1 * (1 - q1) + b * q1 * (1 - r1) - true.t2]
        )
        J = np.array([[p1, b], [-p1 * r1 + b * (1 - r1), p1 * (1 - q1) - b * q1]])
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            break
        q1, r1 = q1 - step[0], r1 - step[1]
        if np.max(np.abs(step)) < 1e-16:
            break
    return q1, r1


def manifold_points(true: ScenarioStats, p1):
    """All probability-valued (p1, p2, q1, r1) on the manifold at this p1."""
    b = 1.0 - true.t0 - p1
    if p1 < 0 or b < 0:
        return []
    out = []
    if b == 0.0:
        # p2 = 0: q1 = t1 / p1 and r1 from the second equation
        if p1 <= 0:
            return []
        q1 = true.t1 / p1
        r1 = true.t2 / (p1 * (1 - q1)) if q1 < 1 else np.nan
        cands = [(q1, r1)]
    else:
        cands = []
        for q1 in _manifold_roots(true, p1):
            _, _, q1, r1 = _manifold_point(true, p1, q1)
            cands.append(_polish_manifold(true, p1, q1, r1))
    for q1, r1 in cands:
        if np.isfinite(q1) and np.isfinite(r1) and -1e-12 <= q1 <= 1 + 1e-12 and -1e-12 <= r1 <= 1 + 1e-12:
            out.append(ScenarioParams(p1, b, float(np.clip(q1, 0, 1)), float(np.clip(r1, 0, 1))))
    return out


def feasible_interval(true: ScenarioStats, grid=2001):
    """Range of p1 values admitting at least one manifold point (grid + bisection)."""
    a = 1.0 - true.t0
    xs = np.linspace(0.0, a, grid)
    ok = np.array([bool(manifold_points(true, x)) for x in xs])
    if not ok.any():
        return None
    lo_i, hi_i = np.flatnonzero(ok)[[0, -1]]

    def edge(inside, outside):
        for _ in range(60):
            mid = 0.5 * (inside + outside)
            if manifold_points(true, mid):
                inside = mid
            else:
                outside = mid
        return inside

    lo = xs[lo_i] if lo_i == 0 else edge(xs[lo_i], xs[lo_i - 1])
    hi = xs[hi_i] if hi_i == grid - 1 else edge(xs[hi_i], xs[hi_i + 1])
    return float(lo), float(hi)


def ml_manifold_point(true: ScenarioStats, p1, branch=-1) -> ScenarioParams:
    """A parameter vector with the given p1 that reproduces (t0, t1, t2).

    Up to two solutions exist; ``branch`` picks the one with the larger
    (+1) or smaller (-1) q1, falling back to the only feasible one.
    """
    pts = manifold_points(true, float(p1))
    if not pts:
        rng = feasible_interval(true)
        raise HmmError(f"infeasible p1={p1}; feasible interval approximately {rng}")
    if len(pts) == 1:
        return pts[0]
    return pts[-1] if branch > 0 else pts[0]
