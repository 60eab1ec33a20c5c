"""Multistart minimisation of the zero-temperature free energy.

F_inf is a minimum of smooth branches (one per choice inside each max), so
its local minima lie either in the interior of a branch region or on a face
where some parameter is exactly zero. The search runs bounded Nelder-Mead
from random starts, snaps coordinates that end up within ``snap`` of zero,
Newton-polishes the remaining coordinates on that face, checks first-order
optimality, and clusters the survivors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from hmmvt.errors import HmmError
from hmmvt.unambiguous.scenario import (
    PARAM_NAMES,
    ScenarioParams,
    ScenarioStats,
    f1_rate,
    finf_rate,
    scenario_stats,
)

_BIG = 1e6


@dataclass
class LocalMinimum:
    params: ScenarioParams
    f_inf: float
    zero: tuple
    hits: int = 1
    gradient_norm: float = 0.0
    stats: ScenarioStats | None = None
    recovered: dict = field(default_factory=dict)

    def as_dict(self, true: ScenarioStats) -> dict:
        return {
            "params": self.params.as_dict(),
            "f_inf": self.f_inf,
            "f_1": f1_rate(true, self.stats),
            "nullified": list(self.zero),
            "hits": self.hits,
            "gradient_norm": self.gradient_norm,
            "stats": dict(zip(("t0", "t1", "t2", "tau2"), self.stats.as_array().tolist())),
            "recovered": self.recovered,
        }


def _objective(true, theta):
    if np.any(theta < 0.0) or np.any(theta > 1.0) or theta[0] + theta[1] > 1.0:
        return _BIG
    v = finf_rate(true, ScenarioParams.from_array(theta))
    return v if np.isfinite(v) else _BIG


def finf_gradient(true: ScenarioStats, theta) -> np.ndarray:
    """Gradient of F_inf in (p1, p2, q1, r1) on the currently active branches."""
    p1, p2, q1, r1 = theta
    p0, q2, r2 = 1.0 - p1 - p2, 1.0 - q1, 1.0 - r1
    w0 = (1.0 - true.tau2) * true.t0
    w3 = (1.0 - true.t0) * true.tau2
    g = np.zeros(4)
    # d/dtheta of the bracket  w0 ln p0 + w3 ln(q2 r2) + t1 ln A + t2 ln B
    if w0:
        g[0] -= w0 / p0
        g[1] -= w0 / p0
    if w3:
        g[2] -= w3 / q2
        g[3] -= w3 / r2
    if true.t1:
        if p1 * q1 >= p2 * r1 and p1 * q1 > 0:
            g[0] += true.t1 / p1
            g[2] += true.t1 / q1
        else:
            g[1] += true.t1 / p2
            g[3] += true.t1 / r1
    if true.t2:
        if p2 * q1 * r2 >= p1 * r1 * q2 and p2 * q1 * r2 > 0:
            g[1] += true.t2 / p2
            g[2] += true.t2 / q1
            g[3] -= true.t2 / r2
        else:
            g[0] += true.t2 / p1
            g[3] += true.t2 / r1
            g[2] -= true.t2 / q2
    return -g / true.mu


def _newton_polish(true, theta, free, iters=50, h=1e-7):
    theta = theta.copy()
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return theta
    for _ in range(iters):
        g = finf_gradient(true, theta)[idx]
        if not np.all(np.isfinite(g)):
            break
        H = np.empty((idx.size, idx.size))
        for j, k in enumerate(idx):
            e = np.zeros(4)
            step = h * max(1.0, abs(theta[k]))
            e[k] = step
            H[:, j] = (finf_gradient(true, theta + e)[idx] - finf_gradient(true, theta - e)[idx]) / (2 * step)
        H = 0.5 * (H + H.T)
        try:
            d = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        f0 = finf_rate(true, ScenarioParams.from_array(theta))
        t = 1.0
        while t > 1e-8:
            trial = theta.copy()
            trial[idx] -= t * d
            if _objective(true, trial) <= f0 + 1e-15:
                break
            t *= 0.5
        else:
            break
        theta = trial
        if np.max(np.abs(t * d)) < 1e-15:
            break
    return theta


def _kkt_ok(true, theta, free, zero, tol=1e-7, h=1e-7):
    g = finf_gradient(true, theta)
    if np.max(np.abs(g[free]), initial=0.0) > tol:
        return False, float(np.max(np.abs(g[free]), initial=0.0))
    f0 = _objective(true, theta)
    for k in np.flatnonzero(zero):
        e = np.zeros(4)
        e[k] = h
        if (_objective(true, theta + e) - f0) / h < -tol:
            return False, float(np.max(np.abs(g[free]), initial=0.0))
    return True, float(np.max(np.abs(g[free]), initial=0.0))


def _random_start(rng, clamp):
    while True:
        p = rng.dirichlet([1.0, 1.0, 1.0])
        theta = np.array([p[1], p[2], *rng.uniform(0.0, 1.0, 2)])
        theta[clamp[0]] = clamp[1]
        if theta[0] + theta[1] < 1.0:
            return theta


def multistart_minima(
    true: ScenarioStats,
    fixed=None,
    starts=50,
    seed=0,
    tol=1e-10,
    snap=1e-6,
    cluster_tol=1e-6,
) -> list:
    """Distinct local minima of F_inf over the free parameters.

    ``fixed`` maps parameter names to clamped values. Results are sorted
    by F_inf (ties by parameter vector) and carry the number of starts
    that reached each one.
    """
    fixed = dict(fixed or {})
    for k in fixed:
        if k not in PARAM_NAMES:
            raise HmmError(f"unknown parameter {k!r}")
    clamp_idx = np.array([PARAM_NAMES.index(k) for k in fixed], dtype=int)
    clamp_val = np.array([fixed[k] for k in fixed], dtype=float)
    free_mask = np.ones(4, dtype=bool)
    free_mask[clamp_idx] = False
    rng = np.random.default_rng(seed)

    def embed(y):
        theta = np.empty(4)
        theta[free_mask] = y
        theta[clamp_idx] = clamp_val
        return theta

    found: list[LocalMinimum] = []
    for _ in range(starts):
        theta0 = _random_start(rng, (clamp_idx, clamp_val))
        res = minimize(
            lambda y: _objective(true, embed(y)),
            theta0[free_mask],
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * int(free_mask.sum()),
            options={"xatol": tol, "fatol": tol * 1e-2, "maxiter": 20000, "maxfev": 40000,
                     "adaptive": True},
        )
        theta = embed(res.x)
        zero = free_mask & (theta < snap)
        theta[zero] = 0.0
        active = free_mask & ~zero
        theta = _newton_polish(true, theta, active)
        ok, gnorm = _kkt_ok(true, theta, active, zero)
        if not ok:
            continue
        f = finf_rate(true, ScenarioParams.from_array(theta))
        for m in found:
            if np.max(np.abs(m.params.as_array() - theta)) < cluster_tol:
                m.hits += 1
                break
        else:
            zeros = tuple(PARAM_NAMES[k] for k in np.flatnonzero(zero))
            found.append(LocalMinimum(ScenarioParams.from_array(theta), f, zeros, 1, gnorm))
    for m in found:
        m.stats = scenario_stats(m.params)
        m.recovered = {
            name: bool(abs(a - b) <= 1e-6)
            for name, a, b in zip(("t0", "t1", "t2"), m.stats.as_array(), true.as_array())
        }
    found.sort(key=lambda m: (round(m.f_inf, 12), tuple(m.params.as_array())))
    return found


def partial_knowledge_minima(true: ScenarioStats, fixed, starts=50, seed=0, **kw) -> list:
    """Local minima of F_inf with some parameters clamped (usually to their true values)."""
    if not fixed:
        raise HmmError("partial-knowledge search needs at least one clamped parameter")
    return multistart_minima(true, fixed=fixed, starts=starts, seed=seed, **kw)


def manifold_scan(true: ScenarioStats, points=1000, branch=None):
    """F_1 and F_inf along the ML-degenerate manifold, parametrised by p1.

    Returns an array of rows (p1, p2, q1, r1, f_1, f_inf) over every
    feasible branch at each grid value.
    """
    from hmmvt.unambiguous.scenario import feasible_interval, manifold_points

    rng = feasible_interval(true)
    if rng is None:
        return np.empty((0, 6))
    rows = []
    for p1 in np.linspace(rng[0], rng[1], points):
        pts = manifold_points(true, p1)
        if branch is not None and len(pts) == 2:
            pts = [pts[1] if branch > 0 else pts[0]]
        for p in pts:
            rows.append((*p.as_array(), f1_rate(true, scenario_stats(p)), finf_rate(true, p)))
    return np.array(rows)
