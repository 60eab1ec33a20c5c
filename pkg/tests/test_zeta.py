import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_column_stochastic
from hmmvt.core import build_model, observed_log_prob, sample
from hmmvt.errors import GuardError, HmmError, TruncationError
from hmmvt.zeta import (
    ZetaSeries,
    beta_deform,
    brute_force_lambda,
    cumulant_sums,
    likelihood_rate,
    orbit_classes,
    orbit_table,
    perron_eigenvalue,
    phi_weight,
    zeta_root,
    zeta_series,
    zeta_series_cumulant,
    zeta_series_cycle,
)
from hmmvt.unambiguous.model import closed_form_series
from hmmvt.unambiguous.quality import scenario_hmm
from hmmvt.unambiguous.scenario import REFERENCE, random_params
from oracles import necklace_counts, series_product, spectral_radius, word_lambda

F1_REFERENCE = 0.6902258396836988


def _model(seed, L=2, M=2):
    rng = np.random.default_rng(seed)
    return build_model(random_column_stochastic(rng, L, L), random_column_stochastic(rng, M, L))


class TestPerron:
    def test_identity(self):
        assert perron_eigenvalue(np.eye(3)) == 1.0
        assert perron_eigenvalue(np.eye(5)) == pytest.approx(1.0, rel=1e-13)

    def test_single_row(self):
        A = np.zeros((3, 3))
        A[0] = [0.3, 0.5, 0.2]
        assert perron_eigenvalue(A) == pytest.approx(0.3, rel=1e-13)

    def test_zero(self):
        assert perron_eigenvalue(np.zeros((4, 4))) == 0.0

    def test_scenario_T2(self):
        T2 = scenario_hmm(REFERENCE).transfer_matrices()[1]
        assert perron_eigenvalue(T2) == pytest.approx(np.sqrt(0.3), rel=1e-13)

    @given(st.integers(0, 100_000), st.integers(1, 6))
    def test_against_eigvals(self, seed, L):
        rng = np.random.default_rng(seed)
        A = rng.uniform(0, 1, size=(L, L)) * (rng.random((L, L)) < 0.7)
        expect = spectral_radius(A)
        got = perron_eigenvalue(A)
        assert got == pytest.approx(expect, rel=1e-12, abs=1e-15)


class TestOrbits:
    def test_small_cases(self):
        words = [o.word for o in orbit_classes(2, 2)]
        assert words == [(0,), (1,), (0, 1)]
        assert [o.label() for o in orbit_classes(2, 1)] == ["1", "2"]

    @pytest.mark.parametrize("m", [2, 3])
    def test_counts_against_rotation_filter(self, m):
        orbits = orbit_classes(m, 6 if m == 2 else 5)
        for p in range(1, 7 if m == 2 else 6):
            assert sum(o.period == p for o in orbits) == necklace_counts(m, p)

    def test_m2_counts(self):
        counts = [sum(o.period == p for o in orbit_classes(2, 6)) for p in range(1, 7)]
        assert counts == [2, 1, 2, 3, 6, 9]

    def test_representatives_are_minimal_and_aperiodic(self):
        for o in orbit_classes(3, 6):
            rots = {o.word[i:] + o.word[:i] for i in range(o.period)}
            assert len(rots) == o.period
            assert min(rots) == o.word

    def test_guard(self):
        with pytest.raises(GuardError):
            orbit_classes(2, 17)
        with pytest.raises(GuardError):
            orbit_classes(5, 3)


class TestPhi:
    def test_n0_is_true_lambda(self):
        a, b = _model(1, 3), _model(2, 3)
        stack = a.transfer_matrices()
        assert phi_weight(a, b, 0.0, (0, 1, 1)) == pytest.approx(word_lambda(stack, (0, 1, 1)), rel=1e-12)

    def test_zero_to_zero(self):
        m = scenario_hmm(REFERENCE)
        trial = m.transfer_matrices().copy()
        trial[0] = 0.0
        assert phi_weight(m, trial, 0.0, (0,)) == pytest.approx(0.5)
        assert phi_weight(m, trial, 1.0, (0,)) == 0.0

    def test_rotation_and_power(self):
        rng = np.random.default_rng(0)
        a, b = _model(3, 3, 2), _model(4, 3, 2)
        for _ in range(500):
            k = rng.integers(1, 7)
            w = tuple(rng.integers(0, 2, size=k))
            r = int(rng.integers(0, k))
            n = float(rng.uniform(0, 2))
            base = phi_weight(a, b, n, w)
            assert phi_weight(a, b, n, w[r:] + w[:r]) == pytest.approx(base, rel=1e-12, abs=1e-300)
            assert phi_weight(a, b, n, w + w) == pytest.approx(base**2, rel=1e-12, abs=1e-300)

    def test_empty_word(self):
        with pytest.raises(HmmError):
            phi_weight(_model(0), _model(0), 0.0, ())


def _lam(stack, *parts):
    """Product of Perron roots of the given words (the 'a+b' notation)."""
    out = 1.0
    for w in parts:
        out *= word_lambda(stack, [int(c) - 1 for c in w])
    return out


class TestCycleExpansion:
    def test_first_coefficient(self):
        a, b = _model(5, 3, 3), _model(6, 3, 3)
        n = 0.7
        s = zeta_series_cycle(a, b, n, 4)
        Ta, Tb = a.transfer_matrices(), b.transfer_matrices()
        expect = -sum(word_lambda(Ta, [l]) * word_lambda(Tb, [l]) ** n for l in range(3))
        assert s.c[0] == 1.0
        assert s.c[1] == pytest.approx(expect, rel=1e-13)

    @given(st.integers(0, 10_000), st.floats(0.0, 2.0))
    def test_m2_closed_coefficients(self, seed, n):
        a, b = _model(seed, 3, 2), _model(seed + 1, 3, 2)
        Ta, Tb = a.transfer_matrices(), b.transfer_matrices()

        def term(*parts):
            return _lam(Ta, *parts) * _lam(Tb, *parts) ** n

        phi2 = -term("12") + term("1", "2")
        phi3 = term("2", "21") - term("221") + term("1", "12") - term("112")
        phi4 = (
            -term("1222") + term("2", "122") + term("1", "122") - term("1122")
            + term("2", "211") - term("1", "2", "12") + term("1", "211") - term("1112")
        )
        c = zeta_series_cycle(a, b, n, 4).c
        assert c[2] == pytest.approx(phi2, rel=1e-10, abs=1e-14)
        assert c[3] == pytest.approx(phi3, rel=1e-10, abs=1e-14)
        assert c[4] == pytest.approx(phi4, rel=1e-10, abs=1e-14)

    def test_against_explicit_product(self):
        a, b = _model(9, 3, 2), _model(10, 3, 2)
        n = 0.4
        Ta, Tb = a.transfer_matrices(), b.transfer_matrices()
        factors = [
            (o.period, word_lambda(Ta, o.word) * word_lambda(Tb, o.word) ** n)
            for o in orbit_classes(2, 7)
        ]
        np.testing.assert_allclose(zeta_series_cycle(a, b, n, 7).c, series_product(factors, 7), atol=1e-13)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_cumulant(self, seed):
        a, b = _model(seed), _model(seed + 50)
        n = 0.3 * seed
        for k, (x, y) in enumerate([(a, b), (a, a)]):
            cyc = zeta_series_cycle(x, y, n, 6)
            cum = zeta_series_cumulant(x, y, n, 6)
            np.testing.assert_allclose(cyc.c, cum.c, atol=1e-10)
            np.testing.assert_allclose(cyc.dc, cum.dc, atol=1e-10)

    def test_matches_cumulant_k8_three_symbols(self):
        a, b = _model(1, 3, 3), _model(2, 3, 3)
        cyc = zeta_series_cycle(a, b, 0.0, 8)
        cum = zeta_series_cumulant(a, b, 0.0, 8)
        np.testing.assert_allclose(cyc.c, cum.c, atol=1e-10)
        np.testing.assert_allclose(cyc.dc, cum.dc, atol=1e-10)

    def test_guards(self):
        with pytest.raises(GuardError):
            zeta_series_cycle(_model(0), _model(0), 0.0, 13)
        with pytest.raises(GuardError):
            zeta_series_cumulant(_model(0), _model(0), 0.0, 11)
        with pytest.raises(HmmError):
            zeta_series(_model(0), _model(0), method="bogus")


class TestCumulant:
    def test_lambda0_sums_approach_one(self):
        m = scenario_hmm(REFERENCE)
        a, _, _ = cumulant_sums(m, m, 0.0, 10)
        dev = np.abs(a[1:] - 1.0)
        assert np.all(np.diff(dev) < 0)

    def test_leading_order(self):
        m = _model(3)
        s = zeta_series_cumulant(m, m, 0.0, 6)
        assert s.c[0] == 1.0
        assert s.c[1] == pytest.approx(-1.0, abs=0.05)

    @pytest.mark.parametrize("seed", range(5))
    def test_unambiguous_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_params(rng).model(), random_params(rng).model()
        n = float(rng.uniform(0, 2))
        cum = zeta_series_cumulant(a.stack(), b.stack(), n, 6)
        cf = closed_form_series(a, b, n, 6, tail=False)
        np.testing.assert_allclose(cum.c, cf.c, atol=1e-10)
        np.testing.assert_allclose(cum.dc, cf.dc, atol=1e-10)


class TestRoot:
    def test_degenerate_series(self):
        s = ZetaSeries(1, "test", 0.0, np.array([1.0, -1.0]), np.zeros(2))
        assert zeta_root(s) == pytest.approx(1.0, abs=1e-12)

    def test_no_sign_change(self):
        s = ZetaSeries(2, "test", 0.0, np.array([1.0, 0.0, 1.0]), np.zeros(3))
        with pytest.raises(TruncationError, match="truncation too short"):
            zeta_root(s)

    def test_reference_lambda0_closed_form(self):
        m = scenario_hmm(REFERENCE)
        s = zeta_series(m, m, 0.0, 8, method="exact")
        assert abs(zeta_root(s) - 1.0) <= 1e-6

    def test_reference_lambda0_cycle_truncation(self):
        # measured truncation error of the plain cycle expansion: 1.7e-4 at k_max = 8
        m = scenario_hmm(REFERENCE)
        errs = [abs(zeta_root(zeta_series_cycle(m, m, 0.0, k)) - 1.0) for k in range(4, 13)]
        assert np.all(np.diff(errs) < 0)
        assert errs[8 - 4] <= 2e-4
        assert errs[-1] <= 2e-5

    def test_random_models_lambda0_improves(self):
        for seed in range(8):
            m = _model(seed)
            e8 = abs(zeta_root(zeta_series_cycle(m, m, 0.0, 8)) - 1.0)
            e12 = abs(zeta_root(zeta_series_cycle(m, m, 0.0, 12)) - 1.0)
            assert e12 < e8 <= 2e-3

    def test_lambda1_against_brute_force(self):
        m = scenario_hmm(REFERENCE)
        bf = brute_force_lambda(m, m, 1.0, 10)
        assert zeta_root(zeta_series_cycle(m, m, 0.0, 12), 1.0) == pytest.approx(bf, abs=1e-4)
        exact = zeta_root(zeta_series(m, m, 0.0, 40, method="exact"), 1.0)
        assert exact == pytest.approx(bf, abs=1e-4)


class TestBruteForce:
    def test_n0_close_to_one(self):
        m = scenario_hmm(REFERENCE)
        assert brute_force_lambda(m, m, 0.0, 10) == pytest.approx(1.0, abs=1e-3)

    def test_trend(self):
        m = scenario_hmm(REFERENCE)
        target = zeta_root(zeta_series(m, m, 0.0, 40, method="exact"), 0.5)
        errs = [abs(brute_force_lambda(m, m, 0.5, N) - target) for N in (4, 6, 8, 10, 12)]
        assert np.all(np.diff(errs) < 0)

    def test_single_symbol(self):
        P = np.array([[0.3, 0.6], [0.7, 0.4]])
        a = build_model(P, [[1.0, 1.0]])
        b = build_model([[0.5, 0.5], [0.5, 0.5]], [[1.0, 1.0]])
        # one word; each T is stochastic so both Perron roots are 1
        assert brute_force_lambda(a, b, 2.0, 7) == pytest.approx(1.0, rel=1e-13)
        c = np.stack([0.5 * P])
        lam = spectral_radius(np.linalg.matrix_power(c[0], 5))
        assert brute_force_lambda(c, c, 1.0, 5) == pytest.approx(lam ** (2 / 5), rel=1e-12)

    def test_guard(self):
        with pytest.raises(GuardError):
            brute_force_lambda(_model(0), _model(0), 0.0, 13)


class TestRate:
    def test_reference_rate(self):
        m = scenario_hmm(REFERENCE)
        assert likelihood_rate(m, m, 1.0, 40, method="exact") == pytest.approx(-F1_REFERENCE, abs=1e-12)
        assert likelihood_rate(m, m, 1.0, 12) == pytest.approx(-F1_REFERENCE, abs=1e-4)

    def test_reference_monte_carlo(self):
        m = scenario_hmm(REFERENCE)
        _, x = sample(m, 10**5, 4)
        rate = likelihood_rate(m, m, 1.0, 40, method="exact")
        assert observed_log_prob(m, x) / x.size == pytest.approx(rate, abs=0.01)

    def test_true_model_maximises(self):
        m = _model(3)
        base = likelihood_rate(m, m, 1.0, 10)
        rng = np.random.default_rng(1)
        for _ in range(20):
            P = m.transition + rng.normal(0, 0.05, size=(2, 2))
            P = np.clip(P, 0.01, None)
            E = np.clip(m.emission + rng.normal(0, 0.05, size=(2, 2)), 0.01, None)
            trial = build_model(P / P.sum(0), E / E.sum(0))
            assert likelihood_rate(m, trial, 1.0, 10) < base

    def test_generic_vs_exact_enumeration(self):
        a, b = _model(11, 2, 2), _model(12, 2, 2)
        rate = likelihood_rate(a, b, 1.0, 12)
        from hmmvt.inference import gibbs_free_energy_exact

        f8 = gibbs_free_energy_exact(a, b, 1.0, 10).value_per_symbol
        f9 = gibbs_free_energy_exact(a, b, 1.0, 9).value_per_symbol
        # F(N) = N f + c: extrapolate the per-symbol value from two lengths
        slope = 10 * f8 - 9 * f9
        assert -rate == pytest.approx(slope, abs=1e-4)

    @pytest.mark.parametrize("seed", range(5))
    def test_analytic_derivative_vs_central(self, seed):
        a, b = _model(seed, 2, 2), _model(seed + 20, 2, 2)
        s = zeta_series_cycle(a, b, 0.0, 8)
        assert s.dn(1.0) == pytest.approx(s.dn_central(1.0), abs=1e-6)
        s = closed_form_series(random_params(np.random.default_rng(seed)).model(),
                               random_params(np.random.default_rng(seed + 1)).model(), 0.0, 40)
        assert s.dn(1.0) == pytest.approx(s.dn_central(1.0), abs=1e-6)

    def test_support_mismatch_gives_minus_inf(self):
        m = scenario_hmm(REFERENCE)
        P = m.transition.copy()
        P[:, 0] = [1.0, 0.0, 0.0]  # trial never leaves state 0
        trial = build_model(P, m.emission, require_mixing=False)
        assert likelihood_rate(m, trial, 1.0, 6) == -np.inf

    @pytest.mark.parametrize("seed", range(5))
    def test_f1_le_f2(self, seed):
        a, b = _model(seed), _model(seed + 100)
        f1 = -likelihood_rate(a, b, 1.0, 10)
        f2 = -likelihood_rate(a, b, 2.0, 10) / 2.0
        assert f1 <= f2 + 1e-10


class TestDeform:
    def test_beta_one_identity(self):
        m = _model(0, 3, 2)
        np.testing.assert_array_equal(beta_deform(m, 1.0).matrices, m.transfer_matrices())

    def test_beta_two_arithmetic(self):
        m = build_model([[0.4, 0.5], [0.6, 0.5]], [[0.5, 0.3], [0.5, 0.7]])
        d = beta_deform(m, 2.0)
        assert d.matrices[0, 0, 0] == pytest.approx(0.25 * 0.16)
        assert d.beta == 2.0
        assert d.matrices.sum(axis=(0, 1))[0] < 1.0

    @pytest.mark.parametrize("beta", [0.0, -1.0, np.inf])
    def test_rejects(self, beta):
        with pytest.raises(HmmError):
            beta_deform(_model(0), beta)


def test_orbit_table_columns():
    m = _model(0)
    rows = orbit_table(m, beta_deform(m, 1.0), 4)
    assert len(rows) == 2 + 1 + 2 + 3
    period, label, lam, lam_hat, phi0, dphi = rows[2]
    assert (period, label) == (2, "12")
    assert lam == lam_hat == phi0
    assert dphi == pytest.approx(lam * np.log(lam))
