import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arpex.ar_core import (
    ArModel,
    ArModelError,
    ProcessState,
    acf,
    alpha_for_rho1,
    characteristic_roots,
    coeffs_binomial,
    coeffs_from_roots,
    default_burn_in,
    is_stationary,
    process_step,
    realize,
    sample_realization,
    solve_stationary,
)

# Frozen outputs of alpha_for_rho1 for rho_1 = 0.99.
ALPHA_P3_RHO99 = 0.7849444448947906
ALPHA_P5_RHO99 = 0.6904007494449615


def sigma2_equal_roots(a):
    return (1 - a**2) ** 6 / (1 + 3 * a**2 - 3 * a**4 - a**6)


def sigma2_distinct(a1, a2, a3):
    num = (1 - a1**2) * (1 - a2**2) * (1 - a3**2) * (1 - a1 * a2) * (1 - a2 * a3) * (1 - a1 * a3)
    den = 1 + a1 * a2 + a2 * a3 + a1 * a3 - a1 * a2 * a3 * (a1 * a2 * a3 + a1 + a2 + a3)
    return num / den


def impulse_autocov(coeffs, max_lag, n_terms=20000):
    """Autocovariance via the MA(inf) expansion, scaled to unit variance."""
    impulse = np.zeros(n_terms)
    impulse[0] = 1.0
    from scipy.signal import lfilter

    psi = lfilter([1.0], np.concatenate([[1.0], -np.asarray(coeffs)]), impulse)
    var = psi @ psi
    gamma = np.array([psi[: n_terms - k] @ psi[k:] for k in range(max_lag + 1)]) / var
    return gamma, 1.0 / var


class TestCoefficients:
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.9])
    def test_single_root(self, alpha):
        np.testing.assert_allclose(coeffs_from_roots([alpha]), [alpha])

    def test_triple_root(self):
        a = 0.7
        np.testing.assert_allclose(coeffs_from_roots([a, a, a]), [3 * a, -3 * a**2, a**3], atol=1e-15)

    def test_two_roots_by_hand(self):
        np.testing.assert_allclose(coeffs_from_roots([0.2, 0.5]), [0.7, -0.10], atol=1e-15)

    def test_binomial_examples(self):
        np.testing.assert_array_equal(coeffs_binomial(3, 0.0), [0.0, 0.0, 0.0])
        np.testing.assert_allclose(coeffs_binomial(3, 0.5), [1.5, -0.75, 0.125])
        np.testing.assert_allclose(coeffs_binomial(1, 0.9), [0.9])

    @pytest.mark.parametrize("p", [1, 2, 5, 12, 32])
    @pytest.mark.parametrize("alpha", [0.1, 0.5, 0.95])
    def test_binomial_matches_expansion(self, p, alpha):
        np.testing.assert_allclose(coeffs_binomial(p, alpha), coeffs_from_roots([alpha] * p), rtol=0, atol=1e-12 * max(1.0, np.abs(coeffs_binomial(p, alpha)).max()))

    def test_elementary_symmetric(self):
        roots = [0.1, 0.4, 0.6, 0.85]
        for k in range(1, 5):
            e_k = sum(np.prod(c) for c in itertools.combinations(roots, k))
            assert coeffs_from_roots(roots)[k - 1] == pytest.approx((-1) ** (k + 1) * e_k, abs=1e-14)

    @pytest.mark.parametrize("roots", [[], [1.0], [-0.1], [0.5, 1.2], [np.nan], [0.5] * 33])
    def test_rejects_out_of_contract(self, roots):
        with pytest.raises(ArModelError):
            coeffs_from_roots(roots)

    def test_binomial_rejects_bad_order(self):
        with pytest.raises(ArModelError):
            coeffs_binomial(0, 0.5)


class TestStationarity:
    def test_examples(self):
        assert is_stationary([0.9])
        assert not is_stationary([1.0])
        assert is_stationary([3 * 0.7, -3 * 0.49, 0.343])
        assert not is_stationary([])
        assert not is_stationary([np.inf])

    def test_explosive(self):
        assert not is_stationary([1.5, -0.2])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 0.97), min_size=1, max_size=6))
    def test_root_round_trip(self, roots):
        found = np.sort(np.real(characteristic_roots(coeffs_from_roots(roots))))
        # a repeated root of multiplicity m is only resolved to ~eps**(1/m)
        tol = 1e-8 if len(set(np.round(roots, 2))) == len(roots) else 1e-3
        np.testing.assert_allclose(found, np.sort(roots), atol=tol)


class TestSolveStationary:
    @pytest.mark.parametrize("alpha", [0.0, 0.3, 0.9, 0.99])
    def test_ar1_by_hand(self, alpha):
        gamma, var = solve_stationary([alpha])
        assert gamma[0] == pytest.approx(alpha, abs=1e-14)
        assert var == pytest.approx(1 - alpha**2, abs=1e-14)

    def test_white(self):
        gamma, var = solve_stationary([0.0] * 4)
        np.testing.assert_array_equal(gamma, 0.0)
        assert var == 1.0

    @pytest.mark.parametrize("alpha", [*np.round(np.arange(0, 1.0, 0.1), 1), 0.95, 0.98])
    def test_equal_roots_closed_form(self, alpha):
        _, var = solve_stationary(coeffs_binomial(3, alpha))
        assert abs(var - sigma2_equal_roots(alpha)) < 1e-9

    def test_distinct_roots_closed_form(self):
        rng = np.random.default_rng(11)
        for a in rng.uniform(0, 0.99, size=(100, 3)):
            _, var = solve_stationary(coeffs_from_roots(a))
            assert abs(var - sigma2_distinct(*a)) < 1e-9

    @pytest.mark.parametrize("roots", [[0.5], [0.2, 0.7], [0.9, 0.9, 0.9], [0.1, 0.5, 0.6, 0.8, 0.85]])
    def test_against_impulse_response(self, roots):
        phi = coeffs_from_roots(roots)
        gamma, var = solve_stationary(phi)
        g_ref, var_ref = impulse_autocov(phi, len(phi))
        np.testing.assert_allclose(gamma, g_ref[1:], atol=1e-10)
        assert var == pytest.approx(var_ref, abs=1e-10)

    def test_degenerate_limits(self):
        assert ArModel.binomial(3, 1e-12).noise_var == pytest.approx(1.0)
        var = ArModel.binomial(3, 0.999).noise_var
        assert 0 < var < 1e-6

    def test_near_nonstationary_rejected(self):
        with pytest.raises(ArModelError, match="near-nonstationary"):
            ArModel.binomial(5, 0.995)

    def test_invalid_coefficients(self):
        with pytest.raises(ArModelError, match="invalid coefficients|near-nonstationary"):
            solve_stationary([1.5, -0.2])


class TestArModel:
    def test_immutable(self):
        m = ArModel.binomial(3, 0.5)
        with pytest.raises(ValueError):
            m.coeffs[0] = 1.0
        with pytest.raises(AttributeError):
            m.order = 4

    def test_equality(self):
        assert ArModel.binomial(3, 0.5) == ArModel.from_roots([0.5, 0.5, 0.5])
        assert ArModel.binomial(3, 0.5) != ArModel.binomial(3, 0.6)
        assert len({ArModel.binomial(2, 0.1), ArModel.binomial(2, 0.1)}) == 1

    def test_white_flag(self):
        assert ArModel.binomial(2, 0.0).is_white
        assert not ArModel.binomial(2, 0.1).is_white

    def test_from_roots_keeps_roots(self):
        m = ArModel.from_roots([0.2, 0.5])
        assert m.roots == (0.2, 0.5)
        assert m.order == 2


class TestAcf:
    def test_white(self):
        np.testing.assert_array_equal(acf(ArModel.binomial(3, 0.0), 5).rho, [1, 0, 0, 0, 0, 0])

    def test_ar1_power_law(self):
        assert acf(ArModel.binomial(1, 0.99), 10).rho[10] == pytest.approx(0.99**10, abs=1e-12)

    def test_lag_zero_only(self):
        assert acf(ArModel.binomial(3, 0.5), 0).rho.tolist() == [1.0]

    @pytest.mark.parametrize("p,alpha", [(3, 0.8), (5, 0.6), (2, 0.9)])
    def test_recursion_against_impulse_response(self, p, alpha):
        m = ArModel.binomial(p, alpha)
        ref, _ = impulse_autocov(m.coeffs, 200)
        np.testing.assert_allclose(acf(m, 200).rho, ref, atol=1e-10)

    def test_higher_order_decays_faster(self):
        r1 = acf(ArModel.binomial(1, 0.99), 50).rho
        r3 = acf(ArModel.binomial(3, ALPHA_P3_RHO99), 50).rho
        assert r3[1] == pytest.approx(r1[1], abs=1e-9)
        assert r3[50] < r1[50]

    def test_negative_lag(self):
        with pytest.raises(ValueError):
            acf(ArModel.binomial(1, 0.5), -1)


class TestAlphaForRho1:
    def test_ar1(self):
        assert alpha_for_rho1(1, 0.99) == pytest.approx(0.99, abs=1e-8)

    @pytest.mark.parametrize("p", [1, 3, 5])
    def test_zero(self, p):
        assert alpha_for_rho1(p, 0.0) == 0.0

    def test_regression_constants(self):
        assert alpha_for_rho1(3, 0.99) == pytest.approx(ALPHA_P3_RHO99, abs=1e-12)
        assert alpha_for_rho1(5, 0.99) == pytest.approx(ALPHA_P5_RHO99, abs=1e-12)

    @pytest.mark.parametrize("p", [2, 3, 5])
    def test_hits_target(self, p):
        for target in (0.3, 0.9, 0.99):
            a = alpha_for_rho1(p, target)
            assert abs(ArModel.binomial(p, a).autocov[1] - target) < 1e-9

    @pytest.mark.parametrize("p", [1, 3, 5])
    def test_rho1_monotone_on_grid(self, p):
        grid = np.linspace(0.0, 0.97 if p < 5 else 0.95, 200)
        rho1 = [ArModel.binomial(p, a).autocov[1] for a in grid]
        assert np.all(np.diff(rho1) > 0)

    def test_rejects_target_one(self):
        with pytest.raises(ValueError):
            alpha_for_rho1(3, 1.0)

    def test_non_convergence(self):
        with pytest.raises(RuntimeError):
            alpha_for_rho1(3, 0.5, tol=0.0, max_iter=5)


class TestProcess:
    def test_first_step_zero_noise(self):
        assert process_step(ProcessState(ArModel.binomial(3, 0.8)), 0.0) == 0.0

    def test_white_noise_passthrough(self):
        assert process_step(ProcessState(ArModel.binomial(2, 0.0)), 1.7) == 1.7

    def test_ar1_by_hand(self):
        state = ProcessState(ArModel.binomial(1, 0.5))
        state.history.appendleft(2.0)
        assert process_step(state, 0.0) == 1.0
        assert state.step_count == 1
        assert list(state.history) == [1.0]

    def test_history_bounded_most_recent_first(self):
        state = ProcessState(ArModel.binomial(3, 0.5))
        xs = [state.step(e) for e in (1.0, -0.5, 0.2, 0.3)]
        assert list(state.history) == xs[::-1][:3]

    def test_realize_matches_steps(self):
        m = ArModel.binomial(4, 0.7)
        noise = np.random.default_rng(3).standard_normal(500)
        state = ProcessState(m)
        steps = [state.step(e) for e in noise]
        np.testing.assert_allclose(realize(m, noise), steps, atol=1e-12)

    def test_deterministic(self):
        m = ArModel.binomial(3, 0.9)
        a = sample_realization(m, 100, np.random.default_rng(5), burn_in=10)
        b = sample_realization(m, 100, np.random.default_rng(5), burn_in=10)
        np.testing.assert_array_equal(a, b)

    def test_burn_in(self):
        assert default_burn_in(ArModel.binomial(3, 0.9)) == 100


def mean_standard_error(model, n):
    # long-run variance of the sample mean is sigma_Z^2 / (1 - sum phi)^2
    return np.sqrt(model.noise_var / (1.0 - model.coeffs.sum()) ** 2 / n)


@pytest.mark.parametrize("p", [1, 3, 5])
@pytest.mark.parametrize("alpha", [0.5, 0.8, 0.9])
def test_marginal_statistics(p, alpha):
    m = ArModel.binomial(p, alpha)
    n = 10**6
    x = sample_realization(m, n, np.random.default_rng(100 * p + int(alpha * 10)), burn_in=default_burn_in(m))
    assert abs(x.mean()) < 4 * mean_standard_error(m, n)
    assert abs(x.var() - 1) < 0.05
    rho1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert abs(rho1 - acf(m, 1).rho[1]) < 0.01
