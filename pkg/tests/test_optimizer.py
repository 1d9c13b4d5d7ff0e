import warnings

import numpy as np
import pytest

from infbond.claims import bump_derivative, malliavin_derivative
from infbond.curve_spaces import MaturityGrid
from infbond.errors import CalibrationError, ConfigurationError, InvalidInputError
from infbond.market import GammaModel, MarketConfig, flat_curve, scenario_a_vol, scenario_b_vol, simulate_paths
from infbond.optimizer import (UtilityFunction, analytic_lambda, calibrate_lambda, optimal_claim,
                               solve_optimal_portfolio, validate_utility)

GRID = MaturityGrid()
P0 = flat_curve(GRID, 0.03)


def market(N, gamma, steps=50, vol=None):
    return MarketConfig(GRID, N, 1.0, steps, P0, vol or scenario_a_vol(GRID, P0, N), gamma)


def lognormal_xi(v, n, seed):
    rng = np.random.default_rng(seed)
    return np.exp(rng.normal(0.5 * v, np.sqrt(v), size=n))


CORPUS = [UtilityFunction.log(), UtilityFunction.power(0.5), UtilityFunction.power(-1.0),
          UtilityFunction.exponential(2.0)]


class TestValidate:
    def test_log_passes(self):
        u = UtilityFunction.log()
        assert validate_utility(u).passed
        assert u.floor == 0.0 and u.q == 1.0

    def test_power_negative_alpha_passes(self):
        assert validate_utility(UtilityFunction.power(-1.0)).passed

    def test_exponential_passes(self):
        assert validate_utility(UtilityFunction.exponential(1.0)).passed

    def test_power_half(self):
        u = UtilityFunction.power(0.5)
        y = np.geomspace(1e-3, 1e3, 13)
        np.testing.assert_allclose(u.inverse_marginal(y), y ** -2.0, rtol=1e-14)
        rep = validate_utility(u)
        assert rep.clauses["concavity"]["passed"] and rep.clauses["inada"]["passed"]
        # a single exponent cannot satisfy both growth bounds for 0 < alpha < 1
        assert rep.failing == ["growth at infinity"]

    def test_linear_fails_concavity(self):
        lin = UtilityFunction.custom(lambda x: x, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                                     lambda x: np.zeros_like(np.asarray(x, dtype=float)))
        assert "concavity" in validate_utility(lin).failing

    @pytest.mark.parametrize("u", CORPUS, ids=lambda u: u.kind)
    def test_inverse_marginal_identity(self, u):
        x = u.floor + np.geomspace(1e-2, 1e2, 50) if np.isfinite(u.floor) else np.linspace(-5, 5, 50)
        np.testing.assert_allclose(u.inverse_marginal(u.du(x)), x, rtol=1e-10, atol=1e-10)

    def test_numerical_fallbacks(self):
        u = UtilityFunction.custom(lambda x: np.log1p(x), lambda x: 1.0 / (1.0 + x), floor=-1.0)
        y = np.array([0.2, 1.0, 5.0])
        np.testing.assert_allclose(u.inverse_marginal(y), 1.0 / y - 1.0, rtol=1e-10)
        np.testing.assert_allclose(u.inverse_marginal_derivative(y), -1.0 / y ** 2, rtol=1e-5)

    def test_bad_parameters(self):
        with pytest.raises(InvalidInputError):
            UtilityFunction.power(1.5)
        with pytest.raises(InvalidInputError):
            UtilityFunction.power(0.0)
        with pytest.raises(InvalidInputError):
            UtilityFunction.exponential(-1.0)


class TestCalibrate:
    def test_log_closed_form(self):
        xi = lognormal_xi(0.09, 50000, 1)
        cal = calibrate_lambda(UtilityFunction.log(), xi, 2.0)
        assert cal.lam == pytest.approx(np.mean(1.0 / xi) / 2.0, rel=1e-7)
        assert abs(cal.lam - 0.5) <= 3 * cal.lam_se
        assert abs(cal.budget_gap) <= 3 * cal.budget_se

    @pytest.mark.parametrize("u", CORPUS, ids=lambda u: u.kind)
    def test_zero_gamma(self, u):
        K0 = 1.3
        cal = calibrate_lambda(u, np.ones(100), K0)
        assert cal.lam == pytest.approx(float(u.du(K0)), rel=1e-7)

    def test_power_half_lognormal(self):
        v = 0.09
        u = UtilityFunction.power(0.5)
        cal = calibrate_lambda(u, lognormal_xi(v, 100000, 2), 1.0)
        # E_Q[(lam xi)^-2] = lam^-2 exp(v) under Q
        assert analytic_lambda(u, 1.0, v) == pytest.approx(np.sqrt(np.exp(v)), rel=1e-12)
        assert abs(cal.lam - analytic_lambda(u, 1.0, v)) <= 3 * cal.lam_se

    def test_monotone_in_budget(self):
        xi = lognormal_xi(0.04, 5000, 3)
        for u in CORPUS:
            lams = [calibrate_lambda(u, xi, K0).lam for K0 in (0.5, 1.0, 2.0)]
            assert lams[0] > lams[1] > lams[2]

    def test_bracket_failure(self):
        with pytest.raises(CalibrationError):
            calibrate_lambda(UtilityFunction.exponential(1.0), np.ones(10), 100.0)

    def test_invalid_inputs(self):
        with pytest.raises(InvalidInputError):
            calibrate_lambda(UtilityFunction.log(), np.array([1.0, -1.0]), 1.0)
        with pytest.raises(InvalidInputError):
            calibrate_lambda(UtilityFunction.log(), np.ones(3), -1.0)

    @pytest.mark.parametrize("u", CORPUS, ids=lambda u: u.kind)
    def test_first_order_condition(self, u):
        xi = lognormal_xi(0.04, 2000, 4)
        cal = calibrate_lambda(u, xi, 1.0)
        X = u.inverse_marginal(cal.lam * xi)
        np.testing.assert_allclose(u.du(X), cal.lam * xi, rtol=1e-10)


class TestOptimalClaim:
    def test_zero_gamma_is_constant(self):
        cfg = market(2, GammaModel.zero(2), steps=10)
        ens = simulate_paths(cfg, 50, seed=1)
        res = optimal_claim(UtilityFunction.log(), 0.5, ens)
        np.testing.assert_allclose(res.xhat, 2.0, rtol=1e-14)
        assert not malliavin_derivative(res.claim, ens).any()

    def test_log_derivative_matches_bump(self):
        g = np.array([0.3, 0.1])
        cfg = market(2, GammaModel.constant(g), steps=20)
        ens = simulate_paths(cfg, 20, seed=2)
        K0 = 1.5
        res = optimal_claim(UtilityFunction.log(), 1.0 / K0, ens)
        D = malliavin_derivative(res.claim, ens)
        np.testing.assert_allclose(D, np.broadcast_to(-res.xhat[:, None, None] * g, D.shape), rtol=1e-10)
        for path, step, factor in [(0, 0, 0), (5, 10, 1), (19, 19, 0)]:
            assert bump_derivative(res.claim, ens, path, step, factor) == pytest.approx(D[path, step, factor], abs=1e-4)
        np.testing.assert_allclose(res.xhat, K0 / ens.xi_T, rtol=1e-10)

    def test_power_membership_clear_for_decaying_gamma(self):
        N = 16
        g = 0.3 / np.arange(1, N + 1) ** 2
        cfg = market(N, GammaModel.constant(g), steps=20)
        ens = simulate_paths(cfg, 500, seed=3)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = optimal_claim(UtilityFunction.power(0.5), 1.0, ens, s_list=(1.0,))
        assert not any(res.membership.divergence_flags.values())

    def test_requires_q_ensemble(self):
        cfg = market(1, GammaModel.constant([0.2]), steps=5)
        ens = simulate_paths(cfg, 5, seed=1, measure="P")
        with pytest.raises(InvalidInputError):
            optimal_claim(UtilityFunction.log(), 1.0, ens)


class TestPipeline:
    def test_zero_gamma_money_account(self):
        cfg = market(2, GammaModel.zero(2), steps=10)
        sol = solve_optimal_portfolio(cfg, UtilityFunction.log(), 2.0, n_paths=200, compare=False)
        assert not sol.portfolio.Phi.any()
        np.testing.assert_allclose(sol.portfolio.terminal_wealth, 2.0, rtol=1e-14)
        assert sol.initial_wealth == 2.0

    def test_log_single_factor(self):
        cfg = market(2, GammaModel.constant([0.3, 0.0]), steps=50)
        sol = solve_optimal_portfolio(cfg, UtilityFunction.log(), 1.0, n_paths=3000, seed=5)
        assert sol.initial_wealth == 1.0
        assert abs(sol.lam - 1.0) <= 3 * sol.calibration.lam_se
        assert len(sol.comparisons) == 5
        assert sol.dominates_comparisons
        assert sol.self_financing["passed"]
        assert sol.portfolio.info["hedge_residual"]["max_relative"] <= 1e-8
        assert set(sol.as_dict()) >= {"lambda", "calibration", "comparisons", "membership"}

    def test_power_replication(self):
        N = 4
        cfg = market(N, GammaModel.constant([0.3, 0.1, 0.0, 0.0]), steps=252)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = solve_optimal_portfolio(cfg, UtilityFunction.power(0.5), 1.0, n_paths=2000, seed=6,
                                          compare=False)
        assert sol.replication["relative_l2_error"] <= 0.02
        assert any("growth at infinity" in w for w in sol.warnings)

    def test_incomplete_market_refused(self):
        cfg = market(32, GammaModel.zero(32), steps=5, vol=scenario_b_vol(GRID, P0, 32))
        with pytest.raises(ConfigurationError):
            solve_optimal_portfolio(cfg, UtilityFunction.log(), 1.0, n_paths=10)

    def test_linear_utility_rejected(self):
        lin = UtilityFunction.custom(lambda x: x, lambda x: np.ones_like(np.asarray(x, dtype=float)),
                                     lambda x: np.zeros_like(np.asarray(x, dtype=float)))
        with pytest.raises(InvalidInputError):
            solve_optimal_portfolio(market(1, GammaModel.zero(1)), lin, 1.0, n_paths=10)
