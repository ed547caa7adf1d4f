import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from allocsim.designs_cara import (
    ETH,
    ZhangHu,
    ZhangTarget,
    averaged_rule,
    cara_limit,
    cara_probability,
    eth_limit,
    zhang_hu_rho,
)
from allocsim.errors import ConfigurationError, DegenerateModelError
from allocsim.models import (
    CovariateSummary,
    LinearInteractionModel,
    StandardNormalCovariate,
    constant_target,
    normal_cdf_target,
)

Z = StandardNormalCovariate()
EMPTY = CovariateSummary.continuous()


class TestProbability:
    def test_eth_indicator(self):
        assert cara_probability(ETH(), 0.4, [1, 0, 1, -1], EMPTY, 0.0) == 1.0
        assert cara_probability(ETH(), 0.4, [1, 0, 1, -1], EMPTY, -1.0) == 0.0

    def test_eth_tie(self):
        assert cara_probability(ETH(), 0.4, [1, 0, 1, -1], EMPTY, -0.5) == 0.5

    def test_zhang_hu_at_rho(self):
        rule = ZhangHu(2.0, constant_target(0.7))
        assert cara_probability(rule, 0.6, [0, 0, 0, 0], EMPTY, 0.3, rho=0.6) == pytest.approx(0.7)

    def test_zhang_hu_value(self):
        rule = ZhangHu(2.0, constant_target(0.6))
        assert cara_probability(rule, 0.5, [0, 0, 0, 0], EMPTY, 0.3, rho=0.6) == pytest.approx(
            0.864 / 1.12, abs=1e-12
        )

    def test_zhang_target_constant(self):
        rule = ZhangTarget(constant_target(0.55))
        assert cara_probability(rule, 0.9, [0, 0, 0, 0], EMPTY, 1.7) == 0.55

    def test_zhang_hu_needs_rho_for_covariate_targets(self):
        with pytest.raises(ConfigurationError):
            cara_probability(ZhangHu(2.0, normal_cdf_target()), 0.5, [0, 0, 0, 0], EMPTY, 0.0)

    def test_zhang_hu_boundaries(self):
        rule = ZhangHu(2.0, constant_target(0.6))
        assert cara_probability(rule, 0.0, [0] * 4, EMPTY, 0.0, rho=0.5) == 1.0
        assert cara_probability(rule, 1.0, [0] * 4, EMPTY, 0.0, rho=0.5) == 0.0

    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    def test_zhang_hu_fixed_point_identity(self, y, b):
        rule = ZhangHu(2.0, constant_target(b))
        assert rule.probability(y, np.zeros(4), 0.0, rho=y) == pytest.approx(b, abs=1e-12)

    def test_zhang_hu_decreasing(self):
        rule = ZhangHu(2.0, constant_target(0.3))
        xs = np.linspace(0.01, 0.99, 99)
        assert np.all(np.diff(rule.probability(xs, np.zeros(4), 0.0, rho=0.6)) < 0)

    def test_rho_recomputed_over_covariates(self):
        zs = np.array([-1.0, 0.0, 1.0])
        assert zhang_hu_rho(normal_cdf_target(), np.zeros(4), zs) == pytest.approx(0.5)
        assert zhang_hu_rho(constant_target(0.3), np.zeros(4), zs) == 0.3


class TestEthLimit:
    @pytest.mark.parametrize(
        "params, expected",
        [((0, 0, 1, -1), 0.5), ((0, 1, 1, -1), 0.3085375387259869), ((1, 0, 1, -1), 0.6914624612740131)],
    )
    def test_closed_form(self, params, expected):
        assert eth_limit(params) == pytest.approx(expected, abs=1e-12)

    def test_accepts_model(self):
        assert eth_limit(LinearInteractionModel(0, 1, 1, -1)) == pytest.approx(0.308538, abs=1e-6)

    def test_degenerate(self):
        with pytest.raises(DegenerateModelError):
            eth_limit([0, 1, 1, 1])


class TestAveraged:
    def test_constant_rule_is_exact(self):
        res = averaged_rule(ZhangTarget(constant_target(0.55)), 0.3, np.zeros(4), EMPTY, Z, 1000,
                            np.random.default_rng(0))
        assert res.value == 0.55 and res.se == 0.0

    def test_eth_symmetric(self):
        res = averaged_rule(ETH(), 0.5, [0, 0, 1, -1], EMPTY, Z, 100_000, np.random.default_rng(1))
        assert abs(res.value - 0.5) < 4 * res.se

    def test_eth_matches_closed_form(self):
        res = averaged_rule(ETH(), 0.5, [0, 1, 2, 0], EMPTY, Z, 10**6, np.random.default_rng(2))
        assert res.value == pytest.approx(0.308538, abs=0.001)

    def test_constant_rule_is_independent_of_pi(self):
        rule = ZhangTarget(normal_cdf_target())
        vals = [averaged_rule(rule, x, np.zeros(4), EMPTY, Z, 5000, np.random.default_rng(3)).value
                for x in (0.1, 0.5, 0.9)]
        assert vals[0] == vals[1] == vals[2]

    def test_sample_count(self):
        with pytest.raises(ValueError):
            averaged_rule(ETH(), 0.5, np.zeros(4), EMPTY, Z, 0)


class TestCaraLimit:
    def test_zhang_hu_constant(self):
        assert cara_limit(ZhangHu(2.0, constant_target(0.6)), [0, 0, 1, -1], Z).value == 0.6

    def test_zhang_hu_solver_constant(self):
        lim = cara_limit(ZhangHu(2.0, constant_target(0.6)), [0, 0, 1, -1], Z, "solver")
        assert lim.value == pytest.approx(0.6, abs=1e-9)

    def test_eth_solver_agrees_with_closed_form(self):
        closed = cara_limit(ETH(), [0, 1, 1, -1], Z)
        solved = cara_limit(ETH(), [0, 1, 1, -1], Z, "solver")
        assert abs(closed.value - solved.value) <= 3 * max(solved.se, 1e-12)

    def test_zhang_target_normal_cdf(self):
        lim = cara_limit(ZhangTarget(normal_cdf_target()), [0, 0, 1, -1], Z)
        assert lim.value == pytest.approx(0.5, abs=4 * lim.se)

    def test_zhang_hu_covariate_target(self):
        rule = ZhangHu(2.0, normal_cdf_target())
        closed = cara_limit(rule, [0, 0, 1, -1], Z)
        solved = cara_limit(rule, [0, 0, 1, -1], Z, "solver")
        assert solved.value == pytest.approx(closed.value, abs=0.01)

    def test_linear_shortcut(self):
        rule = ZhangHu(2.0, constant_target(0.35))
        assert cara_limit(rule, np.zeros(4), Z, "solver", linear=True).value == pytest.approx(0.35, abs=1e-9)

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            cara_limit(ETH(), [0, 1, 1, -1], Z, "guess")
