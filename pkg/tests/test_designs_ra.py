import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from allocsim.designs_ra import (
    DAWD,
    DBCD,
    ERADE,
    SML,
    PowerRule,
    dbcd_power,
    ra_limit,
    ra_limit_result,
    ra_probability,
)
from allocsim.downcrossing import find_downcrossing, verify_downcrossing
from allocsim.errors import InvalidRuleError, TargetRangeError
from allocsim.models import constant_target

unit = st.floats(0.01, 0.99)


def dbcd_reference(x, y, nu):
    # The rule written out in its ratio form, as an independent route.
    a = y * (y / x) ** nu
    b = (1 - y) * ((1 - y) / (1 - x)) ** nu
    return a / (a + b)


class TestProbabilities:
    @pytest.mark.parametrize("x, expected", [(0.7, 0.30), (0.6, 0.60), (0.5, 0.80)])
    def test_erade(self, x, expected):
        assert ra_probability(ERADE(0.5), x, 0.6) == pytest.approx(expected)

    def test_dbcd(self):
        assert ra_probability(DBCD(2.0), 0.5, 0.6) == pytest.approx(0.864 / 1.12, abs=1e-12)

    @given(unit, st.floats(0, 5))
    def test_dbcd_diagonal(self, x, nu):
        assert ra_probability(DBCD(nu), x, x) == pytest.approx(x, abs=1e-12)

    @given(unit, unit, st.floats(0.1, 4))
    def test_dbcd_matches_ratio_form(self, x, y, nu):
        assert dbcd_power(x, y, y, nu) == pytest.approx(dbcd_reference(x, y, nu), rel=1e-10, abs=1e-12)

    def test_dbcd_boundaries(self):
        assert dbcd_power(0.0, 0.6, 0.6, 2.0) == 1.0
        assert dbcd_power(1.0, 0.6, 0.6, 2.0) == 0.0

    def test_dawd(self):
        assert ra_probability(DAWD(0.5), 0.5, np.array([0.7, 0.3])) == pytest.approx(0.60)

    @pytest.mark.parametrize("x, expected", [(0.7, 0.4096), (0.5, 0.8)])
    def test_power_rule(self, x, expected):
        assert ra_probability(PowerRule(2.0), x, 0.64) == pytest.approx(expected)

    @given(st.floats(0, 1))
    def test_sml(self, x):
        assert ra_probability(SML(), x, 0.55) == 0.55

    def test_estimate_goes_through_target(self):
        rule = ERADE(0.4)
        y = rule.target_value(np.array([0.7, 0.5]))
        assert ra_probability(rule, 0.2, np.array([0.7, 0.5])) == pytest.approx(1 - 0.4 * (1 - y))

    def test_target_range(self):
        with pytest.raises(TargetRangeError):
            ra_probability(DBCD(), 0.5, 1.0)

    def test_parameter_validation(self):
        for make in (lambda: ERADE(1.0), lambda: PowerRule(0.5), lambda: DBCD(-1.0), lambda: DAWD(1.0)):
            with pytest.raises(InvalidRuleError):
                make()

    def test_dawd_weight_functions_checked(self):
        with pytest.raises(InvalidRuleError):
            DAWD(0.5, g1=lambda u: (1 - u) / 2)


class TestProperties:
    @given(unit, unit, st.floats(0.1, 5))
    def test_dbcd_forcing(self, x, y, nu):
        p = dbcd_power(x, y, y, nu)
        if x > y + 1e-9:
            assert p < y
        elif x < y - 1e-9:
            assert p > y

    @given(unit, unit, st.floats(0, 5))
    def test_dbcd_symmetry(self, x, y, nu):
        assert dbcd_power(x, y, y, nu) == pytest.approx(1 - dbcd_power(1 - x, 1 - y, 1 - y, nu), abs=1e-12)

    @given(st.floats(0.05, 0.95))
    def test_erade_downcrossing_is_target(self, y):
        rule = ERADE(0.5)
        assert verify_downcrossing(lambda x: rule.allocation(x, y), y, 500).ok

    @given(st.floats(0.05, 0.95), st.floats(1, 4))
    def test_power_rule_downcrossing_is_target(self, y, tau):
        rule = PowerRule(tau)
        assert verify_downcrossing(lambda x: rule.allocation(x, y), y, 500).ok

    def test_nonincreasing_in_proportion(self):
        xs = np.linspace(0, 1, 201)
        est = np.array([0.7, 0.5])
        for rule in (DBCD(2), ERADE(0.4), PowerRule(2), SML(), DAWD(0.5)):
            vals = np.array([ra_probability(rule, x, est) for x in xs])
            assert np.all(np.diff(vals) <= 1e-12), rule.kind


class TestLimits:
    def test_neyman(self):
        expected = np.sqrt(0.7) / (np.sqrt(0.7) + np.sqrt(0.5))
        assert ra_limit(ERADE(0.4), [0.7, 0.5]) == pytest.approx(expected, abs=1e-12)

    def test_constant_target(self):
        assert ra_limit(DBCD(2, constant_target(0.65)), [0.3, 0.4]) == pytest.approx(0.65)

    def test_dawd(self):
        assert ra_limit(DAWD(0.5), [0.7, 0.3]) == pytest.approx(0.85 / 1.5, abs=1e-10)

    @pytest.mark.parametrize("rule", [DBCD(2), ERADE(0.4), PowerRule(2), SML()])
    def test_solver_agrees_with_target(self, rule):
        res = ra_limit_result(rule, [0.7, 0.5])
        assert res.t == pytest.approx(ra_limit(rule, [0.7, 0.5]), abs=1e-9)

    def test_sml_downcrossing_directly(self):
        assert find_downcrossing(lambda x: SML().allocation(x, 0.55)).t == pytest.approx(0.55, abs=1e-10)
