import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtr

from allocsim.designs_aa import EfronBCD, WeiMulti2
from allocsim.downcrossing import (
    FIXED_POINT,
    JUMP,
    ScalarMap,
    VectorMap,
    composite_downcrossing,
    find_downcrossing,
    find_generalized_downcrossing,
    find_vectorial_downcrossing,
    verify_downcrossing,
)
from allocsim.errors import (
    BoundaryDowncrossingError,
    ConvergenceError,
    DomainError,
    InvalidWitnessError,
    NotMonotoneError,
)

# Fixed points found with mpmath.findroot at 40 digits, then frozen.
ANALYTIC_MAPS = {
    "one_minus_square": (lambda x: 1 - x**2, 0.6180339887498949),
    "reflection": (lambda x: 1 - x, 0.5),
    "half_reflection": (lambda x: (1 - x) / 2, 0.3333333333333333),
    "cosine": (np.cos, 0.7390851332151607),
    "exp_decay": (lambda x: np.exp(-x), 0.5671432904097838),
    "reciprocal": (lambda x: 1 / (1 + 2 * x), 0.5),
    "cube_of_complement": (lambda x: (1 - x) ** 3, 0.31767219617198067),
    "one_minus_cube": (lambda x: 1 - x**3, 0.6823278038280193),
    "one_minus_sqrt": (lambda x: 1 - np.sqrt(x), 0.38196601125010515),
    "scaled_square_complement": (lambda x: 0.9 * (1 - x) ** 2, 0.36402163391515463),
    "one_minus_sine": (lambda x: 1 - np.sin(x), 0.5109734293885692),
    "fast_exp_decay": (lambda x: np.exp(-2 * x), 0.42630275100686277),
    "logistic_shift": (lambda x: 1 / (1 + np.exp(5 * (x - 0.3))), 0.3897079772299793),
    "affine": (lambda x: 0.2 + 0.5 * (1 - x), 0.4666666666666667),
    "mobius": (lambda x: (1 - x) / (1 + x), 0.41421356237309503),
    "one_minus_cuberoot": (lambda x: 1 - np.cbrt(x), 0.31767219617198067),
    "quarter_cosine": (lambda x: np.cos(np.pi * x / 2), 0.5946116440568355),
    "log_complement": (lambda x: 1 - np.log1p(x) / np.log(2), 0.45699955913459184),
    "sqrt_complement": (lambda x: np.sqrt(1 - x), 0.6180339887498949),
    "normal_tail": (lambda x: 1 - ndtr(3 * x - 1), 0.40955945534073807),
}


class TestScalarSolver:
    @pytest.mark.parametrize("name", sorted(ANALYTIC_MAPS))
    def test_analytic_maps(self, name):
        f, t = ANALYTIC_MAPS[name]
        res = find_downcrossing(f)
        assert abs(res.t - t) <= 1e-10
        assert res.kind == FIXED_POINT
        assert res.bracket_width <= 1e-10

    def test_constant_half(self):
        assert find_downcrossing(lambda x: 0.5).t == 0.5

    def test_golden_ratio_grid_scan(self):
        res = find_downcrossing(lambda x: 1 - x**2)
        assert res.t == pytest.approx((math.sqrt(5) - 1) / 2, abs=1e-10)
        assert verify_downcrossing(lambda x: 1 - x**2, res.t, grid_size=10**6, atol=1e-9).ok

    def test_efron_step_is_exact_jump(self):
        rule = EfronBCD(0.75)
        res = find_downcrossing(rule.allocation_function)
        assert res.t == 0.5
        assert res.kind == JUMP
        assert res.bracket_width <= 1e-10

    def test_jump_that_misses_the_diagonal(self):
        res = find_downcrossing(lambda x: np.where(x < 0.3, 0.9, 0.1))
        assert res.kind == JUMP
        assert abs(res.t - 0.3) <= 1e-10

    def test_out_of_range_evaluator(self):
        with pytest.raises(DomainError):
            find_downcrossing(lambda x: 1.5 - x)

    def test_increasing_map_rejected(self):
        with pytest.raises(NotMonotoneError) as info:
            find_downcrossing(lambda x: 0.2 + 0.5 * x)
        assert info.value.witnesses

    def test_claimed_increasing_scalar_map(self):
        with pytest.raises(NotMonotoneError):
            find_downcrossing(ScalarMap(lambda x: 1 - x, nonincreasing=False))

    def test_boundary_downcrossing_is_an_error(self):
        with pytest.raises(BoundaryDowncrossingError):
            find_downcrossing(lambda x: 0.0)

    def test_tolerance_floor(self):
        with pytest.raises(ValueError):
            find_downcrossing(lambda x: 1 - x, tol=1e-18)

    def test_generalized_at_fixed_parameter(self):
        res = find_generalized_downcrossing(lambda x, y: y * (1 - x) + (1 - y) * 0.5, 0.4)
        # y(1-x) + (1-y)/2 = x  =>  x = (y + (1-y)/2) / (1 + y)
        assert res.t == pytest.approx((0.4 + 0.3) / 1.4, abs=1e-10)

    @given(st.floats(0.05, 0.95), st.floats(0.1, 5.0))
    def test_lipschitz_bound_on_residual(self, a, slope):
        # f(x) = clip(a - slope (x - a)), fixed point a, Lipschitz constant slope.
        def f(x):
            return np.clip(a - slope * (x - a), 0.0, 1.0)

        res = find_downcrossing(f)
        assert res.residual <= (slope + 1) * res.bracket_width + 1e-15
        assert abs(res.t - a) <= 1e-9


class TestVerify:
    def test_true_downcrossing(self):
        assert verify_downcrossing(lambda x: 1 - x, 0.5, 1000).ok

    def test_violation_reported_with_coordinates(self):
        ver = verify_downcrossing(lambda x: 1 - x, 0.6, 1000)
        assert not ver.ok
        assert (0.55, pytest.approx(0.45), "left") in [
            (x, pytest.approx(y), side) for x, y, side in ver.violations if x == 0.55
        ]

    def test_efron_step(self):
        assert verify_downcrossing(EfronBCD(0.75).allocation_function, 0.5, 1000).ok

    def test_grid_size_minimum(self):
        with pytest.raises(ValueError):
            verify_downcrossing(lambda x: 1 - x, 0.5, 1)


class TestVectorial:
    def test_wei_k3(self):
        res = find_vectorial_downcrossing(WeiMulti2(3).allocation_function, K=3)
        np.testing.assert_allclose(res.t, [1 / 3] * 3, atol=1e-8)
        assert res.residual <= 1e-8

    def test_constant_map(self):
        c = np.array([0.2, 0.7, 0.4])
        res = find_vectorial_downcrossing(VectorMap(lambda x: c, 3))
        np.testing.assert_allclose(res.t, c, atol=1e-8)

    def test_two_arm_wei_against_grid_scan(self):
        # Wei rule with K=2 is psi_j(x) = 1 - x_j; brute-force the inequalities on a 1e-3 grid.
        F = WeiMulti2(2).allocation_function
        res = find_vectorial_downcrossing(F, K=2)
        grid = np.arange(1001) / 1000
        for j in range(2):
            pts = np.repeat(res.t[None, :], grid.size, axis=0)
            pts[:, j] = grid
            vals = F(pts)[:, j]
            assert np.all(vals[grid < res.t[j] - 1e-8] >= res.t[j] - 1e-8)
            assert np.all(vals[grid > res.t[j] + 1e-8] <= res.t[j] + 1e-8)
        np.testing.assert_allclose(res.t, [0.5, 0.5], atol=1e-8)

    def test_bare_callable_needs_k(self):
        with pytest.raises(ValueError):
            find_vectorial_downcrossing(lambda x: x)

    def test_leaving_the_cube(self):
        with pytest.raises(DomainError):
            find_vectorial_downcrossing(lambda x: x + 2.0, K=2)

    def test_nonconvergence_reports_last_iterate(self):
        # Increasing map: neither iteration nor sweeps certify a downcrossing.
        with pytest.raises(ConvergenceError) as info:
            find_vectorial_downcrossing(lambda x: np.where(x < 0.5, 0.0, 1.0), K=2, max_iter=20)
        assert info.value.last_iterate is not None

    def test_fallback_sweeps_handle_step_maps(self):
        F = VectorMap(lambda x: np.where(x < 0.4, 0.8, np.where(x > 0.4, 0.1, 0.4)), 2)
        res = find_vectorial_downcrossing(F, max_iter=5)
        np.testing.assert_allclose(res.t, [0.4, 0.4], atol=1e-8)


class TestComposite:
    def test_wei_linear(self):
        t = composite_downcrossing(lambda u: (1 - u) / 2, lambda w: 2 * w - 1, 0.0)
        assert t == pytest.approx(0.5, abs=1e-12)

    def test_trivial_pair(self):
        t = composite_downcrossing(lambda u: 0.3 * (1 - u) / 0.7, lambda w: w, 0.3)
        assert t == pytest.approx(0.3, abs=1e-10)

    def test_cubic_matches_direct_bisection(self):
        h1 = lambda u: (1 - u**3) / 2  # noqa: E731
        h2 = lambda w: 2 * w - 1  # noqa: E731
        t = composite_downcrossing(h1, h2, 0.0)
        assert t == pytest.approx(find_downcrossing(lambda x: h1(h2(x))).t, abs=1e-10)

    def test_bad_witness(self):
        with pytest.raises(InvalidWitnessError):
            composite_downcrossing(lambda u: (1 - u) / 2, lambda w: 2 * w - 1, 0.4)
