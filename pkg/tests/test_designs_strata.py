import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from allocsim.designs_strata import (
    RDBCD,
    Atkinson,
    AtkinsonGeneral,
    CAbcd,
    HuHu,
    ImbalanceWeights,
    PocockSimon,
    StratumTable,
    atkinson_from_score,
    atkinson_scores,
    atkinson_stratified,
    cabcd_step,
    global_imbalance,
    global_imbalance_from_cells,
    huhu_weight_condition,
    integer_imbalances,
    marginal_imbalance,
    strata_limit,
    strata_probability,
    stratum_update,
)
from allocsim.errors import InvalidDistributionError, InvalidRuleError

UNIFORM = np.full((2, 2), 0.25)


def table(N, NA):
    return StratumTable.from_arrays(np.array(N), np.array(NA))


@st.composite
def tables(draw, min_size=0):
    J1 = draw(st.integers(1, 3))
    L1 = draw(st.integers(1, 3))
    N = np.array(draw(st.lists(st.integers(min_size, 12), min_size=J1 * L1, max_size=J1 * L1)))
    frac = np.array(draw(st.lists(st.floats(0, 1), min_size=J1 * L1, max_size=J1 * L1)))
    NA = np.floor(frac * N).astype(int)
    return StratumTable.from_arrays(N.reshape(J1, L1), NA.reshape(J1, L1))


class TestTable:
    def test_update(self):
        t = stratum_update(StratumTable.empty(), (0, 0), 0)
        assert t.N[0][0] == 1 and t.NA[0][0] == 1 and t.n == 1

    def test_update_out_of_range(self):
        with pytest.raises(IndexError):
            stratum_update(StratumTable.empty(), (2, 0), 0)

    @given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.integers(0, 1)), max_size=60))
    def test_size_invariant(self, moves):
        t = StratumTable.empty(1, 2)
        for j, l, arm in moves:
            t = stratum_update(t, (j, l), arm)
        assert t.sizes.sum() == t.n == len(moves)
        assert np.all((0 <= t.a_counts) & (t.a_counts <= t.sizes))


class TestImbalances:
    def test_cancelling_margin(self):
        t = table([[5, 5], [5, 5]], [[3, 2], [2, 3]])
        assert marginal_imbalance(t, "T", 0) == pytest.approx(0.0, abs=1e-15)

    def test_balanced(self):
        t = table([[2, 2], [2, 2]], [[1, 1], [1, 1]])
        assert marginal_imbalance(t, "W", 1) == 0.0 and global_imbalance(t) == 0.0

    def test_integer_cross_check(self):
        t = table([[4, 4]], [[3, 1]])
        assert marginal_imbalance(t, "T", 0) == 0.0
        assert integer_imbalances(t).rows[0] == 0

    def test_global(self):
        t = table([[4, 6]], [[4, 3]])
        assert global_imbalance(t) == pytest.approx(0.4)

    @given(tables())
    def test_marginal_identity(self, t):
        if t.n == 0:
            return
        imb = integer_imbalances(t)
        for j in range(t.J + 1):
            assert abs(imb.rows[j] - t.n * marginal_imbalance(t, "T", j)) <= 1e-9
        for l in range(t.L + 1):
            assert abs(imb.cols[l] - t.n * marginal_imbalance(t, "W", l)) <= 1e-9

    @given(tables())
    def test_global_identity(self, t):
        if t.n == 0:
            return
        assert abs(global_imbalance(t) - global_imbalance_from_cells(t)) <= 1e-12


class TestWeights:
    def test_condition_examples(self):
        assert huhu_weight_condition(1, 1, ImbalanceWeights(0.05, 0.1, 0.1, 0.75))
        assert not huhu_weight_condition(1, 1, ImbalanceWeights(0.1, 0.1, 0.1, 0.7))
        assert huhu_weight_condition(1, 1, ImbalanceWeights(0, 0, 0, 1))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(InvalidRuleError):
            ImbalanceWeights(0.1, 0.1, 0.1, 0.6)

    def test_integer_weights(self):
        assert ImbalanceWeights(0.05, 0.1, 0.1, 0.75).integer_weights() == (1, 2, 2, 15)


class TestRules:
    @pytest.mark.parametrize(
        "N, NA, expected",
        [
            ([[1, 1], [4, 0]], [[1, 1], [0, 0]], 0.8),  # D(t0)=2, D(w0)=-3
            ([[1, 1], [3, 0]], [[1, 1], [0, 0]], 0.5),  # D(t0)=2, D(w0)=-2
            ([[2, 0], [0, 0]], [[2, 0], [0, 0]], 0.2),  # D(t0)=2, D(w0)=2
        ],
    )
    def test_pocock_simon(self, N, NA, expected):
        assert strata_probability(PocockSimon(0.8), table(N, NA), (0, 0)) == pytest.approx(expected, abs=1e-15)

    def test_huhu_balanced(self):
        t = table([[2, 2], [2, 2]], [[1, 1], [1, 1]])
        assert strata_probability(HuHu(0.8), t, (1, 0)) == 0.5

    def test_huhu_weighted_sum(self):
        # D = 2, D(t0) = -4, D(w0) = 0, D(0,0) = -1: weighted sum -1.05.
        t = table([[1, 3], [1, 5]], [[0, 0], [1, 5]])
        imb = integer_imbalances(t)
        assert (imb.total, imb.rows[0], imb.cols[0], imb.cells[0, 0]) == (2, -4, 0, -1)
        assert strata_probability(HuHu(0.8), t, (0, 0)) == 0.8

    def test_huhu_exact_zero_sum(self):
        # wg*D + ws*D(j,l) with (0.25, 0, 0, 0.75): D = 3, D(0,0) = -1 cancels exactly.
        rule = HuHu(0.9, ImbalanceWeights(0.25, 0.0, 0.0, 0.75))
        t = table([[1, 4]], [[0, 4]])
        assert strata_probability(rule, t, (0, 0)) == 0.5

    @pytest.mark.parametrize("NA, expected", [(2, 1 / 17), (1, 0.5), (0, 16 / 17)])
    def test_cabcd(self, NA, expected):
        t = table([[2, 0], [0, 0]], [[NA, 0], [0, 0]])
        rule = CAbcd(probs=tuple(map(tuple, UNIFORM)))
        assert strata_probability(rule, t, (0, 0)) == pytest.approx(expected, abs=1e-12)

    @given(st.integers(-50, 50), st.floats(0.5, 8))
    def test_cabcd_symmetry(self, d, q):
        assert cabcd_step(-d, q) == pytest.approx(1 - cabcd_step(d, q), abs=1e-15)

    def test_atkinson(self):
        assert strata_probability(Atkinson(), table([[5, 1]], [[3, 0]]), (0, 0)) == pytest.approx(
            0.16 / 0.52, abs=1e-12
        )
        assert atkinson_stratified(0.6) == pytest.approx(atkinson_from_score(0.2), abs=1e-15)
        assert strata_probability(Atkinson(), table([[2, 1]], [[1, 0]]), (0, 0)) == 0.5

    def test_atkinson_empty_stratum(self):
        assert strata_probability(Atkinson(), table([[0, 3]], [[0, 3]]), (0, 0)) == 0.5

    def test_atkinson_general_matches_stratified(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            shape = tuple(rng.integers(2, 4, size=2))
            N = rng.integers(1, 30, size=shape)
            NA = rng.integers(0, N + 1)
            j, l = rng.integers(0, shape[0]), rng.integers(0, shape[1])
            t = table(N, NA)
            a = strata_probability(AtkinsonGeneral(), t, (j, l))
            b = strata_probability(Atkinson(), t, (j, l))
            assert abs(a - b) <= 1e-9

    def test_atkinson_general_ridge_flag(self):
        score = atkinson_scores(np.array([[[3, 0], [0, 0]]]), np.array([[[2, 0], [0, 0]]]),
                                np.array([0]), np.array([0]))
        assert score.ridge_used[0]

    def test_rdbcd_diagonal(self):
        rule = RDBCD(((0.4, 0.6), (0.5, 0.7)))
        for z in (0.1, 0.25, 0.9):
            assert rule.allocation(0.6, 0.6, z) == pytest.approx(0.6, abs=1e-12)

    def test_balanced_tables_give_half(self):
        t = table([[4, 2], [6, 8]], [[2, 1], [3, 4]])
        for rule in (PocockSimon(0.9), HuHu(0.7)):
            for cell in [(0, 0), (0, 1), (1, 0), (1, 1)]:
                assert strata_probability(rule, t, cell) == 0.5


class TestLimits:
    def test_pocock_simon(self):
        p = np.array([[0.1, 0.2], [0.3, 0.4]])
        lim = strata_limit(PocockSimon(0.8), p)
        np.testing.assert_array_equal(lim.cells, np.full((2, 2), 0.5))
        assert lim.overall == 0.5 and lim.residual == 0.0

    def test_rdbcd_balanced_target(self):
        assert strata_limit(RDBCD(), UNIFORM).overall == 0.5

    def test_rdbcd_weighted_average(self):
        lim = strata_limit(RDBCD(((0.4, 0.6), (0.5, 0.7))), UNIFORM)
        assert lim.overall == pytest.approx(0.55)
        assert lim.residual <= 1e-12

    def test_zero_probability_stratum(self):
        with pytest.raises(InvalidDistributionError):
            strata_limit(PocockSimon(0.8), [[0.5, 0.5], [0.0, 0.0]])

    @pytest.mark.parametrize("rule", [HuHu(0.8), CAbcd(), Atkinson(), AtkinsonGeneral()])
    def test_balance_rules(self, rule):
        lim = strata_limit(rule, UNIFORM)
        assert lim.overall == 0.5 and lim.residual == 0.0
