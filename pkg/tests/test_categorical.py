import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from genodcov import categorical as cat
from genodcov.categorical import ContingencyTable, GofSpec
from genodcov.geno_model import gdc_statistic
from genodcov.simulate import decaying_marginals, sample_table

ADMISSION = np.array([[12, 9, 4], [37, 20, 29], [40, 58, 44], [53, 55, 66]])
GOF_COUNTS = (139, 232, 56)


def random_tables(max_n=500):
    return st.tuples(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**31)).map(
        lambda a: np.random.default_rng(a[2]).integers(1, max_n // (a[0] * a[1]) + 2, size=(a[0], a[1]))
    )


class TestTypes:
    def test_margins(self):
        t = ContingencyTable(ADMISSION)
        np.testing.assert_array_equal(t.row_sums, ADMISSION.sum(1))
        np.testing.assert_array_equal(t.col_sums, ADMISSION.sum(0))
        assert t.n == ADMISSION.sum()
        np.testing.assert_allclose(t.expected.sum(0), t.col_sums)

    def test_from_data(self):
        t = ContingencyTable.from_data(["a", "b", "a", "a"], [1, 1, 2, 1])
        np.testing.assert_array_equal(t.counts, [[2, 1], [1, 0]])

    @pytest.mark.parametrize("bad", [[[-1, 2], [3, 4]], [[0, 0], [0, 0]], [1, 2, 3], [[1.5, 2], [3, 4]]])
    def test_invalid_tables(self, bad):
        with pytest.raises(ValueError):
            ContingencyTable(bad)

    def test_invalid_gof(self):
        with pytest.raises(ValueError):
            GofSpec([0.5, 0.6], [3, 4])
        with pytest.raises(ValueError):
            GofSpec([0.5, 0.5], [3, 4, 5])


class TestIndependence:
    def test_admission_table(self):
        res = cat.dcov_indep_test(ADMISSION)
        assert res.p_value == pytest.approx(0.044722, abs=5e-6)
        assert len(res.eigenvalues) == 6

    def test_perfect_fit(self):
        t = np.outer([10, 20, 30], [2, 3]) // 1
        res = cat.dcov_indep_test(t)
        assert res.statistic == pytest.approx(0.0, abs=1e-12) and res.p_value == 1.0

    def test_two_by_two_eigenvalue(self):
        res = cat.dcov_indep_test([[10, 15], [15, 10]])
        np.testing.assert_allclose(res.eigenvalues, [0.25])

    @given(t=random_tables())
    def test_statistic_matches_distance_matrices(self, t):
        rows = np.repeat(np.arange(t.shape[0]), t.sum(1))
        cols = np.concatenate([np.repeat(np.arange(t.shape[1]), r) for r in t])
        n = t.sum()

        def dmat(v):
            return (v[:, None] != v[None, :]).astype(float)

        ref = n * gdc_statistic(dmat(rows), dmat(cols))
        assert cat.dcov_indep_test(t).statistic == pytest.approx(ref, rel=1e-9, abs=1e-12)

    @given(t=random_tables())
    def test_eigenvalue_structure(self, t):
        q = t.sum(1) / t.sum()
        lam = cat.multinomial_cov_eigenvalues(q)
        assert lam.size == t.shape[0] - 1
        assert lam.sum() == pytest.approx(1 - np.sum(q * q), rel=1e-12)

    @given(t=random_tables(), seed=st.integers(0, 2**31))
    def test_permutation_invariance(self, t, seed):
        rng = np.random.default_rng(seed)
        u = t[rng.permutation(t.shape[0])][:, rng.permutation(t.shape[1])]
        for fn in (cat.dcov_indep_test, cat.pearson_chi2, cat.g_test):
            a, b = fn(t), fn(u)
            assert b.statistic == pytest.approx(a.statistic, rel=1e-10, abs=1e-12)
            assert b.p_value == pytest.approx(a.p_value, rel=1e-8, abs=1e-14)

    def test_empty_rows_dropped(self):
        t = np.array([[5, 7], [0, 0], [8, 3]])
        res = cat.dcov_indep_test(t)
        assert "DROPPED_EMPTY" in res.flags
        assert res.p_value == cat.dcov_indep_test(t[[0, 2]]).p_value

    def test_too_small(self):
        with pytest.raises(ValueError):
            cat.dcov_indep_test([[1, 2], [3, 2]])
        with pytest.raises(ValueError):
            cat.dcov_indep_test([[5, 0], [7, 0]])

    def test_level_decaying_marginals(self):
        rng = np.random.default_rng(9)
        probs = decaying_marginals(3, 4)
        p = []
        for _ in range(1500):
            t = sample_table(probs, 200, rng)
            if (t.sum(1) > 0).sum() >= 2 and (t.sum(0) > 0).sum() >= 2:
                p.append(cat.dcov_indep_test(t).p_value)
        rate = np.mean(np.array(p) <= 0.05)
        assert abs(rate - 0.05) < 3 * np.sqrt(0.05 * 0.95 / len(p))


class TestGoodnessOfFit:
    def test_worked_example(self):
        g = GofSpec(cat.hwe_expected(0.59), GOF_COUNTS)
        res = cat.energy_gof_test(g)
        assert res.p_value == pytest.approx(0.027, abs=0.002)
        # exact value of the weighted chi-square tail at these inputs
        assert res.p_value == pytest.approx(0.027460023478885938, rel=1e-8)
        assert cat.pearson_chi2(g).p_value == pytest.approx(0.027, abs=0.002)

    def test_perfect_fit(self):
        res = cat.energy_gof_test(GofSpec([0.25, 0.5, 0.25], [25, 50, 25]))
        assert res.statistic == 0.0 and res.p_value == 1.0

    @given(p=st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
    def test_weights_sum(self, p):
        p = np.array(p) / sum(p)
        lam = cat.multinomial_cov_eigenvalues(p)
        assert lam.sum() == pytest.approx(1 - np.sum(p * p), rel=1e-10)

    def test_degenerate(self):
        assert cat.energy_gof_test(GofSpec([1.0, 0.0], [12, 0])).p_value == 1.0
        res = cat.energy_gof_test(GofSpec([1.0, 0.0], [11, 1]))
        assert res.p_value == 0.0 and "DEGENERATE" in res.flags

    def test_level(self):
        rng = np.random.default_rng(12)
        probs = cat.hwe_expected(2 / 3)
        reps = 3000
        rej = sum(
            cat.energy_gof_test(GofSpec(probs, rng.multinomial(500, probs))).p_value <= 0.05 for _ in range(reps)
        )
        assert abs(rej / reps - 0.05) < 3 * np.sqrt(0.05 * 0.95 / reps)


class TestClassical:
    def test_pearson_hand_value(self):
        res = cat.pearson_chi2([[10, 20], [20, 10]])
        assert res.statistic == pytest.approx(20 / 3, rel=1e-12)
        assert res.dof == 1

    def test_admission_baselines(self):
        assert cat.pearson_chi2(ADMISSION).p_value == pytest.approx(0.025139, abs=5e-6)
        assert cat.g_test(ADMISSION).p_value == pytest.approx(0.022263, abs=5e-6)

    @given(t=random_tables())
    def test_match_scipy(self, t):
        chi2 = stats.chi2_contingency(t, correction=False)
        g = stats.chi2_contingency(t, correction=False, lambda_="log-likelihood")
        assert cat.pearson_chi2(t).statistic == pytest.approx(chi2.statistic, rel=1e-10)
        assert cat.g_test(t).statistic == pytest.approx(g.statistic, rel=1e-9, abs=1e-12)

    def test_g_zero_cells(self):
        t = np.array([[10, 0], [5, 5]])
        e = np.outer(t.sum(1), t.sum(0)) / t.sum()
        ref = 2 * sum(t[i, j] * np.log(t[i, j] / e[i, j]) for i in range(2) for j in range(2) if t[i, j])
        assert cat.g_test(t).statistic == pytest.approx(ref, rel=1e-12)

    def test_perfect_fit(self):
        t = np.outer([2, 4], [5, 10, 5])
        assert cat.pearson_chi2(t).p_value == pytest.approx(1.0)
        assert cat.g_test(t).statistic == 0.0

    def test_gof_zero_expected(self):
        res = cat.pearson_chi2(GofSpec([0.5, 0.5, 0.0], [6, 6, 0]))
        assert "ZERO_EXPECTED" in res.flags and res.dof == 1
        assert cat.pearson_chi2(GofSpec([0.5, 0.5, 0.0], [6, 5, 1])).p_value == 0.0


def enumerate_tables(rows, cols):
    """All tables with the given margins and their conditional probabilities."""
    out = []
    n = sum(rows)
    for cells in itertools.product(*(range(min(r, c) + 1) for r in rows for c in cols)):
        t = np.array(cells).reshape(len(rows), len(cols))
        if np.all(t.sum(1) == rows) and np.all(t.sum(0) == cols):
            lp = (
                sum(special.gammaln(r + 1) for r in rows)
                + sum(special.gammaln(c + 1) for c in cols)
                - special.gammaln(n + 1)
                - np.sum([special.gammaln(v + 1) for v in t.ravel()])
            )
            out.append((t, np.exp(lp)))
    return out


class TestPermutation:
    def test_exact_enumeration(self):
        t = np.array([[3, 1], [1, 4], [0, 3]])
        tables = enumerate_tables(t.sum(1), t.sum(0))
        assert sum(w for _, w in tables) == pytest.approx(1.0)
        obs = cat._dcov_stat(t)
        exact = sum(w for u, w in tables if cat._dcov_stat(u) >= obs - 1e-12)
        B = 20000
        p = cat.perm_indep_pvalue(t, "dcov", B=B, rng=5)
        assert abs(p - exact) < 4 * np.sqrt(exact * (1 - exact) / B) + 1 / B

    def test_admission_table(self):
        p = cat.perm_indep_pvalue(ADMISSION, "dcov", B=999, rng=1)
        assert abs(p - 0.044722) < 3 * np.sqrt(0.0447 * 0.9553 / 999)
        assert cat.perm_indep_pvalue(ADMISSION, "dcov", B=999, rng=1) == p

    def test_minimum(self):
        assert cat.perm_indep_pvalue([[40, 0], [0, 40]], "pearson", B=99, rng=0) == pytest.approx(0.01)

    def test_validation(self):
        with pytest.raises(ValueError):
            cat.perm_indep_pvalue(ADMISSION, B=50)
        with pytest.raises(ValueError):
            cat.perm_indep_pvalue(ADMISSION, "fisher")

    def test_agrees_with_analytic(self):
        rng = np.random.default_rng(21)
        probs = decaying_marginals(3, 3, 0.05)
        t = sample_table(probs, 300, rng)
        ana = cat.dcov_indep_test(t).p_value
        perm = cat.perm_indep_pvalue(t, "dcov", B=1999, rng=2)
        assert abs(perm - ana) < 4 * np.sqrt(ana * (1 - ana) / 1999) + 0.01


class TestHWE:
    @pytest.mark.parametrize(
        "theta,expected",
        [
            ((0.5, 0.5), (0.25, 0.5, 0.25)),
            (2 / 3, (4 / 9, 4 / 9, 1 / 9)),
            ((0.7, 0.25, 0.05), (0.49, 0.0625, 0.0025, 0.35, 0.07, 0.025)),
        ],
    )
    def test_values(self, theta, expected):
        np.testing.assert_allclose(cat.hwe_expected(theta), expected, rtol=1e-12)

    def test_counts(self):
        np.testing.assert_allclose(cat.hwe_expected(0.5, n=100), [25, 50, 25])

    @pytest.mark.parametrize("bad", [(0.5, 0.6), (0.2, 0.2, 0.2, 0.4), (-0.1, 1.1)])
    def test_invalid(self, bad):
        with pytest.raises(ValueError):
            cat.hwe_expected(bad)
