"""Tests on finite categorical supports.

Distance-covariance independence test for an ``I x J`` contingency table,
energy-distance goodness of fit against a fixed multinomial law, and the
Pearson and likelihood-ratio baselines.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .quadform import truncate_eigenvalues, wchisq_sf

__all__ = [
    "TestResult",
    "ContingencyTable",
    "GofSpec",
    "dcov_indep_test",
    "energy_gof_test",
    "pearson_chi2",
    "g_test",
    "perm_indep_pvalue",
    "hwe_expected",
    "multinomial_cov_eigenvalues",
]

MIN_N = 10


@dataclass(frozen=True)
class TestResult:
    """Statistic, p-value and the reference-law details used to get it."""

    __test__ = False

    statistic: float
    p_value: float
    method: str
    eigenvalues: tuple = ()
    n: int = 0
    flags: tuple = ()
    dof: float = float("nan")


@dataclass(frozen=True)
class ContingencyTable:
    counts: np.ndarray
    row_sums: np.ndarray = field(init=False, repr=False)
    col_sums: np.ndarray = field(init=False, repr=False)
    n: int = field(init=False)

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ValueError("a contingency table must be two-dimensional")
        if c.dtype.kind == "f":
            if np.any(c != np.round(c)):
                raise ValueError("counts must be integers")
            c = c.astype(np.int64)
        if np.any(c < 0):
            raise ValueError("counts must be nonnegative")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "row_sums", c.sum(axis=1))
        object.__setattr__(self, "col_sums", c.sum(axis=0))
        object.__setattr__(self, "n", int(c.sum()))
        if self.n < 1:
            raise ValueError("the table is empty")

    @classmethod
    def from_data(cls, x, y):
        """Cross-tabulate two label vectors."""
        _, xi = np.unique(np.asarray(x), return_inverse=True)
        _, yi = np.unique(np.asarray(y), return_inverse=True)
        t = np.zeros((xi.max() + 1, yi.max() + 1), dtype=np.int64)
        np.add.at(t, (xi, yi), 1)
        return cls(t)

    @property
    def expected(self):
        """Counts ``n_i. n_.j / n`` expected under independence."""
        return np.outer(self.row_sums, self.col_sums) / self.n


@dataclass(frozen=True)
class GofSpec:
    probs: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        c = np.asarray(self.counts)
        if p.ndim != 1 or c.shape != p.shape:
            raise ValueError("probs and counts must be vectors of equal length")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be nonnegative and sum to 1")
        if np.any(c < 0) or np.any(c != np.round(c)):
            raise ValueError("counts must be nonnegative integers")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def n(self):
        return int(self.counts.sum())


def multinomial_cov_eigenvalues(p):
    """Nonzero eigenvalues of ``diag(p) - p p^t``, descending."""
    p = np.asarray(p, dtype=float)
    ev = truncate_eigenvalues(np.linalg.eigvalsh(np.diag(p) - np.outer(p, p)))
    return np.sort(ev[ev > 0])[::-1]


def _drop_empty(t):
    c = t.counts
    rows = t.row_sums > 0
    cols = t.col_sums > 0
    flags = ()
    if not rows.all() or not cols.all():
        flags = ("DROPPED_EMPTY",)
        c = c[np.ix_(rows, cols)]
    return c, flags


def _as_table(t):
    return t if isinstance(t, ContingencyTable) else ContingencyTable(t)


def _dcov_stat(c):
    """``(1/n) sum (n_ij - n*_ij)^2`` over a table or a stack of tables."""
    c = np.asarray(c, dtype=float)
    n = c.sum(axis=(-2, -1), keepdims=True)
    e = c.sum(axis=-1, keepdims=True) * c.sum(axis=-2, keepdims=True) / n
    return np.sum((c - e) ** 2, axis=(-2, -1)) / n[..., 0, 0]


def _pearson_stat(c):
    c = np.asarray(c, dtype=float)
    n = c.sum(axis=(-2, -1), keepdims=True)
    e = c.sum(axis=-1, keepdims=True) * c.sum(axis=-2, keepdims=True) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(e > 0, (c - e) ** 2 / e, 0.0)
    return np.sum(terms, axis=(-2, -1))


def _g_stat(c):
    c = np.asarray(c, dtype=float)
    n = c.sum(axis=(-2, -1), keepdims=True)
    e = c.sum(axis=-1, keepdims=True) * c.sum(axis=-2, keepdims=True) / n
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(c > 0, c * np.log(c / e), 0.0)
    return 2.0 * np.sum(terms, axis=(-2, -1))


_STATISTICS = {"dcov": _dcov_stat, "pearson": _pearson_stat, "g": _g_stat}


def dcov_indep_test(t):
    """Distance-covariance test of independence for a contingency table.

    The statistic is ``n V^2 = (1/n) sum (n_ij - n_i. n_.j / n)^2``; under
    independence it tends to ``sum l_i m_j Z_ij^2`` where ``l`` and ``m`` are
    the nonzero eigenvalues of the multinomial covariances of the empirical
    row and column margins.
    """
    t = _as_table(t)
    c, flags = _drop_empty(t)
    if min(c.shape) < 2:
        raise ValueError("need at least two nonempty rows and columns")
    if t.n < MIN_N:
        raise ValueError(f"need n >= {MIN_N}, got {t.n}")
    stat = float(_dcov_stat(c))
    lam = multinomial_cov_eigenvalues(c.sum(axis=1) / t.n)
    mu = multinomial_cov_eigenvalues(c.sum(axis=0) / t.n)
    w = np.outer(lam, mu).ravel()
    w = w[w > 0]
    p = float(wchisq_sf(w, stat)) if stat > 0 else 1.0
    return TestResult(stat, p, "dcov", tuple(float(v) for v in w), t.n, flags)


def energy_gof_test(g):
    """Energy-distance goodness-of-fit test against fixed probabilities.

    ``E_n = (1/n) sum (n_i - n p_i)^2`` is referred to ``sum l_i Z_i^2`` with
    ``l`` the nonzero eigenvalues of ``diag(p) - p p^t`` at the null ``p``.
    """
    n = g.n
    if n < MIN_N:
        raise ValueError(f"need n >= {MIN_N}, got {n}")
    p = g.probs
    stat = float(np.sum((g.counts - n * p) ** 2) / n)
    if p.max() == 1.0:
        ok = g.counts[p == 1.0][0] == n
        return TestResult(stat, 1.0 if ok else 0.0, "energy", (), n, ("DEGENERATE",))
    lam = multinomial_cov_eigenvalues(p)
    pval = float(wchisq_sf(lam, stat)) if stat > 0 else 1.0
    return TestResult(stat, pval, "energy", tuple(float(v) for v in lam), n)


def pearson_chi2(t):
    """Pearson's chi-square test for independence or goodness of fit.

    Cells with zero expectation are left out and flagged; degrees of freedom
    are ``(I-1)(J-1)`` after dropping empty margins, or the number of
    positive-probability categories minus one.
    """
    if isinstance(t, GofSpec):
        n = t.n
        if n < MIN_N:
            raise ValueError(f"need n >= {MIN_N}, got {n}")
        e = n * t.probs
        pos = e > 0
        flags = () if pos.all() else ("ZERO_EXPECTED",)
        stat = float(np.sum((t.counts[pos] - e[pos]) ** 2 / e[pos]))
        if np.any(t.counts[~pos] > 0):
            return TestResult(float("inf"), 0.0, "pearson", (), n, flags)
        dof = int(pos.sum()) - 1
        p = float(stats.chi2.sf(stat, dof)) if dof > 0 else 1.0
        return TestResult(stat, p, "pearson", (), n, flags, dof)
    t = _as_table(t)
    c, flags = _drop_empty(t)
    if min(c.shape) < 2:
        raise ValueError("need at least two nonempty rows and columns")
    if t.n < MIN_N:
        raise ValueError(f"need n >= {MIN_N}, got {t.n}")
    stat = float(_pearson_stat(c))
    dof = (c.shape[0] - 1) * (c.shape[1] - 1)
    return TestResult(stat, float(stats.chi2.sf(stat, dof)), "pearson", (), t.n, flags, dof)


def g_test(t):
    """Likelihood-ratio test ``G = 2 sum n_ij log(n_ij / n*_ij)``; zero cells add 0."""
    t = _as_table(t)
    c, flags = _drop_empty(t)
    if min(c.shape) < 2:
        raise ValueError("need at least two nonempty rows and columns")
    if t.n < MIN_N:
        raise ValueError(f"need n >= {MIN_N}, got {t.n}")
    stat = max(float(_g_stat(c)), 0.0)
    dof = (c.shape[0] - 1) * (c.shape[1] - 1)
    return TestResult(stat, float(stats.chi2.sf(stat, dof)), "g", (), t.n, flags, dof)


def perm_indep_pvalue(t, statistic_kind="dcov", B=999, rng=None):
    """Monte Carlo p-value over tables drawn uniformly given both margins.

    Tables are sampled with Patefield's algorithm; the p-value is
    ``(1 + #{T* >= T}) / (B + 1)``.
    """
    if B < 99:
        raise ValueError("B must be at least 99")
    try:
        fn = _STATISTICS[statistic_kind]
    except KeyError:
        raise ValueError(f"unknown statistic {statistic_kind!r}") from None
    t = _as_table(t)
    c, _ = _drop_empty(t)
    obs = float(fn(c))
    sims = stats.random_table(c.sum(axis=1), c.sum(axis=0)).rvs(
        size=B, method="patefield", random_state=np.random.default_rng(rng)
    )
    null = fn(sims)
    hits = int(np.sum(null >= obs - 1e-12 * max(abs(obs), 1e-300)))
    return (1 + hits) / (B + 1)


def hwe_expected(thetas, n=None):
    """Hardy-Weinberg genotype probabilities (or expected counts when ``n`` is given).

    Two alleles give ``(t^2, 2 t (1-t), (1-t)^2)``; a scalar is read as the
    frequency of the first allele. Three alleles give the order
    ``A1A1, A2A2, A3A3, A1A2, A1A3, A2A3``.
    """
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    if th.size == 1:
        th = np.array([th[0], 1.0 - th[0]])
    if th.size not in (2, 3) or np.any(th < 0) or abs(th.sum() - 1.0) > 1e-12:
        raise ValueError("allele frequencies must lie on the 2- or 3-simplex")
    if th.size == 2:
        p = np.array([th[0] ** 2, 2 * th[0] * th[1], th[1] ** 2])
    else:
        a, b, c = th
        p = np.array([a * a, b * b, c * c, 2 * a * b, 2 * a * c, 2 * b * c])
    return p if n is None else n * p
