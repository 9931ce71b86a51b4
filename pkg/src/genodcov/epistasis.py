"""SNP-SNP dependence tests and the two-group epistasis scan.

Every statistic here is a function of the genotype contingency table: with
``P`` the empirical joint law and ``Kc`` the kernel of the premetric centred
at the empirical marginal, ``V^2 = sum P(x,y) P(x',y') Kc_X(x,x') Kc_Y(y,y')``.
This equals the double-centred distance-matrix formula exactly, so no
``n x n`` matrix is ever built.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .geno_model import MISSING, SnpDistance, induced_kernel
from .quadform import ConvergenceError, truncate_eigenvalues, wchisq_sf

__all__ = [
    "PairTestResult",
    "EpistasisClass",
    "EpistasisHit",
    "ternary_eigenvalues",
    "marginal_spectrum",
    "pair_statistic",
    "pair_test",
    "default_permutations",
    "permutation_pvalue",
    "mv3_test",
    "bh_fdr",
    "epistasis_scan",
]

MIN_PAIR_N = 10


@dataclass(frozen=True)
class PairTestResult:
    """Outcome of a pairwise (or three-way) dependence test.

    ``eigen`` holds one eigenvalue pair per marginal; ``eigen_x`` and
    ``eigen_y`` name the first two.
    """

    statistic: float
    p_value: float
    eigen: tuple
    metric: SnpDistance
    n: int
    flags: tuple = ()

    @property
    def eigen_x(self):
        return self.eigen[0]

    @property
    def eigen_y(self):
        return self.eigen[1]


class EpistasisClass(str, enum.Enum):
    PUTATIVE_INTERACTION = "PUTATIVE_INTERACTION"
    POPULATION_SUBSTRUCTURE = "POPULATION_SUBSTRUCTURE"
    NONE = "NONE"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class EpistasisHit:
    snp_a: object
    snp_b: object
    p_cases: float
    p_controls: float
    classification: EpistasisClass
    rejected_cases: bool = False
    rejected_controls: bool = False


def _metric(metric):
    if isinstance(metric, SnpDistance):
        return metric
    return SnpDistance.parse(metric)


def _simplex(p):
    p = np.asarray(p, dtype=float)
    if p.shape != (3,) or np.any(p < -1e-15) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("expected a probability triple")
    return np.clip(p, 0.0, None)


def ternary_eigenvalues(p, metric="discrete"):
    """Closed-form null eigenvalues ``(l1, l2)`` of a ternary marginal.

    Discrete metric: ``(1 - sum p^2)/2 +- sqrt((1 - sum p^2)^2/4 - 3 p0 p1 p2)``.
    Euclidean metric: ``a +- sqrt(a^2 - 4 p0 p1 p2)`` with
    ``a = p0 (1 - p0) + p2 (1 - p2)``. Discriminants below ``1e-14`` are
    rounding noise around a double root and are set to zero.
    """
    p = _simplex(p)
    metric = _metric(metric)
    prod = float(p[0] * p[1] * p[2])
    if metric.name == "discrete":
        half = 0.5 * (1.0 - float(np.sum(p * p)))
        disc = half * half - 3.0 * prod
    elif metric.name == "euclidean":
        half = float(p[0] * (1 - p[0]) + p[2] * (1 - p[2]))
        disc = half * half - 4.0 * prod
    else:
        raise ValueError("closed forms exist only for the discrete and Euclidean metrics")
    root = 0.0 if disc < 1e-14 else math.sqrt(disc)
    return max(half + root, 0.0), max(half - root, 0.0)


def _centered_kernel(table, p):
    """Kernel induced by ``table``, centred at the distribution ``p``."""
    k = induced_kernel(table, 0)
    c = np.eye(len(p)) - np.outer(np.ones(len(p)), p)
    return c @ k @ c.T


def marginal_spectrum(p, metric="discrete"):
    """Null eigenvalues for any premetric on a finite support, descending.

    These are the eigenvalues of ``D^(1/2) Kc D^(1/2)`` where ``Kc`` is the
    kernel centred at ``p`` and ``D = diag(p)``.
    """
    p = np.asarray(p, dtype=float)
    table = _metric(metric).table if not isinstance(metric, np.ndarray) else metric
    kc = _centered_kernel(table, p)
    s = np.sqrt(np.clip(p, 0.0, None))
    ev = np.linalg.eigvalsh(s[:, None] * kc * s[None, :])
    ev = truncate_eigenvalues(ev)
    return np.sort(np.maximum(ev, 0.0))[::-1]


def _spectrum(p, metric):
    if metric.name in ("discrete", "euclidean"):
        return np.array(ternary_eigenvalues(p, metric))
    return marginal_spectrum(p, metric)[:2]


def _complete(*xs):
    arrs = [np.asarray(x) for x in xs]
    n = arrs[0].shape[0]
    if any(a.ndim != 1 or a.shape[0] != n for a in arrs):
        raise ValueError("genotype vectors must be one-dimensional with equal length")
    ok = np.ones(n, dtype=bool)
    for a in arrs:
        af = a.astype(float)
        ok &= np.isfinite(af) & (af != MISSING)
    out = []
    for a in arrs:
        v = a[ok].astype(np.int64)
        if np.any((v < 0) | (v > 2)):
            raise ValueError("genotype codes must be 0, 1, 2 or missing")
        out.append(v)
    return out


def _table(x1, x2):
    return np.bincount(3 * x1 + x2, minlength=9).reshape(3, 3).astype(float)


def pair_statistic(table, metric="discrete"):
    """``n V^2`` from a 3 x 3 genotype count table.

    For the discrete metric this is ``(1/n) sum (n_ij - n_i. n_.j / n)^2``.
    """
    metric = _metric(metric)
    t = np.asarray(table, dtype=float)
    n = t.sum()
    joint = t / n
    p = joint.sum(axis=1)
    q = joint.sum(axis=0)
    if metric.name == "discrete":
        return float(np.sum((t - np.outer(t.sum(axis=1), t.sum(axis=0)) / n) ** 2) / n)
    kx = _centered_kernel(metric.table, p)
    ky = _centered_kernel(metric.table, q)
    return float(n * np.sum((joint.T @ kx @ joint) * ky))


def pair_test(x1, x2, metric="discrete"):
    """Distance-covariance test of independence between two SNPs.

    The null law of ``n V^2`` is ``sum_ij l_i m_j Z_ij^2`` with ``l`` and ``m``
    the marginal spectra at the empirical genotype frequencies.
    """
    metric = _metric(metric)
    x1, x2 = _complete(x1, x2)
    n = x1.size
    if n < MIN_PAIR_N:
        raise ValueError(f"need at least {MIN_PAIR_N} complete pairs, got {n}")
    t = _table(x1, x2)
    p = t.sum(axis=1) / n
    q = t.sum(axis=0) / n
    lx = _spectrum(p, metric)
    ly = _spectrum(q, metric)
    stat = pair_statistic(t, metric)
    eig = (tuple(float(v) for v in lx), tuple(float(v) for v in ly))
    if p.max() == 1.0 or q.max() == 1.0:
        return PairTestResult(0.0, 1.0, eig, metric, n, ("MONOMORPHIC",))
    w = np.outer(lx, ly).ravel()
    w = w[w > 0]
    return PairTestResult(stat, float(wchisq_sf(w, stat)), eig, metric, n)


def default_permutations(n):
    """Permutation count ``200 + floor(5000 / n)``."""
    return 200 + 5000 // int(n)


def permutation_pvalue(x1, x2, metric="discrete", B=None, rng=None):
    """Monte Carlo p-value ``(1 + #{stat* >= stat}) / (B + 1)`` over permutations of ``x2``."""
    metric = _metric(metric)
    x1, x2 = _complete(x1, x2)
    n = x1.size
    if B is None:
        B = default_permutations(n)
    rng = np.random.default_rng(rng)
    obs = pair_statistic(_table(x1, x2), metric)
    tol = 1e-12 * max(abs(obs), 1e-300)
    hits = 0
    for _ in range(B):
        if pair_statistic(_table(x1, rng.permutation(x2)), metric) >= obs - tol:
            hits += 1
    return (1 + hits) / (B + 1)


def mv3_test(x1, x2, x3, metric="discrete"):
    """Three-way distance multivariance test of joint independence.

    The statistic is ``n dMv^2`` with ``dMv^2 = -(1/n^2) sum A_ij B_ij C_ij``
    over double-centred distance matrices; its null law weights are the eight
    products of the three marginal eigenvalue pairs.
    """
    metric = _metric(metric)
    x1, x2, x3 = _complete(x1, x2, x3)
    n = x1.size
    if n < MIN_PAIR_N:
        raise ValueError(f"need at least {MIN_PAIR_N} complete triples, got {n}")
    joint = np.bincount(9 * x1 + 3 * x2 + x3, minlength=27).reshape(3, 3, 3) / n
    margins = [joint.sum(axis=(1, 2)), joint.sum(axis=(0, 2)), joint.sum(axis=(0, 1))]
    ks = [_centered_kernel(metric.table, m) for m in margins]
    stat = float(n * np.einsum("abc,def,ad,be,cf->", joint, joint, *ks))
    spectra = [_spectrum(m, metric) for m in margins]
    eig = tuple(tuple(float(v) for v in s) for s in spectra)
    if any(m.max() == 1.0 for m in margins):
        return PairTestResult(0.0, 1.0, eig, metric, n, ("MONOMORPHIC",))
    w = np.einsum("i,j,k->ijk", *spectra).ravel()
    w = w[w > 0]
    return PairTestResult(stat, float(wchisq_sf(w, stat)), eig, metric, n)


def bh_fdr(pvalues, q=0.05):
    """Benjamini-Hochberg step-up rejection mask at level ``q``.

    NaN p-values are never rejected and do not count towards the number of
    tests.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    p = np.asarray(pvalues, dtype=float)
    out = np.zeros(p.shape, dtype=bool)
    valid = np.flatnonzero(~np.isnan(p))
    m = valid.size
    if m == 0:
        return out
    order = valid[np.argsort(p[valid], kind="stable")]
    passed = p[order] <= q * np.arange(1, m + 1) / m
    if passed.any():
        cutoff = p[order][np.flatnonzero(passed).max()]
        out[valid] = p[valid] <= cutoff
    return out


def _pairs(L, positions, chromosomes, min_distance_bp):
    i, j = np.triu_indices(L, k=1)
    if positions is None:
        return i, j
    pos = np.asarray(positions, dtype=float)
    keep = np.abs(pos[i] - pos[j]) > min_distance_bp
    if chromosomes is not None:
        chrom = np.asarray(chromosomes)
        keep |= chrom[i] != chrom[j]
    return i[keep], j[keep]


def _safe_pair_p(a, b, metric):
    try:
        return pair_test(a, b, metric).p_value
    except (ValueError, ConvergenceError):
        return float("nan")


def epistasis_scan(
    cases,
    controls,
    metric="discrete",
    q=0.05,
    min_distance_bp=1e6,
    positions=None,
    chromosomes=None,
    snp_ids=None,
):
    """Pairwise dependence scan in cases and controls.

    Parameters
    ----------
    cases, controls : array_like
        SNP-major genotype matrices over the same SNPs.
    metric : SnpDistance or str
    q : float
        Benjamini-Hochberg level applied within each group.
    min_distance_bp : float
        Pairs on one chromosome closer than this are skipped when
        ``positions`` is given.
    positions, chromosomes : array_like, optional
        Base-pair positions and chromosome labels per SNP.
    snp_ids : sequence, optional
        Identifiers reported in the hits; SNP indices otherwise.

    Returns
    -------
    list of EpistasisHit
        One entry per retained pair, in lexicographic pair order. Pairs that
        could not be tested carry NaN p-values and class ``NONE``.
    """
    metric = _metric(metric)
    cases = np.asarray(cases)
    controls = np.asarray(controls)
    if cases.ndim != 2 or controls.ndim != 2 or cases.shape[0] != controls.shape[0]:
        raise ValueError("cases and controls must be SNP-major matrices over the same SNPs")
    L = cases.shape[0]
    ids = list(range(L)) if snp_ids is None else list(snp_ids)
    ii, jj = _pairs(L, positions, chromosomes, min_distance_bp)
    p_cases = np.array([_safe_pair_p(cases[a], cases[b], metric) for a, b in zip(ii, jj)])
    p_ctrl = np.array([_safe_pair_p(controls[a], controls[b], metric) for a, b in zip(ii, jj)])
    rej_cases = bh_fdr(p_cases, q)
    rej_ctrl = bh_fdr(p_ctrl, q)
    hits = []
    for n_, (a, b) in enumerate(zip(ii, jj)):
        rc, rt = bool(rej_cases[n_]), bool(rej_ctrl[n_])
        if rc and not rt:
            cls = EpistasisClass.PUTATIVE_INTERACTION
        elif rt and not rc:
            cls = EpistasisClass.POPULATION_SUBSTRUCTURE
        else:
            cls = EpistasisClass.NONE
        hits.append(EpistasisHit(ids[a], ids[b], float(p_cases[n_]), float(p_ctrl[n_]), cls, rc, rt))
    return hits
