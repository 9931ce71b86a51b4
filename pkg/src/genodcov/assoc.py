"""Genotype-phenotype association tests built on the ``d_b`` distance covariance.

A SNP is embedded through two features, ``x - 1`` and ``|x - 1|``, scaled by
``sqrt(b/2)`` and ``sqrt((4 - b)/2)``. After centering these span the same
space as the genotype feature map (and equal the interpolated map for
dosages), so the statistic and the 2 x 2 feature covariance ``K`` are computed
from a handful of sums per SNP. That makes the genome-wide scan a few matrix
products followed by vectorized p-value bounds and, only where the bounds do
not settle the question, an exact tail integral.
"""

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing

import numpy as np
from scipy import linalg

from .geno_model import MISSING, is_dosage
from .quadform import (
    EIGEN_RTOL,
    QuadFormWeights,
    chi2_2w_sf,
    pvalue_bounds_batch,
    tn_tail,
    truncate_eigenvalues,
    wchisq_sf,
)

__all__ = [
    "Flag",
    "AssocResult",
    "DegenerateDataError",
    "ASYMPTOTIC_N",
    "k_matrix",
    "kmatrix_eigenvalues",
    "vb2_statistic",
    "test",
    "test_asymptotic",
    "test_finite",
    "residualize",
    "test_adjusted",
    "test_multiallelic",
    "scan",
    "ArraySource",
]

#: Sample size above which the asymptotic null is used by default.
ASYMPTOTIC_N = 30000

MIN_N = 5


class Flag(str, enum.Enum):
    """Status of a reported p-value."""

    EXACT = "EXACT"
    ASYMPTOTIC = "ASYMPTOTIC"
    BOUND_ONLY_LOW = "BOUND_ONLY_LOW"
    BOUND_ONLY_HIGH = "BOUND_ONLY_HIGH"
    MONOMORPHIC = "MONOMORPHIC"
    DEGENERATE = "DEGENERATE"
    ERROR = "ERROR"

    def __str__(self):
        return self.value


_FLAG_CODES = list(Flag)


class DegenerateDataError(ValueError):
    """Too few observations or no phenotype variation."""


@dataclass(frozen=True)
class AssocResult:
    """Outcome of one association test.

    ``statistic`` is the studentized ``k = n V_b^2 / sigma^2``; ``vb2`` holds
    ``V_b^2`` itself. ``p_lo`` and ``p_hi`` are the screening bounds when they
    were computed.
    """

    statistic: float
    p_value: float
    eigenvalues: tuple = (float("nan"), float("nan"))
    n_effective: int = 0
    flag: Flag = Flag.EXACT
    p_lo: float = None
    p_hi: float = None
    vb2: float = float("nan")
    method: str = "finite"
    message: str = field(default="", compare=False)


def k_matrix(p, b):
    """Covariance matrix of the two genotype features at frequencies ``p``.

    ``K = [[b/2 (p0 + p2 - (p2 - p0)^2), sqrt(b(4-b))/2 p1 (p2 - p0)],
    [., (4-b)/2 p1 (1 - p1)]]``. The sign of the off-diagonal entry depends on
    the orientation of the second feature and does not affect the spectrum.
    """
    p0, p1, p2 = (float(v) for v in p)
    off = math.sqrt(b * (4.0 - b)) / 2.0 * p1 * (p2 - p0)
    return np.array(
        [[b / 2.0 * (p0 + p2 - (p2 - p0) ** 2), off], [off, (4.0 - b) / 2.0 * p1 * (1.0 - p1)]]
    )


def _eig2(k11, k22, k12, scale=None):
    """Closed-form eigenvalues of symmetric 2 x 2 matrices, truncated.

    Eigenvalues below ``EIGEN_RTOL * scale`` become zero; ``scale`` defaults
    to the trace and should be the uncentered feature scale when ``K`` comes
    out of a projection.
    """
    half_tr = 0.5 * (k11 + k22)
    rad = np.sqrt(np.maximum((0.5 * (k11 - k22)) ** 2 + k12**2, 0.0))
    l1 = half_tr + rad
    l2 = half_tr - rad
    if scale is None:
        scale = np.abs(k11) + np.abs(k22)
    l1 = np.where(np.abs(l1) <= EIGEN_RTOL * scale, 0.0, l1)
    l2 = np.where(np.abs(l2) <= EIGEN_RTOL * scale, 0.0, l2)
    return np.maximum(l1, 0.0), np.maximum(l2, 0.0)


def kmatrix_eigenvalues(k):
    """Eigenvalues ``(l1, l2)`` of a 2 x 2 ``K`` matrix, descending."""
    k = np.asarray(k, dtype=float)
    l1, l2 = _eig2(k[0, 0], k[1, 1], k[0, 1])
    return float(l1), float(l2)


def _clean(x, y, z=None):
    """Complete-case vectors; returns ``(x, y, z, dosage)``."""
    x = np.asarray(x)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError("genotype and phenotype vectors must have equal length")
    dosage = is_dosage(x)
    xf = x.astype(float)
    if dosage:
        ok = np.isfinite(xf)
        if np.any((xf[ok] < 0) | (xf[ok] > 2)):
            raise ValueError("dosages must lie in [0, 2]")
    else:
        ok = np.isfinite(xf) & (xf != MISSING)
        if np.any(~np.isin(xf[ok], (0.0, 1.0, 2.0))):
            raise ValueError("genotype codes must be 0, 1, 2 or missing")
    ok &= np.isfinite(y)
    if z is not None:
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[0] != y.shape[0]:
            raise ValueError("covariate matrix must have one row per sample")
        ok &= np.all(np.isfinite(z), axis=1)
        z = z[ok]
    return xf[ok], y[ok], z, dosage


def _features(x, b):
    """Unscaled feature columns ``(x - 1, |x - 1|)`` and their scales."""
    f1 = x - 1.0
    f2 = np.abs(f1)
    return f1, f2, math.sqrt(b / 2.0), math.sqrt((4.0 - b) / 2.0)


def _check_b(b):
    if not 0.0 <= b <= 4.0:
        raise ValueError(f"b must lie in [0, 4], got {b!r}")
    return float(b)


def _single_stats(x, y, b):
    """Return ``(k, vb2, l1, l2, n)`` for complete-case data without covariates."""
    n = x.size
    if n < MIN_N:
        raise DegenerateDataError(f"need at least {MIN_N} complete observations, got {n}")
    e = y - y.mean()
    ss = float(e @ e)
    if ss <= 0.0:
        raise DegenerateDataError("phenotype has zero variance")
    f1, f2, c1, c2 = _features(x, b)
    t1 = c1 * float(f1 @ e)
    t2 = c2 * float(f2 @ e)
    g1 = f1 - f1.mean()
    g2 = f2 - f2.mean()
    k11 = c1 * c1 * float(g1 @ g1) / n
    k22 = c2 * c2 * float(g2 @ g2) / n
    k12 = c1 * c2 * float(g1 @ g2) / n
    l1, l2 = _eig2(k11, k22, k12, (c1 * c1 * float(f1 @ f1) + c2 * c2 * float(f2 @ f2)) / n)
    num = t1 * t1 + t2 * t2
    return num / ss, num / n**2, float(l1), float(l2), n


def vb2_statistic(x, y, b=2.0):
    """Squared generalized distance covariance ``V_b^2`` between a SNP and a trait.

    Equals ``(1/n^2) sum_ij k_b(X_i, X_j)(Y_i - Ybar)(Y_j - Ybar)``, evaluated
    in O(n) through feature sums. Missing genotypes (``-1`` or NaN) and
    missing phenotypes (NaN) are dropped pairwise.
    """
    b = _check_b(b)
    x, y, _, _ = _clean(x, y)
    return _single_stats(x, y, b)[1]


def _is_monomorphic(l1):
    return l1 <= 0.0


def test_asymptotic(x, y, b=2.0):
    """Large-sample test: ``P(l1 Q1^2 + l2 Q2^2 > k)``."""
    b = _check_b(b)
    x, y, _, _ = _clean(x, y)
    k, vb2, l1, l2, n = _single_stats(x, y, b)
    if _is_monomorphic(l1):
        return AssocResult(0.0, 1.0, (l1, l2), n, Flag.MONOMORPHIC, vb2=vb2, method="asymptotic")
    p = wchisq_sf([l1, l2], k) if l2 > 0 else wchisq_sf([l1], k)
    return AssocResult(k, p, (l1, l2), n, Flag.ASYMPTOTIC, vb2=vb2, method="asymptotic")


def test_finite(x, y, b=2.0):
    """Finite-sample test for Gaussian errors: ``P(T >= 0)`` via :func:`tn_tail`."""
    b = _check_b(b)
    x, y, _, _ = _clean(x, y)
    k, vb2, l1, l2, n = _single_stats(x, y, b)
    if _is_monomorphic(l1):
        return AssocResult(0.0, 1.0, (l1, l2), n, Flag.MONOMORPHIC, vb2=vb2)
    return AssocResult(k, tn_tail(l1, l2, k, n), (l1, l2), n, Flag.EXACT, vb2=vb2)


def test(x, y, b=2.0, method="auto"):
    """Dispatch to the finite-sample test up to ``ASYMPTOTIC_N`` samples."""
    if method == "auto":
        n = int(np.sum(np.isfinite(np.asarray(y, dtype=float))))
        method = "finite" if n <= ASYMPTOTIC_N else "asymptotic"
    if method == "finite":
        return test_finite(x, y, b)
    if method == "asymptotic":
        return test_asymptotic(x, y, b)
    raise ValueError(f"unknown method {method!r}")


def _qr_basis(z):
    """Orthonormal basis of the column space of ``z``; rejects rank deficiency."""
    z = np.asarray(z, dtype=float)
    q, r, piv = linalg.qr(z, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    tol = max(z.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0)
    rank = int(np.sum(d > tol))
    if rank < z.shape[1]:
        bad = sorted(int(i) for i in piv[rank:])
        raise ValueError(f"covariate matrix is rank deficient; dependent columns: {bad}")
    return q


def _check_design(z):
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] < 1:
        raise ValueError("covariate matrix must be two-dimensional")
    if not np.all(z[:, 0] == 1.0):
        raise ValueError("the first covariate column must be the intercept (all ones)")
    return z


def residualize(y, z):
    """Least-squares residuals ``y - Z (Z^t Z)^{-1} Z^t y``.

    ``z`` must have an intercept first column and full column rank.
    """
    y = np.asarray(y, dtype=float)
    z = _check_design(z)
    if z.shape[0] != y.shape[0]:
        raise ValueError("covariate matrix must have one row per sample")
    if y.shape[0] <= z.shape[1]:
        raise ValueError("need more samples than covariate columns")
    q = _qr_basis(z)
    return y - q @ (q.T @ y)


def _adjusted_stats(x, y, z, b):
    n, r = z.shape
    if n <= r + 2 or n < MIN_N:
        raise DegenerateDataError(f"need n > q + 3 complete observations, got n={n}")
    q = _qr_basis(z)
    e = y - q @ (q.T @ y)
    ss = float(e @ e)
    if ss <= 1e-24 * float(y @ y):
        raise DegenerateDataError("phenotype has no variation beyond the covariates")
    f1, f2, c1, c2 = _features(x, b)
    u = np.column_stack([c1 * f1, c2 * f2])
    ut = u - q @ (q.T @ u)
    kmat = ut.T @ ut / n
    t = u.T @ e
    num = float(t @ t)
    l1, l2 = _eig2(kmat[0, 0], kmat[1, 1], kmat[0, 1], float(np.sum(u * u)) / n)
    return num / ss, num / n**2, float(l1), float(l2), n


def test_adjusted(x, y, z, b=2.0, method="finite"):
    """Covariate-adjusted test.

    The phenotype is residualized on ``z`` (intercept first), ``K`` is the
    covariance of the features after projecting out ``z``, and the finite
    null uses ``n - q - 3`` chi-square terms for ``q`` non-intercept columns.
    An intercept-only ``z`` reproduces :func:`test_finite` exactly.
    """
    b = _check_b(b)
    z = _check_design(z)
    if z.shape[1] == 1:
        return test(x, y, b, method)
    x, y, z, _ = _clean(x, y, z)
    k, vb2, l1, l2, n = _adjusted_stats(x, y, z, b)
    if _is_monomorphic(l1):
        return AssocResult(0.0, 1.0, (l1, l2), n, Flag.MONOMORPHIC, vb2=vb2, method=method)
    if method == "asymptotic":
        p = wchisq_sf([l1, l2], k) if l2 > 0 else wchisq_sf([l1], k)
        return AssocResult(k, p, (l1, l2), n, Flag.ASYMPTOTIC, vb2=vb2, method=method)
    p = tn_tail(l1, l2, k, n, z.shape[1] - 1)
    return AssocResult(k, p, (l1, l2), n, Flag.EXACT, vb2=vb2)


def test_multiallelic(x_counts, y, b=2.0):
    """Test for a locus with ``m`` alleles given per-allele copy counts.

    Uses the distance ``(1/2) sum_i d_b(x_i, y_i)`` over alleles, whose
    features are the biallelic features of every allele count scaled by
    ``1/sqrt(2)``. With at most two nonzero eigenvalues the two-eigenvalue
    finite-sample tail is used; otherwise the tail of the mixed-sign quadratic
    form is integrated directly.
    """
    b = _check_b(b)
    xc = np.asarray(x_counts, dtype=float)
    y = np.asarray(y, dtype=float)
    if xc.ndim != 2 or xc.shape[1] < 2 or xc.shape[0] != y.shape[0]:
        raise ValueError("allele counts must be an n x m matrix with m >= 2")
    ok = np.all(np.isfinite(xc), axis=1) & np.isfinite(y)
    xc, y = xc[ok], y[ok]
    if np.any(xc.sum(axis=1) != 2) or np.any(~np.isin(xc, (0.0, 1.0, 2.0))):
        raise ValueError("each row of allele counts must be in {0,1,2} and sum to 2")
    n = xc.shape[0]
    if n < MIN_N:
        raise DegenerateDataError(f"need at least {MIN_N} complete observations, got {n}")
    e = y - y.mean()
    ss = float(e @ e)
    if ss <= 0.0:
        raise DegenerateDataError("phenotype has zero variance")
    cols = []
    for j in range(xc.shape[1]):
        f1, f2, c1, c2 = _features(xc[:, j], b)
        cols += [c1 * f1 / math.sqrt(2.0), c2 * f2 / math.sqrt(2.0)]
    u = np.column_stack(cols)
    uc = u - u.mean(axis=0)
    lam = np.sort(truncate_eigenvalues(np.linalg.eigvalsh(uc.T @ uc / n)))[::-1]
    lam = np.maximum(lam, 0.0)
    t = u.T @ e
    num = float(t @ t)
    k = num / ss
    vb2 = num / n**2
    pos = lam[lam > 0]
    eig = tuple(float(v) for v in pos)
    if pos.size == 0:
        return AssocResult(0.0, 1.0, eig, n, Flag.MONOMORPHIC, vb2=vb2)
    if pos.size <= 2:
        l2 = pos[1] if pos.size == 2 else 0.0
        return AssocResult(k, tn_tail(pos[0], l2, k, n), eig, n, Flag.EXACT, vb2=vb2)
    c = k / n
    nu = n - 1 - pos.size
    if nu < 1:
        raise DegenerateDataError("too few observations for the number of genotype classes")
    w = np.concatenate([pos - c, [-c]])
    dof = np.concatenate([np.ones(pos.size, dtype=int), [nu]])
    p = wchisq_sf(QuadFormWeights.of(w, dof), 0.0)
    return AssocResult(k, p, eig, n, Flag.EXACT, vb2=vb2)


class ArraySource:
    """Genotype source backed by an in-memory SNP-major matrix."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix)
        if self.matrix.ndim != 2:
            raise ValueError("genotype matrix must be SNP-major and two-dimensional")

    @property
    def n_variants(self):
        return self.matrix.shape[0]

    @property
    def n_samples(self):
        return self.matrix.shape[1]

    @property
    def is_dosage(self):
        return self.matrix.dtype.kind == "f" and is_dosage(self.matrix)

    def read_block(self, start, stop):
        return self.matrix[start:stop]


def _as_source(genotypes):
    if hasattr(genotypes, "read_block") and hasattr(genotypes, "n_variants"):
        return genotypes
    return ArraySource(genotypes)


@dataclass(frozen=True)
class _ScanParams:
    b: float
    M: float
    m: float
    screen: bool
    method: str
    dosage: bool


def _block_stats(block, y, keep, z_basis, params):
    """Per-SNP ``(k, vb2, l1, l2, n, q, status)`` for one block of SNPs.

    ``status`` is 0 for a usable SNP, 1 for degenerate data, 2 for an error.
    """
    b = params.b
    g = np.asarray(block)
    if not keep.all():
        g = g[:, keep]
    L, n_all = g.shape
    feats = np.empty((2 * L, n_all))
    f1, f2 = feats[:L], feats[L:]
    if params.dosage or g.dtype.kind == "f":
        gf = g.astype(np.float64)
        avail = np.isfinite(gf)
        if not params.dosage:
            avail &= gf != MISSING
            bad_code = avail & (gf != np.round(gf))
            bad_code |= avail & ((gf < 0) | (gf > 2))
        else:
            bad_code = avail & ((gf < 0) | (gf > 2))
        np.subtract(np.where(avail, gf, 1.0), 1.0, out=f1)
    else:
        avail = g >= 0
        bad_code = (g > 2) | (g < MISSING)
        np.subtract(g, 1, out=f1, casting="unsafe")
        if not avail.all():
            f1[~avail] = 0.0
    np.abs(f1, out=f2)
    any_missing = not avail.all()
    c1 = math.sqrt(b / 2.0)
    c2 = math.sqrt((4.0 - b) / 2.0)
    k = np.zeros(L)
    vb2 = np.zeros(L)
    l1 = np.zeros(L)
    l2 = np.zeros(L)
    nn = np.zeros(L, dtype=np.int64)
    status = np.zeros(L, dtype=np.int8)
    messages = {}
    complete = avail.all(axis=1) if any_missing else np.ones(L, dtype=bool)
    bad_rows = np.any(bad_code, axis=1)
    status[bad_rows] = 2
    for i in np.flatnonzero(bad_rows):
        messages[int(i)] = "invalid genotype value"
    q = 0 if z_basis is None else z_basis.shape[1] - 2

    if z_basis is None:
        rhs = np.column_stack([np.ones(n_all), y, y * y])
        if any_missing:
            cnt, sy, syy = (avail.astype(np.float64) @ rhs).T
        else:
            cnt, sy, syy = (np.full(L, v) for v in rhs.sum(axis=0))
        sums = feats @ rhs[:, :2]
        s1, s2 = sums[:L], sums[L:]
        if params.dosage:
            f11 = np.einsum("ij,ij->i", f1, f1)
            f22 = np.einsum("ij,ij->i", f2, f2)
            f12 = np.einsum("ij,ij->i", f1, f2)
        else:
            f11 = s2[:, 0]
            f22 = s2[:, 0]
            f12 = s1[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            ybar = sy / cnt
            ss = syy - cnt * ybar * ybar
            t1 = c1 * (s1[:, 1] - ybar * s1[:, 0])
            t2 = c2 * (s2[:, 1] - ybar * s2[:, 0])
            num = t1 * t1 + t2 * t2
            m1 = s1[:, 0] / cnt
            m2 = s2[:, 0] / cnt
            k11 = c1 * c1 * (f11 / cnt - m1 * m1)
            k22 = c2 * c2 * (f22 / cnt - m2 * m2)
            k12 = c1 * c2 * (f12 / cnt - m1 * m2)
            k[:] = num / ss
            vb2[:] = num / cnt**2
            scale = (c1 * c1 * f11 + c2 * c2 * f22) / cnt
        a, c = _eig2(k11, k22, k12, scale)
        l1[:], l2[:] = a, c
        nn[:] = cnt.astype(np.int64)
        tiny = ~(ss > 1e-24 * syy) | (cnt < MIN_N)
        status[(status == 0) & tiny] = 1
    else:
        e, basis = z_basis[:, 0], z_basis[:, 1:]
        ss = float(e @ e)
        rhs = np.column_stack([e, np.ones(n_all), basis])
        proj = feats @ rhs
        p1, p2 = proj[:L], proj[L:]
        if params.dosage:
            f11 = np.einsum("ij,ij->i", f1, f1)
            f22 = np.einsum("ij,ij->i", f2, f2)
            f12 = np.einsum("ij,ij->i", f1, f2)
        else:
            f22 = p2[:, 1]
            f11 = f22
            f12 = p1[:, 1]
        t1 = c1 * p1[:, 0]
        t2 = c2 * p2[:, 0]
        num = t1 * t1 + t2 * t2
        w1 = p1[:, 2:]
        w2 = p2[:, 2:]
        n = n_all
        k11 = c1 * c1 * (f11 - np.einsum("ij,ij->i", w1, w1)) / n
        k22 = c2 * c2 * (f22 - np.einsum("ij,ij->i", w2, w2)) / n
        k12 = c1 * c2 * (f12 - np.einsum("ij,ij->i", w1, w2)) / n
        k[:] = num / ss
        vb2[:] = num / n**2
        a, c = _eig2(k11, k22, k12, (c1 * c1 * f11 + c2 * c2 * f22) / n)
        l1[:], l2[:] = a, c
        nn[:] = n
        for i in np.flatnonzero(~complete & (status == 0)):
            xi = np.where(avail[i], g[i].astype(float), np.nan)
            ok = avail[i]
            try:
                ki, vi, a_i, c_i, n_i = _adjusted_stats(xi[ok], _Z_CACHE["y"][ok], _Z_CACHE["z"][ok], b)
                k[i], vb2[i], l1[i], l2[i], nn[i] = ki, vi, a_i, c_i, n_i
            except DegenerateDataError as exc:
                status[i] = 1
                messages[int(i)] = str(exc)
            except (ValueError, ArithmeticError) as exc:
                status[i] = 2
                messages[int(i)] = str(exc)
    return k, vb2, l1, l2, nn, q, status, messages


_Z_CACHE = {}


def _evaluate_block(block, y, keep, z_basis, params):
    """Statistics, p-values and flags for one block of SNPs."""
    k, vb2, l1, l2, nn, q, status, messages = _block_stats(block, y, keep, z_basis, params)
    L = k.size
    p = np.full(L, np.nan)
    lo = np.full(L, np.nan)
    hi = np.full(L, np.nan)
    flag = np.full(L, _FLAG_CODES.index(Flag.EXACT), dtype=np.int8)
    flag[status == 1] = _FLAG_CODES.index(Flag.DEGENERATE)
    flag[status == 2] = _FLAG_CODES.index(Flag.ERROR)
    usable = status == 0
    mono = usable & (l1 <= 0.0)
    flag[mono] = _FLAG_CODES.index(Flag.MONOMORPHIC)
    p[mono] = 1.0
    k[mono] = 0.0
    live = usable & ~mono
    too_small = live & (nn - 3 - q < 1)
    flag[too_small] = _FLAG_CODES.index(Flag.DEGENERATE)
    live &= ~too_small
    idx = np.flatnonzero(live)
    if params.method == "asymptotic":
        p[idx] = chi2_2w_sf(l1[idx], l2[idx], k[idx])
        flag[idx] = _FLAG_CODES.index(Flag.ASYMPTOTIC)
    elif params.screen:
        blo, bhi = pvalue_bounds_batch(l1[idx], l2[idx], k[idx], nn[idx], q)
        lo[idx], hi[idx] = blo, bhi
        low = blo >= params.M
        high = ~low & (bhi <= params.m)
        p[idx[low]] = blo[low]
        flag[idx[low]] = _FLAG_CODES.index(Flag.BOUND_ONLY_LOW)
        p[idx[high]] = bhi[high]
        flag[idx[high]] = _FLAG_CODES.index(Flag.BOUND_ONLY_HIGH)
        for i in idx[~low & ~high]:
            p[i] = _exact(l1[i], l2[i], k[i], nn[i], q, messages, flag, i)
    else:
        for i in idx:
            p[i] = _exact(l1[i], l2[i], k[i], nn[i], q, messages, flag, i)
    return k, vb2, l1, l2, nn, p, lo, hi, flag, messages


def _exact(l1, l2, k, n, q, messages, flag, i):
    try:
        return tn_tail(float(l1), float(l2), float(k), int(n), int(q))
    except (ValueError, ArithmeticError) as exc:
        messages[int(i)] = str(exc)
        flag[i] = _FLAG_CODES.index(Flag.ERROR)
        return float("nan")


_WORKER = {}


def _worker_init(source, y, keep, z_basis, params, z_cache):
    _WORKER.update(source=source, y=y, keep=keep, z_basis=z_basis, params=params)
    _Z_CACHE.update(z_cache)


def _worker_run(start, stop):
    w = _WORKER
    return start, _evaluate_block(w["source"].read_block(start, stop), w["y"], w["keep"], w["z_basis"], w["params"])


def default_workers():
    """Worker count from ``GENODCOV_WORKERS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("GENODCOV_WORKERS", "1")))
    except ValueError:
        return 1


def scan(
    genotypes,
    y,
    z=None,
    b=2.0,
    M=1e-4,
    m=1e-64,
    screen=True,
    method="auto",
    workers=None,
    block_size=512,
    dosage=None,
    progress=None,
):
    """Genome-wide association scan.

    Parameters
    ----------
    genotypes : array_like or source
        SNP-major ``L x n`` matrix of genotype codes (``-1`` or NaN missing)
        or dosages, or an object with ``n_variants`` and ``read_block``.
    y : array_like
        Phenotype of length ``n``; NaN entries are excluded.
    z : array_like, optional
        Covariate matrix with an intercept first column. Rows with missing
        covariates are excluded for every SNP.
    b : float
        Premetric parameter in [0, 4].
    M, m : float
        Screening thresholds: exact tails are computed only where the lower
        bound is below ``M`` and the upper bound above ``m``. SNPs whose lower
        bound is at least ``M`` report it with ``BOUND_ONLY_LOW``; those whose
        upper bound is at most ``m`` report it with ``BOUND_ONLY_HIGH``.
    screen : bool
        When false every SNP gets the exact tail.
    method : {'auto', 'finite', 'asymptotic'}
    workers : int, optional
        Number of processes; defaults to ``GENODCOV_WORKERS`` or 1. Results do
        not depend on this value.
    block_size : int
        SNPs per unit of work.
    dosage : bool, optional
        Force dosage interpretation; detected from the data when omitted.
    progress : callable, optional
        Called with ``(done, total)`` after each block.

    Returns
    -------
    list of AssocResult
        In input order.
    """
    b = _check_b(b)
    source = _as_source(genotypes)
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size != source.n_samples:
        raise ValueError("phenotype length does not match the genotype sample count")
    keep = np.isfinite(y)
    z_basis = None
    z_cache = {}
    if z is not None:
        z = _check_design(z)
        if z.shape[0] != y.size:
            raise ValueError("covariate matrix must have one row per sample")
        keep &= np.all(np.isfinite(z), axis=1)
        if z.shape[1] == 1:
            z = None
    yk = y[keep]
    n_keep = int(keep.sum())
    if method == "auto":
        method = "finite" if n_keep <= ASYMPTOTIC_N else "asymptotic"
    if method not in ("finite", "asymptotic"):
        raise ValueError(f"unknown method {method!r}")
    if z is not None:
        zk = z[keep]
        qb = _qr_basis(zk)
        e = yk - qb @ (qb.T @ yk)
        if float(e @ e) <= 1e-24 * float(yk @ yk):
            raise DegenerateDataError("phenotype has no variation beyond the covariates")
        z_basis = np.column_stack([e, qb])
        z_cache = {"y": yk, "z": zk}
    else:
        yk = yk - yk.mean()
    if dosage is None:
        dosage = bool(getattr(source, "is_dosage", False))
    params = _ScanParams(b, float(M), float(m), bool(screen), method, bool(dosage))
    L = source.n_variants
    starts = list(range(0, L, block_size))
    workers = default_workers() if workers is None else max(1, int(workers))
    pieces = {}
    if workers == 1 or len(starts) <= 1:
        _Z_CACHE.clear()
        _Z_CACHE.update(z_cache)
        for s in starts:
            e_ = min(s + block_size, L)
            pieces[s] = _evaluate_block(source.read_block(s, e_), yk, keep, z_basis, params)
            if progress:
                progress(e_, L)
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(
            max_workers=workers,
            mp_context=ctx,
            initializer=_worker_init,
            initargs=(source, yk, keep, z_basis, params, z_cache),
        ) as pool:
            futs = [pool.submit(_worker_run, s, min(s + block_size, L)) for s in starts]
            done = 0
            for f in futs:
                s, out = f.result()
                pieces[s] = out
                done = min(s + block_size, L)
                if progress:
                    progress(done, L)
    results = []
    for s in starts:
        k, vb2, l1, l2, nn, p, lo, hi, flag, messages = pieces[s]
        for i in range(k.size):
            fl = _FLAG_CODES[flag[i]]
            results.append(
                AssocResult(
                    statistic=float(k[i]),
                    p_value=float(p[i]),
                    eigenvalues=(float(l1[i]), float(l2[i])),
                    n_effective=int(nn[i]),
                    flag=fl,
                    p_lo=None if math.isnan(lo[i]) else float(lo[i]),
                    p_hi=None if math.isnan(hi[i]) else float(hi[i]),
                    vb2=float(vb2[i]),
                    method=method,
                    message=messages.get(i, ""),
                )
            )
    return results
