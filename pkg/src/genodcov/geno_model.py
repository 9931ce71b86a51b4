"""Genotype-space geometry.

Premetrics on the genotype support {0, 1, 2}, the kernels they induce, the
two-dimensional feature maps of the ``d_b`` family, pairwise matrices and the
empirical distance covariance / HSIC estimators built on them.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "MISSING",
    "SnpDistance",
    "FeatureMap",
    "as_genotypes",
    "is_dosage",
    "distance_eval",
    "induced_kernel",
    "induced_semimetric",
    "feature_map",
    "distance_matrix",
    "response_distance_matrix",
    "double_center",
    "gdc_statistic",
    "hsic_statistic",
    "global_test_statistic",
]

#: Sentinel used for a missing genotype call.
MISSING = -1

#: Largest sample size for which n x n matrices are materialized.
MATRIX_CAP = 20000

_NAMED_TABLES = {
    "recessive": ((0, 0, 1), (0, 0, 1), (1, 1, 0)),
    "dominant": ((0, 1, 1), (1, 0, 0), (1, 0, 0)),
    "heterozygous": ((0, 1, 0), (1, 0, 1), (0, 1, 0)),
}


@dataclass(frozen=True)
class SnpDistance:
    """A premetric on the genotype codes {0, 1, 2}.

    Use the constructors :meth:`db`, :meth:`discrete`, :meth:`euclidean`,
    :meth:`dominant`, :meth:`recessive` and :meth:`heterozygous`. The discrete
    and Euclidean metrics are stored as ``db`` members with ``b = 1`` and
    ``b = 2``; the dominance premetrics are kept as explicit tables.
    """

    kind: str
    b: float = float("nan")

    def __post_init__(self):
        if self.kind == "db":
            b = float(self.b)
            if not 0.0 <= b <= 4.0:
                raise ValueError(f"b must lie in [0, 4], got {self.b!r}")
            object.__setattr__(self, "b", b)
        elif self.kind not in _NAMED_TABLES:
            raise ValueError(f"unknown premetric kind {self.kind!r}")

    @classmethod
    def db(cls, b):
        return cls("db", b)

    @classmethod
    def discrete(cls):
        return cls("db", 1.0)

    @classmethod
    def euclidean(cls):
        return cls("db", 2.0)

    @classmethod
    def dominant(cls):
        return cls("dominant")

    @classmethod
    def recessive(cls):
        return cls("recessive")

    @classmethod
    def heterozygous(cls):
        return cls("heterozygous")

    @classmethod
    def parse(cls, text):
        """Parse ``'discrete'``, ``'euclidean'``, ``'dominant'``, ``'db:3'`` etc."""
        key = str(text).strip().lower()
        if key in ("discrete", "euclidean", "dominant", "recessive", "heterozygous"):
            return getattr(cls, key)()
        if key.startswith("db:") or key.startswith("db="):
            return cls.db(float(key[3:]))
        try:
            return cls.db(float(key))
        except ValueError:
            raise ValueError(f"cannot parse premetric {text!r}") from None

    @property
    def name(self):
        if self.kind != "db":
            return self.kind
        if self.b == 1.0:
            return "discrete"
        if self.b == 2.0:
            return "euclidean"
        return f"db:{self.b:g}"

    @property
    def table(self):
        """3 x 3 array of pairwise distances."""
        if self.kind == "db":
            return np.array([[0.0, 1.0, self.b], [1.0, 0.0, 1.0], [self.b, 1.0, 0.0]])
        return np.array(_NAMED_TABLES[self.kind], dtype=float)

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class FeatureMap:
    """Two-feature embedding of the ``d_b`` geometry.

    In genotype mode ``phi1 = sqrt(b/2) * (-1, 0, 1)`` and
    ``phi2 = sqrt((4-b)/2) * (0, 1, 0)``. In dosage mode the features are
    linearly interpolated: ``sqrt(b/2) * x`` and ``sqrt((4-b)/2) * |x - 1|``.
    """

    b: float
    dosage_mode: bool = False

    @property
    def phi1(self):
        return np.sqrt(self.b / 2.0) * np.array([-1.0, 0.0, 1.0])

    @property
    def phi2(self):
        return np.sqrt((4.0 - self.b) / 2.0) * np.array([0.0, 1.0, 0.0])

    def __call__(self, x):
        """Return the ``(n, 2)`` feature matrix of ``x``."""
        x = np.asarray(x)
        if self.dosage_mode:
            x = x.astype(float)
            return np.column_stack(
                [np.sqrt(self.b / 2.0) * x, np.sqrt((4.0 - self.b) / 2.0) * np.abs(x - 1.0)]
            )
        idx = x.astype(np.intp)
        return np.column_stack([self.phi1[idx], self.phi2[idx]])

    def kernel_table(self):
        """Inner products of the features over the nine genotype pairs."""
        f = np.column_stack([self.phi1, self.phi2])
        return f @ f.T


def as_genotypes(x):
    """Validate hard genotype calls and return them as an int8 array."""
    a = np.asarray(x)
    if a.ndim != 1 or a.size == 0:
        raise ValueError("genotype vector must be one-dimensional and non-empty")
    if a.dtype.kind == "f":
        if not np.all(np.isnan(a) | np.isin(a, (0.0, 1.0, 2.0, MISSING))):
            raise ValueError("genotype codes must be 0, 1, 2 or missing")
        a = np.where(np.isnan(a), MISSING, a)
    a = a.astype(np.int8)
    if not np.all(np.isin(a, (0, 1, 2, MISSING))):
        raise ValueError("genotype codes must be 0, 1, 2 or missing")
    return a


def is_dosage(x):
    """True when ``x`` holds non-integer values, i.e. expected allele counts."""
    a = np.asarray(x)
    if a.dtype.kind != "f":
        return False
    finite = a[np.isfinite(a)]
    return bool(np.any(finite != np.round(finite)))


def distance_eval(spec, x, y):
    """Distance between two genotype codes under ``spec``."""
    if x not in (0, 1, 2) or y not in (0, 1, 2):
        raise ValueError("genotype codes must be 0, 1 or 2")
    return float(spec.table[x, y])


def _as_table(spec_or_table):
    if isinstance(spec_or_table, SnpDistance):
        return spec_or_table.table
    t = np.asarray(spec_or_table, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError("expected a square table")
    return t


def induced_kernel(spec, center):
    """Kernel ``rho(x, c) + rho(x', c) - rho(x, x')`` induced by a premetric.

    Parameters
    ----------
    spec : SnpDistance or array_like
        Premetric, or a square distance table on a finite support.
    center : int
        Index of the centre point.
    """
    d = _as_table(spec)
    if not 0 <= center < d.shape[0]:
        raise ValueError("center outside the support")
    return d[:, [center]] + d[[center], :] - d


def induced_semimetric(kernel):
    """Semimetric ``(k(z,z) + k(z',z'))/2 - k(z,z')`` induced by a kernel table."""
    k = np.asarray(kernel, dtype=float)
    diag = np.diag(k)
    return (diag[:, None] + diag[None, :]) / 2.0 - k


def feature_map(b, dosage_mode=False):
    if not 0.0 <= b <= 4.0:
        raise ValueError(f"b must lie in [0, 4], got {b!r}")
    return FeatureMap(float(b), bool(dosage_mode))


def distance_matrix(spec, x, max_n=MATRIX_CAP):
    """``n x n`` matrix of pairwise genotype distances."""
    x = as_genotypes(x)
    if np.any(x == MISSING):
        raise ValueError("distance matrices require complete genotype vectors")
    if x.size > max_n:
        raise ValueError(f"n={x.size} exceeds the matrix cap {max_n}; use feature sums")
    t = _as_table(spec)
    return t[np.ix_(x, x)]


def response_distance_matrix(y, max_n=MATRIX_CAP):
    """Matrix of ``|y_i - y_j|^2 / 2``."""
    y = np.asarray(y, dtype=float)
    if y.size > max_n:
        raise ValueError(f"n={y.size} exceeds the matrix cap {max_n}")
    return 0.5 * (y[:, None] - y[None, :]) ** 2


def double_center(m):
    """Return ``(I - H) M (I - H)`` with ``H`` the constant ``1/n`` matrix."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    r = m - m.mean(axis=0, keepdims=True)
    return r - r.mean(axis=1, keepdims=True)


def gdc_statistic(dx, dy):
    """Empirical generalized distance covariance ``tr(D^X D~^Y) / n^2``."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    if dx.shape != dy.shape or dx.ndim != 2:
        raise ValueError("distance matrices must have equal square shapes")
    n = dx.shape[0]
    return float(np.sum(dx * double_center(dy))) / n**2


def hsic_statistic(kx, ky):
    """Empirical HSIC from two kernel matrices."""
    kx = np.asarray(kx, dtype=float)
    ky = np.asarray(ky, dtype=float)
    if kx.shape != ky.shape or kx.ndim != 2:
        raise ValueError("kernel matrices must have equal square shapes")
    n = kx.shape[0]
    return float(np.sum(double_center(kx) * double_center(ky))) / n**2


def global_test_statistic(features, y):
    """Global-test quadratic form ``sum_ij <F_i, F_j> <Y_i - mean, Y_j - mean> / n^2``.

    Computed through the cross-product ``F^t (Y - mean)`` in O(n).
    """
    f = np.asarray(features, dtype=float)
    y = np.asarray(y, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if y.ndim == 1:
        y = y[:, None]
    n = f.shape[0]
    if y.shape[0] != n:
        raise ValueError("features and response differ in length")
    c = f.T @ (y - y.mean(axis=0))
    return float(np.sum(c * c)) / n**2
