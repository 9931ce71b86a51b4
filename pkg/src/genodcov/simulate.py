"""Population models and samplers for the simulation designs.

All randomness goes through :func:`make_rng`, a counter-based Philox stream
keyed by ``(seed, stream)``, so replicate ``r`` is reproducible no matter
which worker draws it or in what order.
"""

from dataclasses import dataclass

import numpy as np

from .categorical import hwe_expected

__all__ = [
    "make_rng",
    "hwe_genotype_probs",
    "sample_hwe_genotypes",
    "JointTernaryModel",
    "independence_table",
    "qexp_table",
    "qmult_table",
    "default_marginals",
    "sample_power_model",
    "max_decaying_eps",
    "decaying_marginals",
    "sample_table",
    "hwe_departure",
    "hwe_null",
    "HWE_DEPARTURE_MODELS",
]

MAF_RANGE = (0.05, 0.2)
POWER_SIGMA2 = 25.0
H_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def make_rng(seed, stream=0):
    """Generator for replicate ``stream`` of run ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def hwe_genotype_probs(maf):
    """Probabilities of codes 0, 1, 2 (copies of the minor allele) under HWE."""
    if not 0.0 < maf <= 0.5:
        raise ValueError(f"maf must lie in (0, 0.5], got {maf!r}")
    return np.array([(1 - maf) ** 2, 2 * maf * (1 - maf), maf * maf])


def sample_hwe_genotypes(maf, n, rng):
    return rng.choice(3, size=int(n), p=hwe_genotype_probs(maf)).astype(np.int8)


@dataclass(frozen=True)
class JointTernaryModel:
    """Joint law of two ternary genotypes, rows indexing the first SNP."""

    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.shape != (3, 3):
            raise ValueError("expected a 3 x 3 table")
        if np.any(t < -1e-15) or np.any(t > 1 + 1e-15) or abs(t.sum() - 1.0) > 1e-12:
            raise ValueError("cells must lie in [0, 1] and sum to 1; parameters are infeasible")
        t = np.clip(t, 0.0, 1.0)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def row_marginal(self):
        return self.table.sum(axis=1)

    @property
    def col_marginal(self):
        return self.table.sum(axis=0)

    def sample(self, n, rng):
        """Draw ``n`` genotype pairs as two int8 vectors."""
        cells = rng.choice(9, size=int(n), p=self.table.ravel() / self.table.sum())
        return (cells // 3).astype(np.int8), (cells % 3).astype(np.int8)


def independence_table(p, q, r, s):
    return JointTernaryModel(np.outer([p, q, 1 - p - q], [r, s, 1 - r - s]))


def qexp_table(p, q, r, s, e):
    """``qexp`` model: the (1, 1) cell is ``q^e s``, balanced within the first row and column."""
    if e < 1:
        raise ValueError("e must be at least 1")
    d = q**e * s - q * s
    t = np.outer([p, q, 1 - p - q], [r, s, 1 - r - s])
    t[0, 0] += d
    t[0, 1] -= d
    t[1, 0] -= d
    t[1, 1] += d
    return JointTernaryModel(t)


def qmult_table(p, q, r, s, g):
    """``qmult`` model: the (1, 1) cell is ``g q s``, balanced within the first row and column."""
    if not 0.0 <= g <= 1.0:
        raise ValueError("g must lie in [0, 1]")
    d = (1 - g) * q * s
    t = np.outer([p, q, 1 - p - q], [r, s, 1 - r - s])
    t[0, 0] -= d
    t[0, 1] += d
    t[1, 0] += d
    t[1, 1] -= d
    return JointTernaryModel(t)


def default_marginals(rng):
    """``(p, q, r, s)`` from two HWE marginals with MAF uniform on [0.05, 0.2]."""
    a = hwe_genotype_probs(rng.uniform(*MAF_RANGE))
    b = hwe_genotype_probs(rng.uniform(*MAF_RANGE))
    return float(a[0]), float(a[1]), float(b[0]), float(b[1])


def sample_power_model(maf, h, beta, n, rng, sigma2=POWER_SIGMA2):
    """Genotypes under HWE and ``y = h beta 1{X=1} + beta 1{X=2} + N(0, sigma2)``."""
    x = sample_hwe_genotypes(maf, n, rng)
    mean = np.where(x == 1, h * beta, np.where(x == 2, beta, 0.0))
    y = mean + rng.normal(0.0, np.sqrt(sigma2), size=x.size)
    return x, y


def max_decaying_eps(I, J):
    """Largest admissible perturbation of the decaying-marginals table."""
    a = (1 - 2.0**-I) * (1 - 2.0**-J)
    return min(1.0 / (8 * a), 1 - 1.0 / (4 * a))


def decaying_marginals(I, J, eps=0.0):
    """``I x J`` table with geometric margins and a four-cell ``+-eps`` perturbation."""
    if I < 2 or J < 2:
        raise ValueError("need I, J >= 2")
    if not 0.0 <= eps <= max_decaying_eps(I, J) + 1e-15:
        raise ValueError(f"eps must lie in [0, {max_decaying_eps(I, J)}]")
    i = np.arange(1, I + 1)[:, None]
    j = np.arange(1, J + 1)[None, :]
    t = 2.0 ** -(i + j) / ((1 - 2.0**-I) * (1 - 2.0**-J))
    t[0, 0] += eps
    t[1, 1] += eps
    t[0, 1] -= eps
    t[1, 0] -= eps
    return t


def sample_table(probs, n, rng):
    """Multinomial counts with the shape of ``probs``."""
    probs = np.asarray(probs, dtype=float)
    return rng.multinomial(int(n), probs.ravel() / probs.sum()).reshape(probs.shape)


def _model_2s(s):
    return np.array([4 * (1 - s), 4 * (1 - s), 1 + 8 * s]) / 9


def _model_2k(k):
    return np.array([(1 - k) / 4, (1 + k) / 2, (1 - k) / 4])


def _model_3s(s):
    return np.array(
        [0.49 * (1 - s), (1 + 15 * s) / 16, 0.0025 * (1 - s), 0.35 * (1 - s), 0.07 * (1 - s), 0.025 * (1 - s)]
    )


def _model_3k(k):
    return np.array([2 * k + 1] * 3 + [2 - 2 * k] * 3) / 9


#: model -> (row builder, parameter range, null allele frequencies)
HWE_DEPARTURE_MODELS = {
    "2S": (_model_2s, (0.0, 1.0), (2 / 3, 1 / 3)),
    "2K": (_model_2k, (-1.0, 1.0), (0.5, 0.5)),
    "3S": (_model_3s, (0.0, 1.0), (0.70, 0.25, 0.05)),
    "3K": (_model_3k, (0.0, 1.0), (1 / 3, 1 / 3, 1 / 3)),
}


def hwe_departure(model, param):
    """Genotype probabilities of a Hardy-Weinberg departure model.

    Parameter 0 gives the HWE law at the model's allele frequencies (see
    :func:`hwe_null`). Triallelic orders follow :func:`categorical.hwe_expected`.
    """
    try:
        fn, (lo, hi), _ = HWE_DEPARTURE_MODELS[str(model).upper()]
    except KeyError:
        raise ValueError(f"unknown model {model!r}; choose from 2S, 2K, 3S, 3K") from None
    if not lo <= param <= hi:
        raise ValueError(f"parameter for {model} must lie in [{lo}, {hi}]")
    return fn(float(param))


def hwe_null(model):
    """HWE probabilities at the allele frequencies of a departure model."""
    return hwe_expected(HWE_DEPARTURE_MODELS[str(model).upper()][2])
