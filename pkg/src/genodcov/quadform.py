"""Null distributions of weighted sums of chi-square variables.

The central object is ``Q = sum_j w_j * chi2(h_j)`` with independent
components. Positive weights of moderate spread use Ruben's mixture
representation, which gives a rigorous truncation bound; wide spreads and
mixed signs fall back to Imhof's inversion formula. The ratio of a
two-weight form to an independent chi-square (the generalized F) is handled
both through the Appell F1 closed form and through a one-dimensional polar
integral that stays accurate deep in the tail.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special, stats

__all__ = [
    "ConvergenceError",
    "QuadFormWeights",
    "GenFParams",
    "truncate_eigenvalues",
    "wchisq_cdf",
    "wchisq_sf",
    "chi2_2w_sf",
    "appell_f1",
    "genf_cdf",
    "genf_sf",
    "pvalue_bounds",
    "pvalue_bounds_batch",
    "tn_tail",
]

#: Relative size below which eigenvalues are treated as exact zeros.
EIGEN_RTOL = 1e-12

#: Ruben terms allowed before switching to Imhof's formula.
RUBEN_MAX_TERMS = 5000


class ConvergenceError(ArithmeticError):
    """Raised when a series or integral misses its tolerance.

    The achieved error bound is kept in ``error_bound``.
    """

    def __init__(self, message, error_bound=float("nan")):
        super().__init__(message)
        self.error_bound = error_bound


@dataclass(frozen=True)
class QuadFormWeights:
    """Weights of ``sum_j w_j * chi2(h_j)``, stored in descending order."""

    weights: tuple
    dof: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        h = np.asarray(self.dof, dtype=int).ravel()
        if w.shape != h.shape:
            raise ValueError("weights and degrees of freedom differ in length")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(h < 1):
            raise ValueError("degrees of freedom must be positive integers")
        order = np.argsort(-w, kind="stable")
        object.__setattr__(self, "weights", tuple(float(v) for v in w[order]))
        object.__setattr__(self, "dof", tuple(int(v) for v in h[order]))

    @classmethod
    def of(cls, weights, dof=None):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        h = np.ones(w.shape, dtype=int) if dof is None else np.atleast_1d(dof)
        return cls(tuple(w), tuple(h))

    def truncated(self, rtol=EIGEN_RTOL):
        """Drop weights whose size is below ``rtol`` times the total weight."""
        w = np.asarray(self.weights)
        h = np.asarray(self.dof)
        scale = np.sum(np.abs(w) * h)
        keep = np.abs(w) > rtol * scale
        return QuadFormWeights(tuple(w[keep]), tuple(h[keep]))

    def __len__(self):
        return len(self.weights)


def truncate_eigenvalues(values, rtol=EIGEN_RTOL):
    """Zero out eigenvalues below ``rtol`` times the trace and clip negatives."""
    v = np.asarray(values, dtype=float).copy()
    tr = np.sum(np.abs(v))
    v[np.abs(v) <= rtol * tr] = 0.0
    return v


def _as_weights(w):
    if isinstance(w, QuadFormWeights):
        return w
    return QuadFormWeights.of(w)


def _ruben(lam, h, x, tol, max_terms=RUBEN_MAX_TERMS):
    """Ruben mixture ``sum_k a_k chi2(m + 2k)`` at ``x / beta`` for positive weights.

    Returns ``(cdf, sf)`` or ``None`` when the required number of terms
    exceeds ``max_terms``.
    """
    beta = lam.min()
    rho = 1.0 - beta / lam
    m = float(h.sum())
    a0 = math.exp(0.5 * float(np.sum(h * np.log(beta / lam))))
    if a0 == 0.0:
        return None
    rmax = rho.max()
    if rmax > 0 and max_terms * -math.log(rmax) < -math.log(tol):
        return None
    # the mixture weights are a0 times the power-series coefficients of
    # prod_j (1 - rho_j z)^(-h_j / 2), each factor a negative binomial series
    K = int(math.ceil(math.log(1e-3 * tol * (1.0 - rmax)) / math.log(rmax))) + 32 if rmax > 0 else 0
    if K > 2 * max_terms:
        return None
    K = min(K, max_terms)
    while True:
        a = np.zeros(K + 1)
        a[0] = a0
        kk = np.arange(1, K + 1)
        for r, hj in zip(rho, h):
            if r == 0.0 or K == 0:
                continue
            c = np.concatenate([[1.0], np.cumprod((0.5 * hj + kk - 1) / kk * r)])
            a = np.convolve(a, c)[: K + 1]
        rem = 1.0 - float(a.sum())
        if rem <= 1e-3 * tol or (rem <= tol and a[-1] * rmax / (1.0 - rmax) <= 1e-3 * tol):
            break
        if K == max_terms:
            return None
        K = min(max_terms, 2 * K)
    shapes = m / 2.0 + np.arange(a.size)
    y = x / beta
    cdf = float(np.dot(a, special.gammainc(shapes, y / 2.0)))
    sf = float(np.dot(a, special.gammaincc(shapes, y / 2.0)))
    return min(max(cdf, 0.0), 1.0), min(max(sf, 0.0), 1.0)


def _imhof_sf(lam, h, x, tol):
    """``P(Q > x)`` by Imhof's inversion integral.

    The range is split at ``1 / max|w|``; the outer part is written as a
    Fourier integral so its slowly decaying oscillation is integrated by QAWF.
    """
    lam = np.asarray(lam, dtype=float)
    h = np.asarray(h, dtype=float)
    omega = 0.5 * x
    tol = max(tol, 1e-13)

    def amp(u):
        return 0.5 * np.sum(h * np.arctan(lam * u))

    def logrho(u):
        return 0.25 * np.sum(h * np.log1p((lam * u) ** 2))

    def full(u):
        if u == 0.0:
            return 0.5 * np.sum(h * lam) - omega
        return math.sin(amp(u) - omega * u) / (u * math.exp(logrho(u)))

    u0 = 1.0 / np.max(np.abs(lam))
    errs = []
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            inner, e1 = integrate.quad(full, 0.0, u0, epsabs=tol / 8, epsrel=1e-13, limit=200)
            errs.append(e1)
            if abs(omega) < 1e-12:
                outer, e2 = integrate.quad(full, u0, np.inf, epsabs=tol / 8, epsrel=1e-13, limit=500)
                errs.append(e2)
            else:
                w = abs(omega)
                sgn = 1.0 if omega > 0 else -1.0

                def f_cos(u):
                    return math.sin(amp(u)) / (u * math.exp(logrho(u)))

                def f_sin(u):
                    return -sgn * math.cos(amp(u)) / (u * math.exp(logrho(u)))

                o1, e2 = integrate.quad(f_cos, u0, np.inf, weight="cos", wvar=w, epsabs=tol / 8, limlst=200)
                o2, e3 = integrate.quad(f_sin, u0, np.inf, weight="sin", wvar=w, epsabs=tol / 8, limlst=200)
                outer = o1 + o2
                errs += [e2, e3]
        except integrate.IntegrationWarning as exc:
            raise ConvergenceError(f"Imhof integration failed: {exc}") from None
    err = sum(errs) / math.pi
    if err > 10 * tol:
        raise ConvergenceError("Imhof integration missed its tolerance", err)
    return min(max(0.5 + (inner + outer) / math.pi, 0.0), 1.0)


def _wchisq(w, x, tol):
    """Return ``(cdf, sf)`` of the weighted chi-square sum at ``x``."""
    w = _as_weights(w).truncated()
    lam = np.asarray(w.weights)
    h = np.asarray(w.dof)
    x = float(x)
    if lam.size == 0:
        return (1.0, 0.0) if x >= 0 else (0.0, 1.0)
    if np.all(lam > 0):
        if x <= 0:
            return 0.0, 1.0
        if lam.size == 1:
            y = x / lam[0]
            return float(special.gammainc(h[0] / 2.0, y / 2.0)), float(special.gammaincc(h[0] / 2.0, y / 2.0))
        if lam.size == 2 and h[0] == h[1] == 1:
            sf = chi2_2w_sf(lam[0], lam[1], x)
            return 1.0 - sf, sf
        if lam.size == 4 and np.all(h == 1):
            sf = _chi2_4w_sf(lam, x)
            if sf is not None:
                return 1.0 - sf, sf
        out = _ruben(lam, h, x, tol)
        if out is not None:
            return out
        sf = _imhof_sf(lam, h, x, tol)
        return 1.0 - sf, sf
    if np.all(lam < 0):
        cdf, sf = _wchisq(QuadFormWeights(tuple(-lam), tuple(h)), -x, tol)
        return sf, cdf
    sf = _imhof_sf(lam, h, x, tol)
    return 1.0 - sf, sf


def wchisq_cdf(w, x, tol=1e-10):
    """``P(sum_j w_j Q_j^2 <= x)`` for independent chi-square components.

    Parameters
    ----------
    w : QuadFormWeights or array_like
        Weights; a plain array means one degree of freedom per weight.
    x : float
        Evaluation point.
    tol : float, optional
        Absolute error target.

    Returns
    -------
    float
        Probability clamped to [0, 1].

    Raises
    ------
    ConvergenceError
        If the numerical integration cannot meet ``tol``.
    """
    return _wchisq(w, x, tol)[0]


def wchisq_sf(w, x, tol=1e-10):
    """``P(sum_j w_j Q_j^2 > x)``; see :func:`wchisq_cdf`."""
    return _wchisq(w, x, tol)[1]


_GL64 = np.polynomial.legendre.leggauss(64)
_GL128 = np.polynomial.legendre.leggauss(128)


def _polar_rule(rule):
    t, wt = rule
    phi = (t + 1.0) * (np.pi / 4.0)
    return phi, wt * (np.pi / 4.0) * (2.0 / np.pi)


_POLAR64 = _polar_rule(_GL64)
_POLAR128 = _polar_rule(_GL128)


def _chi2_2w_reduced(w1, w2, x):
    """Polar integral of the two-weight tail with ``exp(-x / (2 w1))`` factored out."""
    kappa = 0.5 * x * (w1 - w2) / w1

    def f(p):
        s = math.sin(p) ** 2
        return math.exp(-kappa * s / (w1 * (1.0 - s) + w2 * s))

    e = math.sqrt(w2 / w1)
    points = [np.pi / 2 - e * f for f in (16.0, 4.0, 1.0) if e * f < 0.5] or None
    return integrate.quad(f, 0.0, np.pi / 2, epsabs=0.0, epsrel=1e-13, limit=200, points=points)[0] * 2.0 / np.pi


def _chi2_2w_adaptive(w1, w2, x):
    """Two-weight tail for ``w1 > w2 > 0`` by adaptive quadrature.

    Near 1 the deficit ``1 - exp(-x / (2 g))`` lives within ``sqrt(w2 / w1)``
    and ``sqrt(x / w1)`` of ``pi/2``, so it is integrated on a log scale there.
    """
    scales = [math.sqrt(w2 / w1), math.sqrt(x / w1)]

    def deficit(v):
        t = math.exp(v)
        g = w1 * math.sin(t) ** 2 + w2 * math.cos(t) ** 2
        return -math.expm1(-0.5 * x / g) * t

    vmax = math.log(np.pi / 2)
    vpts = sorted({math.log(w) for w in scales if math.log(w) < vmax})
    comp = integrate.quad(deficit, min(vpts, default=vmax) - 40.0, vmax, epsabs=1e-18, epsrel=1e-11, limit=400,
                          points=vpts or None)[0] * 2.0 / np.pi
    if comp < 0.5:
        return 1.0 - comp
    return math.exp(-0.5 * x / w1) * _chi2_2w_reduced(w1, w2, x)


def chi2_2w_sf(w1, w2, x):
    """Vectorized ``P(w1 Q1^2 + w2 Q2^2 > x)`` for nonnegative weights.

    Uses the polar form ``(2/pi) int_0^{pi/2} exp(-x / (2 g(phi))) dphi`` with
    ``g = w1 cos^2 + w2 sin^2``, evaluated by Gauss-Legendre rules of two
    orders; points where the rules disagree are recomputed adaptively.
    """
    w1, w2, x = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (w1, w2, x)))
    hi = np.maximum(w1, w2)
    lo = np.minimum(w1, w2)
    out = np.ones(hi.shape)
    pos = (x > 0) & (hi > 0)
    one = pos & (lo <= 0)
    out[one] = special.gammaincc(0.5, 0.5 * x[one] / hi[one])
    two = pos & (lo > 0)
    if np.any(two):
        a, b, xx = hi[two], lo[two], x[two]
        kappa = 0.5 * xx * (a - b) / a

        def rule(nodes):
            phi, wt = nodes
            s = np.sin(phi) ** 2
            g = a[:, None] * (1.0 - s) + b[:, None] * s
            return np.exp(-kappa[:, None] * s / g) @ wt

        r64 = rule(_POLAR64)
        r128 = rule(_POLAR128)
        val = np.exp(-0.5 * xx / a) * r128
        bad = (np.abs(r64 - r128) > 1e-13 * r128) | (b < 1e-4 * a)
        for i in np.flatnonzero(bad):
            val[i] = _chi2_2w_adaptive(a[i], b[i], xx[i]) if b[i] < a[i] else val[i]
        out[two] = val
    return np.clip(out, 0.0, 1.0) if out.ndim else float(np.clip(out, 0.0, 1.0))


def _chi2_4w_sf(lam, x):
    """``P(sum_j lam_j Q_j^2 > x)`` for four positive weights, or ``None``.

    Pairing the weights as ``(i, j)`` and ``(k, l)`` and writing each pair in
    polar form gives the double integral over ``[0, pi/2]^2`` of
    ``(B exp(-x/2B) - A exp(-x/2A)) / (B - A)`` with
    ``A = lam_i cos^2 a + lam_j sin^2 a`` and ``B = lam_k cos^2 b + lam_l sin^2 b``.
    The pairing with the smallest within-pair ratio keeps the integrand
    smooth. Returns ``None`` when product Gauss-Legendre rules of two orders
    disagree.
    """
    w = np.sort(lam)[::-1]
    pairings = (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2)))
    (i, j), (k, l) = min(pairings, key=lambda pr: max(w[pr[0][0]] / w[pr[0][1]], w[pr[1][0]] / w[pr[1][1]]))

    def rule(nodes):
        phi, wt = nodes
        c2, s2 = np.cos(phi) ** 2, np.sin(phi) ** 2
        a = (w[i] * c2 + w[j] * s2)[:, None]
        b = (w[k] * c2 + w[l] * s2)[None, :]
        big, small = np.maximum(a, b), np.minimum(a, b)
        d = 0.5 * x * (big - small) / (big * small)
        # (1 - exp(-d)) / d, equal to 1 in the limit d -> 0
        ratio = np.where(d > 0, -np.expm1(-d) / np.where(d > 0, d, 1.0), 1.0)
        f = np.exp(0.5 * x / w[0] - 0.5 * x / big) * (1.0 + 0.5 * x / big * ratio)
        return wt @ f @ wt

    r64 = rule(_POLAR64)
    r128 = rule(_POLAR128)
    if not abs(r64 - r128) <= 1e-11 * r128:
        return None
    return min(math.exp(-0.5 * x / w[0]) * r128, 1.0)


def _appell_terms(a, b1, b2, c, x, y, rtol, max_terms):
    """Sign and log-magnitude grid summation of the Appell F1 double series."""
    if c <= 0 and float(c).is_integer():
        raise ValueError("c must not be a non-positive integer")
    if abs(x) >= 1 or abs(y) >= 1:
        raise ValueError("Appell F1 series requires |x| < 1 and |y| < 1")
    ld = np.longdouble
    a, b1, b2, c, x, y = (ld(v) for v in (a, b1, b2, c, x, y))
    rows, cols = 32, 32
    with np.errstate(divide="ignore", invalid="ignore"):
        while True:
            m = np.arange(rows, dtype=ld)[:, None]
            n = np.arange(1, cols, dtype=ld)[None, :]
            mr = np.arange(1, rows, dtype=ld)
            rr = (a + mr - 1) * (b1 + mr - 1) * x / ((c + mr - 1) * mr)
            start_log = np.concatenate([[ld(0)], np.cumsum(np.log(np.abs(rr)))])
            start_sgn = np.concatenate([[ld(1)], np.cumprod(np.sign(rr))])
            cr = (a + m + n - 1) * (b2 + n - 1) * y / ((c + m + n - 1) * n)
            logs = np.concatenate([start_log[:, None], start_log[:, None] + np.cumsum(np.log(np.abs(cr)), axis=1)], axis=1)
            sgns = np.concatenate([start_sgn[:, None], start_sgn[:, None] * np.cumprod(np.sign(cr), axis=1)], axis=1)
            finite = np.isfinite(logs)
            top = np.max(logs[finite]) if np.any(finite) else ld(0)
            mags = np.where(finite, np.exp(logs - top), ld(0))
            total = np.sum(sgns * mags)
            scale = max(abs(total), np.max(mags) * ld(1e-30))
            last_ratio = np.abs(cr[:, -1])
            col_ok = np.all((last_ratio < 1) | (mags[:, -1] == 0))
            col_tail = np.sum(mags[:, -1] * np.where(last_ratio < 1, last_ratio / (1 - np.minimum(last_ratio, 0.999999)), np.inf)) if col_ok else np.inf
            row_mag = np.sum(mags, axis=1)
            if row_mag[-1] == 0:
                row_tail = ld(0)
            else:
                q = row_mag[-1] / row_mag[-2] if row_mag[-2] > 0 else ld(np.inf)
                row_tail = row_mag[-1] * q / (1 - q) if q < 1 else ld(np.inf)
            grow_cols = not col_tail <= rtol * scale
            grow_rows = not row_tail <= rtol * scale
            if not grow_cols and not grow_rows:
                return float(np.sign(total)), float(top + np.log(abs(total))) if total != 0 else -np.inf
            if rows * cols * (1 + grow_rows) * (1 + grow_cols) > max_terms:
                bound = float((col_tail + row_tail) / scale)
                raise ConvergenceError("Appell F1 series did not converge within the term cap", bound)
            rows *= 1 + grow_rows
            cols *= 1 + grow_cols


def appell_f1(a, b1, b2, c, x, y, rtol=1e-15, max_terms=10**6):
    """First Appell hypergeometric series ``F1(a; b1, b2; c; x, y)``.

    The double series ``sum (a)_{m+n} (b1)_m (b2)_n / ((c)_{m+n} m! n!) x^m y^n``
    is summed on a growing grid in extended precision, term magnitudes held in
    the log domain; growth stops when the geometric tail estimate drops below
    ``rtol`` relative to the sum.

    Raises
    ------
    ValueError
        Outside the unit polydisc.
    ConvergenceError
        When more than ``max_terms`` terms would be required.
    """
    sign, logmag = _appell_terms(a, b1, b2, c, x, y, rtol, max_terms)
    return sign * math.exp(logmag) if sign else 0.0


@dataclass(frozen=True)
class GenFParams:
    """Parameters of the generalized F law: ``alpha1 >= alpha2 >= 0``, ``nu >= 1``."""

    alpha1: float
    alpha2: float
    nu: int

    def __post_init__(self):
        if not self.alpha1 > 0 or not self.alpha2 >= 0:
            raise ValueError("need alpha1 > 0 and alpha2 >= 0")
        if self.alpha1 < self.alpha2:
            raise ValueError("need alpha1 >= alpha2")
        if int(self.nu) != self.nu or self.nu < 1:
            raise ValueError("nu must be a positive integer")


def _ratio_sf(a1, a2, nu, x):
    """``P((a1 Q1^2 + a2 Q2^2) / (chi2_nu / nu) > x)`` with ``a1 > 0``.

    ``a2`` may be zero or negative. Returns the natural log of the probability.
    """
    if x <= 0:
        return 0.0
    c = x / nu
    if a2 > 0:
        def logf(p):
            return -0.5 * nu * math.log1p(c / (a1 * math.cos(p) ** 2 + a2 * math.sin(p) ** 2))

        peak = logf(0.0)
        # the integrand decays like a Gaussian in p with this width
        width = math.sqrt(2.0 * a1 * (a1 + c) / (nu * c * (a1 - a2))) if a1 > a2 else np.inf
        # and for a2 << a1 it dips next to pi/2 over these widths
        edges = (math.sqrt(a2 / a1), math.sqrt(nu * c / a1))
    else:
        r = -a2 / a1

        def logf(t):
            s = math.sin(t) ** 2
            if a1 * s == 0.0:
                return -np.inf
            return -0.5 * math.log1p(r / s) - 0.5 * nu * math.log1p(c / (a1 * s))

        peak = logf(np.pi / 2)
        # the two factors rise from 0 over these widths
        widths = (math.sqrt(r), math.sqrt(nu * c / a1))
        edges = ()
    if a2 > 0:
        widths = (width,)
    points = sorted({w * f for w in widths for f in (1.0, 4.0, 16.0) if 0 < w * f < 0.5})
    points += sorted({np.pi / 2 - e * f for e in edges for f in (16.0, 4.0, 1.0) if 0 < e * f < 0.5})
    kw = dict(epsabs=0.0, epsrel=1e-12, limit=200, points=points or None)
    val = integrate.quad(lambda p: math.exp(logf(p) - peak), 0.0, np.pi / 2, **kw)[0]
    if val <= 0:
        return -np.inf
    out = peak + math.log(val * 2.0 / np.pi)
    if out > -0.7:
        # near 1 the deficit is small and sits within a few widths of one end;
        # integrate it on a log scale measured from that end
        scales = [w for w in (edges if a2 > 0 else widths) if w > 0]
        if a2 > 0:
            def deficit(v):
                return -math.expm1(logf(np.pi / 2 - math.exp(v))) * math.exp(v)
        else:
            def deficit(v):
                return -math.expm1(logf(math.exp(v))) * math.exp(v)
        vmax = math.log(np.pi / 2)
        vmin = math.log(min(scales)) - 40.0
        vpts = sorted({math.log(w) for w in scales if vmin < math.log(w) < vmax})
        comp = integrate.quad(deficit, vmin, vmax, epsabs=1e-18, epsrel=1e-11, limit=400, points=vpts or None)[0]
        out = math.log1p(-min(comp * 2.0 / np.pi, 1.0))
    return out


def genf_cdf(p, x):
    """Generalized F distribution function through the Appell F1 closed form.

    With ``D = x + nu * alpha2 / 2`` the value is
    ``(nu alpha2 / (2 D))^(nu/2 + 1) x / sqrt(alpha1 alpha2)
    F1(nu/2 + 1; 1/2, 1; 2; (1 - alpha2/alpha1) x / D, x / D)``.

    This equals ``P(((alpha1 Q1^2 + alpha2 Q2^2) / 2) / (chi2_nu / nu) <= x)``:
    the weights enter halved. For ``alpha2 = 0`` the limit
    ``F(1, nu)`` distribution function at ``2 x / alpha1`` is returned.
    """
    if x < 0:
        raise ValueError("x must be nonnegative")
    if x == 0:
        return 0.0
    a1, a2, nu = float(p.alpha1), float(p.alpha2), int(p.nu)
    if a2 == 0.0:
        return float(stats.f.cdf(2.0 * x / a1, 1, nu))
    d = x + 0.5 * nu * a2
    big_x = (1.0 - a2 / a1) * x / d
    big_y = x / d
    sign, logf1 = _appell_terms(nu / 2.0 + 1.0, 0.5, 1.0, 2.0, big_x, big_y, 1e-15, 10**6)
    logg = (nu / 2.0 + 1.0) * math.log(0.5 * nu * a2 / d) + math.log(x) - 0.5 * math.log(a1 * a2) + logf1
    return min(max(sign * math.exp(logg), 0.0), 1.0)


def genf_sf(p, x):
    """Upper tail of the law in :func:`genf_cdf`, via the polar integral."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    return min(1.0, math.exp(_ratio_sf(float(p.alpha1) / 2.0, float(p.alpha2) / 2.0, int(p.nu), x)))


def _tail_dof(n, n_covariates):
    nu = n - 3 - n_covariates
    if nu < 1:
        raise ValueError(f"need n > {n_covariates + 3} for {n_covariates} covariates")
    return nu


def tn_tail(l1, l2, k, n, n_covariates=0, method="integral"):
    """Finite-sample probability ``P(T >= 0)``.

    ``T = (l1 - c) Q1^2 + (l2 - c) Q2^2 - c chi2_nu`` with ``c = k / n`` and
    ``nu = n - 3 - n_covariates``.

    Parameters
    ----------
    l1, l2 : float
        Eigenvalues with ``l1 >= l2 >= 0``.
    k : float
        Studentized statistic ``n V^2 / sigma^2``.
    n : int
        Sample size.
    n_covariates : int, optional
        Number of covariates besides the intercept.
    method : {'integral', 'appell'}
        ``'integral'`` evaluates a polar (or Craig-type, when ``l2 <= c``)
        integral of the exact tail; ``'appell'`` goes through the generalized
        F closed form, which loses relative accuracy once the tail is below
        about 1e-15.
    """
    l1, l2 = max(l1, l2), min(l1, l2)
    nu = _tail_dof(n, n_covariates)
    if l1 <= 0 or k <= 0:
        return 1.0
    c = k / n
    a1, a2 = l1 - c, l2 - c
    if a1 <= 0:
        return 0.0
    if method == "appell":
        if a2 > 0:
            return min(max(1.0 - genf_cdf(GenFParams(2 * a1, 2 * a2, nu), c * nu), 0.0), 1.0)
        method = "integral"
    if method != "integral":
        raise ValueError(f"unknown method {method!r}")
    return min(math.exp(_ratio_sf(a1, a2, nu, c * nu)), 1.0)


def _f_sf(x, d1, d2):
    """``F(d1, d2)`` survival function, accurate near 1 as well as in the tail."""
    x, d1, d2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, d1, d2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        cdf = special.betainc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))
        tail = special.betainc(0.5 * d2, 0.5 * d1, d2 / (d1 * x + d2))
    out = np.where(cdf < 0.5, 1.0 - cdf, tail)
    return np.where(x <= 0, 1.0, out)


def pvalue_bounds_batch(l1, l2, k, n, n_covariates=0):
    """Vectorized lower and upper bounds ``(p_lo, p_hi)`` on :func:`tn_tail`.

    When ``l2 > k/n`` the lower bound is the largest of a two-weight
    chi-square tail, an ``F(1, nu)`` tail and an ``F(2, nu)`` tail at the
    geometric mean of the shifted eigenvalues; the upper bound is five times
    an ``F(1, nu + 1)`` tail at the mean. Otherwise the bounds are the
    ``F(1, nu + 1)`` and ``F(1, nu)`` tails.
    """
    l1, l2, k, n, q = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (l1, l2, k, n, n_covariates)))
    hi_l = np.maximum(l1, l2)
    lo_l = np.minimum(l1, l2)
    nu = n - 3 - q
    if np.any(nu < 1):
        raise ValueError("sample size too small for the covariate count")
    p_lo = np.ones(hi_l.shape)
    p_hi = np.ones(hi_l.shape)
    c = k / n
    live = (hi_l > 0) & (k > 0)
    dead = live & (hi_l - c <= 0)
    p_lo[dead] = 0.0
    p_hi[dead] = 0.0
    live &= ~dead
    with np.errstate(divide="ignore", invalid="ignore"):
        upper = live & (lo_l - c > 0)
        lower = live & ~upper
        if np.any(upper):
            a1 = hi_l[upper] - c[upper]
            a2 = lo_l[upper] - c[upper]
            kk, nn, vv = k[upper], n[upper], nu[upper]
            s_chi = chi2_2w_sf(a1, a2, c[upper] * vv)
            s_f1 = _f_sf(kk * vv / (hi_l[upper] * nn - kk), 1, vv)
            s_f2 = _f_sf(kk * vv / np.sqrt((hi_l[upper] * nn - kk) * (lo_l[upper] * nn - kk)), 2, vv)
            p_lo[upper] = np.maximum(np.maximum(s_chi, s_f1), s_f2)
            s5 = _f_sf(kk * (vv + 1) / ((hi_l[upper] + lo_l[upper]) * nn - 2 * kk), 1, vv + 1)
            p_hi[upper] = np.minimum(1.0, 5.0 * s5)
        if np.any(lower):
            kk, nn, vv = k[lower], n[lower], nu[lower]
            denom = hi_l[lower] * nn - kk
            p_lo[lower] = _f_sf(kk * (vv + 1) / denom, 1, vv + 1)
            p_hi[lower] = _f_sf(kk * vv / denom, 1, vv)
    return np.clip(p_lo, 0.0, 1.0), np.clip(p_hi, 0.0, 1.0)


def pvalue_bounds(l1, l2, k, n, n_covariates=0):
    """Scalar form of :func:`pvalue_bounds_batch`; returns ``(p_lo, p_hi)``."""
    lo, hi = pvalue_bounds_batch(l1, l2, k, n, n_covariates)
    return float(lo), float(hi)
