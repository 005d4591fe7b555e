"""Numerical primitives shared by the test procedures.

Tail probabilities of the chi-square and F distributions are computed from
the regularized incomplete gamma and beta functions, evaluated with a power
series / Lentz continued fraction. Randomness is always drawn from explicitly
seeded ``numpy.random.Generator`` objects; replicate ``b`` of a procedure
gets its own child stream so results never depend on evaluation order.
"""

from __future__ import annotations

import math

import numpy as np

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 100_000


def _check_x(x):
    if not math.isfinite(x):
        raise ValueError(f"argument must be finite, got {x}")


def _gamma_series(a, x):
    # lower regularized P(a, x), valid (fast) for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a, x):
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gammainc_lower(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    _check_x(x)
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a, x):
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("shape parameter must be positive")
    _check_x(x)
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def _beta_cf(a, b, x):
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return h


def betainc(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("beta parameters must be positive")
    _check_x(x)
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _check_dof(dof):
    if dof < 1 or int(dof) != dof:
        raise ValueError(f"degrees of freedom must be a positive integer, got {dof}")


def chi_square_sf(x, dof):
    """Upper tail P(chi2_dof >= x)."""
    _check_x(x)
    _check_dof(dof)
    return min(1.0, max(0.0, gammainc_upper(dof / 2.0, max(x, 0.0) / 2.0)))


def chi_square_cdf(x, dof):
    _check_x(x)
    _check_dof(dof)
    return min(1.0, max(0.0, gammainc_lower(dof / 2.0, max(x, 0.0) / 2.0)))


def chi_square_sf_array(x, dof):
    """Element-wise :func:`chi_square_sf`; entries with ``dof < 1`` map to 1.

    A non-positive dof is what a degenerate (single row or column)
    contingency table produces, and such a table carries no evidence.
    """
    x = np.asarray(x, dtype=float)
    dof = np.broadcast_to(np.asarray(dof), x.shape)
    out = np.ones(x.shape)
    for idx in np.ndindex(x.shape):
        if dof[idx] >= 1:
            out[idx] = chi_square_sf(float(x[idx]), int(dof[idx]))
    return out


def f_sf(x, d1, d2):
    """Upper tail of the F(d1, d2) distribution."""
    _check_dof(d1)
    _check_dof(d2)
    if math.isinf(x) and x > 0:
        return 0.0
    _check_x(x)
    if x <= 0:
        return 1.0
    return min(1.0, max(0.0, betainc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))))


def child_rng(seed, *key):
    """Independent generator for the stream ``key`` under ``seed``.

    ``child_rng(seed, 1, b)`` is the stream of permutation replicate ``b``.
    The same (seed, key) always yields the same stream.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(seed, *key):
    """A 63-bit integer seed derived from (seed, key)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _check_probs(probs):
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probability vector must be 1-d and nonempty")
    if np.any(p < 0):
        raise ValueError("probability vector has a negative entry")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"probability vector sums to {p.sum()!r}, not 1")
    return p


def sample_categorical(probs, size, rng):
    """Draw ``size`` category codes by inverse CDF over cumulative sums."""
    p = _check_probs(probs)
    cdf = np.cumsum(p)
    u = rng.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    # rounding can leave cdf[-1] a hair below 1; send overflow to the last
    # category with positive mass
    last = int(np.flatnonzero(p > 0)[-1])
    return np.minimum(idx, last).astype(np.int64)


def multinomial_row(probs, rng):
    """A single categorical draw: index ``i`` with probability ``probs[i]``."""
    return int(sample_categorical(probs, 1, rng)[0])
