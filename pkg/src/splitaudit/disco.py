"""Distance components (DISCO) K-sample test.

The total pairwise-distance dispersion of the pooled sample splits exactly
into a between-sample part and a within-sample part, ``T = S + W``; the test
statistic is the ratio ``(S / (K - 1)) / (W / (N - K))`` calibrated by
permuting rows across groups.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .dataset import DataError, GroupedSample, NumericGroups, as_numeric, one_hot
from .multiplicity import PermutationResult, label_matrix

POOLED_LIMIT = 8192
_BLOCK_ROWS = 2048
_PERM_CHUNK = 64


class DiscoConsistencyError(ArithmeticError):
    """A distance that must be non-negative came out clearly negative."""


@dataclass(frozen=True)
class DiscoComponents:
    between: float
    within: float
    total: float
    statistic: float
    index_alpha: float
    group_sizes: tuple


def _check_index(index_alpha):
    if not 0 < index_alpha <= 2:
        raise ValueError(f"distance index must lie in (0, 2], got {index_alpha}")


def _pow_dist(a, b, index_alpha):
    if index_alpha == 2:
        return cdist(a, b, "sqeuclidean")
    d = cdist(a, b, "euclidean")
    return d if index_alpha == 1 else d ** index_alpha


def _pair_inputs(a, b, index_alpha):
    _check_index(index_alpha)
    a, b = as_numeric(a), as_numeric(b)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DataError("empty sample")
    return a, b


def g_alpha(a, b, index_alpha=1.0):
    """Mean of ``||a_i - b_j||**index_alpha`` over all pairs."""
    a, b = _pair_inputs(a, b, index_alpha)
    return float(_pow_dist(a, b, index_alpha).mean())


def _d_from_g(n1, n2, gab, gaa, gbb):
    inner = 2.0 * gab - gaa - gbb
    if inner < 0:
        scale = 2.0 * gab + gaa + gbb
        if inner < -1e-12 * max(1.0, scale):
            raise DiscoConsistencyError(f"negative energy distance {inner!r}")
        inner = 0.0
    return n1 * n2 / (n1 + n2) * inner


def d_alpha(a, b, index_alpha=1.0):
    """Two-sample energy distance scaled by ``n1 n2 / (n1 + n2)``."""
    a, b = _pair_inputs(a, b, index_alpha)
    return _d_from_g(a.shape[0], b.shape[0], g_alpha(a, b, index_alpha),
                     g_alpha(a, a, index_alpha), g_alpha(b, b, index_alpha))


def embed(g, encoding="onehot"):
    """Numeric pooled matrix and labels for any supported grouped input.

    Categorical samples are one-hot embedded by default so that rows
    differing in ``d`` columns sit ``sqrt(2 d)`` apart; ``encoding="codes"``
    uses the raw category codes as coordinates instead.
    """
    if isinstance(g, GroupedSample):
        if encoding == "onehot":
            x = one_hot(g.pooled, g.col_cardinalities)
        elif encoding == "codes":
            x = np.asarray(g.pooled, dtype=float)
        else:
            raise ValueError(f"unknown encoding {encoding!r}")
        return x, np.asarray(g.labels), g.sizes
    if not isinstance(g, NumericGroups):
        g = NumericGroups(tuple(g))
    return np.asarray(g.pooled), np.asarray(g.labels), g.sizes


def _block_sums(x, labels, k, index_alpha, block_rows=None):
    """``K x K`` matrix of summed powered distances between group pairs."""
    n = x.shape[0]
    block_rows = block_rows or (n if n <= POOLED_LIMIT else _BLOCK_ROWS)
    ind = np.zeros((n, k))
    ind[np.arange(n), labels] = 1.0
    out = np.zeros((k, k))
    for start in range(0, n, block_rows):
        m = _pow_dist(x[start:start + block_rows], x, index_alpha)
        out += ind[start:start + block_rows].T @ (m @ ind)
    return out


def _components_from_sums(sums, sizes, index_alpha):
    sizes = np.asarray(sizes, dtype=float)
    k = sizes.size
    n = sizes.sum()
    g = sums / np.outer(sizes, sizes)
    between = 0.0
    for j in range(k):
        for l in range(j + 1, k):
            d = _d_from_g(sizes[j], sizes[l], g[j, l], g[j, j], g[l, l])
            between += (sizes[j] + sizes[l]) / (2 * n) * d
    within = float(np.sum(sizes / 2 * np.diag(g)))
    total = float(n / 2 * sums.sum() / n ** 2)
    return DiscoComponents(between, within, total, _ratio(between, within, k, n),
                           index_alpha, tuple(int(s) for s in sizes))


def _ratio(between, within, k, n):
    if within > 0:
        return (between / (k - 1)) / (within / (n - k))
    return np.inf if between > 0 else 0.0


def disco_components(g, index_alpha=1.0, encoding="onehot", block_rows=None):
    """Between, within and total dispersion plus the DISCO F-type ratio.

    ``g`` may be a :class:`GroupedSample`, a :class:`NumericGroups` or a
    sequence of 2-d arrays (one per group).
    """
    _check_index(index_alpha)
    x, labels, sizes = embed(g, encoding)
    if len(sizes) < 2:
        raise DataError("need at least two groups")
    sums = _block_sums(x, labels, len(sizes), index_alpha, block_rows)
    return _components_from_sums(sums, sizes, index_alpha)


def _within_batch(x, label_mat, sizes, index_alpha, dist=None, block_rows=None):
    """Within-sample dispersion ``W`` for every row of ``label_mat``."""
    n = x.shape[0]
    k = len(sizes)
    sizes = np.asarray(sizes, dtype=float)
    out = np.empty(label_mat.shape[0])
    block_rows = block_rows or (n if n <= POOLED_LIMIT else _BLOCK_ROWS)
    for c0 in range(0, label_mat.shape[0], _PERM_CHUNK):
        chunk = label_mat[c0:c0 + _PERM_CHUNK]
        nb = chunk.shape[0]
        ind = np.zeros((n, nb * k))
        ind[np.arange(n)[:, None], chunk.T + k * np.arange(nb)] = 1.0
        diag = np.zeros(nb * k)
        for start in range(0, n, block_rows):
            stop = start + block_rows
            m = dist[start:stop] if dist is not None else _pow_dist(x[start:stop], x, index_alpha)
            diag += ((m @ ind) * ind[start:stop]).sum(axis=0)
        out[c0:c0 + nb] = (diag.reshape(nb, k) / (2 * sizes)).sum(axis=1)
    return out


def disco_test(g, index_alpha=1.0, b_permutations=200, level_alpha=0.05, seed=0,
               encoding="onehot", block_rows=None):
    """Permutation DISCO test.

    The p-value is ``(1 + #{D_b >= D_0}) / (B + 1)`` and the test rejects
    when it is at most ``level_alpha``. Permutation ``b`` shuffles rows with
    the same child stream as every other resampling procedure here.
    """
    _check_index(index_alpha)
    if int(b_permutations) < 1:
        raise ValueError("need at least one permutation replicate")
    if not 0 < level_alpha < 1:
        raise ValueError("level_alpha must lie in (0, 1)")
    x, labels, sizes = embed(g, encoding)
    k, n = len(sizes), x.shape[0]
    if k < 2:
        raise DataError("need at least two groups")
    sums = _block_sums(x, labels, k, index_alpha, block_rows)
    comps = _components_from_sums(sums, sizes, index_alpha)
    total = comps.total
    dist = None
    if n <= POOLED_LIMIT and block_rows is None:
        dist = _pow_dist(x, x, index_alpha)
    labs = np.vstack([labels[None, :], label_matrix(sizes, seed, int(b_permutations))])
    within = _within_batch(x, labs, sizes, index_alpha, dist, block_rows)
    # both observed and resampled statistics use T - W so identical
    # partitions give bit-identical values
    between = np.maximum(total - within, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        stats = np.where(within > 0, (between / (k - 1)) / (within / (n - k)),
                         np.where(between > 0, np.inf, 0.0))
    d0, db = float(stats[0]), stats[1:]
    p = (1 + int(np.sum(db >= d0))) / (db.size + 1)
    rej = (0,) if p <= level_alpha else ()
    return PermutationResult(np.array([p]), np.empty(0), level_alpha, rej, db.size, level_alpha,
                             statistic=d0, resampled_statistics=db, p_value=p)
