"""Permutation-based multiplicity control and classical p-value adjustments.

The three resampling procedures share one shape: compute the observed
p-value(s), recompute them on ``b`` datasets whose rows were shuffled across
groups, take the ``floor(level * (b + 1))``-th smallest resampled (minimum)
p-value as the threshold ``t`` and reject every hypothesis with ``p < t``.

``stat_fn`` callables receive ``(sample, rng)``; ``rng`` is the child
stream of that replicate, already advanced past the row shuffle, so a
randomized statistic (e.g. one with a train/test split) stays a pure
function of (data, seed).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import DataError, pool_and_split, permuted_labels
from .statfun import child_rng, f_sf

PERM_STREAM = 1


class ReplicateError(RuntimeError):
    """A statistic failed on one permutation replicate."""

    def __init__(self, replicate, exc):
        super().__init__(f"replicate {replicate}: {exc}")
        self.replicate = replicate


@dataclass
class PermutationResult:
    """Outcome of a resampling-calibrated test.

    ``original`` holds the observed p-value(s), ``resampled_min`` the ``b``
    resampled (minimum) p-values and ``rejections`` the indices ``i`` with
    ``original[i] < threshold``. Statistic-based procedures (DISCO) also
    fill ``statistic`` / ``resampled_statistics`` / ``p_value``.
    """

    original: np.ndarray
    resampled_min: np.ndarray
    threshold: float
    rejections: tuple
    b_used: int
    level_alpha: float
    statistic: float | None = None
    resampled_statistics: np.ndarray | None = None
    p_value: float | None = None
    warnings: list = field(default_factory=list)

    @property
    def reject(self):
        return len(self.rejections) > 0


def order_threshold(values, level_alpha):
    """``floor(level * (B + 1))``-th smallest of ``values``; ``-inf`` when that rank is 0."""
    values = np.asarray(values, dtype=float)
    if not 0 < level_alpha < 1:
        raise ValueError("level_alpha must lie in (0, 1)")
    k = int(math.floor(level_alpha * (values.size + 1) + 1e-9))
    if k == 0:
        return -math.inf
    return float(np.sort(values)[k - 1])


def threshold_result(original, resampled_min, level_alpha, **extra):
    original = np.atleast_1d(np.asarray(original, dtype=float))
    resampled_min = np.asarray(resampled_min, dtype=float)
    t = order_threshold(resampled_min, level_alpha)
    rej = tuple(int(i) for i in np.flatnonzero(original < t))
    return PermutationResult(original, resampled_min, t, rej, resampled_min.size,
                             level_alpha, **extra)


def replicate_labels(sizes, seed, b):
    """Group labels of the pooled rows in permutation replicate ``b`` (b >= 1)."""
    return permuted_labels(sizes, child_rng(seed, PERM_STREAM, b))


def label_matrix(sizes, seed, b):
    """``(b, N)`` matrix whose row ``i`` is :func:`replicate_labels` for ``i + 1``."""
    return np.stack([replicate_labels(sizes, seed, i) for i in range(1, b + 1)])


def _run_replicates(stat_fn, g, b, seed, threads):
    def one(i):
        rng = child_rng(seed, PERM_STREAM, i)
        try:
            sample = g if i == 0 else pool_and_split(g, g.sizes, rng)
            return np.atleast_1d(np.asarray(stat_fn(sample, rng), dtype=float))
        except Exception as exc:  # noqa: BLE001 - re-raised with the index
            raise ReplicateError(i, exc) from exc

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            out = list(pool.map(one, range(b + 1)))
    else:
        out = [one(i) for i in range(b + 1)]
    width = out[0].size
    for i, v in enumerate(out):
        if v.size != width:
            raise ReplicateError(i, f"statistic returned {v.size} values, expected {width}")
    return out[0], np.stack(out[1:]) if b else np.empty((0, width))


def _check_b(b):
    if int(b) < 1:
        raise ValueError("need at least one permutation replicate")


def resample_single(stat_fn, g, b, level_alpha=0.05, seed=0, threads=1):
    """Permutation calibration of one p-value (single hypothesis)."""
    _check_b(b)
    p0, pmat = _run_replicates(stat_fn, g, int(b), seed, threads)
    if p0.size != 1:
        raise ValueError("stat_fn must return a single p-value")
    return threshold_result(p0, pmat[:, 0], level_alpha)


def resample_minp(stat_fn, g, b, level_alpha=0.05, seed=0, threads=1):
    """Min-p calibration of a vector of p-values (controls FWER)."""
    _check_b(b)
    p0, pmat = _run_replicates(stat_fn, g, int(b), seed, threads)
    return threshold_result(p0, pmat.min(axis=1), level_alpha)


def resample_after_selection(stat_fn, select_rule, g, b, level_alpha=0.05, seed=0, threads=1):
    """Min-p calibration restricted to a data-driven subset of hypotheses.

    ``select_rule`` maps a p-vector to the selected indices and is applied
    separately to the observed vector and to every replicate. A replicate
    with an empty selection contributes a minimum of 1.
    """
    _check_b(b)
    p0, pmat = _run_replicates(stat_fn, g, int(b), seed, threads)
    pmin = np.ones(pmat.shape[0])
    for i, row in enumerate(pmat):
        sel = np.asarray(list(select_rule(row)), dtype=int)
        if sel.size:
            pmin[i] = row[sel].min()
    res = threshold_result(p0, pmin, level_alpha)
    selected = set(int(i) for i in select_rule(p0))
    res.rejections = tuple(i for i in res.rejections if i in selected)
    return res


def top_s(s):
    """Selection rule keeping the ``s`` smallest p-values (stable on ties)."""
    def rule(p):
        return np.argsort(np.asarray(p), kind="stable")[:s]
    return rule


def _check_p(p):
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    return p


def bonferroni_adjust(pvalues, level_alpha=0.05):
    p = _check_p(pvalues)
    return tuple(int(i) for i in np.flatnonzero(p <= level_alpha / max(p.size, 1)))


def holm_adjust(pvalues, level_alpha=0.05):
    """Holm step-down; returns the indices of rejected hypotheses."""
    p = _check_p(pvalues)
    m = p.size
    order = np.argsort(p, kind="stable")
    rejected = []
    for rank, i in enumerate(order):
        if p[i] <= level_alpha / (m - rank):
            rejected.append(int(i))
        else:
            break
    return tuple(sorted(rejected))


def _step_up(p, crit):
    m = p.size
    order = np.argsort(p, kind="stable")
    ok = np.flatnonzero(p[order] <= crit)
    if ok.size == 0:
        return ()
    return tuple(sorted(int(i) for i in order[:ok[-1] + 1]))


def bh_adjust(pvalues, q=0.05):
    p = _check_p(pvalues)
    m = p.size
    return _step_up(p, q * np.arange(1, m + 1) / m)


def by_adjust(pvalues, q=0.05):
    """Benjamini-Yekutieli step-up (valid under arbitrary dependence)."""
    p = _check_p(pvalues)
    m = p.size
    c_m = np.sum(1.0 / np.arange(1, m + 1))
    return _step_up(p, q * np.arange(1, m + 1) / (m * c_m))


def _f_stats(x, label_mat, sizes):
    """One-way ANOVA F for every column of ``x`` under every label row.

    Returns ``(B, m)`` arrays of SSB and SSW.
    """
    k = len(sizes)
    n = x.shape[0]
    xc = x - x.mean(axis=0)
    onehot = np.zeros((label_mat.shape[0], k, n))
    onehot[np.arange(label_mat.shape[0])[:, None], label_mat, np.arange(n)] = 1.0
    sums = onehot @ xc                                  # (B, k, m)
    means = sums / np.asarray(sizes, dtype=float)[None, :, None]
    grand = xc.sum(axis=0) / n
    ssb = np.einsum("k,bkm->bm", np.asarray(sizes, dtype=float), (means - grand) ** 2)
    sq = onehot @ (xc ** 2)
    ssw = (sq - sums * means).sum(axis=1)
    return ssb, np.maximum(ssw, 0.0)


def _f_pvalues(ssb, ssw, k, n):
    d1, d2 = k - 1, n - k
    out = np.ones(ssb.shape)
    for idx in np.ndindex(ssb.shape):
        b, w = ssb[idx], ssw[idx]
        if b <= 1e-12 * max(w, 1.0):
            continue
        out[idx] = 0.0 if w == 0 else f_sf((b / d1) / (w / d2), d1, d2)
    return out


def marginal_f_tests(g, labels=None):
    """Per-column one-way ANOVA (codes as numeric responses): ``(F, p)`` arrays."""
    x = np.asarray(g.pooled, dtype=float)
    labels = g.labels if labels is None else labels
    k, n = g.k, g.n_total
    if n <= k:
        raise DataError("no residual degrees of freedom (N <= K)")
    ssb, ssw = _f_stats(x, np.asarray(labels)[None, :], g.sizes)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(ssb[0] <= 1e-12 * np.maximum(ssw[0], 1.0), 0.0,
                     (ssb[0] / (k - 1)) / (ssw[0] / (n - k)))
    return f, _f_pvalues(ssb, ssw, k, n)[0]


def baseline_marginal_test(g, adjust="minp", level_alpha=0.05, b=200, seed=0, q=None):
    """Column-by-column F-tests, with an optional multiplicity adjustment.

    ``adjust`` is one of ``none`` (reject any p < level), ``holm``, ``by``
    (q defaults to ``level_alpha``) or ``minp`` (permutation min-p).
    """
    if g.n_total <= g.k:
        raise DataError("no residual degrees of freedom (N <= K)")
    _, p0 = marginal_f_tests(g)
    if adjust == "none":
        rej = tuple(int(i) for i in np.flatnonzero(p0 < level_alpha))
        return PermutationResult(p0, np.empty(0), level_alpha, rej, 0, level_alpha)
    if adjust == "holm":
        return PermutationResult(p0, np.empty(0), math.nan, holm_adjust(p0, level_alpha), 0,
                                 level_alpha)
    if adjust == "by":
        return PermutationResult(p0, np.empty(0), math.nan,
                                 by_adjust(p0, level_alpha if q is None else q), 0, level_alpha)
    if adjust != "minp":
        raise ValueError(f"unknown adjustment {adjust!r}")
    _check_b(b)
    x = np.asarray(g.pooled, dtype=float)
    labels = label_matrix(g.sizes, seed, int(b))
    pmin = np.empty(int(b))
    for start in range(0, int(b), 128):
        ssb, ssw = _f_stats(x, labels[start:start + 128], g.sizes)
        pmin[start:start + 128] = _f_pvalues(ssb, ssw, g.k, g.n_total).min(axis=1)
    return threshold_result(p0, pmin, level_alpha)
