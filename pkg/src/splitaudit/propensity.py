"""Propensity-score equivalence test.

A multinomial logistic model predicts group membership from the covariates
on a stratified training split; on the held-out rows the predicted x actual
label table is tested for association with Pearson's chi-square, and that
p-value is calibrated by permutation (fresh split and refit per replicate).
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .dataset import DataError, GroupedSample, NumericGroups, as_numeric, one_hot
from .multiplicity import resample_single
from .statfun import chi_square_sf

ChiSquareResult = namedtuple("ChiSquareResult", ["statistic", "dof", "p_value"])


class DegenerateTableError(ValueError):
    """Fewer than two nonempty rows or columns: the table carries no information."""


@dataclass
class ContingencyTable:
    counts: np.ndarray
    row_labels: tuple = ()
    col_labels: tuple = ()

    def __post_init__(self):
        self.counts = np.asarray(self.counts)
        if self.counts.ndim != 2 or np.any(self.counts < 0):
            raise ValueError("counts must be a non-negative 2-d matrix")


def pearson_chi_square(table):
    """Pearson statistic, dof and p-value after dropping empty rows/columns."""
    counts = table.counts if isinstance(table, ContingencyTable) else np.asarray(table)
    counts = np.asarray(counts, dtype=float)
    if counts.sum() <= 0:
        raise DegenerateTableError("empty table")
    counts = counts[counts.sum(axis=1) > 0][:, counts.sum(axis=0) > 0]
    r, c = counts.shape
    if r < 2 or c < 2:
        raise DegenerateTableError(f"table reduces to {r} x {c}")
    expected = np.outer(counts.sum(axis=1), counts.sum(axis=0)) / counts.sum()
    stat = float(((counts - expected) ** 2 / expected).sum())
    dof = (r - 1) * (c - 1)
    return ChiSquareResult(stat, dof, chi_square_sf(stat, dof))


def pearson_batch(counts):
    """Statistics and dofs for a stack of tables ``(B, R, C)``.

    Empty rows and columns are pruned per table; a table left with a single
    row or column gets dof 0 (and hence p = 1 downstream).
    """
    counts = np.asarray(counts, dtype=float)
    rows = counts.sum(axis=2)
    cols = counts.sum(axis=1)
    tot = rows.sum(axis=1)
    expected = rows[:, :, None] * cols[:, None, :] / np.where(tot > 0, tot, 1)[:, None, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(expected > 0, (counts - expected) ** 2 / expected, 0.0)
    stat = terms.sum(axis=(1, 2))
    dof = np.maximum((rows > 0).sum(axis=1) - 1, 0) * np.maximum((cols > 0).sum(axis=1) - 1, 0)
    return stat, dof


@dataclass
class LogitModel:
    """Multinomial logit; ``weights`` is ``(d + 1) x K`` with the intercept in row 0."""

    weights: np.ndarray
    classes: int
    n_iter: int = 0
    objective: float = math.nan
    l2_lambda: float = 0.0
    converged: bool = False
    objective_trace: list = field(default_factory=list)


def _design(x):
    return np.hstack([np.ones((x.shape[0], 1)), x])


def logit_objective(w_free, xd, y, l2_lambda):
    """Penalized mean negative log-likelihood and its gradient.

    ``w_free`` is ``(d + 1) x (K - 1)``; the last class is the reference with
    weights fixed at zero. The intercept row is not penalized.
    """
    n = xd.shape[0]
    scores = np.hstack([xd @ w_free, np.zeros((n, 1))])
    mx = scores.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(scores - mx).sum(axis=1))
    nll = (lse - scores[np.arange(n), y]).mean()
    pen = 0.5 * l2_lambda * np.sum(w_free[1:] ** 2)
    prob = np.exp(scores - lse[:, None])
    resid = prob[:, :-1].copy()
    free = y < w_free.shape[1]
    resid[np.flatnonzero(free), y[free]] -= 1.0
    grad = xd.T @ resid / n
    grad[1:] += l2_lambda * w_free[1:]
    return nll + pen, grad, prob


def _hessian(xd, prob, l2_lambda):
    n, p = xd.shape
    kf = prob.shape[1] - 1
    h = np.empty((p * kf, p * kf))
    for a in range(kf):
        for b in range(a, kf):
            w = prob[:, a] * ((a == b) - prob[:, b])
            blk = (xd * w[:, None]).T @ xd / n
            h[a * p:(a + 1) * p, b * p:(b + 1) * p] = blk
            if a != b:
                h[b * p:(b + 1) * p, a * p:(a + 1) * p] = blk
    reg = np.full(p, l2_lambda)
    reg[0] = 0.0
    h[np.diag_indices_from(h)] += np.tile(reg, kf)
    return h


def fit_multinomial_logit(x, labels, l2_lambda=1e-4, max_iter=500, tol=1e-8, n_classes=None):
    """Ridge-penalized multinomial logistic regression.

    Descent with Armijo backtracking along the Newton direction (steepest
    descent when the Newton system is singular or not a descent direction);
    stops once an iteration improves the objective by less than ``tol``.
    """
    x = as_numeric(x)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape[0] != x.shape[0]:
        raise DataError("label count does not match the row count")
    k = int(n_classes or y.max() + 1)
    if np.unique(y).size < 2:
        raise DataError("need at least two classes to fit")
    xd = _design(x)
    p = xd.shape[1]
    w = np.zeros((p, k - 1))
    obj, grad, prob = logit_objective(w, xd, y, l2_lambda)
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = grad.T.ravel()
        try:
            step = np.linalg.solve(_hessian(xd, prob, l2_lambda), g)
            if not np.all(np.isfinite(step)) or step @ g <= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            step = g
        direction = -step.reshape(k - 1, p).T
        slope = float(np.sum(grad * direction))
        t = 1.0
        while True:
            w_new = w + t * direction
            obj_new, grad_new, prob_new = logit_objective(w_new, xd, y, l2_lambda)
            if obj_new <= obj + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if obj_new > obj:
            converged = True
            break
        improvement = obj - obj_new
        w, obj, grad, prob = w_new, obj_new, grad_new, prob_new
        trace.append(obj)
        if improvement < tol:
            converged = True
            break
    weights = np.hstack([w, np.zeros((p, 1))])
    return LogitModel(weights, k, it, obj, l2_lambda, converged, trace)


def predict_labels(model, x):
    """Arg-max class per row; ties go to the lowest class index."""
    x = as_numeric(x)
    if x.shape[1] + 1 != model.weights.shape[0]:
        raise DataError(f"model expects {model.weights.shape[0] - 1} features, got {x.shape[1]}")
    return np.argmax(_design(x) @ model.weights, axis=1)


def stratified_split(sizes, train_frac, rng):
    """Boolean training mask over pooled rows: ``ceil(c * n_j)`` per group.

    ``train_frac=None`` means no hold-out: every row trains and is scored.
    """
    if train_frac is None:
        return np.ones(sum(sizes), dtype=bool)
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie in (0, 1)")
    masks = []
    for n in sizes:
        n_train = math.ceil(train_frac * n - 1e-9)
        if n_train < 2 or n - n_train < 2:
            raise DataError(f"group of {n} rows too small for a {train_frac} split")
        m = np.zeros(n, dtype=bool)
        m[rng.permutation(n)[:n_train]] = True
        masks.append(m)
    return np.concatenate(masks)


def design_matrix(g):
    if isinstance(g, GroupedSample):
        return one_hot(g.pooled, g.col_cardinalities)
    return np.asarray(g.pooled, dtype=float)


class PropensityStatistic:
    """``stat_fn`` for the resampling engine: split, fit, predict, chi-square p.

    Tracks how many fits hit ``max_iter`` so the caller can report it.
    """

    def __init__(self, train_frac=0.8, l2_lambda=1e-4, max_iter=500, tol=1e-8):
        self.train_frac = train_frac
        self.l2_lambda = l2_lambda
        self.max_iter = max_iter
        self.tol = tol
        self.not_converged = 0

    def __call__(self, g, rng):
        x = design_matrix(g)
        labels = np.asarray(g.labels)
        train = stratified_split(g.sizes, self.train_frac, rng)
        model = fit_multinomial_logit(x[train], labels[train], self.l2_lambda, self.max_iter,
                                      self.tol, n_classes=g.k)
        if not model.converged:
            self.not_converged += 1
        test = ~train if self.train_frac is not None else train
        pred = predict_labels(model, x[test])
        table = np.zeros((g.k, g.k))
        np.add.at(table, (pred, labels[test]), 1)
        try:
            return pearson_chi_square(table).p_value
        except DegenerateTableError:
            return 1.0


def propensity_test(g, train_frac=0.8, l2_lambda=1e-4, b_permutations=200, level_alpha=0.05,
                    seed=0, max_iter=500, tol=1e-8, threads=1):
    """Permutation-calibrated propensity-score test.

    ``g`` is a :class:`GroupedSample` (one-hot main effects) or a
    :class:`NumericGroups` (raw covariates).
    """
    if not isinstance(g, (GroupedSample, NumericGroups)):
        g = NumericGroups(tuple(g))
    stat = PropensityStatistic(train_frac, l2_lambda, max_iter, tol)
    res = resample_single(stat, g, b_permutations, level_alpha, seed, threads)
    if stat.not_converged:
        res.warnings.append({"code": "FIT_NOT_CONVERGED",
                             "message": f"{stat.not_converged} of {res.b_used + 1} fits "
                                        f"stopped at max_iter={max_iter}"})
    return res
