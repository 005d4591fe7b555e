import math

import numpy as np
import pytest

from splitaudit.dataset import DataError, GroupedSample, NumericGroups
from splitaudit.propensity import (DegenerateTableError, LogitModel, PropensityStatistic,
                                   fit_multinomial_logit, logit_objective, pearson_batch,
                                   pearson_chi_square, predict_labels, propensity_test,
                                   stratified_split)


def test_pearson_example():
    r = pearson_chi_square([[10, 20], [20, 10]])
    assert r.statistic == pytest.approx(20 / 3, abs=1e-12)
    assert r.dof == 1
    assert r.p_value == pytest.approx(0.0098, abs=1e-4)


def test_pearson_prunes_empty_lines():
    full = pearson_chi_square([[10, 0, 20], [20, 0, 10], [0, 0, 0]])
    assert full.dof == 1
    assert full.statistic == pytest.approx(20 / 3)


@pytest.mark.parametrize("table", [[[5, 0], [7, 0]], [[0, 0], [0, 0]], [[3, 4]]])
def test_pearson_degenerate(table):
    with pytest.raises(DegenerateTableError):
        pearson_chi_square(table)


def naive_pearson(t):
    t = np.asarray(t, dtype=float)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    n = t.sum()
    stat = 0.0
    for i in range(t.shape[0]):
        for j in range(t.shape[1]):
            e = t[i].sum() * t[:, j].sum() / n
            stat += (t[i, j] - e) ** 2 / e
    return stat, (t.shape[0] - 1) * (t.shape[1] - 1)


def test_batch_matches_single(rng):
    tabs = rng.integers(0, 6, (50, 3, 4))
    tabs[3, :, 1] = 0
    tabs[4, 1:] = 0
    stat, dof = pearson_batch(tabs)
    for i, t in enumerate(tabs):
        if dof[i] == 0:
            with pytest.raises(DegenerateTableError):
                pearson_chi_square(t)
            continue
        s, d = naive_pearson(t)
        assert stat[i] == pytest.approx(s, rel=1e-12) and dof[i] == d


def test_gradient_matches_finite_differences(rng):
    x = rng.normal(size=(20, 4))
    xd = np.hstack([np.ones((20, 1)), x])
    y = rng.integers(0, 3, 20)
    w = rng.normal(size=(5, 2))
    _, grad, _ = logit_objective(w, xd, y, 0.3)
    h = 1e-6
    num = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        e = np.zeros_like(w)
        e[idx] = h
        num[idx] = (logit_objective(w + e, xd, y, 0.3)[0] - logit_objective(w - e, xd, y, 0.3)[0]) / (2 * h)
    assert np.allclose(grad, num, atol=1e-6)


def test_fit_converges_to_stationary_point(rng):
    x = rng.normal(size=(300, 3))
    y = (x[:, 0] + rng.normal(size=300) > 0).astype(int) + (x[:, 1] > 1)
    model = fit_multinomial_logit(x, y, l2_lambda=1e-3, tol=1e-12)
    assert model.converged
    xd = np.hstack([np.ones((300, 1)), x])
    _, grad, _ = logit_objective(model.weights[:, :-1], xd, y, 1e-3)
    assert np.abs(grad).max() < 1e-5
    trace = np.array(model.objective_trace)
    assert np.all(np.diff(trace) <= 1e-15)
    assert np.all(model.weights[:, -1] == 0)


def test_separable_data_is_reproduced():
    x = np.array([[-2.0], [-1.5], [-1.0], [1.0], [1.5], [2.0]])
    y = np.array([0, 0, 0, 1, 1, 1])
    model = fit_multinomial_logit(x, y, l2_lambda=1e-4)
    assert predict_labels(model, x).tolist() == y.tolist()


def test_ties_go_to_lowest_class():
    model = LogitModel(np.zeros((3, 4)), 4)
    assert predict_labels(model, np.ones((5, 2))).tolist() == [0] * 5
    with pytest.raises(DataError):
        predict_labels(model, np.ones((5, 3)))


def test_feature_shift_changes_only_intercept(rng):
    x = rng.normal(size=(200, 2))
    y = (x[:, 0] + 0.5 * rng.normal(size=200) > 0).astype(int)
    a = fit_multinomial_logit(x, y, l2_lambda=1e-3, tol=1e-14)
    b = fit_multinomial_logit(x + 5.0, y, l2_lambda=1e-3, tol=1e-14)
    assert np.allclose(a.weights[1:], b.weights[1:], atol=1e-6)
    assert np.array_equal(predict_labels(a, x), predict_labels(b, x + 5.0))


def test_null_model_has_chance_accuracy():
    r = np.random.default_rng(8)
    x = r.normal(size=(4000, 5))
    y = r.integers(0, 2, 4000)
    model = fit_multinomial_logit(x[:2000], y[:2000])
    acc = np.mean(predict_labels(model, x[2000:]) == y[2000:])
    assert abs(acc - 0.5) < 0.05


def test_fit_needs_two_classes():
    with pytest.raises(DataError):
        fit_multinomial_logit(np.zeros((4, 1)), np.zeros(4, dtype=int))


@pytest.mark.parametrize("sizes, c", [((10, 10), 0.8), ((7, 13, 9), 0.5), ((100, 100, 100, 100), 0.8)])
def test_stratified_split_counts(rng, sizes, c):
    mask = stratified_split(sizes, c, rng)
    bounds = np.cumsum((0,) + sizes)
    for j, n in enumerate(sizes):
        assert mask[bounds[j]:bounds[j + 1]].sum() == math.ceil(c * n)


def test_stratified_split_options(rng):
    assert stratified_split((3, 4), None, rng).all()
    with pytest.raises(ValueError):
        stratified_split((10, 10), 1.0, rng)
    with pytest.raises(DataError):
        stratified_split((3, 10), 0.8, rng)


def test_statistic_p_value_in_unit_interval(rng):
    g = GroupedSample.from_labels(rng.integers(0, 3, (80, 4)), np.repeat([0, 1], 40), (3, 3, 3, 3))
    p = PropensityStatistic()(g, np.random.default_rng(0))
    assert 0 <= p <= 1


def test_detects_mean_shift(rng):
    g = NumericGroups((rng.normal(size=(100, 2)), rng.normal(1.5, 1, size=(100, 2))))
    res = propensity_test(g, b_permutations=39, seed=1)
    assert res.reject
    assert not res.warnings


def test_propensity_deterministic_across_threads(rng):
    g = GroupedSample.from_labels(rng.integers(0, 4, (120, 3)), np.repeat([0, 1, 2], 40), (4, 4, 4))
    a = propensity_test(g, b_permutations=19, seed=4)
    b = propensity_test(g, b_permutations=19, seed=4, threads=4)
    assert np.array_equal(a.resampled_min, b.resampled_min)
    assert a.original[0] == b.original[0]


def test_not_converged_warning(rng):
    g = NumericGroups((rng.normal(size=(30, 2)), rng.normal(size=(30, 2))))
    res = propensity_test(g, b_permutations=5, max_iter=1, tol=0.0)
    assert res.warnings and res.warnings[0]["code"] == "FIT_NOT_CONVERGED"
