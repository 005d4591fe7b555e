import math
from dataclasses import replace

import numpy as np
import pytest

from splitaudit.dataset import DataError, NumericGroups
from splitaudit.simgen import (MARGINAL_PROBS, REALWORLD_COLUMNS, ScenarioSpec, bucketize,
                               bucketize_groups, dimension_sweep, gen_realworld, gen_variance_pair,
                               generate, power_study, rearrange_block, run_method)


def cramers_v(a, b):
    t = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(t, (a, b), 1)
    t = t[t.sum(axis=1) > 0][:, t.sum(axis=0) > 0]
    e = np.outer(t.sum(axis=1), t.sum(axis=0)) / t.sum()
    chi2 = ((t - e) ** 2 / e).sum()
    return math.sqrt(chi2 / (t.sum() * (min(t.shape) - 1)))


@pytest.mark.parametrize("scenario", ["marginal", "interaction", "combined", "realworld"])
def test_generators_are_reproducible(scenario):
    spec = ScenarioSpec(scenario, "medium", 4, seed=17)
    a, b = generate(spec), generate(spec)
    assert np.array_equal(a.pooled, b.pooled)
    assert not np.array_equal(a.pooled, generate(replace(spec, seed=18)).pooled)


def test_shape_and_names():
    g = generate(ScenarioSpec("marginal", "weak", 3, n_rows=50, n_cols=7, n_groups=3))
    assert g.sizes == (50, 50, 50) and g.n_cols == 7
    assert g.col_cardinalities == (4,) * 7


@pytest.mark.parametrize("spec", [
    ScenarioSpec("bogus"), ScenarioSpec(signal="huge"), ScenarioSpec(n_rows=0),
    ScenarioSpec(n_hetero_cols=11), ScenarioSpec("interaction", n_hetero_cols=1),
    ScenarioSpec(n_groups=1),
])
def test_invalid_specs(spec):
    with pytest.raises(DataError):
        generate(spec)


def test_strong_marginal_frequencies():
    g = generate(ScenarioSpec("marginal", "strong", 10, seed=1))
    freq0 = (g.groups[3].cells == 0).mean(axis=0)
    assert abs(freq0.mean() - 0.5) < 0.05
    assert np.all(np.abs(freq0 - 0.5) < 0.15)


def test_weak_marginal_large_sample():
    g = generate(ScenarioSpec("marginal", "weak", 1, n_rows=100_000, n_cols=1, n_groups=2, seed=2))
    freq = np.bincount(g.groups[1].cells[:, 0], minlength=4) / 100_000
    assert np.all(np.abs(freq - MARGINAL_PROBS["weak"]) < 0.005)


def test_rearrangement_keeps_column_counts():
    for seed in range(5):
        inter = generate(ScenarioSpec("interaction", "medium", 6, seed=seed))
        null = generate(ScenarioSpec("marginal", "strong", 0, seed=seed))
        for a, b in zip(inter.groups, null.groups):
            for j in range(10):
                assert np.array_equal(np.bincount(a.cells[:, j], minlength=4),
                                      np.bincount(b.cells[:, j], minlength=4))
        assert np.array_equal(inter.groups[0].cells, null.groups[0].cells)


def test_rearrange_block_direct(rng):
    mat = rng.integers(0, 4, (40, 3))
    out = rearrange_block(mat, 2, "strong", rng)
    assert np.array_equal(out[:, 2], mat[:, 2])
    assert np.array_equal(out[:, 0], np.sort(mat[:, 0]))


def test_interaction_strength_ordering():
    v = {}
    for level in ("weak", "strong"):
        v[level] = np.mean([cramers_v(*generate(ScenarioSpec("interaction", level, 10, seed=s))
                                      .groups[3].cells[:, :2].T) for s in range(30)])
    null = np.mean([cramers_v(*generate(ScenarioSpec("marginal", "strong", 0, seed=s))
                              .groups[3].cells[:, :2].T) for s in range(30)])
    assert v["strong"] > 2 * null
    assert null < v["weak"] < v["strong"]


def test_realworld_conditionals():
    a = gen_realworld("A", 20_000, 3)
    emp = a.cells[:, 4]
    freq = np.bincount(emp, minlength=3) / emp.size
    assert np.all(np.abs(freq - (0.3, 0.3, 0.4)) < 0.02)
    assert abs(np.mean(a.cells[emp == 0, 3] == 0) - 0.7) < 0.03
    assert np.all(a.cells[emp == 2, 5] != 3)
    b = gen_realworld("B", 20_000, 3)
    assert abs(np.mean(b.cells[:, 4] == 0) - 0.4) < 0.02
    assert a.col_names == REALWORLD_COLUMNS
    with pytest.raises(DataError):
        gen_realworld("C", 10, 0)


def test_realworld_area_browser_are_null():
    from splitaudit.propensity import pearson_chi_square
    from splitaudit.randchi import joint_table
    pv = []
    for s in range(200):
        g = generate(ScenarioSpec("realworld", n_rows=200, seed=s))
        pv.append(pearson_chi_square(joint_table(g, [0])).p_value)
    assert abs(np.mean(np.array(pv) < 0.05) - 0.05) < 0.05


@pytest.mark.parametrize("x, expected", [([0.49, 0.51], [0, 1]), ([-1.0, 0.0, 1.2], [0, 2, 4]),
                                         ([3.3, 3.3], [0, 0])])
def test_floor_buckets(x, expected):
    assert bucketize(x).tolist() == expected


def test_quantile_buckets(rng):
    x = rng.normal(size=1000)
    codes = bucketize(x, ("quantile", 4))
    assert np.all(np.abs(np.bincount(codes) - 250) <= 1)
    assert bucketize(np.ones(10), ("quantile", 4)).tolist() == [0] * 10
    with pytest.raises(DataError):
        bucketize([1.0, np.inf])
    with pytest.raises(ValueError):
        bucketize([1.0], "log")


def test_bucketize_groups():
    g = bucketize_groups(gen_variance_pair(50, 2.0, 1))
    assert g.sizes == (50, 50) and g.k == 2
    assert g.col_cardinalities[0] == g.pooled.max() + 1


def test_power_study_basics():
    spec = ScenarioSpec("marginal", "strong", 10)
    est = power_study("disco", spec, 5, master_seed=1, b=19)
    assert est.reps == 5 and len(est.per_rep) == 5
    assert 0 <= est.power <= 1 and est.rejections == sum(est.per_rep)
    again = power_study("disco", spec, 5, master_seed=1, b=19)
    assert again.per_rep == est.per_rep
    rc = power_study("randchi", spec, 3, master_seed=1, b=19)
    assert len(rc.flag_counts) == 10
    with pytest.raises(ValueError):
        power_study("disco", spec, 0)


def test_power_study_workers_match_serial():
    spec = ScenarioSpec("interaction", "medium", 6)
    a = power_study("randchi", spec, 4, master_seed=2, b=19)
    b = power_study("randchi", spec, 4, master_seed=2, workers=2, b=19)
    assert a.per_rep == b.per_rep and a.flag_counts == b.flag_counts


def test_power_study_callable_spec():
    est = power_study("randchi", lambda s: gen_variance_pair(100, 2.0, s), 3, b=19)
    assert est.config == {"b": 19}


def test_run_method_rejects_unknown():
    with pytest.raises(ValueError):
        run_method("magic", generate(ScenarioSpec()), 0)


def test_replicate_errors_carry_index():
    with pytest.raises(RuntimeError, match="replicate 0"):
        power_study("disco", lambda s: NumericGroups((np.zeros((1, 1)), np.zeros((1, 1)))), 1, b=0)


def test_dimension_sweep_runs():
    out = dimension_sweep(("disco", "propensity", "randchi"), dims=(10, 30, 50), reps=1, b=9)
    assert len(out) == 9
    assert [e.config["n_cols"] for e in out[::3]] == [10, 30, 50]
    assert [e.config["n_hetero_cols"] for e in out[::3]] == [2, 6, 10]
