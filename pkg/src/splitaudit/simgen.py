"""Synthetic grouped data and Monte-Carlo power studies.

Scenarios:

* ``marginal``: the last group draws its first ``n_hetero_cols`` columns
  from a shifted category distribution.
* ``interaction``: the last group's first ``n_hetero_cols`` columns are
  sorted and rotated against each other (then partly reshuffled), which
  induces dependence between columns while keeping every column's counts.
* ``combined``: marginal shift followed by the interaction rearrangement
  on the same block.
* ``realworld``: two arms of an 8-column marketing profile in which only
  the employment distribution differs between arms; the other profile
  columns inherit the imbalance through their dependence on employment.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import CategoricalTable, DataError, GroupedSample, NumericGroups
from .disco import disco_test
from .multiplicity import baseline_marginal_test
from .propensity import propensity_test
from .randchi import RandChiConfig, randomized_chi_square_test
from .statfun import child_seed, sample_categorical

NULL_PROBS = (0.25, 0.25, 0.25, 0.25)
MARGINAL_PROBS = {
    "weak": (0.3, 0.25, 0.25, 0.2),
    "medium": (0.4, 0.25, 0.2, 0.15),
    "strong": (0.5, 0.2, 0.2, 0.1),
}
# fraction of each rotated column that is reshuffled afterwards
INTERACTION_SHUFFLE = {"strong": 0.0, "medium": 0.4, "weak": 0.8}
# combined level -> (marginal level, interaction level)
COMBINED_LEVELS = {
    "weak": ("weak", "weak"),
    "medium": ("weak", "medium"),
    "strong": ("medium", "medium"),
}
ROTATION_STEP = 10

REALWORLD_COLUMNS = ("Area of living", "Browser type", "Gender", "Age", "Employment status",
                     "Income", "Accumulated number of visits", "Converted before")
REALWORLD_CARDINALITIES = (3, 5, 2, 5, 3, 4, 4, 2)
SCENARIOS = ("marginal", "interaction", "combined", "realworld")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "marginal"
    signal: str = "strong"
    n_hetero_cols: int = 10
    n_rows: int = 100
    n_cols: int = 10
    n_groups: int = 4
    seed: int = 0

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"unknown scenario {self.scenario!r}")
        if self.signal not in MARGINAL_PROBS:
            raise DataError(f"unknown signal level {self.signal!r}")
        if self.n_rows < 1:
            raise DataError("n_rows must be positive")
        if self.scenario == "realworld":
            return self
        if self.n_groups < 2 or self.n_cols < 1:
            raise DataError("need at least two groups and one column")
        if not 0 <= self.n_hetero_cols <= self.n_cols:
            raise DataError("n_hetero_cols must lie in [0, n_cols]")
        if self.scenario in ("interaction", "combined") and self.n_hetero_cols == 1:
            raise DataError("interaction heterogeneity needs at least two columns")
        return self


def _draw_matrix(col_probs, n, rng):
    return np.column_stack([sample_categorical(p, n, rng) for p in col_probs])


def _null_groups(spec, rng):
    return [_draw_matrix([NULL_PROBS] * spec.n_cols, spec.n_rows, rng)
            for _ in range(spec.n_groups - 1)]


def _finish(spec, mats):
    card = (4,) * spec.n_cols
    names = tuple(f"g{j + 1}" for j in range(len(mats)))
    return GroupedSample(tuple(CategoricalTable(m, card) for m in mats), names)


def _last_group_marginal(spec, level, rng):
    probs = [MARGINAL_PROBS[level]] * spec.n_hetero_cols
    probs += [NULL_PROBS] * (spec.n_cols - spec.n_hetero_cols)
    return _draw_matrix(probs, spec.n_rows, rng)


def rearrange_block(mat, n_hetero, level, rng):
    """Sort, rotate column ``j`` left by ``10 j`` and reshuffle a fraction.

    Only rearranges entries within each column, so column counts are kept.
    """
    out = np.array(mat, copy=True)
    n = out.shape[0]
    frac = INTERACTION_SHUFFLE[level]
    for j in range(n_hetero):
        col = np.sort(out[:, j], kind="stable")
        shift = (ROTATION_STEP * j) % n
        col = np.concatenate([col[shift:], col[:shift]])
        n_shuffle = int(round(frac * n))
        if n_shuffle > 1:
            idx = rng.choice(n, size=n_shuffle, replace=False)
            col[idx] = col[rng.permutation(idx)]
        out[:, j] = col
    return out


def gen_scenario1(spec):
    """Marginal heterogeneity in the last group."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    mats = _null_groups(spec, rng)
    mats.append(_last_group_marginal(spec, spec.signal, rng))
    return _finish(spec, mats)


def gen_scenario2(spec):
    """Interaction heterogeneity in the last group (marginals untouched)."""
    spec.validate()
    if spec.n_hetero_cols < 2:
        raise DataError("interaction heterogeneity needs at least two columns")
    rng = np.random.default_rng(spec.seed)
    mats = _null_groups(spec, rng)
    last = _draw_matrix([NULL_PROBS] * spec.n_cols, spec.n_rows, rng)
    mats.append(rearrange_block(last, spec.n_hetero_cols, spec.signal, rng))
    return _finish(spec, mats)


def gen_combined(spec):
    spec.validate()
    marg, inter = COMBINED_LEVELS[spec.signal]
    rng = np.random.default_rng(spec.seed)
    mats = _null_groups(spec, rng)
    last = _last_group_marginal(spec, marg, rng)
    if spec.n_hetero_cols >= 2:
        last = rearrange_block(last, spec.n_hetero_cols, inter, rng)
    mats.append(last)
    return _finish(spec, mats)


def _conditional(codes, table, rng):
    out = np.empty(codes.shape[0], dtype=np.int64)
    for value, probs in table.items():
        idx = np.flatnonzero(codes == value)
        out[idx] = sample_categorical(probs, idx.size, rng)
    return out


def _branch(conditions, n, rng):
    """First matching (mask, probs) pair wins; the last entry is the fallback."""
    out = np.empty(n, dtype=np.int64)
    free = np.ones(n, dtype=bool)
    for mask, probs in conditions:
        idx = np.flatnonzero(free & mask)
        out[idx] = sample_categorical(probs, idx.size, rng)
        free[idx] = False
    return out


def gen_realworld(set_label, n_rows, seed):
    """One arm (``"A"`` or ``"B"``) of the 8-column marketing profile."""
    if set_label not in ("A", "B"):
        raise DataError("set_label must be 'A' or 'B'")
    rng = np.random.default_rng(seed)
    n = int(n_rows)
    area = sample_categorical((0.33, 0.33, 0.34), n, rng)
    browser = sample_categorical((0.3, 0.3, 0.2, 0.15, 0.05), n, rng)
    emp_probs = (0.3, 0.3, 0.4) if set_label == "A" else (0.4, 0.3, 0.3)
    emp = sample_categorical(emp_probs, n, rng)
    gender = _conditional(emp, {0: (0.5, 0.5), 1: (0.6, 0.4), 2: (0.3, 0.7)}, rng)
    age = _conditional(emp, {0: (0.7, 0.2, 0.05, 0.03, 0.02),
                             1: (0.1, 0.2, 0.3, 0.3, 0.1),
                             2: (0.1, 0.02, 0.04, 0.04, 0.8)}, rng)
    income = _conditional(emp, {0: (0.7, 0.2, 0.1, 0.0),
                                1: (0.2, 0.3, 0.3, 0.2),
                                2: (0.8, 0.15, 0.05, 0.0)}, rng)
    every = np.ones(n, dtype=bool)
    visits = _branch([
        ((income <= 2) & (age >= 3), (0.7, 0.15, 0.1, 0.05)),
        ((income <= 1) & (gender == 0) & (age <= 2), (0.5, 0.2, 0.2, 0.1)),
        ((income >= 3) & (gender == 1) & (age > 2), (0.15, 0.2, 0.25, 0.4)),
        (every, (0.25, 0.25, 0.25, 0.25)),
    ], n, rng)
    converted = _branch([
        ((income < 2) & (visits < 2), (0.9, 0.1)),
        ((income > 2) & (visits < 2), (0.85, 0.15)),
        ((income > 2) & (visits > 2), (0.65, 0.35)),
        ((income < 2) & (visits > 2), (0.8, 0.2)),
        # income == 2 or visits == 2 is not covered by any listed branch
        (every, (0.5, 0.5)),
    ], n, rng)
    cells = np.column_stack([area, browser, gender, age, emp, income, visits, converted])
    return CategoricalTable(cells, REALWORLD_CARDINALITIES, REALWORLD_COLUMNS)


def gen_realworld_pair(spec):
    a = gen_realworld("A", spec.n_rows, child_seed(spec.seed, 0))
    b = gen_realworld("B", spec.n_rows, child_seed(spec.seed, 1))
    return GroupedSample((a, b), ("A", "B"))


def generate(spec):
    """Dispatch on ``spec.scenario``."""
    spec.validate()
    if spec.scenario == "marginal":
        return gen_scenario1(spec)
    if spec.scenario == "interaction":
        return gen_scenario2(spec)
    if spec.scenario == "combined":
        return gen_combined(spec)
    return gen_realworld_pair(spec)


def bucketize(values, rule="floor_2x"):
    """Discretize reals: ``"floor_2x"`` (floor of 2x, shifted to start at 0)
    or ``("quantile", k)`` (cuts at empirical k-quantiles)."""
    x = np.asarray(values, dtype=float).ravel()
    if not np.all(np.isfinite(x)):
        raise DataError("cannot bucketize non-finite values")
    if rule == "floor_2x":
        raw = np.floor(2 * x).astype(np.int64)
        return raw - raw.min() if raw.size else raw
    if isinstance(rule, tuple) and rule[0] == "quantile":
        k = int(rule[1])
        cuts = np.quantile(x, np.linspace(0, 1, k + 1)[1:-1])
        raw = np.searchsorted(cuts, x, side="right")
        return np.unique(raw, return_inverse=True)[1].reshape(-1).astype(np.int64)
    raise ValueError(f"unknown bucketing rule {rule!r}")


def bucketize_groups(g, rule="floor_2x"):
    """Bucket every column of a :class:`NumericGroups` over the pooled values."""
    x = np.asarray(g.pooled)
    cells = np.column_stack([bucketize(x[:, j], rule) for j in range(x.shape[1])])
    return GroupedSample.from_labels(cells, g.labels, tuple(int(c) + 1 for c in cells.max(axis=0)),
                                     group_names=g.group_names)


def gen_variance_pair(n_rows, sd_ratio, seed):
    """Two 1-d normal samples with equal means and standard deviations 1 and ``sd_ratio``."""
    rng = np.random.default_rng(seed)
    return NumericGroups((rng.normal(0, 1, (n_rows, 1)), rng.normal(0, sd_ratio, (n_rows, 1))),
                         ("A", "B"))


# ---------------------------------------------------------------- power studies

METHODS = ("baseline", "baseline_holm", "disco", "propensity", "randchi", "randchi_holm")


def run_method(method, sample, seed, b=200, level_alpha=0.05, **opts):
    """Run one named test; returns ``(reject, column_flag_counts_or_None)``."""
    if method in ("baseline", "baseline_holm"):
        adjust = "holm" if method == "baseline_holm" else opts.get("adjust", "minp")
        res = baseline_marginal_test(sample, adjust, level_alpha, b, seed)
        return res.reject, None
    if method == "disco":
        res = disco_test(sample, opts.get("index_alpha", 1.0), b, level_alpha, seed,
                         opts.get("encoding", "onehot"))
        return res.reject, None
    if method == "propensity":
        res = propensity_test(sample, opts.get("train_frac", 0.8), opts.get("l2_lambda", 1e-4), b,
                              level_alpha, seed, opts.get("max_iter", 500))
        return res.reject, None
    if method in ("randchi", "randchi_holm"):
        if isinstance(sample, NumericGroups):
            sample = bucketize_groups(sample, opts.get("bucket_rule", "floor_2x"))
        cfg = RandChiConfig(opts.get("cols_per_draw"), opts.get("n_draws", 10), b, level_alpha, seed,
                            adjust="holm" if method == "randchi_holm" else opts.get("adjust", "minp"),
                            variable_size=opts.get("variable_size", False))
        out = randomized_chi_square_test(sample, cfg)
        return out.overall_reject, out.column_flag_counts
    raise ValueError(f"unknown method {method!r}")


@dataclass
class PowerEstimate:
    method: str
    reps: int
    rejections: int
    config: dict = field(default_factory=dict)
    per_rep: list = field(default_factory=list)
    flag_counts: list | None = None

    @property
    def power(self):
        return self.rejections / self.reps

    @property
    def se(self):
        p = self.power
        return math.sqrt(p * (1 - p) / self.reps)


def _rep(args):
    method, spec, master_seed, r, opts = args
    data_seed = child_seed(master_seed, r, 0)
    test_seed = child_seed(master_seed, r, 1)
    if callable(spec):
        sample = spec(data_seed)
    else:
        sample = generate(replace(spec, seed=data_seed))
    try:
        return run_method(method, sample, test_seed, **opts)
    except Exception as exc:
        raise RuntimeError(f"power_study replicate {r}: {exc}") from exc


def power_study(method, spec, reps, master_seed=0, workers=1, **opts):
    """Rejection rate of ``method`` over ``reps`` independently seeded datasets.

    ``spec`` is a :class:`ScenarioSpec` or a callable ``seed -> sample``.
    Replicate ``r`` uses data and test seeds derived from ``(master_seed, r)``
    only, so two studies with the same master seed are paired rep by rep.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    if isinstance(spec, ScenarioSpec):
        spec.validate()
    jobs = [(method, spec, master_seed, r, opts) for r in range(reps)]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_rep, jobs))
    else:
        results = [_rep(j) for j in jobs]
    flags = None
    if any(f is not None for _, f in results):
        flags = np.sum([f for _, f in results if f is not None], axis=0).tolist()
    config = asdict(spec) if isinstance(spec, ScenarioSpec) else {}
    config.update({k: v for k, v in opts.items() if not callable(v)})
    per_rep = [bool(r) for r, _ in results]
    return PowerEstimate(method, reps, sum(per_rep), config, per_rep, flags)


def dimension_sweep(methods, dims=(10, 20, 30, 40, 50), signal="weak", reps=100, master_seed=0,
                    n_rows=100, workers=1, **opts):
    """Combined-heterogeneity power as the dimension grows (1/5 of columns heterogeneous)."""
    out = []
    for m in dims:
        spec = ScenarioSpec("combined", signal, max(2, m // 5), n_rows, m, 4)
        for method in methods:
            out.append(power_study(method, spec, reps, master_seed, workers, **opts))
    return out
