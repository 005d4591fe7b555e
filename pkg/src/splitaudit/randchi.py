"""Randomized chi-square test.

Each of ``D`` draws picks ``C`` columns at random and tests the K x l table
of group by joint category (the observed value tuples over those columns).
The ``D`` p-values are calibrated jointly by min-p resampling, holding the
drawn column subsets fixed across permutation replicates. Columns that
appear in rejected draws are flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import DataError
from .multiplicity import by_adjust, holm_adjust, replicate_labels, threshold_result
from .propensity import ContingencyTable, pearson_batch
from .statfun import chi_square_sf_array, child_rng

DRAW_STREAM = 2
_PERM_CHUNK = 256


def default_cols_per_draw(m, cardinalities=None, n_rows=None, min_cell=5):
    """Columns per draw: ``ceil(m / 5)``, capped so cells stay populated.

    With cardinalities and a row count, ``C`` is also capped so that the
    product of the ``C`` largest cardinalities leaves on average at least
    ``min_cell`` rows per joint category. Never below 1 or above ``m``.
    """
    c = max(1, math.ceil(m / 5 - 1e-9))
    if cardinalities is not None and n_rows is not None:
        card = sorted(cardinalities, reverse=True)
        cap = 1
        while cap < m and np.prod(card[:cap + 1], dtype=float) * min_cell <= n_rows:
            cap += 1
        c = min(c, cap)
    return int(min(max(c, 1), m))


@dataclass
class RandChiConfig:
    cols_per_draw: int | None = None
    n_draws: int = 10
    b_permutations: int = 200
    level_alpha: float = 0.05
    seed: int = 0
    min_cell_guideline: float = 5.0
    adjust: str = "minp"
    # draw a size uniformly from 1..C per draw instead of always C
    variable_size: bool = False

    def validate(self, m):
        c = self.cols_per_draw
        if c is not None and not 1 <= c <= m:
            raise ValueError(f"cols_per_draw must lie in [1, {m}], got {c}")
        if self.n_draws < 1:
            raise ValueError("n_draws must be at least 1")
        if self.adjust == "minp" and self.b_permutations < 1:
            raise ValueError("need at least one permutation replicate")
        if not 0 < self.level_alpha < 1:
            raise ValueError("level_alpha must lie in (0, 1)")
        if self.adjust not in ("minp", "holm", "by", "none"):
            raise ValueError(f"unknown adjustment {self.adjust!r}")


@dataclass
class RandChiOutcome:
    draw_pvalues: np.ndarray
    draw_columns: list
    threshold: float
    rejected_draws: tuple
    column_flag_counts: np.ndarray
    overall_reject: bool
    resampled_min: np.ndarray = field(default_factory=lambda: np.empty(0))
    draw_statistics: np.ndarray = field(default_factory=lambda: np.empty(0))
    draw_dofs: np.ndarray = field(default_factory=lambda: np.empty(0))
    draw_n_combinations: list = field(default_factory=list)
    cols_per_draw: int = 0
    warnings: list = field(default_factory=list)


def coverage_probability(m, c, d):
    """Probability that a given column is picked in at least one of ``d`` draws."""
    if not 1 <= c <= m:
        raise ValueError(f"need 1 <= C <= m, got C={c}, m={m}")
    if d < 1:
        raise ValueError("need at least one draw")
    return 1.0 - (1.0 - c / m) ** d


def _tuple_codes(cells, columns):
    """Joint-category code per row; codes follow lexicographic tuple order."""
    sub = np.asarray(cells)[:, list(columns)]
    tuples, codes = np.unique(sub, axis=0, return_inverse=True)
    return tuples, codes.reshape(-1)


def joint_table(g, columns):
    """K x l table of group by observed value tuple over ``columns``."""
    columns = [int(c) for c in columns]
    if not columns or any(not 0 <= c < g.n_cols for c in columns):
        raise DataError(f"invalid column selection {columns}")
    tuples, codes = _tuple_codes(g.pooled, columns)
    counts = np.zeros((g.k, len(tuples)), dtype=np.int64)
    np.add.at(counts, (np.asarray(g.labels), codes), 1)
    return ContingencyTable(counts, tuple(g.group_names), tuple(map(tuple, tuples.tolist())))


def _tables(codes, n_comb, label_mat, k):
    nb, n = label_mat.shape
    flat = (np.arange(nb)[:, None] * k + label_mat) * n_comb + codes[None, :]
    return np.bincount(flat.ravel(), minlength=nb * k * n_comb).reshape(nb, k, n_comb)


def draw_column_sets(m, c, d, seed, variable_size=False):
    """``d`` sorted column subsets of size ``c`` (or of a uniform size in ``1..c``)."""
    rng = child_rng(seed, DRAW_STREAM)
    out = []
    for _ in range(d):
        size = int(rng.integers(1, c + 1)) if variable_size else c
        out.append(tuple(sorted(int(j) for j in rng.choice(m, size=size, replace=False))))
    return out


def randomized_chi_square_test(g, cfg=None, **overrides):
    """Run the randomized chi-square test on a :class:`GroupedSample`."""
    cfg = cfg or RandChiConfig()
    if overrides:
        cfg = RandChiConfig(**{**cfg.__dict__, **overrides})
    m, k = g.n_cols, g.k
    cfg.validate(m)
    c = cfg.cols_per_draw or default_cols_per_draw(m, g.col_cardinalities, g.n_total,
                                                   cfg.min_cell_guideline)
    draws = draw_column_sets(m, c, cfg.n_draws, cfg.seed, cfg.variable_size)
    labels = np.asarray(g.labels)
    prepared = [_tuple_codes(g.pooled, cols) for cols in draws]
    warnings = []
    stats0, dof0 = np.empty(len(draws)), np.empty(len(draws), dtype=np.int64)
    for i, (tuples, codes) in enumerate(prepared):
        tab = _tables(codes, len(tuples), labels[None, :], k)
        s, dfree = pearson_batch(tab)
        stats0[i], dof0[i] = s[0], dfree[0]
        if dof0[i] == 0:
            warnings.append({"code": "DEGENERATE_DRAW", "draw": i,
                             "message": f"draw {i} columns {list(draws[i])} give a degenerate table; p set to 1"})
            continue
        t = tab[0]
        expected = np.outer(t.sum(axis=1), t.sum(axis=0)) / t.sum()
        low = int(np.sum((expected > 0) & (expected < cfg.min_cell_guideline)))
        if low:
            warnings.append({"code": "LOW_EXPECTED_COUNT", "draw": i,
                             "message": f"draw {i}: {low} of {expected.size} cells expect fewer than "
                                        f"{cfg.min_cell_guideline:g} rows"})
    p0 = chi_square_sf_array(stats0, dof0)

    if cfg.adjust == "minp":
        b = int(cfg.b_permutations)
        pmin = np.ones(b)
        for start in range(0, b, _PERM_CHUNK):
            nb = min(_PERM_CHUNK, b - start)
            labs = np.stack([replicate_labels(g.sizes, cfg.seed, i)
                             for i in range(start + 1, start + nb + 1)])
            for tuples, codes in prepared:
                s, dfree = pearson_batch(_tables(codes, len(tuples), labs, k))
                pmin[start:start + nb] = np.minimum(pmin[start:start + nb],
                                                    chi_square_sf_array(s, dfree))
        res = threshold_result(p0, pmin, cfg.level_alpha)
        threshold, rejected, resampled = res.threshold, res.rejections, pmin
    else:
        resampled = np.empty(0)
        threshold = math.nan
        if cfg.adjust == "holm":
            rejected = holm_adjust(p0, cfg.level_alpha)
        elif cfg.adjust == "by":
            rejected = by_adjust(p0, cfg.level_alpha)
        else:
            threshold = cfg.level_alpha
            rejected = tuple(int(i) for i in np.flatnonzero(p0 < cfg.level_alpha))

    flags = np.zeros(m, dtype=np.int64)
    for i in rejected:
        flags[list(draws[i])] += 1
    return RandChiOutcome(p0, draws, threshold, tuple(rejected), flags, bool(rejected),
                          resampled, stats0, dof0, [len(t) for t, _ in prepared], c, warnings)


def combination_counts(g, columns, top=None):
    """Per-combination group counts with count ratios against the first group.

    Rows are sorted by total count, descending; ``top`` keeps the largest.
    """
    tab = joint_table(g, columns)
    counts = tab.counts
    order = np.argsort(-counts.sum(axis=0), kind="stable")
    if top is not None:
        order = order[:top]
    rows = []
    for j in order:
        ref = counts[0, j]
        rows.append({
            "combination": [int(v) for v in tab.col_labels[j]],
            "counts": [int(v) for v in counts[:, j]],
            "ratio_to_first": [None if ref == 0 else float(v / ref) for v in counts[1:, j]],
        })
    return rows
