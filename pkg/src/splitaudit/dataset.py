"""Grouped categorical samples: data model, CSV ingestion, one-hot embedding."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or unusable input data."""


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CategoricalTable:
    """An n x m matrix of category codes.

    Column ``j`` takes codes in ``[0, col_cardinalities[j])``. Cardinality-1
    (constant) columns are legal.
    """

    cells: np.ndarray
    col_cardinalities: tuple
    col_names: tuple | None = None

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2:
            raise DataError("cells must be a 2-d matrix")
        if cells.size and not np.issubdtype(cells.dtype, np.integer):
            raise DataError("cells must hold integer category codes")
        cells = _frozen(cells.astype(np.int64, copy=False))
        card = tuple(int(c) for c in self.col_cardinalities)
        if len(card) != cells.shape[1]:
            raise DataError(f"{len(card)} cardinalities for {cells.shape[1]} columns")
        if any(c < 1 for c in card):
            raise DataError("every column needs at least one category")
        if cells.size:
            if cells.min() < 0 or np.any(cells.max(axis=0) >= np.array(card)):
                raise DataError("category code out of range for its column")
        names = None if self.col_names is None else tuple(str(c) for c in self.col_names)
        if names is not None and len(names) != len(card):
            raise DataError("col_names length does not match the column count")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "col_cardinalities", card)
        object.__setattr__(self, "col_names", names)

    @property
    def n_rows(self):
        return self.cells.shape[0]

    @property
    def n_cols(self):
        return self.cells.shape[1]


@dataclass(frozen=True, eq=False)
class GroupedSample:
    """K categorical tables over the same columns (e.g. the arms of a split).

    ``token_maps[j][c]`` is the original CSV token behind code ``c`` of
    column ``j`` when the sample was read from a file.
    """

    groups: tuple
    group_names: tuple | None = None
    token_maps: tuple | None = None

    def __post_init__(self):
        groups = tuple(self.groups)
        if len(groups) < 2:
            raise DataError("need at least two groups")
        first = groups[0]
        for t in groups:
            if t.col_cardinalities != first.col_cardinalities:
                raise DataError("groups disagree on columns or cardinalities")
            if t.n_rows == 0:
                raise DataError("empty group")
        names = self.group_names
        names = tuple(str(i) for i in range(len(groups))) if names is None else tuple(map(str, names))
        if len(names) != len(groups):
            raise DataError("group_names length does not match the group count")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "group_names", names)

    @classmethod
    def from_labels(cls, cells, labels, col_cardinalities=None, *, col_names=None,
                    group_names=None, token_maps=None):
        """Split a pooled matrix by integer group labels 0..K-1."""
        cells = np.asarray(cells, dtype=np.int64)
        labels = np.asarray(labels)
        if col_cardinalities is None:
            col_cardinalities = tuple(int(c) + 1 for c in cells.max(axis=0))
        k = int(labels.max()) + 1
        tables = tuple(CategoricalTable(cells[labels == j], col_cardinalities, col_names)
                       for j in range(k))
        return cls(tables, group_names, token_maps)

    @property
    def k(self):
        return len(self.groups)

    @property
    def sizes(self):
        return tuple(t.n_rows for t in self.groups)

    @property
    def n_total(self):
        return sum(self.sizes)

    @property
    def n_cols(self):
        return self.groups[0].n_cols

    @property
    def col_cardinalities(self):
        return self.groups[0].col_cardinalities

    @property
    def col_names(self):
        names = self.groups[0].col_names
        return names if names is not None else tuple(f"col{j}" for j in range(self.n_cols))

    @cached_property
    def pooled(self):
        return _frozen(np.concatenate([t.cells for t in self.groups], axis=0))

    @cached_property
    def labels(self):
        return _frozen(np.repeat(np.arange(self.k), self.sizes))

    def repartition(self, rows, sizes):
        """Same metadata, new pooled rows cut into consecutive groups."""
        bounds = np.cumsum((0,) + tuple(sizes))
        tables = tuple(CategoricalTable(rows[bounds[j]:bounds[j + 1]], self.col_cardinalities,
                                        self.groups[0].col_names)
                       for j in range(len(sizes)))
        return GroupedSample(tables, self.group_names, self.token_maps)

    def decode(self, group):
        """Token matrix of one group, using the recorded token maps."""
        if self.token_maps is None:
            raise DataError("sample has no token maps")
        cells = self.groups[group].cells
        return [[self.token_maps[j][c] for j, c in enumerate(row)] for row in cells]


@dataclass(frozen=True, eq=False)
class NumericGroups:
    """K real-valued samples of equal dimension (generic DISCO / propensity input)."""

    groups: tuple
    group_names: tuple | None = field(default=None)

    def __post_init__(self):
        groups = tuple(as_numeric(g) for g in self.groups)
        if len(groups) < 2:
            raise DataError("need at least two groups")
        if len({g.shape[1] for g in groups}) != 1:
            raise DataError("groups differ in dimension")
        if any(g.shape[0] == 0 for g in groups):
            raise DataError("empty group")
        names = self.group_names
        names = tuple(str(i) for i in range(len(groups))) if names is None else tuple(map(str, names))
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "group_names", names)

    @property
    def k(self):
        return len(self.groups)

    @property
    def sizes(self):
        return tuple(g.shape[0] for g in self.groups)

    @property
    def n_total(self):
        return sum(self.sizes)

    @cached_property
    def pooled(self):
        return _frozen(np.concatenate(self.groups, axis=0))

    @cached_property
    def labels(self):
        return _frozen(np.repeat(np.arange(self.k), self.sizes))

    def repartition(self, rows, sizes):
        bounds = np.cumsum((0,) + tuple(sizes))
        return NumericGroups(tuple(rows[bounds[j]:bounds[j + 1]] for j in range(len(sizes))),
                             self.group_names)


def as_numeric(x):
    """Validate a finite real 2-d matrix (1-d input becomes a column)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError("numeric input must be a 2-d matrix")
    if not np.all(np.isfinite(x)):
        raise DataError("numeric input has non-finite entries")
    return _frozen(x)


def pool_and_split(g, sizes, rng):
    """Pool all rows, shuffle uniformly, and cut into groups of ``sizes``."""
    sizes = tuple(int(s) for s in sizes)
    if sum(sizes) != g.n_total or len(sizes) < 2 or min(sizes) < 1:
        raise DataError(f"sizes {sizes} do not partition {g.n_total} rows")
    perm = rng.permutation(g.n_total)
    return g.repartition(g.pooled[perm], sizes)


def permuted_labels(sizes, rng):
    """Group label of each pooled row after :func:`pool_and_split`.

    Consumes the generator exactly as ``pool_and_split`` does, so a statistic
    that ignores row order inside a group gives the same value on
    ``(g.pooled, permuted_labels(g.sizes, rng))`` as on the shuffled sample.
    """
    n = sum(sizes)
    perm = rng.permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.repeat(np.arange(len(sizes)), sizes)
    return out


def one_hot(table, col_cardinalities=None):
    """One-hot embedding: column blocks in column order, category code order.

    Accepts a :class:`CategoricalTable` or a raw code matrix plus
    cardinalities. Every output row has exactly ``m`` ones.
    """
    if isinstance(table, CategoricalTable):
        cells, card = table.cells, table.col_cardinalities
    else:
        cells = np.asarray(table, dtype=np.int64)
        card = tuple(col_cardinalities)
    offsets = np.concatenate(([0], np.cumsum(card)[:-1])).astype(np.int64)
    out = np.zeros((cells.shape[0], int(sum(card))))
    if cells.size:
        rows = np.repeat(np.arange(cells.shape[0]), cells.shape[1])
        out[rows, (cells + offsets).ravel()] = 1.0
    return out


def _encode_columns(rows, group_idx):
    n_cols = len(rows[0]) if rows else 0
    maps = [dict() for _ in range(n_cols)]
    cells = np.empty((len(rows), n_cols - 1), dtype=np.int64)
    labels = np.empty(len(rows), dtype=np.int64)
    group_map = {}
    for i, row in enumerate(rows):
        c = 0
        for j, tok in enumerate(row):
            if j == group_idx:
                labels[i] = group_map.setdefault(tok, len(group_map))
                continue
            cells[i, c] = maps[j].setdefault(tok, len(maps[j]))
            c += 1
    col_maps = [tuple(m) for j, m in enumerate(maps) if j != group_idx]
    return cells, labels, col_maps, tuple(group_map)


def load_csv(path, group_column=0, header=True):
    """Read a CSV with one group-label column into a :class:`GroupedSample`.

    Category codes follow first appearance in the file, per column; groups
    are ordered by first appearance of their label. Empty cells are errors.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if header:
        if not rows:
            raise DataError(f"{path}: empty file")
        names, rows = rows[0], rows[1:]
    else:
        names = None
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(names) if names is not None else len(rows[0])
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"{path}: row {i + 1 + bool(header)} has {len(r)} fields, expected {width}")
        if any(tok.strip() == "" for tok in r):
            raise DataError(f"{path}: row {i + 1 + bool(header)} has a missing value")
    if isinstance(group_column, str) and not group_column.lstrip("-").isdigit():
        if names is None or group_column not in names:
            raise DataError(f"{path}: no column named {group_column!r}")
        gidx = names.index(group_column)
    else:
        gidx = int(group_column)
        if not 0 <= gidx < width:
            raise DataError(f"{path}: group column index {gidx} out of range")
    if width < 2:
        raise DataError(f"{path}: need at least one covariate column")
    cells, labels, col_maps, group_names = _encode_columns(rows, gidx)
    if len(group_names) < 2:
        raise DataError(f"{path}: group column has fewer than two distinct labels")
    col_names = None
    if names is not None:
        col_names = tuple(n for j, n in enumerate(names) if j != gidx)
    card = tuple(len(m) for m in col_maps)
    return GroupedSample.from_labels(cells, labels, card, col_names=col_names,
                                     group_names=group_names, token_maps=tuple(col_maps))


def load_csv_files(paths: Sequence, header=True):
    """One CSV per group (no group column); the file stem names the group."""
    rows_all, labels = [], []
    names = None
    for k, p in enumerate(paths):
        with Path(p).open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if header:
            if names is not None and rows[0] != names:
                raise DataError(f"{p}: header differs from the first file")
            names, rows = rows[0], rows[1:]
        if not rows:
            raise DataError(f"{p}: empty group")
        rows_all += [[str(k)] + r for r in rows]
        labels.append(Path(p).stem)
    width = len(rows_all[0])
    if any(len(r) != width for r in rows_all):
        raise DataError("ragged rows across files")
    if any(tok.strip() == "" for r in rows_all for tok in r):
        raise DataError("missing value in input")
    cells, lab, col_maps, _ = _encode_columns(rows_all, 0)
    card = tuple(len(m) for m in col_maps)
    return GroupedSample.from_labels(cells, lab, card, col_names=names,
                                     group_names=tuple(labels), token_maps=tuple(col_maps))
