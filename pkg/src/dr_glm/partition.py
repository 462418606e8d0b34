"""Deterministic assignment of row indices to subsets.

Three strategies are provided:

``sequential``
    contiguous row ranges in file order. When ``n`` is not a multiple of
    ``S`` the first ``n mod S`` subsets receive one extra row.
``replicate``
    a seeded random permutation cut into the same size profile.
``stratified``
    one subset per level of a categorical column, each split sequentially
    when larger than ``max_subset_rows``.

Replicate permutations use a SplitMix64 sort-key shuffle: row ``i`` gets
the key ``splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15)`` (the
``i``-th output of a SplitMix64 stream seeded with ``seed``) and rows are
ordered by key with a stable sort. The construction only uses 64-bit
integer arithmetic, so plans are identical on every platform and numpy
version.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import PartitionError

SEQUENTIAL = "sequential"
REPLICATE = "replicate"
STRATIFIED = "stratified"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, count: int) -> np.ndarray:
    """First ``count`` outputs of a SplitMix64 generator seeded with ``seed``."""
    state = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    with np.errstate(over="ignore"):
        z = state + (np.arange(1, count + 1, dtype=np.uint64) * _GAMMA)
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def seeded_permutation(n: int, seed: int) -> np.ndarray:
    return np.argsort(splitmix64(seed, n), kind="stable").astype(np.int64)


def balanced_sizes(n: int, S: int) -> list[int]:
    base, extra = divmod(n, S)
    return [base + 1 if k < extra else base for k in range(S)]


def _ranges_from_sizes(sizes, offset=0):
    ranges, start = [], offset
    for size in sizes:
        ranges.append((start, start + size))
        start += size
    return ranges


@dataclass(frozen=True)
class PartitionPlan:
    """Assignment of rows ``[0, n)`` to subsets ``1..S``.

    ``ranges`` are half-open 0-based intervals over ``permutation`` (the
    identity when ``permutation`` is ``None``), so subset ``k`` holds rows
    ``permutation[start:end]``.
    """

    total_rows: int
    num_subsets: int
    strategy: str
    ranges: tuple
    permutation: np.ndarray | None = field(default=None, repr=False, compare=False)
    seed: int | None = None
    column: str | None = None
    levels: tuple | None = None
    warnings: tuple = ()

    def __eq__(self, other):
        if not isinstance(other, PartitionPlan):
            return NotImplemented
        same_perm = (self.permutation is None and other.permutation is None) or (
            self.permutation is not None and other.permutation is not None
            and np.array_equal(self.permutation, other.permutation))
        return (same_perm and self.total_rows == other.total_rows
                and self.num_subsets == other.num_subsets
                and self.strategy == other.strategy and self.ranges == other.ranges
                and self.seed == other.seed and self.column == other.column)

    __hash__ = None

    @property
    def sizes(self) -> list[int]:
        return [end - start for start, end in self.ranges]

    @property
    def contiguous(self) -> bool:
        """True when every subset is a contiguous block of file rows."""
        return self.permutation is None

    def order(self) -> np.ndarray:
        if self.permutation is None:
            return np.arange(self.total_rows, dtype=np.int64)
        return self.permutation

    def rows_of(self, subset_index: int) -> np.ndarray:
        """Source row indices of subset ``subset_index`` (1-based)."""
        if not 1 <= subset_index <= self.num_subsets:
            raise PartitionError(f"subset index {subset_index} outside 1..{self.num_subsets}")
        start, end = self.ranges[subset_index - 1]
        return self.order()[start:end]

    def subset_of_rows(self) -> np.ndarray:
        """Array mapping each source row to its 1-based subset index."""
        labels = np.empty(self.total_rows, dtype=np.int64)
        order = self.order()
        for k, (start, end) in enumerate(self.ranges, start=1):
            labels[order[start:end]] = k
        return labels

    def permutation_digest(self) -> str | None:
        if self.permutation is None:
            return None
        data = np.ascontiguousarray(self.permutation, dtype="<i8").tobytes()
        return hashlib.sha256(data).hexdigest()

    def to_json(self) -> dict:
        doc = {"n": self.total_rows, "S": self.num_subsets, "strategy": self.strategy,
               "ranges": [list(r) for r in self.ranges], "sizes": self.sizes}
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.column is not None:
            doc["column"] = self.column
            doc["levels"] = list(self.levels)
        if self.permutation is not None:
            doc["permutation_digest"] = self.permutation_digest()
        if self.warnings:
            doc["warnings"] = list(self.warnings)
        return doc

    def summary(self) -> dict:
        doc = self.to_json()
        doc.pop("ranges")
        return doc


def _check_counts(n, S):
    if isinstance(n, bool) or isinstance(S, bool):
        raise PartitionError("row and subset counts must be integers")
    n, S = int(n), int(S)
    if S < 1:
        raise PartitionError(f"number of subsets must be >= 1, got {S}")
    if n < 1:
        raise PartitionError(f"number of rows must be >= 1, got {n}")
    if S > n:
        raise PartitionError(f"cannot split {n} rows into {S} nonempty subsets")
    return n, S


def sequential_plan(n: int, S: int) -> PartitionPlan:
    n, S = _check_counts(n, S)
    return PartitionPlan(n, S, SEQUENTIAL, tuple(_ranges_from_sizes(balanced_sizes(n, S))))


def replicate_plan(n: int, S: int, seed: int) -> PartitionPlan:
    n, S = _check_counts(n, S)
    if seed is None:
        raise PartitionError("replicate division requires a seed")
    seed = int(seed)
    return PartitionPlan(n, S, REPLICATE, tuple(_ranges_from_sizes(balanced_sizes(n, S))),
                         permutation=seeded_permutation(n, seed), seed=seed)


def stratified_plan(column_values, max_subset_rows: int, column: str | None = None,
                    min_rows: int | None = None) -> PartitionPlan:
    """One subset per level of ``column_values``, levels in sorted order.

    Levels are compared as strings. A subset with fewer than ``min_rows``
    rows (typically the number of model parameters) is noted in
    ``plan.warnings``; the downstream fit will likely fail on it.
    """
    values = np.asarray([str(v) for v in column_values], dtype=object)
    n = values.shape[0]
    if n < 1:
        raise PartitionError("stratified division needs at least one row")
    max_subset_rows = int(max_subset_rows)
    if max_subset_rows < 1:
        raise PartitionError(f"max_subset_rows must be >= 1, got {max_subset_rows}")
    levels = sorted(set(values.tolist()))
    perm_parts, ranges, subset_levels, notes = [], [], [], []
    offset = 0
    for level in levels:
        rows = np.flatnonzero(values == level).astype(np.int64)
        pieces = -(-rows.shape[0] // max_subset_rows)
        for start, end in _ranges_from_sizes(balanced_sizes(rows.shape[0], pieces), offset):
            ranges.append((start, end))
            subset_levels.append(level)
            if min_rows is not None and end - start < min_rows:
                notes.append(f"subset {len(ranges)} (level {level!r}) has {end - start} rows, "
                             f"fewer than the {min_rows} model parameters")
        perm_parts.append(rows)
        offset += rows.shape[0]
    return PartitionPlan(n, len(ranges), STRATIFIED, tuple(ranges),
                         permutation=np.concatenate(perm_parts), column=column,
                         levels=tuple(subset_levels), warnings=tuple(notes))
