"""CSV schema discovery, categorical encoding and chunked subset delivery.

Input CSV: comma-delimited, UTF-8, header row first, no quoted embedded
delimiters. Empty cells and ``NA``/``NaN`` are treated as missing, and
missing values are an error. Row numbers in error messages are 0-based
data-row indices (the header is not counted).

Categorical predictors are dummy coded against a reference level (the
first sorted level unless the model spec names another). Indicator
columns are labelled ``<column><level>``; the intercept is
``(Intercept)``. Multinomial coefficient labels are prefixed with the
response category, e.g. ``3:Age``.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np
import pandas as pd

from .errors import DataError, SpecError
from .glm import BINOMIAL, GAUSSIAN, MULTINOMIAL, POISSON, Family, _ALIASES
from .partition import PartitionPlan

NUMERIC = "numeric"
CATEGORICAL = "categorical"
COUNT = "count"
BINARY = "binary"
COLUMN_TYPES = (NUMERIC, CATEGORICAL, COUNT, BINARY)

MISSING = frozenset({"", "NA", "NaN", "nan", "N/A"})
INFERENCE_LEVEL_CAP = 1000
INTERCEPT_LABEL = "(Intercept)"


@dataclass
class Schema:
    """Column names and types, sorted factor levels, and the data row count."""

    columns: list
    factor_levels: dict
    row_count: int

    def names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def type_of(self, name: str) -> str:
        for col, kind in self.columns:
            if col == name:
                return kind
        raise KeyError(name)

    def is_factor(self, name: str) -> bool:
        return self.type_of(name) in (CATEGORICAL, BINARY)

    def to_json(self) -> dict:
        return {"columns": [[n, t] for n, t in self.columns],
                "factor_levels": {k: list(v) for k, v in self.factor_levels.items()},
                "row_count": self.row_count}

    @classmethod
    def from_json(cls, doc) -> "Schema":
        return cls([tuple(c) for c in doc["columns"]],
                   {k: list(v) for k, v in doc["factor_levels"].items()},
                   int(doc["row_count"]))


@dataclass
class ModelSpec:
    """What to fit: response, predictors, family and coding choices.

    ``column_types`` optionally declares column types for the schema
    scan; undeclared columns are numeric when every cell parses as a
    number and categorical otherwise.
    """

    response: str
    predictors: list
    family: str
    intercept: bool = True
    reference_levels: dict = field(default_factory=dict)
    confidence: float = 0.95
    column_types: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.response, str) or not self.response:
            raise SpecError("response must be a non-empty column name", path="response")
        if not isinstance(self.predictors, (list, tuple)) or not all(
                isinstance(p, str) for p in self.predictors):
            raise SpecError("predictors must be an array of column names", path="predictors")
        self.predictors = list(self.predictors)
        if len(set(self.predictors)) != len(self.predictors):
            raise SpecError("predictors contain duplicates", path="predictors")
        if self.response in self.predictors:
            raise SpecError(f"response {self.response!r} is also listed as a predictor",
                            path="predictors")
        if self.family not in _ALIASES:
            raise SpecError(f"unknown family {self.family!r}", path="family")
        self.family = _ALIASES[self.family]
        if not self.intercept and not self.predictors:
            raise SpecError("a model without intercept needs at least one predictor",
                            path="predictors")
        if not 0.0 < float(self.confidence) < 1.0:
            raise SpecError("confidence must be in (0, 1)", path="confidence")
        self.confidence = float(self.confidence)
        self.reference_levels = {str(k): str(v) for k, v in (self.reference_levels or {}).items()}
        for name, kind in (self.column_types or {}).items():
            if kind not in COLUMN_TYPES:
                raise SpecError(f"column type {kind!r} not one of {COLUMN_TYPES}",
                                path=f"column_types.{name}")
        self.column_types = dict(self.column_types or {})

    @classmethod
    def from_json(cls, doc) -> "ModelSpec":
        if not isinstance(doc, dict):
            raise SpecError("model spec must be a JSON object", path="")
        known = {"response", "predictors", "family", "intercept", "reference_levels",
                 "confidence", "column_types"}
        extra = set(doc) - known
        if extra:
            raise SpecError(f"unknown keys {sorted(extra)}", path=sorted(extra)[0])
        for key in ("response", "predictors", "family"):
            if key not in doc:
                raise SpecError(f"missing required key {key!r}", path=key)
        if "intercept" in doc and not isinstance(doc["intercept"], bool):
            raise SpecError("intercept must be true or false", path="intercept")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ModelSpec":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"model spec is not valid JSON: {exc}", path="") from None
        return cls.from_json(doc)

    def to_json(self) -> dict:
        doc = {"response": self.response, "predictors": list(self.predictors),
               "family": self.family, "intercept": self.intercept,
               "reference_levels": dict(self.reference_levels),
               "confidence": self.confidence}
        if self.column_types:
            doc["column_types"] = dict(self.column_types)
        return doc

    def declarations(self) -> dict:
        """Column types for the schema scan.

        Binomial and multinomial responses are forced to categorical so
        their levels are collected.
        """
        decl = dict(self.column_types)
        if self.family in (BINOMIAL, MULTINOMIAL) and decl.get(self.response) not in (
                CATEGORICAL, BINARY):
            decl[self.response] = CATEGORICAL
        return decl


def _read_header(path) -> list[str]:
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise DataError(f"{path}: missing header row")
    header = [h.strip() for h in header]
    dupes = sorted({h for h in header if header.count(h) > 1})
    if dupes:
        raise DataError(f"{path}: duplicate column names {dupes}")
    return header


def _reader(path, chunk_rows=None, iterator=False):
    return pd.read_csv(path, sep=",", dtype=str, keep_default_na=False, na_filter=False,
                       encoding="utf-8", chunksize=chunk_rows, iterator=iterator,
                       skipinitialspace=False)


def _missing_mask(values: pd.Series) -> np.ndarray:
    return values.str.strip().isin(MISSING).to_numpy()


def _parse_numeric(values: pd.Series, name: str, row0: int) -> np.ndarray:
    miss = _missing_mask(values)
    if miss.any():
        i = int(np.flatnonzero(miss)[0])
        raise DataError(f"missing value in column {name!r} at row {row0 + i}",
                        row=row0 + i, column=name)
    out = pd.to_numeric(values, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(out)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"unparseable numeric cell {values.iloc[i]!r} in column {name!r} "
                        f"at row {row0 + i}", row=row0 + i, column=name)
    return out


def _cache_path(path):
    return f"{path}.schema.json"


def _source_stamp(path):
    st = os.stat(path)
    return {"size": st.st_size, "mtime_ns": st.st_mtime_ns}


def scan_schema(csv_source, declarations=None, chunk_rows: int = 200_000,
                cache: bool = False) -> Schema:
    """One streaming pass: validate cells, collect factor levels, count rows.

    ``declarations`` maps column names to one of ``numeric``,
    ``categorical``, ``count``, ``binary``. With ``cache=True`` the result
    is stored in a ``<csv>.schema.json`` sidecar and reused while the
    file's size and modification time are unchanged.
    """
    declarations = dict(declarations or {})
    path = os.fspath(csv_source)
    if cache:
        cached = _load_cached_schema(path, declarations)
        if cached is not None:
            return cached
    header = _read_header(path)
    unknown = sorted(set(declarations) - set(header))
    if unknown:
        raise DataError(f"declared columns not in header: {unknown}")

    declared = {h: declarations.get(h) for h in header}
    levels = {h: set() for h in header if declared[h] in (CATEGORICAL, BINARY, None)}
    maybe_numeric = {h: True for h in header if declared[h] is None}
    n = 0
    for chunk in _reader(path, chunk_rows):
        chunk.columns = [c.strip() for c in chunk.columns]
        for name in header:
            values = chunk[name]
            kind = declared[name]
            if kind in (NUMERIC, COUNT):
                parsed = _parse_numeric(values, name, n)
                if kind == COUNT:
                    bad = (parsed < 0) | (parsed != np.floor(parsed))
                    if bad.any():
                        i = int(np.flatnonzero(bad)[0])
                        raise DataError(f"count column {name!r} has non-count value "
                                        f"{values.iloc[i]!r} at row {n + i}",
                                        row=n + i, column=name)
                continue
            stripped = values.str.strip()
            miss = stripped.isin(MISSING).to_numpy()
            if miss.any():
                i = int(np.flatnonzero(miss)[0])
                raise DataError(f"missing value in column {name!r} at row {n + i}",
                                row=n + i, column=name)
            if kind is None and maybe_numeric[name]:
                num = pd.to_numeric(stripped, errors="coerce").to_numpy(dtype=float)
                if not np.isfinite(num).all():
                    maybe_numeric[name] = False
            if kind is not None or not maybe_numeric[name] or len(levels[name]) <= INFERENCE_LEVEL_CAP:
                levels[name].update(stripped.unique().tolist())
        n += len(chunk)
    if n == 0:
        raise DataError(f"{path}: no data rows")

    columns, factor_levels = [], {}
    for name in header:
        kind = declared[name]
        if kind is None:
            kind = NUMERIC if maybe_numeric[name] else CATEGORICAL
            if kind == CATEGORICAL and len(levels[name]) > INFERENCE_LEVEL_CAP:
                raise DataError(f"column {name!r} looks categorical with more than "
                                f"{INFERENCE_LEVEL_CAP} levels; declare its type", column=name)
        if kind in (CATEGORICAL, BINARY):
            lv = sorted(levels[name], key=lambda s: s.encode("utf-8"))
            if kind == BINARY and len(lv) > 2:
                raise DataError(f"binary column {name!r} has {len(lv)} levels: {lv[:5]}",
                                column=name)
            factor_levels[name] = lv
        columns.append((name, kind))
    schema = Schema(columns, factor_levels, n)
    if cache:
        doc = {"source": _source_stamp(path), "declarations": declarations,
               "schema": schema.to_json()}
        with open(_cache_path(path), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
    return schema


def _load_cached_schema(path, declarations):
    try:
        with open(_cache_path(path), encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if doc.get("source") != _source_stamp(path) or doc.get("declarations") != declarations:
        return None
    return Schema.from_json(doc["schema"])


def read_column(csv_source, name: str, chunk_rows: int = 200_000) -> np.ndarray:
    """All values of one column as stripped strings."""
    parts = []
    for chunk in pd.read_csv(os.fspath(csv_source), sep=",", dtype=str, keep_default_na=False,
                             na_filter=False, usecols=[name], chunksize=chunk_rows):
        parts.append(chunk[name].str.strip().to_numpy(dtype=object))
    return np.concatenate(parts) if parts else np.array([], dtype=object)


@dataclass
class DesignLayout:
    """Resolved encoding of a ``ModelSpec`` against a ``Schema``."""

    labels: list
    predictors: list
    intercept: bool
    response: str
    family: Family
    response_levels: list | None

    @property
    def p(self) -> int:
        return len(self.labels)

    def coefficient_labels(self) -> list[str]:
        if self.family.kind != MULTINOMIAL:
            return list(self.labels)
        return [f"{level}:{label}" for level in self.response_levels[1:]
                for label in self.labels]


def design_layout(schema: Schema, spec: ModelSpec) -> DesignLayout:
    names = set(schema.names())
    for i, col in enumerate([spec.response] + spec.predictors):
        if col not in names:
            path = "response" if i == 0 else f"predictors[{i - 1}]"
            raise SpecError(f"column {col!r} not found in data", path=path)
    labels = [INTERCEPT_LABEL] if spec.intercept else []
    predictors = []
    for name in spec.predictors:
        if schema.is_factor(name):
            lv = schema.factor_levels[name]
            ref = spec.reference_levels.get(name, lv[0])
            if ref not in lv:
                raise SpecError(f"reference level {ref!r} not among levels of {name!r}",
                                path=f"reference_levels.{name}")
            kept = [level for level in lv if level != ref]
            predictors.append((name, CATEGORICAL, lv, kept))
            labels.extend(f"{name}{level}" for level in kept)
        else:
            predictors.append((name, NUMERIC, None, None))
            labels.append(name)

    kind = spec.family
    rtype = schema.type_of(spec.response)
    response_levels = None
    if kind in (BINOMIAL, MULTINOMIAL):
        if rtype not in (CATEGORICAL, BINARY):
            raise SpecError(f"{kind} response {spec.response!r} must be categorical",
                            path="response")
        response_levels = list(schema.factor_levels[spec.response])
        if kind == BINOMIAL and len(response_levels) != 2:
            raise SpecError(f"binomial response needs exactly 2 levels, found "
                            f"{response_levels}", path="response")
        if kind == MULTINOMIAL and len(response_levels) < 3:
            raise SpecError(f"multinomial response needs >= 3 levels, found "
                            f"{response_levels}", path="response")
    elif rtype not in (NUMERIC, COUNT):
        raise SpecError(f"{kind} response {spec.response!r} must be numeric", path="response")
    family = Family(kind, len(response_levels) if kind == MULTINOMIAL else None)
    return DesignLayout(labels, predictors, spec.intercept, spec.response, family,
                        response_levels)


def _factor_codes(values: pd.Series, levels, name, row0):
    stripped = values.str.strip()
    codes = pd.Categorical(stripped, categories=levels).codes
    bad = codes < 0
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise DataError(f"unseen level {stripped.iloc[i]!r} in column {name!r} at row {row0 + i}",
                        row=row0 + i, column=name)
    return np.asarray(codes)


def _encode(df: pd.DataFrame, layout: DesignLayout, row0: int = 0):
    m = len(df)
    X = np.empty((m, layout.p))
    j = 0
    if layout.intercept:
        X[:, 0] = 1.0
        j = 1
    for name, kind, levels, kept in layout.predictors:
        if kind == NUMERIC:
            X[:, j] = _parse_numeric(df[name], name, row0)
            j += 1
            continue
        codes = _factor_codes(df[name], levels, name, row0)
        for level in kept:
            X[:, j] = codes == levels.index(level)
            j += 1
    resp = df[layout.response]
    if layout.response_levels is None:
        y = _parse_numeric(resp, layout.response, row0)
        if layout.family.kind == POISSON:
            bad = (y < 0) | (y != np.floor(y))
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise DataError(f"poisson response must be a non-negative integer; got "
                                f"{resp.iloc[i]!r} at row {row0 + i}", row=row0 + i,
                                column=layout.response)
    else:
        codes = _factor_codes(resp, layout.response_levels, layout.response, row0)
        y = codes.astype(float) if layout.family.kind == BINOMIAL else codes + 1.0
    return X, y


def encode_chunk(rows, schema: Schema, spec: ModelSpec, row_offset: int = 0):
    """Encode raw string cells into ``(X, y)``.

    ``rows`` is a DataFrame (or a mapping of column name to values) of raw
    cells. Binomial responses become 0/1 (1 for the second sorted level);
    multinomial responses become category indices ``1..r`` in sorted
    level order.
    """
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
    df = df.astype(str)
    df.columns = [str(c).strip() for c in df.columns]
    return _encode(df, design_layout(schema, spec), row_offset)


class SubsetChunk(NamedTuple):
    subset: int
    X: np.ndarray
    y: np.ndarray
    rows: np.ndarray


def _drift(expected, seen):
    return DataError(f"row count changed since the schema scan: expected {expected} rows, "
                     f"found {seen}")


def stream_subsets(csv_source, plan: PartitionPlan, schema: Schema, spec: ModelSpec,
                   chunk_rows: int = 100_000, spill_dir=None) -> Iterator[SubsetChunk]:
    """Yield each subset's rows as encoded chunks of at most ``chunk_rows``.

    Subsets arrive in index order. Contiguous plans need a single forward
    read. Other plans route rows into per-subset spill files during one
    pass, then replay each file; rows within a subset keep file order.
    ``SubsetChunk.rows`` holds the source row indices.
    """
    if plan.total_rows != schema.row_count:
        raise DataError(f"plan covers {plan.total_rows} rows but the schema counted "
                        f"{schema.row_count}")
    chunk_rows = int(chunk_rows)
    if chunk_rows < 1:
        raise ValueError("chunk_rows must be >= 1")
    layout = design_layout(schema, spec)
    path = os.fspath(csv_source)
    if plan.contiguous:
        yield from _stream_contiguous(path, plan, layout, chunk_rows)
    else:
        yield from _stream_spilled(path, plan, layout, chunk_rows, spill_dir)


def _stream_contiguous(path, plan, layout, chunk_rows):
    reader = _reader(path, iterator=True)
    try:
        pos = 0
        for k, (start, end) in enumerate(plan.ranges, start=1):
            while pos < end:
                m = min(chunk_rows, end - pos)
                try:
                    df = reader.get_chunk(m)
                except StopIteration:
                    raise _drift(plan.total_rows, pos) from None
                if len(df) < m:
                    raise _drift(plan.total_rows, pos + len(df))
                df.columns = [c.strip() for c in df.columns]
                X, y = _encode(df, layout, pos)
                yield SubsetChunk(k, X, y, np.arange(pos, pos + m, dtype=np.int64))
                pos += m
        try:
            extra = reader.get_chunk(1)
        except StopIteration:
            extra = None
        if extra is not None and len(extra):
            raise _drift(plan.total_rows, f"more than {plan.total_rows}")
    finally:
        reader.close()


def _stream_spilled(path, plan, layout, chunk_rows, spill_dir):
    labels = plan.subset_of_rows()
    p = layout.p
    with tempfile.TemporaryDirectory(prefix="dr-glm-spill-", dir=spill_dir) as tmp:
        files = [open(os.path.join(tmp, f"subset{k}.bin"), "wb")
                 for k in range(1, plan.num_subsets + 1)]
        try:
            pos = 0
            for df in _reader(path, chunk_rows):
                m = len(df)
                if pos + m > plan.total_rows:
                    raise _drift(plan.total_rows, f"more than {plan.total_rows}")
                df.columns = [c.strip() for c in df.columns]
                X, y = _encode(df, layout, pos)
                rows = np.arange(pos, pos + m, dtype=np.int64)
                lab = labels[pos:pos + m]
                # record: p design values, response, source row (stored as float64)
                rec = np.empty((m, p + 2))
                rec[:, :p] = X
                rec[:, p] = y
                rec[:, p + 1] = rows
                for k in np.unique(lab):
                    rec[lab == k].tofile(files[k - 1])
                pos += m
            if pos != plan.total_rows:
                raise _drift(plan.total_rows, pos)
        finally:
            for fh in files:
                fh.close()
        for k in range(1, plan.num_subsets + 1):
            fname = os.path.join(tmp, f"subset{k}.bin")
            total = os.path.getsize(fname) // (8 * (p + 2))
            data = np.memmap(fname, dtype=np.float64, mode="r", shape=(total, p + 2)) \
                if total else np.empty((0, p + 2))
            for start in range(0, total, chunk_rows):
                block = np.array(data[start:start + chunk_rows])
                yield SubsetChunk(k, block[:, :p], block[:, p], block[:, p + 1].astype(np.int64))
            del data
