"""Synthetic data, the full-data reference fit, and D&R-vs-full comparison.

Synthetic config (JSON)::

    {
      "n": 20000, "seed": 3, "family": "binomial",
      "columns": [
        {"name": "age", "type": "numeric", "mean": 0, "sd": 1},
        {"name": "sex", "type": "binary", "levels": ["0", "1"], "probs": [0.5, 0.5]},
        {"name": "y", "type": "response"}
      ],
      "beta": {"(Intercept)": -0.5, "age": 0.8, "sex1": 0.3}
    }

Column types: ``numeric`` (normal, optional ``decimals``, default 4),
``categorical``/``binary``/``count`` (``levels`` drawn with ``probs``;
``count`` levels are integers used as a numeric predictor), and exactly
one ``response``. ``beta`` maps design labels to true coefficients;
missing labels are zero. For the multinomial family each value is a list
of ``num_categories - 1`` coefficients (categories 2..r) and
``response_levels`` optionally names the categories. Gaussian responses
use ``noise_sd`` (default 1).

Responses and covariates are drawn with numpy's PCG64 generator seeded by
``seed``, in fixed-size row blocks, so output is reproducible for a given
numpy version.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dataio import BINARY, CATEGORICAL, COUNT, NUMERIC, ModelSpec, Schema, _encode, \
    design_layout
from .errors import LabelMismatch, SpecError
from .glm import BINOMIAL, GAUSSIAN, MULTINOMIAL, POISSON, _ALIASES
from .pipeline import run

REL_EPS = 1e-12
P_FLOOR = 1e-8
BLOCK_ROWS = 250_000

_TYPE_MAP = {"numeric": NUMERIC, "categorical": CATEGORICAL, "binary": BINARY, "count": COUNT}


@dataclass
class SynthConfig:
    n: int
    seed: int
    family: str
    columns: list
    beta: dict = field(default_factory=dict)
    noise_sd: float = 1.0
    num_categories: int | None = None
    response_levels: list | None = None

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, int) or self.n < 1:
            raise SpecError(f"n must be an integer >= 1, got {self.n!r}", path="n")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise SpecError("seed must be an integer", path="seed")
        if self.family not in _ALIASES:
            raise SpecError(f"unknown family {self.family!r}", path="family")
        self.family = _ALIASES[self.family]
        if not isinstance(self.columns, list) or not self.columns:
            raise SpecError("columns must be a non-empty array", path="columns")
        names, responses = set(), []
        for i, col in enumerate(self.columns):
            where = f"columns[{i}]"
            if not isinstance(col, dict) or not isinstance(col.get("name"), str):
                raise SpecError("each column needs a string name", path=f"{where}.name")
            if col["name"] in names:
                raise SpecError(f"duplicate column {col['name']!r}", path=f"{where}.name")
            names.add(col["name"])
            kind = col.get("type")
            if kind == "response":
                responses.append(col["name"])
            elif kind == "numeric":
                if not float(col.get("sd", 1.0)) >= 0:
                    raise SpecError("sd must be >= 0", path=f"{where}.sd")
            elif kind in ("categorical", "binary", "count"):
                levels, probs = col.get("levels"), col.get("probs")
                if not levels or not isinstance(levels, list):
                    raise SpecError("levels must be a non-empty array", path=f"{where}.levels")
                if probs is None:
                    probs = [1.0 / len(levels)] * len(levels)
                    col["probs"] = probs
                if len(probs) != len(levels):
                    raise SpecError("probs and levels differ in length", path=f"{where}.probs")
                if any(pr < 0 for pr in probs) or abs(math.fsum(probs) - 1.0) > 1e-12:
                    raise SpecError("probs must be non-negative and sum to 1 within 1e-12",
                                    path=f"{where}.probs")
                if kind == "binary" and len(levels) != 2:
                    raise SpecError("binary columns need exactly 2 levels", path=f"{where}.levels")
                if kind == "count" and any(int(v) != v or v < 0 for v in levels):
                    raise SpecError("count levels must be non-negative integers",
                                    path=f"{where}.levels")
            else:
                raise SpecError(f"unknown column type {kind!r}", path=f"{where}.type")
        if len(responses) != 1:
            raise SpecError("exactly one column must have type 'response'", path="columns")
        self.response = responses[0]
        if self.family == MULTINOMIAL:
            if self.response_levels is not None:
                self.num_categories = len(self.response_levels)
            if self.num_categories is None or self.num_categories < 3:
                raise SpecError("multinomial configs need num_categories >= 3",
                                path="num_categories")
            if self.response_levels is None:
                self.response_levels = [str(k) for k in range(1, self.num_categories + 1)]
        elif self.family == BINOMIAL:
            self.response_levels = [str(v) for v in (self.response_levels or ["0", "1"])]
            if len(self.response_levels) != 2:
                raise SpecError("binomial response_levels must have 2 entries",
                                path="response_levels")
        if not float(self.noise_sd) >= 0:
            raise SpecError("noise_sd must be >= 0", path="noise_sd")

    @classmethod
    def from_json(cls, doc) -> "SynthConfig":
        if not isinstance(doc, dict):
            raise SpecError("config must be a JSON object", path="")
        known = {"n", "seed", "family", "columns", "beta", "noise_sd", "num_categories",
                 "response_levels"}
        extra = set(doc) - known
        if extra:
            raise SpecError(f"unknown keys {sorted(extra)}", path=sorted(extra)[0])
        for key in ("n", "seed", "family", "columns"):
            if key not in doc:
                raise SpecError(f"missing required key {key!r}", path=key)
        return cls(**json.loads(json.dumps(doc)))

    def to_json(self) -> dict:
        doc = {"n": self.n, "seed": self.seed, "family": self.family, "columns": self.columns,
               "beta": self.beta, "noise_sd": self.noise_sd}
        if self.family == MULTINOMIAL:
            doc["num_categories"] = self.num_categories
        if self.response_levels is not None:
            doc["response_levels"] = self.response_levels
        return doc

    def model_spec(self) -> ModelSpec:
        types = {}
        for col in self.columns:
            if col["type"] != "response":
                types[col["name"]] = _TYPE_MAP[col["type"]]
        types[self.response] = {GAUSSIAN: NUMERIC, POISSON: COUNT, BINOMIAL: BINARY,
                                MULTINOMIAL: CATEGORICAL}[self.family]
        predictors = [c["name"] for c in self.columns if c["type"] != "response"]
        return ModelSpec(response=self.response, predictors=predictors, family=self.family,
                         column_types=types)

    def _schema(self) -> Schema:
        cols, levels = [], {}
        spec = self.model_spec()
        for col in self.columns:
            kind = spec.column_types[col["name"]]
            cols.append((col["name"], kind))
            if kind in (CATEGORICAL, BINARY):
                if col["type"] == "response":
                    lv = list(self.response_levels)
                else:
                    lv = [str(v) for v in col["levels"]]
                levels[col["name"]] = sorted(lv, key=lambda s: s.encode("utf-8"))
        return Schema(cols, levels, self.n)


def _fmt(values, decimals):
    return np.char.mod(f"%.{decimals}f", values)


def _true_beta(config: SynthConfig, layout):
    labels = layout.labels
    k = layout.family.equations
    unknown = sorted(set(config.beta) - set(labels))
    if unknown:
        raise SpecError(f"beta has labels not in the design: {unknown}; design labels are "
                        f"{labels}", path="beta")
    B = np.zeros((k, len(labels)))
    for j, label in enumerate(labels):
        val = config.beta.get(label, 0.0)
        if k > 1:
            val = np.asarray(val if isinstance(val, list) else [val] * k, dtype=float)
            if val.shape != (k,):
                raise SpecError(f"beta[{label!r}] needs {k} values", path=f"beta.{label}")
            B[:, j] = val
        else:
            if isinstance(val, list):
                raise SpecError(f"beta[{label!r}] must be a number", path=f"beta.{label}")
            B[0, j] = float(val)
    return B.ravel()


def generate_synthetic(config: SynthConfig, out_path) -> dict:
    """Write a synthetic CSV to ``out_path`` and a ground-truth JSON beside it.

    Returns the ground-truth record, also saved as ``<out_path>.truth.json``.
    """
    if isinstance(config, dict):
        config = SynthConfig.from_json(config)
    spec = config.model_spec()
    schema = config._schema()
    layout = design_layout(schema, spec)
    beta = _true_beta(config, layout)
    rng = np.random.default_rng(config.seed)
    header = [c["name"] for c in config.columns]
    out_path = os.fspath(out_path)

    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for start in range(0, config.n, BLOCK_ROWS):
            m = min(BLOCK_ROWS, config.n - start)
            cells = {}
            for col in config.columns:
                kind = col["type"]
                if kind == "numeric":
                    vals = rng.normal(float(col.get("mean", 0.0)), float(col.get("sd", 1.0)), m)
                    cells[col["name"]] = _fmt(vals, int(col.get("decimals", 4)))
                elif kind in ("categorical", "binary", "count"):
                    idx = rng.choice(len(col["levels"]), size=m, p=np.asarray(col["probs"]))
                    cells[col["name"]] = np.asarray([str(v) for v in col["levels"]])[idx]
                else:
                    cells[col["name"]] = np.full(m, "0" if config.family != MULTINOMIAL
                                                 else config.response_levels[0])
            if config.family in (BINOMIAL, MULTINOMIAL):
                cells[config.response] = np.full(m, config.response_levels[0])
            df = pd.DataFrame(cells, columns=header)
            X, _ = _encode(df, layout, start)
            if config.family == MULTINOMIAL:
                k = layout.family.equations
                eta = X @ beta.reshape(k, layout.p).T
                full = np.concatenate([np.zeros((m, 1)), eta], axis=1)
                full -= full.max(axis=1, keepdims=True)
                P = np.exp(full)
                P /= P.sum(axis=1, keepdims=True)
                u = rng.random(m)
                cat = np.minimum((np.cumsum(P, axis=1) < u[:, None]).sum(axis=1), k)
                y = np.asarray(config.response_levels)[cat]
            else:
                eta = X @ beta
                if config.family == GAUSSIAN:
                    y = _fmt(eta + float(config.noise_sd) * rng.normal(size=m), 6)
                elif config.family == BINOMIAL:
                    prob = 1.0 / (1.0 + np.exp(-eta))
                    y = np.asarray(config.response_levels)[(rng.random(m) < prob).astype(int)]
                else:
                    y = rng.poisson(np.exp(eta)).astype(str)
            df[config.response] = y
            df.to_csv(fh, header=False, index=False, lineterminator="\n")

    truth = {"seed": config.seed, "family": config.family, "n": config.n,
             "labels": layout.coefficient_labels(),
             "beta_true": [float(b) for b in beta],
             "model_spec": spec.to_json(), "config": config.to_json()}
    with open(out_path + ".truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return truth


def fit_full(csv_source, spec: ModelSpec, **kwargs):
    """Reference fit on all rows at once (a single sequential subset)."""
    kwargs.pop("subsets", None)
    kwargs.pop("division", None)
    return run(csv_source, spec, mode="full", **kwargs).combined


@dataclass
class BaselineFit:
    """Coefficients and standard errors from an external tool."""

    labels: list
    beta: np.ndarray
    se: np.ndarray
    stat: np.ndarray | None = None
    p_value: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None


def load_baseline(path) -> BaselineFit:
    """Read a ``label,estimate,se`` CSV."""
    labels, est, se = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"label", "estimate", "se"} - set(reader.fieldnames or [])
        if missing:
            raise SpecError(f"baseline CSV lacks columns {sorted(missing)}", path=str(path))
        for row in reader:
            labels.append(row["label"].strip())
            est.append(float(row["estimate"]))
            se.append(float(row["se"]))
    return BaselineFit(labels, np.asarray(est), np.asarray(se))


@dataclass
class Tolerances:
    coef: float | None = None
    se: float | None = None


def rel_diff(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(np.abs(b), REL_EPS)


def _p_gap(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    gap = np.abs(a - b)
    gap[(a < P_FLOOR) & (b < P_FLOOR)] = 0.0
    return gap


@dataclass
class ComparisonReport:
    """Per-coefficient comparison of a D&R fit against a reference.

    ``rel_diff = |a - b| / max(|b|, 1e-12)`` with ``b`` the reference.
    p-values both below 1e-8 count as equal.
    """

    rows: list
    summary: dict
    tolerances: Tolerances
    passed: bool

    def to_json(self) -> dict:
        return {"rows": self.rows, "summary": self.summary,
                "tolerances": {"coef": self.tolerances.coef, "se": self.tolerances.se},
                "passed": self.passed,
                "legend": {"rel_diff": "|dr - full| / max(|full|, 1e-12)",
                           "p_values": f"p-values both below {P_FLOOR:g} are treated as equal",
                           "tol_coef": "bound on abs_diff of estimates",
                           "tol_se": "bound on se_rel_diff"}}

    def render(self) -> str:
        head = ["label", "dr_est", "full_est", "abs_diff", "rel_diff", "dr_se", "full_se",
                "se_rel", "dr_stat", "full_stat", "dr_p", "full_p"]

        def f(v):
            if v is None:
                return "-"
            if isinstance(v, str):
                return v
            return f"{v:.6g}"

        body = [[f(r[h if h != "dr_est" and h != "full_est" else
                   ("dr_estimate" if h == "dr_est" else "full_estimate")]) if h != "se_rel"
                 else f(r["se_rel_diff"]) for h in head] for r in self.rows]
        widths = [max(len(h), *(len(b[i]) for b in body)) for i, h in enumerate(head)]
        lines = ["  ".join(h.rjust(w) if i else h.ljust(w) for i, (h, w) in
                           enumerate(zip(head, widths)))]
        lines.append("  ".join("-" * w for w in widths))
        for b in body:
            lines.append("  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in
                                   enumerate(zip(b, widths))))
        s = self.summary
        lines.append("")
        lines.append(f"max abs_diff {s['max_abs_diff']:.3g}  max rel_diff {s['max_rel_diff']:.3g}"
                     f"  max se_rel_diff {s['max_se_rel_diff']:.3g}")
        lines.append(f"p-values below {P_FLOOR:g} on both sides count as equal")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def _opt(arr, j):
    return None if arr is None else float(arr[j])


def compare_fits(dr, full, tolerances: Tolerances | None = None) -> ComparisonReport:
    tolerances = tolerances or Tolerances()
    la, lb = list(dr.labels), list(full.labels)
    if la != lb:
        diff = set(la) ^ set(lb)
        raise LabelMismatch("coefficient labels differ" + ("" if diff else " in order"), diff)
    abs_d = np.abs(dr.beta - full.beta)
    rel_d = rel_diff(dr.beta, full.beta)
    se_rel = rel_diff(dr.se, full.se)
    stat_rel = rel_diff(dr.stat, full.stat) if full.stat is not None else None
    p_gap = _p_gap(dr.p_value, full.p_value) if full.p_value is not None else None
    rows = []
    for j, label in enumerate(la):
        rows.append({
            "label": label,
            "dr_estimate": float(dr.beta[j]), "full_estimate": float(full.beta[j]),
            "abs_diff": float(abs_d[j]), "rel_diff": float(rel_d[j]),
            "dr_se": float(dr.se[j]), "full_se": float(full.se[j]),
            "se_rel_diff": float(se_rel[j]),
            "dr_stat": float(dr.stat[j]), "full_stat": _opt(full.stat, j),
            "dr_p": float(dr.p_value[j]), "full_p": _opt(full.p_value, j),
            "dr_ci": [float(dr.ci_low[j]), float(dr.ci_high[j])],
            "full_ci": None if full.ci_low is None else [float(full.ci_low[j]),
                                                          float(full.ci_high[j])],
        })
    summary = {
        "max_abs_diff": float(abs_d.max(initial=0.0)),
        "max_rel_diff": float(rel_d.max(initial=0.0)),
        "max_se_rel_diff": float(se_rel.max(initial=0.0)),
        "max_stat_rel_diff": None if stat_rel is None else float(stat_rel.max(initial=0.0)),
        "max_p_diff": None if p_gap is None else float(p_gap.max(initial=0.0)),
    }
    passed = True
    if tolerances.coef is not None:
        passed &= summary["max_abs_diff"] <= tolerances.coef
    if tolerances.se is not None:
        passed &= summary["max_se_rel_diff"] <= tolerances.se
    return ComparisonReport(rows, summary, tolerances, bool(passed))
