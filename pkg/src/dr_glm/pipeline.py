"""End-to-end divide-and-recombine run over a CSV file.

scan -> plan -> per-subset fits (thread pool) -> recombine -> inference.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ALL_COMPLETED, FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass

import numpy as np

from . import __version__, _kernels
from .dataio import DesignLayout, ModelSpec, Schema, design_layout, read_column, scan_schema, \
    stream_subsets
from .errors import DRGLMError, PartitionError
from .glm import GAUSSIAN, FitConfig, GramStats, fit_irls, fit_ols, merge_gram
from .partition import (REPLICATE, SEQUENTIAL, STRATIFIED, PartitionPlan, replicate_plan,
                        sequential_plan, stratified_plan)
from .recombine import AGGREGATED, CombinedFit, recombine

DIVISIONS = (SEQUENTIAL, REPLICATE, STRATIFIED)


@dataclass
class RunResult:
    combined: CombinedFit
    fits: list
    plan: PartitionPlan
    schema: Schema
    layout: DesignLayout
    manifest: dict


def default_threads() -> int:
    raw = os.environ.get("DR_GLM_THREADS", "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        return 1


def file_digest(path, block=1 << 20) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        while chunk := fh.read(block):
            h.update(chunk)
    return h.hexdigest()


def spec_digest(spec: ModelSpec) -> str:
    return hashlib.sha256(json.dumps(spec.to_json(), sort_keys=True).encode()).hexdigest()


def make_plan(n: int, subsets: int, division: str = SEQUENTIAL, seed=None,
              csv_source=None, strat_column=None, max_subset_rows=None,
              min_rows=None) -> PartitionPlan:
    """Build a plan from CLI-style arguments.

    For stratified division ``subsets`` is ignored unless
    ``max_subset_rows`` is absent, in which case large levels are split
    to about ``ceil(n / subsets)`` rows.
    """
    if division == SEQUENTIAL:
        return sequential_plan(n, subsets)
    if division == REPLICATE:
        if seed is None:
            raise PartitionError("replicate division requires a seed")
        return replicate_plan(n, subsets, seed)
    if division == STRATIFIED:
        if strat_column is None:
            raise PartitionError("stratified division requires a column")
        values = read_column(csv_source, strat_column)
        if max_subset_rows is None:
            max_subset_rows = -(-n // max(1, int(subsets)))
        return stratified_plan(values, max_subset_rows, column=strat_column, min_rows=min_rows)
    raise PartitionError(f"unknown division {division!r}; expected one of {DIVISIONS}")


def _fit_block(family, chunks, subset, config):
    t0 = time.perf_counter()
    X = np.concatenate([c.X for c in chunks]) if len(chunks) > 1 else chunks[0].X
    y = np.concatenate([c.y for c in chunks]) if len(chunks) > 1 else chunks[0].y
    fit = fit_irls(family, X, y, config, subset_index=subset, warn=False)
    return fit, (time.perf_counter() - t0) * 1e3


def _fit_gram(parts, subset):
    t0 = time.perf_counter()
    g = merge_gram(parts)
    fit = fit_ols(g.gram_xx, g.gram_xy, g.yy, g.n, subset_index=subset)
    return fit, (time.perf_counter() - t0) * 1e3


def run(csv_source, spec: ModelSpec, subsets: int = 1, division: str = SEQUENTIAL,
        seed=None, strat_column=None, plan: PartitionPlan | None = None,
        chunk_rows: int = 100_000, threads: int | None = None,
        config: FitConfig | None = None, variance_method: str = AGGREGATED,
        mode: str = "dr", schema_cache: bool = False) -> RunResult:
    """Fit ``spec`` on ``csv_source`` by divide and recombine.

    ``mode="full"`` forces a single sequential subset. Gaussian subsets
    are reduced chunk by chunk to Gram statistics; the other families
    materialise one subset at a time for Newton iterations.
    """
    path = os.fspath(csv_source)
    threads = default_threads() if threads is None else max(1, int(threads))
    config = config or FitConfig()
    timings = {}
    t_all = time.perf_counter()

    t0 = time.perf_counter()
    schema = scan_schema(path, spec.declarations(), cache=schema_cache)
    layout = design_layout(schema, spec)
    timings["scan_ms"] = (time.perf_counter() - t0) * 1e3

    if mode == "full":
        plan = sequential_plan(schema.row_count, 1)
    elif plan is None:
        plan = make_plan(schema.row_count, subsets, division, seed=seed, csv_source=path,
                         strat_column=strat_column, min_rows=layout.family.dim(layout.p))

    family = layout.family
    fits, subset_ms = [], {}
    peak_chunk = 0
    t0 = time.perf_counter()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        pending = {}

        def drain(block):
            done, _ = wait(list(pending),
                           return_when=ALL_COMPLETED if block else FIRST_COMPLETED)
            for fut in done:
                k = pending.pop(fut)
                fit, ms = fut.result()
                fits.append(fit)
                subset_ms[k] = ms

        def submit(k, payload):
            if family.kind == GAUSSIAN:
                fut = pool.submit(_fit_gram, payload, k)
            else:
                fut = pool.submit(_fit_block, family, payload, k, config)
            pending[fut] = k
            while len(pending) >= threads:
                drain(False)

        try:
            current, payload = None, []
            for chunk in stream_subsets(path, plan, schema, spec, chunk_rows):
                peak_chunk = max(peak_chunk, chunk.X.shape[0])
                if chunk.subset != current:
                    if current is not None:
                        submit(current, payload)
                    current, payload = chunk.subset, []
                if family.kind == GAUSSIAN:
                    xx, xy, yy = _kernels.gram(chunk.X, chunk.y)
                    payload.append(GramStats(xx, xy, float(yy), chunk.X.shape[0]))
                else:
                    payload.append(chunk)
            if current is not None:
                submit(current, payload)
            if pending:
                drain(True)
        except BaseException:
            for fut in pending:
                fut.cancel()
            raise
    timings["fit_ms"] = (time.perf_counter() - t0) * 1e3
    timings["subset_fit_ms"] = {str(k): subset_ms[k] for k in sorted(subset_ms)}

    fits.sort(key=lambda f: f.subset_index)
    manifest = {
        "tool": {"name": "dr-glm", "version": __version__, "kernel_backend": _kernels.BACKEND_NAME},
        "mode": mode,
        "input": {"path": os.path.abspath(path), "sha256": file_digest(path)},
        "spec_sha256": spec_digest(spec),
        "plan": plan.summary(),
        "subsets": [f.convergence_record() for f in fits],
        "timing": timings,
        "peak_chunk_rows": peak_chunk,
        "threads": threads,
    }
    t0 = time.perf_counter()
    try:
        combined = recombine(fits, family, schema.row_count, layout.p,
                             confidence=spec.confidence, labels=layout.coefficient_labels(),
                             variance_method=variance_method)
    except DRGLMError as exc:
        exc.manifest = manifest
        raise
    timings["recombine_ms"] = (time.perf_counter() - t0) * 1e3
    timings["total_ms"] = (time.perf_counter() - t_all) * 1e3
    return RunResult(combined, fits, plan, schema, layout, manifest)


def result_document(combined: CombinedFit, manifest_ref: str | None = None) -> dict:
    """Result JSON: one entry per coefficient plus run-level fields."""
    doc = {
        "family": combined.family.kind,
        "method": combined.method,
        "S": combined.S,
        "n": combined.n,
    }
    if combined.df is not None:
        doc["df"] = combined.df
    if combined.family.num_categories is not None:
        doc["num_categories"] = combined.family.num_categories
    doc.update({
        "confidence": combined.confidence,
        "variance_method": combined.variance_method,
        "stat_name": combined.stat_name,
        "converged": True,
        "manifest_ref": manifest_ref,
        "coefficients": combined.coefficient_rows(),
    })
    if combined.flags:
        labels = combined.labels
        doc["flags"] = [dict(f, label=labels[f["index"]] if labels else None)
                        for f in combined.flags]
    return doc
