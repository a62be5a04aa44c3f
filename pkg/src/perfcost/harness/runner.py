"""Replication fan-out, merging and artifact emission.

Each replication runs in its own worker and writes only inside
``<out>/reps/<name>/``. The parent then merges the per-replication rows, in
replication order, into ``metrics.csv`` through a temporary file and
``os.replace``, so the merged CSV is byte-identical across runs and thread
counts.
"""

import json
import logging
import multiprocessing
import os
import tempfile
import traceback
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from perfcost.harness import experiments, plots
from perfcost.harness.summary import GROUP_KEYS, aggregate, read_csv, rows_to_csv
from perfcost.potentials import potential_from_dict

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

_BLAS_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def thread_count(cfg, override=None):
    """Worker count: explicit override, then config, then PERF_COST_THREADS, then CPUs."""
    for v in (override, cfg.threads, os.environ.get("PERF_COST_THREADS")):
        if v not in (None, ""):
            n = int(v)
            if n < 1:
                raise ValueError("thread count must be positive")
            return n
    return os.cpu_count() or 1


def _run_one(cfg, job, rep_dir):
    """Worker body: never raises, returns ``(rows, error)``."""
    os.makedirs(rep_dir, exist_ok=True)
    try:
        rows = experiments.run_replication(cfg, job, rep_dir)
    except Exception as e:  # reported per replication, the run continues
        err = {"replication": job["rep"], "job": job, "type": type(e).__name__, "message": str(e),
               "traceback": traceback.format_exc()}
        with open(os.path.join(rep_dir, "error.json"), "w") as fh:
            json.dump(err, fh, indent=2, sort_keys=True)
        return None, err
    atomic_write(os.path.join(rep_dir, "metrics.csv"), rows_to_csv(rows, experiments.COLUMNS[cfg.kind]))
    return rows, None


def _single_threaded_blas():
    saved = {k: os.environ.get(k) for k in _BLAS_VARS}
    for k in _BLAS_VARS:
        os.environ[k] = "1"
    return saved


def _restore(saved):
    for k, v in saved.items():
        if v is None:
            os.environ.pop(k, None)
        else:
            os.environ[k] = v


def run_experiment(cfg, out_dir=None, threads=None):
    """Run every replication of ``cfg`` and write the artifacts.

    Returns:
        0 when every replication succeeded, 3 when any failed (successful
        rows are still merged and ``errors.json`` lists the failures).
    """
    out = os.path.abspath(out_dir or cfg.resolve(cfg.output))
    os.makedirs(os.path.join(out, "reps"), exist_ok=True)
    atomic_write(os.path.join(out, "config.json"), cfg.to_json())
    specs = experiments.replications(cfg)
    dirs = [os.path.join(out, "reps", s["rep"]) for s in specs]
    workers = min(thread_count(cfg, threads), len(specs))
    log.info("%s: %d replications on %d worker(s)", cfg.kind, len(specs), workers)

    if workers <= 1:
        results = [_run_one(cfg, s, d) for s, d in zip(specs, dirs)]
    else:
        saved = _single_threaded_blas()
        try:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                futures = [pool.submit(_run_one, cfg, s, d) for s, d in zip(specs, dirs)]
                results = [f.result() for f in futures]
        finally:
            _restore(saved)

    rows, errors = [], []
    for r, e in results:
        if e is None:
            rows.extend(r)
        else:
            errors.append(e)
            log.error("replication %s failed: %s: %s", e["replication"], e["type"], e["message"])
    atomic_write(os.path.join(out, "metrics.csv"), rows_to_csv(rows, experiments.COLUMNS[cfg.kind]))
    err_path = os.path.join(out, "errors.json")
    if errors:
        atomic_write(err_path, json.dumps(errors, indent=2, sort_keys=True) + "\n")
    elif os.path.exists(err_path):
        os.remove(err_path)
    if rows:
        finalize(cfg, rows, out)
    return EXIT_RUNTIME if errors else EXIT_OK


def _value_columns(kind):
    skip = set(GROUP_KEYS[kind]) | {"seed", "family", "within_bound"}
    return [c for c in experiments.COLUMNS[kind] if c not in skip]


def finalize(cfg, rows, out):
    """Summary JSON and plots from merged rows (all as loaded from CSV text)."""
    text_rows, _ = read_csv(os.path.join(out, "metrics.csv"))
    kind = cfg.kind
    if kind == "ols-oracle":
        atomic_write(os.path.join(out, "ols_oracle.json"), json.dumps(
            {k: float(v) for k, v in rows[0].items()}, indent=2, sort_keys=True) + "\n")
        return
    agg = aggregate(text_rows, GROUP_KEYS[kind], _value_columns(kind))
    summary = {"kind": kind, "groups": agg}
    if kind == "convergence-study":
        by_n = {}
        for r in text_rows:
            by_n.setdefault(int(r["n"]), []).append(int(r["within_bound"]))
        summary["bound_hold_rate"] = {str(n): float(np.mean(v)) for n, v in sorted(by_n.items())}
    atomic_write(os.path.join(out, "summary.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _plots(cfg, agg, out)


def _plots(cfg, agg, out):
    kind = cfg.kind
    if kind == "fit-cost":
        for col in ("M_error_fro", "map_error"):
            s = plots.median_series(agg, "n", col, "method")
            if s:
                plots.line_plot(s, os.path.join(out, f"{col}_vs_n.svg"), "n per distribution", f"median {col}")
    elif kind == "fit-map-eval":
        c0 = min(e["c"] for e in agg)
        at_c = [e for e in agg if e["c"] == c0]
        for col in ("phi_error", "map_error"):
            plots.line_plot(plots.median_series(at_c, "n", col, "benefit"), os.path.join(out, f"{col}_vs_n.svg"),
                            "n per distribution", f"median {col}", logx=True)
        _phi_overlay(cfg, out)
    elif kind == "convergence-study":
        s = plots.median_series(agg, "n", "sigma_error_op") + plots.median_series(agg, "n", "bound")
        plots.line_plot(s, os.path.join(out, "sigma_error_vs_n.svg"), "n", "operator-norm error", logx=True, logy=True)
    else:
        for col in ("cross_entropy", "accuracy"):
            s = plots.median_series(agg, "K", col, "method")
            if s:
                plots.line_plot(s, os.path.join(out, f"{col}_vs_K.svg"), "deployments K", f"median performative {col}")


def _phi_overlay(cfg, out):
    n = max(cfg.data["n"])
    seed = cfg.run_seeds[0]
    rep_dir = os.path.join(out, "reps", f"s{seed}_n{n}")
    grid, truth = experiments.phi_truth(cfg)
    est = []
    for desc in cfg.world["fit_benefits"]:
        path = os.path.join(rep_dir, f"phi_prime_{experiments.benefit_label(desc)}.json")
        if not os.path.exists(path):
            continue
        with open(path) as fh:
            g = potential_from_dict(json.load(fh)).derivative(grid)
        est.append((experiments.benefit_label(desc), g - g.mean()))
    if est:
        plots.overlay_plot(grid, truth, est, os.path.join(out, "phi_prime_overlay.svg"))
