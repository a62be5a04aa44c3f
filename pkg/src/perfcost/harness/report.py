"""Markdown summary of a results directory."""

import json
import os

from perfcost.errors import ReportError
from perfcost.harness.experiments import COLUMNS
from perfcost.harness.summary import GROUP_KEYS, aggregate, read_csv

REQUIRED = ("config.json", "metrics.csv")


def _cell(stat, digits=4):
    if stat is None:
        return "n/a"
    return f"{stat['median']:.{digits}g} ± {stat['iqr']:.2g}"


def _table(header, body):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(str(c) for c in row) + " |" for row in body]
    return "\n".join(lines)


def _pivot(agg, row_key, col_key, value, fixed=None):
    """Methods (or other ``row_key``) as rows, ``col_key`` values as columns."""
    fixed = fixed or {}
    entries = [e for e in agg if all(e[k] == v for k, v in fixed.items())]
    rows = list(dict.fromkeys(e[row_key] for e in entries))
    cols = sorted(set(e[col_key] for e in entries))
    lookup = {(e[row_key], e[col_key]): e[value] for e in entries}
    body = [[r] + [_cell(lookup.get((r, c))) for c in cols] for r in rows]
    return _table([row_key] + [f"{col_key}={c}" for c in cols], body)


def _by_n(agg, value_cols):
    body = [[e["n"]] + [_cell(e[c]) for c in value_cols] for e in agg]
    return _table(["n"] + [f"median {c} ± IQR" for c in value_cols], body)


def emit_report(results_dir):
    """Write ``report.md`` into ``results_dir`` and return its path.

    Raises:
        ReportError: a required file is missing or a CSV lacks required columns.
    """
    missing = [f for f in REQUIRED if not os.path.isfile(os.path.join(results_dir, f))]
    if missing:
        raise ReportError(f"{results_dir}: missing {', '.join(missing)}")
    with open(os.path.join(results_dir, "config.json")) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as e:
            raise ReportError(f"config.json is not valid JSON: {e}") from e
    kind = cfg.get("kind")
    if kind not in COLUMNS:
        raise ReportError(f"config.json has unknown kind {kind!r}")
    rows, header = read_csv(os.path.join(results_dir, "metrics.csv"))
    absent = [c for c in COLUMNS[kind] if c not in header]
    if absent:
        raise ReportError(f"metrics.csv is missing columns: {', '.join(absent)}")
    if not rows:
        raise ReportError("metrics.csv has no rows")

    value_cols = [c for c in COLUMNS[kind] if c not in set(GROUP_KEYS[kind]) | {"seed", "family", "within_bound"}]
    agg = aggregate(rows, GROUP_KEYS[kind], value_cols)
    seeds = sorted({int(r["seed"]) for r in rows if r.get("seed", "") != ""})
    parts = [f"# {kind} results", "", f"Replications: {len(rows)} rows over seeds {seeds}." if seeds else "",
             "Cells show median ± interquartile range.", ""]

    if kind in ("benchmark", "optimize"):
        for n in sorted({e["n"] for e in agg}):
            for col in ("cross_entropy", "accuracy", "M_error_fro"):
                parts += [f"## {col} (n={n})", "", _pivot(agg, "method", "K", col, {"n": n}), ""]
    elif kind == "fit-cost":
        for col in ("M_error_fro", "map_error", "phi_error"):
            if any(e[col] for e in agg):
                parts += [f"## {col}", "", _pivot(agg, "method", "n", col), ""]
    elif kind == "fit-map-eval":
        for c in sorted({e["c"] for e in agg}):
            for col in ("phi_error", "map_error"):
                parts += [f"## {col} (c={c})", "", _pivot(agg, "benefit", "n", col, {"c": c}), ""]
    elif kind == "convergence-study":
        parts += ["## Operator-norm error of the paired estimate", "",
                  _by_n(agg, ["sigma_error_op", "bound", "gamma_min", "gamma_max"]), ""]
        hold = {}
        for r in rows:
            hold.setdefault(int(r["n"]), []).append(int(r["within_bound"]))
        parts += ["Bound held: " + ", ".join(f"n={n}: {sum(v)}/{len(v)}" for n, v in sorted(hold.items())), ""]
    else:
        r = rows[0]
        parts += [_table(["quantity", "value"], [[k, r[k]] for k in COLUMNS[kind]]), ""]

    errors = os.path.join(results_dir, "errors.json")
    if os.path.isfile(errors):
        with open(errors) as fh:
            errs = json.load(fh)
        parts += ["## Failed replications", ""] + [f"- {e['replication']}: {e['type']}: {e['message']}" for e in errs] + [""]

    path = os.path.join(results_dir, "report.md")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
    return path
