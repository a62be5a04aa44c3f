"""Tidy-CSV I/O and median/IQR aggregation shared by the runner and the report."""

import csv
import io

import numpy as np

GROUP_KEYS = {
    "fit-cost": ["method", "K", "n"],
    "fit-map-eval": ["benefit", "c", "n"],
    "convergence-study": ["n"],
    "optimize": ["method", "K", "n"],
    "benchmark": ["method", "K", "n"],
    "ols-oracle": [],
}


def fmt(v):
    """Shortest round-tripping text for a cell; blanks stay blank."""
    if v is None or v == "":
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader), reader.fieldnames or []


def _num(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return np.nan


def _key_value(v):
    x = _num(v)
    if np.isnan(x):
        return v
    return int(x) if x == int(x) and "." not in str(v) else x


def aggregate(rows, group_keys, value_columns):
    """Median, quartiles and count of each value column per group.

    Blank cells are skipped; a group whose column is all blank gets ``None``.
    Groups come out in sorted key order.
    """
    groups = {}
    for r in rows:
        key = tuple(_key_value(r[k]) for k in group_keys)
        groups.setdefault(key, []).append(r)
    out = []
    for key in sorted(groups, key=lambda k: tuple((isinstance(x, str), x) for x in k)):
        entry = dict(zip(group_keys, key))
        for c in value_columns:
            vals = np.array([_num(r.get(c)) for r in groups[key]])
            vals = vals[~np.isnan(vals)]
            if vals.size:
                q1, med, q3 = np.percentile(vals, [25, 50, 75])
                entry[c] = {"median": float(med), "q1": float(q1), "q3": float(q3), "iqr": float(q3 - q1),
                            "count": int(vals.size)}
            else:
                entry[c] = None
        out.append(entry)
    return out
