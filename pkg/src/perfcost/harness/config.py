"""JSON experiment configuration.

A config is one JSON object::

    {
      "kind": "benchmark",
      "world": {...},          # kind-specific ground truth
      "data": {"n": [250], "K": [20], "deploy_cov": 0.25, "csv": null},
      "solver": {"bcd": {...}, "net": {...}, "opt": {...}, "rgd": {...}},
      "seeds": [0, 1, 2],
      "seed_offset": 0,
      "output": "results/benchmark",
      "threads": null
    }

Missing fields take the defaults below; ``to_dict`` always writes the fully
populated form, so parse -> serialize -> parse is a fixed point.
"""

import copy
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from perfcost.errors import ConfigError

KINDS = ("fit-cost", "fit-map-eval", "convergence-study", "optimize", "benchmark", "ols-oracle")

_M01 = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]]
_CREDIT_LABELS = {"alpha": 0.5, "beta": [-1.2, -0.6, -0.4]}

WORLD_DEFAULTS = {
    "fit-cost": {
        "family": "quadratic",
        "M": _M01,
        "benefit": "abs_linear",
        "theta_center": [-1.2, -0.6, -0.4],
        "sigma": 0.1,
        "theta": 0.5,
        "hidden": 5,
        "dim": 5,
        "fit_benefit": {"kind": "power", "p": 0.5},
    },
    "fit-map-eval": {
        "sigma": 0.1,
        "theta": 0.5,
        "true_benefit": {"kind": "power", "p": 0.5},
        "fit_benefits": [
            {"kind": "power", "p": 0.5},
            {"kind": "log"},
            {"kind": "power", "p": 1.0 / 3.0},
        ],
        "c_values": [1.0],
        "grid_points": 200,
    },
    "convergence-study": {
        "Sigma": [[1.0, 0.3], [0.3, 0.5]],
        "noise": 1.0,
        "thetas": [[1.0, 0.2], [0.2, 1.0]],
    },
    "optimize": {"M": _M01, "label_model": _CREDIT_LABELS, "fit": "bcd"},
    "benchmark": {"M": _M01, "label_model": _CREDIT_LABELS, "n_eval": 10000},
    "ols-oracle": {"theta_star": [1.0, 0.0], "M": [[1.0, 0.0], [0.0, 1.0]], "sigma": 1.0},
}

DATA_DEFAULTS = {
    "fit-cost": {"n": [250], "K": [20]},
    "fit-map-eval": {"n": [10, 25, 50, 100, 200], "K": [1]},
    "convergence-study": {"n": [100, 400, 1600], "K": [2]},
    "optimize": {"n": [250], "K": [20]},
    "benchmark": {"n": [250], "K": [1, 5, 10, 20]},
    "ols-oracle": {"n": [100000], "K": [1]},
}

SOLVER_DEFAULTS = {
    "bcd": {"max_outer_iters": 50, "tol": 1e-6, "bary_max_iter": 10},
    "net": {"lr": 0.01, "epochs": 500, "inner_steps": 5, "optimizer": "adam"},
    "opt": {"method": "lbfgs", "iters": 2000, "tol": 1e-10},
    "rgd": {"eta": 0.1},
}

# dict-valued fields replaced whole rather than merged key by key
_ATOMIC = {"label_model", "true_benefit", "fit_benefit"}

TOP_KEYS = {"kind", "world", "data", "solver", "seeds", "seed_offset", "output", "threads"}
DATA_KEYS = {"n", "K", "deploy_cov", "csv"}
CSV_KEYS = {"path", "feature_columns", "label_column"}


def _merge(base, over, where):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}.{k}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in _ATOMIC:
            out[k] = _merge(base[k], v, f"{where}.{k}")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _int_list(v, name):
    vals = v if isinstance(v, list) else [v]
    if not vals or not all(isinstance(x, int) and not isinstance(x, bool) for x in vals):
        raise ConfigError(f"{name} must be an integer or a non-empty list of integers")
    return vals


@dataclass
class ExperimentConfig:
    kind: str
    world: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    seeds: list = field(default_factory=lambda: [0])
    seed_offset: int = 0
    output: str = "results"
    threads: Optional[int] = None
    base_dir: str = field(default=".", compare=False, repr=False)

    @classmethod
    def from_dict(cls, d, base_dir="."):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        kind = d.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {list(KINDS)}, got {kind!r}")
        world = _merge(WORLD_DEFAULTS[kind], d.get("world", {}), "world")
        data_in = d.get("data", {})
        extra = set(data_in) - DATA_KEYS
        if extra:
            raise ConfigError(f"unknown key(s) in data: {sorted(extra)}")
        data = {"deploy_cov": 0.25, "csv": None, **copy.deepcopy(DATA_DEFAULTS[kind]), **copy.deepcopy(data_in)}
        solver = _merge(SOLVER_DEFAULTS, d.get("solver", {}), "solver")
        cfg = cls(
            kind=kind,
            world=world,
            data=data,
            solver=solver,
            seeds=_int_list(d.get("seeds", [0]), "seeds"),
            seed_offset=d.get("seed_offset", 0),
            output=d.get("output", "results"),
            threads=d.get("threads"),
            base_dir=base_dir,
        )
        cfg.validate()
        return cfg

    def validate(self):
        self.data["n"] = _int_list(self.data["n"], "data.n")
        self.data["K"] = _int_list(self.data["K"], "data.K")
        if min(self.data["n"]) < 5:
            raise ConfigError("every n must be at least 5")
        if min(self.data["K"]) < 1:
            raise ConfigError("every K must be at least 1")
        cov = self.data["deploy_cov"]
        if not isinstance(cov, (int, float)) or isinstance(cov, bool) or cov <= 0:
            raise ConfigError("data.deploy_cov must be a positive number")
        if not isinstance(self.seed_offset, int) or isinstance(self.seed_offset, bool):
            raise ConfigError("seed_offset must be an integer")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError("threads must be a positive integer or null")
        if not isinstance(self.output, str) or not self.output:
            raise ConfigError("output must be a non-empty path")
        csv = self.data["csv"]
        if csv is not None:
            if not isinstance(csv, dict) or "path" not in csv or set(csv) - CSV_KEYS:
                raise ConfigError(f"data.csv must be an object with keys {sorted(CSV_KEYS)} (path required)")
            if not os.path.isfile(self.resolve(csv["path"])):
                raise ConfigError(f"CSV file not found: {csv['path']}")
            if self.kind not in ("optimize", "benchmark"):
                raise ConfigError("CSV data is only used by the optimize and benchmark experiments")

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.normpath(os.path.join(self.base_dir, path))

    @property
    def run_seeds(self):
        return [s + self.seed_offset for s in self.seeds]

    def to_dict(self):
        return {
            "kind": self.kind,
            "world": copy.deepcopy(self.world),
            "data": copy.deepcopy(self.data),
            "solver": copy.deepcopy(self.solver),
            "seeds": list(self.seeds),
            "seed_offset": self.seed_offset,
            "output": self.output,
            "threads": self.threads,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def parse_config(text, base_dir="."):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return ExperimentConfig.from_dict(raw, base_dir=base_dir)
