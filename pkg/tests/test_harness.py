import csv
import json
import os

import numpy as np
import pytest

from perfcost.errors import ConfigError, ReportError
from perfcost.harness.cli import main
from perfcost.harness.config import KINDS, ExperimentConfig, parse_config
from perfcost.harness.experiments import BENCH_METHODS, COLUMNS
from perfcost.harness.report import emit_report
from perfcost.harness.runner import run_experiment, thread_count
from perfcost.harness.summary import aggregate, fmt


def _write(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------- config


@pytest.mark.parametrize("kind", KINDS)
def test_config_round_trip_fixed_point(kind):
    cfg = parse_config(json.dumps({"kind": kind, "seeds": [3, 4]}))
    again = parse_config(cfg.to_json())
    assert again == cfg
    assert again.to_json() == cfg.to_json()


@pytest.mark.parametrize(
    "bad",
    [
        {"kind": "nope"},
        {"kind": "benchmark", "extra": 1},
        {"kind": "benchmark", "data": {"n": [4]}},
        {"kind": "benchmark", "data": {"K": [0]}},
        {"kind": "benchmark", "data": {"n": "ten"}},
        {"kind": "benchmark", "data": {"deploy_cov": -1}},
        {"kind": "benchmark", "world": {"unknown": 1}},
        {"kind": "benchmark", "seeds": []},
        {"kind": "benchmark", "threads": 0},
        {"kind": "benchmark", "data": {"csv": {"path": "missing.csv"}}},
        {"kind": "fit-cost", "solver": {"bcd": {"nonsense": 1}}},
    ],
)
def test_config_validation_errors(bad):
    with pytest.raises(ConfigError):
        parse_config(json.dumps(bad))


def test_config_rejects_invalid_json():
    with pytest.raises(ConfigError):
        parse_config("{not json")


def test_config_defaults_and_seed_offset():
    cfg = parse_config(json.dumps({"kind": "fit-cost", "seeds": [1, 2], "seed_offset": 10}))
    assert cfg.data["n"] == [250] and cfg.data["K"] == [20]
    assert cfg.world["M"] == (0.1 * np.eye(3)).tolist()
    assert cfg.run_seeds == [11, 12]
    assert parse_config(json.dumps({"kind": "benchmark", "data": {"n": 50}})).data["n"] == [50]


def test_thread_count_precedence(monkeypatch):
    cfg = ExperimentConfig(kind="ols-oracle")
    monkeypatch.setenv("PERF_COST_THREADS", "3")
    assert thread_count(cfg) == 3
    cfg.threads = 2
    assert thread_count(cfg) == 2
    assert thread_count(cfg, 1) == 1
    monkeypatch.delenv("PERF_COST_THREADS")
    cfg.threads = None
    assert thread_count(cfg) == (os.cpu_count() or 1)


# ---------------------------------------------------------------- summary


def test_fmt_and_aggregate():
    assert fmt(None) == "" and fmt(True) == "1" and fmt(np.int64(3)) == "3"
    assert float(fmt(0.1 + 0.2)) == 0.1 + 0.2
    rows = [{"m": "a", "v": str(x)} for x in (1, 2, 3, 4)] + [{"m": "b", "v": ""}]
    agg = aggregate(rows, ["m"], ["v"])
    assert agg[0]["m"] == "a" and agg[0]["v"]["median"] == 2.5 and agg[0]["v"]["iqr"] == 1.5
    assert agg[1]["v"] is None


# ---------------------------------------------------------------- runs


def test_ols_oracle_json(tmp_path):
    out = tmp_path / "ols"
    path = _write(tmp_path, "ols.json", {"kind": "ols-oracle", "output": str(out)})
    assert main(["ols-oracle", "--config", path]) == 0
    res = json.loads((out / "ols_oracle.json").read_text())
    assert set(res) == {"c", "PR_c_theta_star", "PR_min_est", "regret"}
    assert res["c"] == pytest.approx(0.58975, abs=1e-5)
    assert res["regret"] == pytest.approx(0.0, abs=1e-9)


def test_fit_map_eval_deterministic_across_threads(tmp_path):
    cfg = {"kind": "fit-map-eval", "seeds": [0, 1], "data": {"n": [10, 50]}}
    path = _write(tmp_path, "fme.json", cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fit-map-eval", "--config", path, "--out", str(a), "--threads", "2"]) == 0
    assert main(["fit-map-eval", "--config", path, "--out", str(b), "--threads", "1"]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    for name in ("phi_error_vs_n.svg", "map_error_vs_n.svg", "phi_prime_overlay.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert b"<svg" in (a / name).read_bytes()
    rows = _rows(a / "metrics.csv")
    assert list(rows[0]) == COLUMNS["fit-map-eval"]
    assert len(rows) == 2 * 2 * 3
    assert (a / "reps" / "s0_n10").is_dir()
    assert "groups" in json.loads((a / "summary.json").read_text())
    assert os.path.exists(emit_report(str(a)))


def test_benchmark_schema_and_report(tmp_path):
    out = tmp_path / "bench"
    cfg = {"kind": "benchmark", "seeds": [0, 1], "data": {"n": [60], "K": [1, 4]}, "world": {"n_eval": 500},
           "output": str(out), "threads": 1}
    assert main(["benchmark", "--config", _write(tmp_path, "b.json", cfg)]) == 0
    rows = _rows(out / "metrics.csv")
    assert list(rows[0]) == COLUMNS["benchmark"]
    keys = [(r["method"], r["K"], r["seed"]) for r in rows]
    assert len(keys) == len(set(keys)) == len(BENCH_METHODS) * 2 * 2
    # K=1 < d leaves the least-squares baseline undefined
    ls_k1 = [r for r in rows if r["method"] == "ls_plugin" and r["K"] == "1"]
    assert all(r["cross_entropy"] == "" for r in ls_k1)
    assert all(r["cross_entropy"] == "" for r in rows if r["method"] == "perfgd")
    for r in rows:
        if r["cross_entropy"]:
            assert 0 <= float(r["accuracy"]) <= 1 and float(r["cross_entropy"]) >= 0
    report = open(emit_report(str(out))).read()
    assert "| method | K=1 | K=4 |" in report
    for m in ("oracle", "plugin", "rgd"):
        assert f"| {m} |" in report


def test_convergence_report_table(tmp_path):
    out = tmp_path / "conv"
    cfg = {"kind": "convergence-study", "seeds": [0, 1, 2], "data": {"n": [50, 200]}, "output": str(out), "threads": 1}
    assert main(["convergence-study", "--config", _write(tmp_path, "c.json", cfg)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary["bound_hold_rate"]) == {"50", "200"}
    report = open(emit_report(str(out))).read()
    assert "| n |" in report and "sigma_error_op" in report
    assert "Bound held" in report


def test_seed_offset_changes_results(tmp_path):
    cfg = {"kind": "convergence-study", "seeds": [0], "data": {"n": [50]}, "threads": 1}
    path = _write(tmp_path, "c.json", cfg)
    main(["convergence-study", "--config", path, "--out", str(tmp_path / "a")])
    main(["convergence-study", "--config", path, "--out", str(tmp_path / "b"), "--seed-offset", "5"])
    a, b = _rows(tmp_path / "a" / "metrics.csv"), _rows(tmp_path / "b" / "metrics.csv")
    assert a[0]["seed"] == "0" and b[0]["seed"] == "5"
    assert a[0]["sigma_error_op"] != b[0]["sigma_error_op"]


def test_replication_failure_exit_3_keeps_partial_results(tmp_path):
    out = tmp_path / "fc"
    # log benefits have no closed-form quadratic response in this experiment
    cfg = {"kind": "fit-cost", "seeds": [0], "data": {"n": [20], "K": [2]}, "world": {"benefit": "log"},
           "output": str(out), "threads": 1}
    assert main(["fit-cost", "--config", _write(tmp_path, "f.json", cfg)]) == 3
    errs = json.loads((out / "errors.json").read_text())
    assert errs[0]["replication"] == "s0_n20_K2" and errs[0]["type"] == "ValueError"
    assert (out / "reps" / "s0_n20_K2" / "error.json").exists()
    assert (out / "metrics.csv").read_text().startswith(",".join(COLUMNS["fit-cost"]))


def test_run_experiment_returns_status(tmp_path):
    # 1-d theta_star against the default 2x2 M fails inside the replication
    cfg = parse_config(json.dumps({"kind": "ols-oracle", "world": {"theta_star": [2.0]}, "output": "x"}),
                       base_dir=str(tmp_path))
    assert run_experiment(cfg) == 3
    assert json.loads((tmp_path / "x" / "errors.json").read_text())[0]["type"] == "ShapeError"
    cfg.world["theta_star"] = [2.0, 0.0]
    assert run_experiment(cfg) == 0
    assert not (tmp_path / "x" / "errors.json").exists()


# ---------------------------------------------------------------- CLI exits


def test_cli_config_errors_exit_2(tmp_path, capsys):
    assert main(["benchmark", "--config", str(tmp_path / "missing.json")]) == 2
    bad = _write(tmp_path, "bad.json", {"kind": "benchmark", "data": {"n": [1]}})
    assert main(["benchmark", "--config", bad]) == 2
    ols = _write(tmp_path, "ols.json", {"kind": "ols-oracle"})
    assert main(["benchmark", "--config", ols]) == 2
    assert main(["no-such-kind"]) == 2
    assert main(["benchmark"]) == 2
    assert "error" in capsys.readouterr().err


def test_report_errors(tmp_path):
    with pytest.raises(ReportError, match="config.json"):
        emit_report(str(tmp_path))
    assert main(["report", "--in", str(tmp_path)]) == 2
    (tmp_path / "config.json").write_text(json.dumps({"kind": "benchmark"}))
    (tmp_path / "metrics.csv").write_text("method,K\nplugin,1\n")
    with pytest.raises(ReportError, match="missing columns"):
        emit_report(str(tmp_path))
    (tmp_path / "metrics.csv").write_text(",".join(COLUMNS["benchmark"]) + "\n")
    with pytest.raises(ReportError, match="no rows"):
        emit_report(str(tmp_path))
    (tmp_path / "config.json").write_text(json.dumps({"kind": "mystery"}))
    with pytest.raises(ReportError, match="unknown kind"):
        emit_report(str(tmp_path))
