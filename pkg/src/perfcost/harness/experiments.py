"""Experiment definitions.

Every experiment splits into independent replications. ``replications(cfg)``
lists them as small JSON-able dicts; ``run_replication(cfg, job, rep_dir)``
returns metric rows and may write artifacts into ``rep_dir``;
the runner merges the rows and writes summaries and plots.
"""

import json
import os

import numpy as np

from perfcost.agents import AbsLinear, BenefitSpec, Linear, LinearClassifier, best_response, respond_measure
from perfcost.datasets import positive_features, utilization_1d, utilization_quantiles
from perfcost.inference.bcd import BcdConfig, fit_bcd
from perfcost.inference.convex_net import NetConfig, fit_convex_net
from perfcost.inference.isotonic import fit_isotonic_phi_prime_1d
from perfcost.inference.paired import estimate_sigma_paired, proposition_bound
from perfcost.inference.response_map import estimate_response_map
from perfcost.measures import DatasetSchema, EmpiricalMeasure, from_csv, sample_gaussian
from perfcost.perf_risk import (
    LabelModel,
    LogisticWorld,
    OlsWorld,
    OptConfig,
    csv_world,
    evaluate_performative,
    logistic_fit,
    ls_baseline,
    ols_oracle_summary,
    oracle_classifier,
    plugin_logistic,
    rgd,
)
from perfcost.potentials import QuadraticPotential
from perfcost.rng import make_rng, spawn_seed, standard_normal

COLUMNS = {
    "fit-cost": ["method", "family", "K", "n", "seed", "M_error_fro", "map_error", "phi_error", "iterations"],
    "fit-map-eval": ["benefit", "n", "seed", "c", "phi_error", "map_error"],
    "convergence-study": ["n", "seed", "sigma_error_op", "bound", "within_bound", "gamma_min", "gamma_max"],
    "optimize": ["method", "K", "n", "seed", "accuracy", "cross_entropy", "M_error_fro"],
    "benchmark": ["method", "K", "n", "seed", "accuracy", "cross_entropy", "M_error_fro"],
    "ols-oracle": ["c", "PR_c_theta_star", "PR_min_est", "regret"],
}

BENCH_METHODS = ("oracle", "plugin", "ls_plugin", "rgd", "perfgd")


def replications(cfg):
    d = cfg.data
    if cfg.kind == "ols-oracle":
        return [{"rep": "ols"}]
    if cfg.kind in ("fit-map-eval", "convergence-study"):
        return [{"rep": f"s{s}_n{n}", "seed": s, "n": n} for s in cfg.run_seeds for n in d["n"]]
    return [
        {"rep": f"s{s}_n{n}_K{K}", "seed": s, "n": n, "K": K}
        for s in cfg.run_seeds
        for n in d["n"]
        for K in d["K"]
    ]


def run_replication(cfg, job, rep_dir):
    fn = {
        "fit-cost": _fit_cost,
        "fit-map-eval": _fit_map_eval,
        "convergence-study": _convergence,
        "optimize": _optimize,
        "benchmark": _benchmark,
        "ols-oracle": _ols_oracle,
    }[cfg.kind]
    return fn(cfg, job, rep_dir)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _bcd_config(cfg, seed):
    return BcdConfig(seed=seed, **cfg.solver["bcd"])


def _opt_config(cfg):
    return OptConfig(**cfg.solver["opt"])


# ---------------------------------------------------------------- fit-cost


def _fit_cost(cfg, job, rep_dir):
    fam = cfg.world["family"]
    if fam == "quadratic":
        return _fit_cost_quadratic(cfg, job, rep_dir)
    if fam == "isotonic":
        return [
            {"method": "isotonic", "family": fam, "K": 1, "n": r["n"], "seed": r["seed"], "M_error_fro": "",
             "map_error": r["map_error"], "phi_error": r["phi_error"], "iterations": ""}
            for r in _fit_map_eval(cfg, job, rep_dir)
        ]
    if fam == "convex_net":
        return _fit_cost_net(cfg, job, rep_dir)
    raise ValueError(f"unknown family {fam!r}")


def _quadratic_deployments(world, K, dim, cov, seed):
    center = np.asarray(world["theta_center"], dtype=float)
    if center.size != dim:
        raise ValueError(f"theta_center has {center.size} entries, M is {dim}x{dim}")
    thetas = center + np.sqrt(cov) * standard_normal(make_rng(seed), (K, dim))
    if world["benefit"] == "abs_linear":
        return [AbsLinear(t) for t in thetas]
    if world["benefit"] == "linear":
        return [Linear(t) for t in thetas]
    raise ValueError(f"fit-cost quadratic worlds use linear or abs_linear benefits, got {world['benefit']!r}")


def _fit_cost_quadratic(cfg, job, rep_dir):
    seed, n, K = job["seed"], job["n"], job["K"]
    M = np.asarray(cfg.world["M"], dtype=float)
    d = M.shape[0]
    truth = QuadraticPotential.from_matrix(M)
    benefits = _quadratic_deployments(cfg.world, K, d, cfg.data["deploy_cov"], spawn_seed(seed, 1))
    P = sample_gaussian(np.zeros(d), np.eye(d), n, spawn_seed(seed, 2))
    posts = [
        respond_measure(truth, b, sample_gaussian(np.zeros(d), np.eye(d), n, spawn_seed(seed, 3, k)))
        for k, b in enumerate(benefits)
    ]
    rep = fit_bcd(P, posts, benefits, "quadratic", _bcd_config(cfg, seed))
    rep.to_json(os.path.join(rep_dir, "potential_bcd.json"))
    norm = np.linalg.norm(M)
    rows = [
        {"method": "bcd", "family": "quadratic", "K": K, "n": n, "seed": seed,
         "M_error_fro": np.linalg.norm(rep.potential.M - M) / norm, "map_error": "", "phi_error": "",
         "iterations": rep.iterations}
    ]
    if K >= d:
        # the LS baseline reads slopes off classifiers with benefit -beta . x
        clfs = [LinearClassifier(0.0, -b.grad(np.zeros(d))) for b in benefits]
        M_ls = ls_baseline(P, posts, clfs)
        rows.append({"method": "ls", "family": "quadratic", "K": K, "n": n, "seed": seed,
                     "M_error_fro": np.linalg.norm(M_ls - M) / norm, "map_error": "", "phi_error": "",
                     "iterations": ""})
    return rows


def _fit_cost_net(cfg, job, rep_dir):
    seed, n = job["seed"], job["n"]
    w = cfg.world
    d = int(w["dim"])
    truth = QuadraticPotential.from_matrix(w["sigma"] * np.eye(d))
    theta = np.full(d, float(w["theta"]))
    b = BenefitSpec("power", theta, 0.5)
    fit_desc = w["fit_benefit"]
    fb = BenefitSpec(fit_desc["kind"], theta, fit_desc.get("p"))
    P = EmpiricalMeasure(positive_features(n, d, spawn_seed(seed, 1)))
    Q = respond_measure(truth, b, EmpiricalMeasure(positive_features(n, d, spawn_seed(seed, 2))))
    net = NetConfig(seed=seed, **{**cfg.solver["net"], "hidden": int(w["hidden"])})
    fit = fit_convex_net(P, Q, fb, net)
    _write_json(os.path.join(rep_dir, "potential_net.json"), fit.potential.to_dict())
    ev = positive_features(500, d, 10_007)
    est = estimate_response_map(fit.potential, fb).forward(ev)
    err = float(np.mean(np.linalg.norm(est - best_response(truth, b, ev), axis=1)))
    return [{"method": f"convex_net_{benefit_label(fit_desc)}", "family": "convex_net", "K": 1, "n": n, "seed": seed, "M_error_fro": "",
             "map_error": err, "phi_error": "", "iterations": net.epochs}]


# ---------------------------------------------------------------- fit-map-eval


def _benefit_1d(desc, theta):
    return BenefitSpec(desc["kind"], [theta], desc.get("p"))


def benefit_label(desc):
    if desc["kind"] == "power":
        p = desc.get("p")
        return "sqrt" if abs(p - 0.5) < 1e-12 else ("cbrt" if abs(p - 1 / 3) < 1e-12 else f"power{p:g}")
    return desc["kind"]


def phi_truth(cfg):
    """Evaluation grid (5%-95% feature quantiles) and the true centered ``phi'`` on it."""
    w = cfg.world
    sigma = float(w.get("sigma", 0.1))
    grid = utilization_quantiles(np.linspace(0.05, 0.95, int(w.get("grid_points", 200))))
    return grid, sigma * grid - np.mean(sigma * grid)


def _fit_map_eval(cfg, job, rep_dir):
    seed, n = job["seed"], job["n"]
    w = cfg.world
    sigma, theta = float(w.get("sigma", 0.1)), float(w.get("theta", 0.5))
    truth = QuadraticPotential.from_matrix([[sigma]])
    true_b = _benefit_1d(w.get("true_benefit", {"kind": "power", "p": 0.5}), theta)
    P = utilization_1d(n, spawn_seed(seed, 1))
    Q = respond_measure(truth, true_b, utilization_1d(n, spawn_seed(seed, 2)))
    grid, true_dphi = phi_truth(cfg)
    rows = []
    for desc in w.get("fit_benefits", [w.get("true_benefit", {"kind": "power", "p": 0.5})]):
        fb = _benefit_1d(desc, theta)
        g = fit_isotonic_phi_prime_1d(P, Q, fb, seed=seed)
        label = benefit_label(desc)
        _write_json(os.path.join(rep_dir, f"phi_prime_{label}.json"), g.to_dict())
        est = g.derivative(grid)
        phi_err = float(np.sqrt(np.mean((est - est.mean() - true_dphi) ** 2)))
        for c in w.get("c_values", [1.0]):
            fwd = estimate_response_map(g, fb.scaled(c)).forward(grid)
            ref = best_response(truth, true_b.scaled(c), grid)
            rows.append({"benefit": label, "n": n, "seed": seed, "c": float(c), "phi_error": phi_err,
                         "map_error": float(np.mean(np.abs(fwd - ref)))})
    return rows


# ---------------------------------------------------------------- convergence-study


def paired_instance(Sigma, thetas, noise, n, seed):
    """Ex-ante/ex-post pairs of the Gaussian example, ``n`` rows split over deployments."""
    Sigma = np.asarray(Sigma, dtype=float)
    d = Sigma.shape[0]
    truth = QuadraticPotential.from_matrix(Sigma)
    K = len(thetas)
    m = n // K
    Ps, Qs, bs = [], [], []
    for k, th in enumerate(thetas):
        b = AbsLinear(np.asarray(th, dtype=float))
        P = sample_gaussian(np.zeros(d), noise**2 * np.eye(d), m, spawn_seed(seed, 2 * k))
        Q0 = sample_gaussian(np.zeros(d), noise**2 * np.eye(d), m, spawn_seed(seed, 2 * k + 1))
        Ps.append(P)
        Qs.append(respond_measure(truth, b, Q0))
        bs.append(b)
    return Ps, Qs, bs


def _convergence(cfg, job, rep_dir):
    seed, n = job["seed"], job["n"]
    w = cfg.world
    S = np.asarray(w["Sigma"], dtype=float)
    Ps, Qs, bs = paired_instance(S, w["thetas"], float(w["noise"]), n, seed)
    m = Ps[0].n
    est = estimate_sigma_paired(Ps, Qs, bs, cap=max(m * m, 1))
    err = float(np.linalg.norm(est.sigma - S, 2))
    bound = float(proposition_bound(float(w["noise"]) * np.linalg.norm(S, 2), est.gamma_max, est.gamma_min, est.n, S.shape[0]))
    return [{"n": n, "seed": seed, "sigma_error_op": err, "bound": bound, "within_bound": int(err <= bound),
             "gamma_min": est.gamma_min, "gamma_max": est.gamma_max}]


# ---------------------------------------------------------------- logistic worlds


def build_world(cfg):
    w = cfg.world
    M = np.asarray(w["M"], dtype=float)
    lm = w["label_model"]
    label_model = LabelModel(float(lm["alpha"]), tuple(float(b) for b in lm["beta"]))
    csv = cfg.data.get("csv")
    if csv is None:
        if M.shape[0] != 3 or len(label_model.beta) != 3:
            raise ValueError("the synthetic credit world has three features")
        return LogisticWorld(M, label_model, deploy_cov=cfg.data["deploy_cov"])
    schema = DatasetSchema(csv.get("feature_columns") or [], csv.get("label_column"))
    data = from_csv(cfg.resolve(csv["path"]), schema)
    X = data.measure.points
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    if M.shape[0] != X.shape[1]:
        raise ValueError(f"M is {M.shape[0]}x{M.shape[0]} but the CSV has {X.shape[1]} features")
    if data.labels is not None:
        # label model = static logistic fit to the table's labels
        label_model = LabelModel(*_split(logistic_fit(X, data.labels, _opt_config(cfg)).classifier))
    return csv_world(X, M, label_model, deploy_cov=cfg.data["deploy_cov"], name="csv")


def _split(clf):
    return clf.alpha, tuple(clf.beta.tolist())


def _logistic_data(world, n, K, seed):
    deployed = world.deployments(K, spawn_seed(seed, 1))
    ex_ante = world.ex_ante(n, spawn_seed(seed, 2))
    posts = [world.ex_post(th, n, spawn_seed(seed, 3, k)) for k, th in enumerate(deployed)]
    return ex_ante, posts, deployed


def _fit_M(cfg, ex_ante, posts, deployed, seed):
    rep = fit_bcd(ex_ante.X, [p.X for p in posts], [th.benefit() for th in deployed], "quadratic", _bcd_config(cfg, seed))
    return rep


def _metrics_row(method, K, n, seed, m, M_err):
    return {"method": method, "K": K, "n": n, "seed": seed, "accuracy": m.accuracy,
            "cross_entropy": m.cross_entropy, "M_error_fro": M_err}


def _optimize(cfg, job, rep_dir):
    seed, n, K = job["seed"], job["n"], job["K"]
    world = build_world(cfg)
    ex_ante, posts, deployed = _logistic_data(world, n, K, seed)
    rep = _fit_M(cfg, ex_ante, posts, deployed, seed)
    rep.to_json(os.path.join(rep_dir, "potential_bcd.json"))
    M_err = float(np.linalg.norm(rep.potential.M - world.M) / np.linalg.norm(world.M))
    clf = plugin_logistic(ex_ante, posts, deployed, rep.potential.M, _opt_config(cfg)).classifier
    _write_json(os.path.join(rep_dir, "classifier.json"), clf.to_dict())
    m = evaluate_performative(clf, world, int(cfg.world.get("n_eval", 10_000)), spawn_seed(seed, 9))
    return [_metrics_row("plugin", K, n, seed, m, M_err)]


def _benchmark(cfg, job, rep_dir):
    seed, n, K = job["seed"], job["n"], job["K"]
    world = build_world(cfg)
    n_eval = int(cfg.world.get("n_eval", 10_000))
    eval_seed = spawn_seed(seed, 9)
    ex_ante, posts, deployed = _logistic_data(world, n, K, seed)
    norm = np.linalg.norm(world.M)
    opt = _opt_config(cfg)
    rows = []

    orc = oracle_classifier(world, 10 * n_eval, 0, opt)
    rows.append(_metrics_row("oracle", K, n, seed, evaluate_performative(orc, world, n_eval, eval_seed), 0.0))

    rep = _fit_M(cfg, ex_ante, posts, deployed, seed)
    rep.to_json(os.path.join(rep_dir, "potential_bcd.json"))
    clf = plugin_logistic(ex_ante, posts, deployed, rep.potential.M, opt).classifier
    rows.append(_metrics_row("plugin", K, n, seed, evaluate_performative(clf, world, n_eval, eval_seed),
                             float(np.linalg.norm(rep.potential.M - world.M) / norm)))

    if K >= world.dim:
        M_ls = ls_baseline(ex_ante, posts, deployed)
        clf_ls = plugin_logistic(ex_ante, posts, deployed, M_ls, opt).classifier
        rows.append(_metrics_row("ls_plugin", K, n, seed, evaluate_performative(clf_ls, world, n_eval, eval_seed),
                                 float(np.linalg.norm(M_ls - world.M) / norm)))
    else:
        rows.append({"method": "ls_plugin", "K": K, "n": n, "seed": seed, "accuracy": "", "cross_entropy": "",
                     "M_error_fro": ""})

    # RGD gets one round per published classifier
    start = world.label_model.classifier
    traj = rgd(world.simulator(n), start, float(cfg.solver["rgd"]["eta"]), K, seed=spawn_seed(seed, 5))
    rows.append(_metrics_row("rgd", K, n, seed, evaluate_performative(traj.trajectory[-1], world, n_eval, eval_seed), ""))

    # PerfGD is not implemented; the empty row keeps the table layout
    rows.append({"method": "perfgd", "K": K, "n": n, "seed": seed, "accuracy": "", "cross_entropy": "",
                 "M_error_fro": ""})
    return rows


def _ols_oracle(cfg, job, rep_dir):
    w = cfg.world
    world = OlsWorld(np.asarray(w["theta_star"], dtype=float), np.asarray(w["M"], dtype=float), float(w["sigma"]))
    return [ols_oracle_summary(world)]
