"""Config-driven experiment runner.

Subcommands: ``run``, ``compare``, ``certify``, ``print-default-config``.
Configs are TOML with four sections (topology, instance, solver, output)
plus an optional ``compare`` section. Exit codes: 0 success, 1 uncertified
(``certify`` only), 2 invalid configuration (the offending key is named),
3 divergence. Outputs are deterministic for a fixed config: every file
embeds the config hash and effective seed, and trace CSVs are
byte-identical across invocations.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:                       # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import baselines, certificate, metrics, problem as problem_mod, solver
from .topology import TOPOLOGY_KINDS, build_topology, metropolis_weights

DEFAULT_CONFIG = """\
# Decentralized sharing-optimization experiment.
# Sections and keys are all validated; unknown keys are rejected.

[topology]
n = 20
kind = "random-digraph"      # ring-digraph | random-digraph | undirected-random
density = 0.5                # edge density for the random kinds
seed = 7                     # experiment seed (topology, data, inits)

[instance]
family = "B"                 # A = private blocks, B = consensus lasso
p = 50                       # unknown dimension per agent
m_k = 40                     # measurements per agent
sparsity = 0.2               # fraction of non-zeros in the ground signal
noise_std = 0.01
lambda = 1.0                 # weight of the non-smooth term (0 = smooth)
ridge = 1e-3                 # Tikhonov term added to each local quadratic

[solver]
method = "pdd"               # pdd | pdd-tracking | extra | diging
weights = "static"           # static | adaptive (pdd methods only)
mu_w = "auto"                # number, or "auto" = 0.9 x certified bound
mu_y = "auto"
zeta = 0.1                   # adaptive-weights smoothing factor
max_iter = 500
tol = 1e-6                   # squared-error target against the oracle

[compare]
methods = ["pdd", "extra"]
tol = 1e-6

[output]
trace = "trace.csv"
summary = "summary.json"
table = "comparison.csv"
"""

_METHODS = ("pdd", "pdd-tracking", "extra", "diging")

_SCHEMA = {
    "topology": {"n": int, "kind": str, "density": float, "seed": int},
    "instance": {"family": str, "p": int, "m_k": int, "sparsity": float,
                 "noise_std": float, "lambda": float, "ridge": float},
    "solver": {"method": str, "weights": str, "mu_w": (float, str),
               "mu_y": (float, str), "zeta": float, "max_iter": int,
               "tol": float},
    "compare": {"methods": list, "tol": float},
    "output": {"trace": str, "summary": str, "table": str},
}


class ConfigError(Exception):
    pass


def _coerce(section, key, want, value):
    if want is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    kinds = want if isinstance(want, tuple) else (want,)
    if not isinstance(value, kinds) or isinstance(value, bool):
        names = "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"{section}.{key}: expected {names}, got {value!r}")
    return value


def parse_config(text):
    """Parse and validate a TOML config; defaults fill missing keys."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc
    cfg = tomllib.loads(DEFAULT_CONFIG)
    for section, body in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg[section][key] = _coerce(section, key, _SCHEMA[section][key], value)
    _validate(cfg)
    return cfg


def _validate(cfg):
    top, inst, sol = cfg["topology"], cfg["instance"], cfg["solver"]
    if top["kind"] not in TOPOLOGY_KINDS:
        raise ConfigError(f"topology.kind: unknown kind {top['kind']!r}")
    if top["n"] < 1:
        raise ConfigError("topology.n: must be at least 1")
    if not 0.0 <= top["density"] <= 1.0:
        raise ConfigError("topology.density: must lie in [0, 1]")
    if inst["family"] not in ("A", "B"):
        raise ConfigError(f"instance.family: must be 'A' or 'B', got {inst['family']!r}")
    for key in ("p", "m_k"):
        if inst[key] < 1:
            raise ConfigError(f"instance.{key}: must be positive")
    if not 0.0 < inst["sparsity"] <= 1.0:
        raise ConfigError("instance.sparsity: must lie in (0, 1]")
    if inst["lambda"] < 0 or inst["noise_std"] < 0 or inst["ridge"] < 0:
        raise ConfigError("instance.lambda/noise_std/ridge: must be nonnegative")
    if sol["method"] not in _METHODS:
        raise ConfigError(f"solver.method: unknown method {sol['method']!r}")
    if sol["weights"] not in ("static", "adaptive"):
        raise ConfigError(f"solver.weights: must be static or adaptive")
    if sol["weights"] == "adaptive" and sol["method"] in ("extra", "diging"):
        raise ConfigError("solver.weights: adaptive applies only to pdd methods")
    for key in ("mu_w", "mu_y"):
        v = sol[key]
        if isinstance(v, str) and v != "auto":
            raise ConfigError(f"solver.{key}: must be a positive number or 'auto'")
        if isinstance(v, float) and v <= 0:
            raise ConfigError(f"solver.{key}: must be a positive number or 'auto'")
    if not 0.0 <= sol["zeta"] <= 1.0:
        raise ConfigError("solver.zeta: must lie in [0, 1]")
    if sol["max_iter"] < 0:
        raise ConfigError("solver.max_iter: must be nonnegative")
    if sol["tol"] <= 0:
        raise ConfigError("solver.tol: must be positive")
    for m in cfg["compare"]["methods"]:
        if m not in _METHODS:
            raise ConfigError(f"compare.methods: unknown method {m!r}")
    if not cfg["compare"]["methods"]:
        raise ConfigError("compare.methods: need at least one method")


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _build(cfg):
    """Topology, problem and oracle from a validated config."""
    top, inst = cfg["topology"], cfg["instance"]
    seed = top["seed"]
    topo = build_topology(top["kind"], top["n"], density=top["density"], seed=seed)
    prob, _, _ = problem_mod.make_cs_instance(
        n_agents=top["n"], p=inst["p"], m_k=inst["m_k"],
        sparsity=inst["sparsity"], noise_std=inst["noise_std"],
        lam=inst["lambda"], seed=seed + 1, family=inst["family"],
        ridge=inst["ridge"] if inst["ridge"] > 0 else None)
    return topo, prob


def _resolve_steps(cfg, prob):
    sol = cfg["solver"]
    if sol["mu_w"] == "auto" or sol["mu_y"] == "auto":
        auto = solver.default_steps(prob, safety=0.9)
        mu_w = auto.mu_w if sol["mu_w"] == "auto" else sol["mu_w"]
        mu_y = auto.mu_y if sol["mu_y"] == "auto" else sol["mu_y"]
        return solver.StepSizes(mu_w=mu_w, mu_y=mu_y)
    return solver.StepSizes(mu_w=sol["mu_w"], mu_y=sol["mu_y"])


def _run_method(method, cfg, topo, prob, steps):
    """One method on the shared instance; (trace, final_sq, own oracle)."""
    sol = cfg["solver"]
    if method in ("pdd", "pdd-tracking"):
        truth = problem_mod.solve_centralized(prob)
        trace, state = solver.run(
            prob, topo, policy=sol["weights"], steps=steps,
            max_iter=sol["max_iter"], tol=sol["tol"], ground_truth=truth,
            zeta=sol["zeta"],
            engine="tracking" if method == "pdd-tracking" else "network")
        final = float(np.sum((state.W - truth.w_star) ** 2))
        return trace, final, truth
    if prob.data.get("family") != "B":
        raise ConfigError("solver.method: baselines require instance.family = 'B'")
    if method == "diging" and prob.gterm.kind != "zero":
        raise ConfigError("solver.method: diging requires a smooth instance "
                          "(set instance.lambda = 0)")
    truth = baselines.consensus_truth(prob)
    runner = baselines.extra_run if method == "extra" else baselines.diging_run
    trace, X = runner(prob, topo, max_iter=sol["max_iter"], ground_truth=truth)
    final = float(np.sum((X - np.tile(truth.w_star, (topo.n, 1))) ** 2))
    return trace, final, truth


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _trace_out(trace, path, fmt, comments):
    if fmt == "csv":
        trace.to_csv(path, header_comments=comments)
        return path
    payload = {
        "comments": list(comments),
        "columns": list(metrics.CSV_COLUMNS),
        "rows": [
            [int(trace.iters[i]), float(trace.sq_error[i]),
             float(trace.dual_consensus_residual[i]),
             float(trace.grad_residual[i]), float(trace.mu_w[i]),
             float(trace.mu_y[i]), trace.weights_policy[i]]
            for i in range(trace.n_rows)
        ],
    }
    path = path.with_suffix(".json")
    _write_json(path, payload)
    return path


def cmd_run(cfg, out_dir, fmt):
    topo, prob = _build(cfg)
    steps = _resolve_steps(cfg, prob)
    method = cfg["solver"]["method"]
    chash = config_hash(cfg)
    comments = (f"config_hash: {chash}", f"seed: {cfg['topology']['seed']}")
    diverged = False
    try:
        trace, final, _ = _run_method(method, cfg, topo, prob, steps)
    except solver.DivergenceError as exc:
        diverged = True
        trace, final = exc.trace, math.inf
        print(f"divergence: {exc}", file=sys.stderr)
    trace_path = _trace_out(trace, out_dir / cfg["output"]["trace"], fmt, comments)

    summary = {
        "config_hash": chash,
        "seed": cfg["topology"]["seed"],
        "method": method,
        "n_iterations": trace.n_rows,
        "diverged": diverged,
        "iterations_to_tol": metrics.iterations_to(trace, cfg["solver"]["tol"]),
        "final_sq_error": final,
    }
    if method in ("pdd", "pdd-tracking") and not diverged:
        weights = metropolis_weights(topo)
        cert = certificate.certify(prob, weights, steps)
        summary["certificate"] = {
            "verdict": cert.verdict, "gamma": cert.gamma,
            "violations": list(cert.violations),
        }
        summary["final_grad_residual"] = (
            float(trace.grad_residual[-1]) if trace.n_rows else None)
        summary["final_dual_consensus"] = (
            float(trace.dual_consensus_residual[-1]) if trace.n_rows else None)
    _write_json(out_dir / cfg["output"]["summary"], summary)
    return 3 if diverged else 0


def cmd_compare(cfg, out_dir, fmt):
    topo, prob = _build(cfg)
    steps = _resolve_steps(cfg, prob)
    methods = cfg["compare"]["methods"]
    tol = cfg["compare"]["tol"]
    chash = config_hash(cfg)
    rows = []
    for method in methods:
        trace, final, _ = _run_method(method, cfg, topo, prob, steps)
        its = metrics.iterations_to(trace, tol)
        rows.append((method, its, final))
    rows.sort(key=lambda r: (r[1] is None, r[1] if r[1] is not None else 0, r[0]))

    path = out_dir / cfg["output"]["table"]
    lines = [f"# config_hash: {chash}", f"# seed: {cfg['topology']['seed']}",
             "method,iterations_to_tol,final_sq_error"]
    for method, its, final in rows:
        lines.append(f"{method},{'' if its is None else its},{repr(float(final))}")
    if fmt == "json":
        path = path.with_suffix(".json")
        _write_json(path, {"config_hash": chash,
                           "seed": cfg["topology"]["seed"],
                           "tol": tol,
                           "rows": [{"method": m, "iterations_to_tol": i,
                                     "final_sq_error": f} for m, i, f in rows]})
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    for method, its, final in rows:
        print(f"{method}: iterations_to_tol="
              f"{'never' if its is None else its} final_sq_error={final:.3e}")
    return 0


def cmd_certify(cfg, out_dir, fmt):
    topo, prob = _build(cfg)
    steps = _resolve_steps(cfg, prob)
    weights = metropolis_weights(topo)
    cert = certificate.certify(prob, weights, steps)
    truth = problem_mod.solve_centralized(prob)
    c_o = certificate.c_o_constant(prob, truth, steps)
    report = {
        "config_hash": config_hash(cfg),
        "seed": cfg["topology"]["seed"],
        "mu_w": cert.mu_w, "mu_y": cert.mu_y,
        "mu_w_max": cert.mu_w_max, "mu_y_max": cert.mu_y_max,
        "gamma1": cert.gamma1, "gamma2": cert.gamma2, "gamma3": cert.gamma3,
        "gamma": cert.gamma, "c_o": c_o,
        "full_row_rank_coupling": cert.full_row_rank_coupling,
        "verdict": cert.verdict,
        "violations": list(cert.violations),
    }
    for key, val in report.items():
        print(f"{key} = {val}")
    _write_json(out_dir / "certificate.json", report)
    return 0 if cert.verdict == "certified" else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pddiffusion",
        description="Decentralized sharing-optimization experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "compare", "certify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out-dir", type=Path, default=Path("."))
        p.add_argument("--seed", type=int, default=None,
                       help="override topology.seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    sub.add_parser("print-default-config")

    args = parser.parse_args(argv)
    if args.command == "print-default-config":
        sys.stdout.write(DEFAULT_CONFIG)
        return 0

    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
    except OSError as exc:
        print(f"config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg["topology"]["seed"] = args.seed

    args.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "run":
            return cmd_run(cfg, args.out_dir, args.format)
        if args.command == "compare":
            return cmd_compare(cfg, args.out_dir, args.format)
        return cmd_certify(cfg, args.out_dir, args.format)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except solver.DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
