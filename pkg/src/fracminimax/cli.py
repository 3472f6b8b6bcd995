"""Command-line front end.

Every subcommand reads an optional JSON config (unknown keys are rejected),
applies the ``--seed``/``--grid-n``/``--alpha`` overrides, validates, runs,
and writes ``report.json`` (deterministic) plus ``timing.json`` and any CSV
series into ``--out``.  Without ``--out`` the report goes to stdout only.

Exit status: 0 when every check passes, 1 when a check fails, 2 for an
invalid configuration (nothing is written in that case).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import checks, fixtures as fx, minimax as mm
from .dynamics import SelectionPolicy, inclusion_residual, integrate_characteristic, policy_alphabet, write_characteristic_csv
from .fraccalc import Grid, caputo_derivative, check_semigroup, constant_path, gamma_fn, make_ac_path, rl_integral, sample_function
from .lyapunov import build_lyapunov_params, calibrated_dissipation
from .pathspace import PathPoint, check_dist_bounds, restrict


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

_NUM = (int, float)
COMMON = {
    "fixture": str,
    "fixture_params": dict,
    "alpha": _NUM,
    "T": _NUM,
    "N": int,
    "n": int,
    "seed": int,
}
BUDGET_KEYS = {"J": int, "K": int, "rounds": int, "beam_width": int, "max_enumeration": int, "magnitudes": list}

SPECIFIC = {
    "fracops": {"beta": _NUM, "generator": str},
    "metric": {"pairs": int},
    "characteristics": {"t0": _NUM, "s": list, "policy": list},
    "lyapunov-check": {"lambda": _NUM, "lambda_H": _NUM, "R": _NUM, "paths": int},
    "value": {"points": int, "s_list": list, "budget": dict},
    "stability": {
        "candidate": str, "candidate_file": str, "history": str, "t0": _NUM, "t1": _NUM,
        "s": list, "eps": _NUM, "configs": int, "budget": dict,
    },
    "witness": {"pairs": int, "eps": _NUM, "R": _NUM, "lambda": _NUM},
    "verify": {"suite": str},
    "list-fixtures": {},
}

DEFAULTS = {"fixture": "drift", "alpha": 0.5, "T": 1.0, "N": 200, "n": 1, "seed": 0}
PER_COMMAND_DEFAULTS = {
    "fracops": {"N": 2000, "beta": 0.4, "generator": "one"},
    "metric": {"N": 500, "pairs": 200},
    "characteristics": {"t0": 0.0},
    "lyapunov-check": {"N": 500, "lambda": 0.5, "R": 2.0, "paths": 10},
    "value": {"points": 5},
    "stability": {"candidate": "forecast", "history": "random", "t1": 1.0, "configs": 5},
    "witness": {"pairs": 50, "R": 8.0},
    "verify": {"suite": "all"},
}


def _check_type(key, value, typ):
    if typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif typ == _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool) and math.isfinite(value)
    else:
        ok = isinstance(value, typ)
    if not ok:
        raise ConfigError(f"{key!r} has the wrong type")


def load_config(command: str, path: Optional[str], overrides: Dict[str, Any]) -> Dict[str, Any]:
    raw: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    allowed = {**COMMON, **SPECIFIC[command]}
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {**DEFAULTS, **PER_COMMAND_DEFAULTS.get(command, {}), **raw}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    for k, v in cfg.items():
        if k in allowed:
            _check_type(k, v, allowed[k])
    if not 0 < cfg["alpha"] < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if cfg["N"] < 2 or cfg["T"] <= 0 or cfg["n"] < 1:
        raise ConfigError("need N >= 2, T > 0, n >= 1")
    if cfg["seed"] < 0:
        raise ConfigError("seed must be nonnegative")
    for k in ("pairs", "paths", "points", "configs"):
        if k in cfg and cfg[k] < 1:
            raise ConfigError(f"{k} must be positive")
    if "budget" in cfg:
        bad = sorted(set(cfg["budget"]) - set(BUDGET_KEYS))
        if bad:
            raise ConfigError(f"unknown budget keys: {', '.join(bad)}")
        for k, v in cfg["budget"].items():
            _check_type(f"budget.{k}", v, BUDGET_KEYS[k])
    if command not in ("verify", "list-fixtures", "fracops", "metric") and cfg["fixture"] not in fx.REGISTRY:
        raise ConfigError(f"unknown fixture {cfg['fixture']!r}")
    return cfg


def _problem(cfg):
    params = dict(cfg.get("fixture_params", {}))
    params.update(alpha=float(cfg["alpha"]), T=float(cfg["T"]), N=cfg["N"], n=cfg["n"])
    try:
        return fx.build(cfg["fixture"], **params)
    except (fx.FixtureError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _budget(cfg):
    b = dict(cfg.get("budget", {}))
    if "magnitudes" in b:
        b["magnitudes"] = tuple(float(m) for m in b["magnitudes"])
    try:
        return mm.SearchBudget(**b)
    except mm.MinimaxError as exc:
        raise ConfigError(str(exc)) from exc


def _vector(cfg, key, n, default):
    v = cfg.get(key, default)
    try:
        a = np.asarray(v, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key!r} must be a list of numbers") from exc
    if a.size == 1 and n > 1:
        a = np.full(n, a[0])
    if a.shape != (n,):
        raise ConfigError(f"{key!r} must have {n} components")
    return a


def _tidy(x):
    """Make values JSON-serialisable and stable."""
    if isinstance(x, dict):
        return {k: _tidy(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_tidy(v) for v in x]
    if isinstance(x, np.ndarray):
        return _tidy(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ---------------------------------------------------------------------------
# subcommands; each returns (results, passed, csv files {name: writer})


def cmd_fracops(cfg, rng):
    g = Grid(float(cfg["T"]), cfg["N"])
    alpha, beta = float(cfg["alpha"]), float(cfg["beta"])
    if not beta > 0:
        raise ConfigError("beta must be positive")
    if cfg["generator"] == "one":
        psi = constant_path(g, np.ones(cfg["n"]))
    elif cfg["generator"] in fx.GENERATOR_KINDS:
        psi = sample_function(g, fx.random_generator_fn(rng, cfg["generator"], cfg["n"], g.T))
    else:
        raise ConfigError("generator must be 'one' or one of " + ", ".join(fx.GENERATOR_KINDS))
    I = rl_integral(psi, alpha)
    res: Dict[str, Any] = {}
    passed = True
    if cfg["generator"] == "one":
        t = g.nodes()[1:]
        exact = t**alpha / gamma_fn(alpha + 1)
        err = float(np.max(np.abs(I.values[1:] - exact[:, None]) / exact[:, None]))
        res["constant_rel_error"] = err
        passed &= err < 1e-3
    sg = check_semigroup(psi, alpha, beta)
    res["semigroup_error"] = sg
    x = make_ac_path(np.zeros(cfg["n"]), psi, alpha)
    D = caputo_derivative(x.realize(), alpha)
    scale = max(1e-300, float(np.max(np.abs(psi.values))))
    rt = float(np.max(np.abs(D.values - psi.values))) / scale
    res["round_trip_rel_error"] = rt
    passed &= rt < 1e-2 and sg < 1e-3

    def write(fh):
        fh.write("t," + ",".join(f"psi{i + 1}" for i in range(cfg["n"])) + "," + ",".join(f"I{i + 1}" for i in range(cfg["n"])) + "," + ",".join(f"D{i + 1}" for i in range(cfg["n"])) + "\n")
        for j, t in enumerate(g.nodes()):
            row = [t, *psi.values[j], *I.values[j], *D.values[j]]
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    return res, bool(passed), {"fracops.csv": write}


def cmd_metric(cfg, rng):
    g = Grid(float(cfg["T"]), cfg["N"])
    worst = [np.inf] * 3
    fails = 0
    for _ in range(cfg["pairs"]):
        x = fx.random_ac_path(rng, g, cfg["n"], float(cfg["alpha"]))
        y = fx.random_ac_path(rng, g, cfg["n"], float(cfg["alpha"]))
        j, k = sorted(int(v) for v in rng.integers(0, g.N + 1, size=2))[::-1]
        b = check_dist_bounds(restrict(x, j), restrict(y, k))
        fails += not (b.upper and b.time_gap and b.value_gap)
        worst = [min(w, s) for w, s in zip(worst, b.slack)]
    return {"pairs": cfg["pairs"], "failures": fails, "worst_slack": worst, "tol": 10 * g.h}, fails == 0, {}


def cmd_characteristics(cfg, rng):
    P = _problem(cfg)
    n = P.dim
    letters = policy_alphabet(P, 3)
    pol = cfg.get("policy", [len(letters) - 1 if P.hints else 0])
    if not all(isinstance(i, int) and 0 <= i < len(letters) for i in pol) or not pol:
        raise ConfigError(f"policy entries must be letter indices in 0..{len(letters) - 1}")
    s = _vector(cfg, "s", n, 1.0)
    j0 = P.grid.index_of(float(cfg["t0"])) if cfg["t0"] <= P.grid.T else None
    if j0 is None or j0 >= P.grid.N:
        raise ConfigError("t0 must be a grid node before T")
    p = fx.random_point(rng, P, t_index=j0) if j0 > 0 else PathPoint(constant_path(P.grid, np.zeros(n), 0))
    ch = integrate_characteristic(P, p, 0.0, s, SelectionPolicy(tuple(letters[i] for i in pol)))
    exc, gap = inclusion_residual(ch, P)
    res = {
        "letters": [{"const": l.const, "direction": l.direction, "rho": l.rho} for l in letters],
        "x_T": ch.path.values[-1],
        "z_T": ch.z_values[-1],
        "payoff": P.sigma_of(ch.path) - ch.z_values[-1],
        "velocity_excess": exc,
        "cost_gap": gap,
    }
    return res, exc <= 1e-9 and gap <= 1e-9, {"characteristic.csv": lambda fh: write_characteristic_csv(ch, fh)}


def cmd_lyapunov(cfg, rng):
    alpha = float(cfg["alpha"])
    lam = float(cfg["lambda"])
    lH = float(cfg.get("lambda_H", lam / 4))
    try:
        params = build_lyapunov_params(alpha, lambda R: lH, float(cfg["R"]), float(cfg["T"]), lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    # derived constants are echoed with the inputs
    cfg.update(m=params.m, lambda_star=params.lam_star, lambda_H=lH)
    rows = []
    for i in range(cfg["paths"]):
        kind = fx.GENERATOR_KINDS[i % 3]
        f = fx.random_generator_fn(rng, kind, cfg["n"], params.T)
        x0 = rng.normal(size=cfg["n"])
        c = calibrated_dissipation(lambda gr: make_ac_path(x0, sample_function(gr, f), alpha), params, cfg["N"])
        rows.append({"kind": kind, "max_residual": c.max_residual, "tol": c.tol, "shrink": c.shrink, "passed": c.passed})
    passed = all(r["passed"] and r["shrink"] >= 1.5 for r in rows)

    def write(fh):
        fh.write("path,kind,max_residual,tol,shrink,passed\n")
        for i, r in enumerate(rows):
            fh.write(f"{i},{r['kind']},{r['max_residual']:.17g},{r['tol']:.17g},{r['shrink']:.17g},{int(r['passed'])}\n")

    return {"lyapunov": params.as_dict(), "paths": rows}, passed, {"dissipation.csv": write}


def _history(cfg, P, rng, i):
    kind = cfg.get("history", "random")
    if kind == "trap":
        return fx.memory_trap_point(P, float(cfg.get("t0", 0.5)))
    if kind == "zero":
        j0 = P.grid.index_of(float(cfg.get("t0", 0.0)))
        return PathPoint(constant_path(P.grid, np.zeros(P.dim), j0))
    if kind != "random":
        raise ConfigError("history must be 'random', 'trap' or 'zero'")
    j0 = P.grid.index_of(float(cfg["t0"])) if "t0" in cfg else None
    return fx.random_point(rng, P, t_index=j0)


def cmd_value(cfg, rng):
    P = _problem(cfg)
    budget = _budget(cfg)
    s_list = cfg.get("s_list", [[-1.0] * P.dim, [0.0] * P.dim, [1.0] * P.dim])
    try:
        s_list = [_vector({"s": s}, "s", P.dim, None) for s in s_list]
    except ConfigError as exc:
        raise ConfigError(f"s_list: {exc}") from exc
    if not s_list:
        raise ConfigError("s_list is empty")
    rows = []
    passed = True
    fc = fx.forecast_candidate(P) if P.name == "drift" else None
    for i in range(cfg["points"]):
        p = fx.random_point(rng, P)
        br = mm.envelope_bracket(P, p, s_list, budget)
        row = {"t": p.t, "lower": br.lower, "upper": br.upper, "lower_by_s": br.lower_by_s, "upper_by_s": br.upper_by_s}
        ok = br.lower <= br.upper
        if fc is not None:
            v = fc(p)
            row["forecast"] = v
            ok &= br.lower - 1e-9 <= v <= br.upper + 1e-9
        row["passed"] = bool(ok)
        passed &= ok
        rows.append(row)

    def write(fh):
        fh.write("point,t,lower,upper\n")
        for i, r in enumerate(rows):
            fh.write(f"{i},{r['t']:.17g},{r['lower']:.17g},{r['upper']:.17g}\n")

    return {"s_list": s_list, "points": rows}, bool(passed), {"bracket.csv": write}


def _candidate(cfg, P):
    if "candidate_file" in cfg:
        try:
            src = Path(cfg["candidate_file"]).read_text()
            code = compile(src, cfg["candidate_file"], "eval")
        except (OSError, SyntaxError) as exc:
            raise ConfigError(f"cannot load candidate expression: {exc}") from exc
        env = {"np": np, "math": math, "__builtins__": {}}

        def phi(p):
            v = np.asarray(eval(code, env, {"t": p.t, "w": p.values, "x": p.current, "T": P.grid.T}))
            if v.size != 1:
                raise mm.MinimaxError("candidate expression must evaluate to a scalar")
            return float(v.reshape(()))

        return mm.CandidateSolution(phi, name=Path(cfg["candidate_file"]).name)
    name = cfg["candidate"]
    if name == "forecast":
        if P.name != "drift":
            raise ConfigError("the forecast candidate needs the drift fixture")
        return fx.forecast_candidate(P)
    if name == "memory-blind":
        return fx.memory_blind_candidate(P)
    if name == "constant":
        return fx.constant_candidate(0.0)
    raise ConfigError("candidate must be 'forecast', 'memory-blind' or 'constant'")


def cmd_stability(cfg, rng):
    P = _problem(cfg)
    budget = _budget(cfg)
    cand = _candidate(cfg, P)
    s = _vector(cfg, "s", P.dim, 1.0)
    rows = []
    passed = True
    for i in range(cfg["configs"]):
        p = _history(cfg, P, rng, i)
        t1 = float(cfg["t1"])
        if not p.t < t1 <= P.grid.T:
            raise ConfigError("t1 must lie after the history and not beyond T")
        up = mm.stability_check_upper(cand, P, p, t1, s, cfg.get("eps"), budget)
        lo = mm.stability_check_lower(cand, P, p, t1, s, cfg.get("eps"), budget)
        row = {
            "t0": p.t,
            "t1": t1,
            "phi": up.phi_start,
            "upper": {"passed": up.passed, "status": up.status, "slack": up.slack, "eps": up.eps},
            "lower": {"passed": lo.passed, "status": lo.status, "slack": lo.slack, "eps": lo.eps},
        }
        if cand.dt_phi is not None and cand.grad_phi is not None:
            row["classical_residual"] = mm.classical_residual(cand, P, p)
        passed &= up.passed and lo.passed
        rows.append(row)
    return {"candidate": cand.name, "configs": rows}, bool(passed), {}


def cmd_witness(cfg, rng):
    P = _problem(cfg)
    lam = cfg.get("lambda")
    try:
        params = build_lyapunov_params(P.alpha, P.lambda_H, float(cfg["R"]), P.grid.T, lam)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    eps = float(cfg.get("eps", min(0.1, params.eps0)))
    if not 0 < eps <= params.eps0:
        raise ConfigError(f"eps must lie in (0, {params.eps0:.6g}]")
    letters = policy_alphabet(P, 3)
    rows = []
    passed = True
    for _ in range(cfg["pairs"]):
        p = fx.random_point(rng, P, scale=0.5)
        pol = SelectionPolicy(tuple(letters[k] for k in rng.integers(len(letters), size=4)))
        pol2 = SelectionPolicy(tuple(letters[k] for k in rng.integers(len(letters), size=4)))
        r = mm.comparison_witness(P, p, eps, params, pol, pol2)
        rows.append({"t0": p.t, "max_increase": r.max_increase, "tol": r.tol, "final_lhs": r.final_lhs, "final_rhs": r.final_rhs, "delta_sigma": r.delta_sigma})
        passed &= r.nonincreasing and r.final_holds
    return {"lyapunov": params.as_dict(), "eps": eps, "pairs": rows}, bool(passed), {}


def cmd_verify(cfg, rng):
    try:
        res = checks.run_suite(cfg["suite"], cfg["seed"])
    except KeyError as exc:
        raise ConfigError(f"unknown suite {cfg['suite']!r}; known: all, {', '.join(checks.SUITES)}") from exc
    return {"suite": cfg["suite"], "checks": [c.as_dict() for c in res]}, all(c.passed for c in res), {}


def cmd_list(cfg, rng):
    return {"fixtures": fx.list_fixtures()}, True, {}


COMMANDS = {
    "fracops": cmd_fracops,
    "metric": cmd_metric,
    "characteristics": cmd_characteristics,
    "lyapunov-check": cmd_lyapunov,
    "value": cmd_value,
    "stability": cmd_stability,
    "witness": cmd_witness,
    "verify": cmd_verify,
    "list-fixtures": cmd_list,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracminimax", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="directory for report.json, timing.json and CSV files")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--grid-n", type=int, dest="N")
        sp.add_argument("--alpha", type=float)
        if name == "verify":
            sp.add_argument("--suite")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    overrides = {"seed": args.seed, "N": args.N, "alpha": args.alpha, "suite": getattr(args, "suite", None)}
    start = time.perf_counter()
    try:
        cfg = load_config(args.command, args.config, overrides)
        rng = np.random.default_rng(cfg["seed"])
        results, passed, series = COMMANDS[args.command](cfg, rng)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - start
    report = _tidy({"command": args.command, "params": cfg, "passed": bool(passed), "results": results})
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text + "\n")
        (out / "timing.json").write_text(json.dumps({"wall_time_s": wall}) + "\n")
        for fname, writer in series.items():
            with open(out / fname, "w", newline="") as fh:
                writer(fh)
    else:
        print(text)
    print(f"{args.command}: {'PASS' if passed else 'FAIL'} ({wall:.2f} s)", file=sys.stderr)
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
