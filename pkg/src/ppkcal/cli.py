"""Command-line entry point: ``ppkcal <command> --config run.json``.

Commands: ``calibrate``, ``scan``, ``tune-eta``, ``replicate``, ``bayes``.
Exit status 0 on success, 1 for configuration errors, 2 for numerical
failures, 3 when ``replicate --assert`` finds a violated invariant.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from ._io import write_csv, write_json
from .bayes import PosteriorSpec, credible_interval, effective_sample_size, sample
from .bench import ReplicationPlan, check_invariants, run_plan
from .emulator import read_runs, tabulated_model
from .errors import CalibrationError, ConfigError
from .kernels import KernelSpec
from .losses import LossKind, PKObjective, l2_loss, krr_predictor, pkl2_loss
from .optimize import (
    DEFAULT_ETA_GRID,
    OptimizerConfig,
    calibrate_l2_plugin,
    calibrate_ls,
    calibrate_pk,
    calibrate_ppk,
    estimate_rho_mle,
    lambda_from_scale,
    minimize,
    scan,
    select_eta,
    select_lambda_scale,
)
from .surrogate import (
    BoxDomain,
    ComputerModel,
    PhysicalData,
    builtin_benchmark,
    default_quadrature_size,
    uniform_quadrature,
)

logger = logging.getLogger("ppkcal")

SCHEMA_VERSION = 1
COMMANDS = ("calibrate", "scan", "tune-eta", "replicate", "bayes")

DEFAULTS = {
    "benchmark": None,
    "data": None,
    "model": None,
    "n": 100,
    "seed": 0,
    "data_seed": None,
    "design_bounds": None,
    "param_bounds": None,
    "kernel": {"nu": None, "rho": None},
    "lambda": {"policy": "cv", "scale": None, "folds": 10},
    "eta": {"policy": "bic-nlo", "value": None, "grid": None},
    "quadrature": {"N": None, "seed": None},
    "optimizer": {"n_starts": 12, "f_tol": 1e-7, "x_tol": 1e-6, "max_evals": 2000},
    "scan": {"loss": "pk", "resolution": None},
    "bayes": {"iterations": 50000, "burn_in": 5000, "level": 0.95, "gamma": None},
    "method": "ppk",
    "out": "out",
}
ETA_POLICIES = ("bic-nlo", "bic-amp", "zero", "fixed")
SCAN_LOSSES = ("ls", "l2", "l2-plugin", "pk", "ppk", "pkl2")


# --------------------------------------------------------------------------
# configuration

def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where}{k}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where}{k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return obj


def _resolve_path(value, base: Path) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else (base / p))


def resolve_config(raw: dict, args: argparse.Namespace, base: Path) -> dict:
    """Fill defaults, apply command-line overrides and validate."""
    cfg = _merge(DEFAULTS, raw)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.method is not None:
        cfg["method"] = args.method
    if args.index is not None:
        cfg["eta"]["policy"] = f"bic-{args.index}"
    if args.out is not None:
        cfg["out"] = args.out
    cfg["data"] = _resolve_path(cfg["data"], base)
    if isinstance(cfg["model"], dict) and "table" in cfg["model"]:
        cfg["model"] = dict(cfg["model"], table=_resolve_path(cfg["model"]["table"], base))
    if cfg["data_seed"] is None:
        cfg["data_seed"] = cfg["seed"]
    if cfg["quadrature"]["seed"] is None:
        cfg["quadrature"]["seed"] = cfg["seed"]
    if cfg["method"] not in ("ls", "l2", "pk", "ppk"):
        raise ConfigError(f"method must be one of ls, l2, pk, ppk; got {cfg['method']!r}")
    if cfg["eta"]["policy"] not in ETA_POLICIES:
        raise ConfigError(f"eta.policy must be one of {', '.join(ETA_POLICIES)}")
    if cfg["eta"]["policy"] == "fixed" and not (isinstance(cfg["eta"]["value"], (int, float))
                                                 and cfg["eta"]["value"] >= 0):
        raise ConfigError("eta.policy 'fixed' needs a nonnegative eta.value")
    if cfg["lambda"]["policy"] not in ("cv", "fixed"):
        raise ConfigError("lambda.policy must be 'cv' or 'fixed'")
    if cfg["lambda"]["policy"] == "fixed" and not (isinstance(cfg["lambda"]["scale"], (int, float))
                                                    and cfg["lambda"]["scale"] > 0):
        raise ConfigError("lambda.policy 'fixed' needs a positive lambda.scale")
    if cfg["scan"]["loss"] not in SCAN_LOSSES:
        raise ConfigError(f"scan.loss must be one of {', '.join(SCAN_LOSSES)}")
    if not (isinstance(cfg["n"], int) and cfg["n"] >= 2):
        raise ConfigError("n must be an integer >= 2")
    if cfg["data"] is not None and not Path(cfg["data"]).is_file():
        raise ConfigError(f"dataset not found: {cfg['data']}")
    if cfg["benchmark"] is None and cfg["data"] is None:
        raise ConfigError("config needs either 'benchmark' or 'data'")
    b = cfg["bayes"]
    if not (isinstance(b["iterations"], int) and isinstance(b["burn_in"], int)
            and b["iterations"] > b["burn_in"] >= 0):
        raise ConfigError("bayes needs integers iterations > burn_in >= 0")
    return cfg


@dataclass
class Problem:
    """Everything a command needs, built from a resolved config."""

    data: PhysicalData
    model: ComputerModel
    truth: object
    kernel_nu: float
    kernel_rho: object
    quad: object
    optimizer: OptimizerConfig

    @property
    def domain(self) -> BoxDomain:
        return self.model.param_domain


def _bounds(value, what: str) -> BoxDomain | None:
    if value is None:
        return None
    try:
        return BoxDomain.from_bounds([tuple(map(float, b)) for b in value])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def build_problem(cfg: dict) -> Problem:
    bm = None
    if cfg["benchmark"] is not None:
        try:
            bm = builtin_benchmark(cfg["benchmark"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    design = _bounds(cfg["design_bounds"], "design_bounds") or (bm.design_domain if bm else None)
    params = _bounds(cfg["param_bounds"], "param_bounds") or (bm.param_domain if bm else None)
    if design is None or params is None:
        raise ConfigError("design_bounds and param_bounds are required without a benchmark")

    spec = cfg["model"]
    if spec is None or isinstance(spec, str):
        src = bm if spec is None else _builtin(spec)
        if src is None:
            raise ConfigError("no model: give 'model' or 'benchmark'")
        m = src.model
        model = ComputerModel(m.func, design, params, m.gradient, m.name)
    elif isinstance(spec, dict) and "table" in spec:
        path = spec["table"]
        if not Path(path).is_file():
            raise ConfigError(f"model table not found: {path}")
        try:
            X, T, y = read_runs(path, design.dim, params.dim)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        k = KernelSpec(float(spec.get("nu", 2.5)), float(spec.get("rho", 0.5)))
        model = tabulated_model(X, T, y, design, params, k, float(spec.get("lambda", 1e-8)))
    else:
        raise ConfigError("model must be a builtin name or {'table': path, ...}")

    if cfg["data"] is not None:
        try:
            data = PhysicalData.from_csv(cfg["data"], domain=design)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        truth = None
    else:
        data = bm.simulate(cfg["n"], cfg["data_seed"])
        truth = bm.truth

    nu = cfg["kernel"]["nu"] if cfg["kernel"]["nu"] is not None else (bm.nu if bm else 2.5)
    rho = cfg["kernel"]["rho"]
    if rho is None:
        rho = (bm.rho if bm and bm.rho is not None else "mle")
    if not (rho == "mle" or (isinstance(rho, (int, float)) and rho > 0)):
        raise ConfigError("kernel.rho must be positive or \"mle\"")
    N = cfg["quadrature"]["N"] or default_quadrature_size(design.dim)
    quad = uniform_quadrature(design, int(N), int(cfg["quadrature"]["seed"]))
    o = cfg["optimizer"]
    try:
        opt = OptimizerConfig(n_starts=int(o["n_starts"]), seed=int(cfg["seed"]), f_tol=float(o["f_tol"]),
                              x_tol=float(o["x_tol"]), max_evals=int(o["max_evals"]))
    except ValueError as exc:
        raise ConfigError(f"optimizer: {exc}") from None
    return Problem(data, model, truth, float(nu), rho, quad, opt)


def _builtin(name: str):
    try:
        return builtin_benchmark(name)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# shared pipeline pieces

@dataclass
class Prepared:
    problem: Problem
    theta0: np.ndarray
    kernel: KernelSpec
    lam_scale: float
    lam: float


def prepare(cfg: dict, pb: Problem) -> Prepared:
    """Least-squares start, kernel length-scale and ridge parameter."""
    ls = calibrate_ls(pb.data, pb.model, pb.optimizer)
    rho = pb.kernel_rho
    if rho == "mle":
        rho = estimate_rho_mle(pb.data, pb.model, ls.theta, pb.kernel_nu)
    kernel = KernelSpec(pb.kernel_nu, float(rho))
    if cfg["lambda"]["policy"] == "fixed":
        scale = float(cfg["lambda"]["scale"])
    else:
        scale = select_lambda_scale(pb.data, pb.model, kernel, ls.theta, pb.quad,
                                    min(int(cfg["lambda"]["folds"]), pb.data.n))
    return Prepared(pb, ls.theta, kernel, scale, lambda_from_scale(scale, pb.data.n, kernel, pb.data.d))


def _eta_grid(cfg) -> tuple:
    grid = cfg["eta"]["grid"]
    return DEFAULT_ETA_GRID if grid is None else tuple(float(e) for e in grid)


def _eta(cfg, objective: PKObjective, pb: Problem):
    """``(eta, trace)`` under the configured policy."""
    policy = cfg["eta"]["policy"]
    if policy == "zero":
        return 0.0, []
    if policy == "fixed":
        return float(cfg["eta"]["value"]), []
    return select_eta(objective, policy.split("-")[1], _eta_grid(cfg), pb.optimizer, pb.domain)


def _floats(a) -> list:
    return [float(v) for v in np.atleast_1d(a)]


def _seeds(cfg) -> dict:
    return {"optimizer": cfg["seed"], "data": cfg["data_seed"], "quadrature": cfg["quadrature"]["seed"]}


def _envelope(command: str, cfg: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "version": __version__,
            "config": cfg, "seeds": _seeds(cfg)}


def _trace_rows(trace, selected):
    for c in trace:
        yield [c.eta, c.ri, c.bic] + _floats(c.theta) + [c.pk_value, c.ppk_value, int(c.eta == selected)]


def _trace_header(q):
    return ["eta", "ri", "bic"] + [f"theta{j + 1}" for j in range(q)] + ["pk", "ppk", "selected"]


# --------------------------------------------------------------------------
# commands

def cmd_calibrate(cfg: dict, out: Path, args) -> int:
    pb = build_problem(cfg)
    method = cfg["method"]
    if method == "ls":
        res = calibrate_ls(pb.data, pb.model, pb.optimizer)
        extra = {}
    else:
        prep = prepare(cfg, pb)
        extra = {"kernel": {"nu": prep.kernel.nu, "rho": prep.kernel.rho}, "lambda_scale": prep.lam_scale,
                 "lambda": prep.lam}
        if method == "l2":
            res = calibrate_l2_plugin(pb.data, pb.model, prep.kernel, prep.lam, pb.quad, pb.optimizer)
        elif method == "pk":
            res = calibrate_pk(PKObjective(pb.data, pb.model, prep.kernel, prep.lam, pb.quad), pb.optimizer)
        else:
            policy = cfg["eta"]["policy"]
            index = policy.split("-")[1] if policy.startswith("bic") else "nlo"
            eta = {"zero": 0.0, "fixed": cfg["eta"]["value"]}.get(policy)
            res = calibrate_ppk(pb.data, pb.model, prep.kernel, pb.quad, pb.optimizer, index=index,
                                eta_grid=_eta_grid(cfg), lam_scale=prep.lam_scale, eta=eta, theta0=prep.theta0)
            extra["eta_trace"] = [dict(eta=c.eta, ri=c.ri, bic=c.bic, theta=_floats(c.theta)) for c in res.eta_trace]
    doc = _envelope("calibrate", cfg)
    doc.update(method=method, theta=_floats(res.theta), loss_value=float(res.value),
               eta=None if res.eta is None else float(res.eta),
               diagnostics={"evaluations": int(res.diagnostics.get("evaluations", 0)),
                            "starts": len(res.starts)})
    doc.update(extra)
    write_json(out / "result.json", doc)
    print(f"theta_hat = {_floats(res.theta)}  ({method}, loss {res.value:.6g})")
    return 0


def _scan_loss(cfg: dict, pb: Problem, kind: str):
    if kind == "ls":
        return (lambda t: float(np.mean((pb.data.y - pb.model(pb.data.X, t)) ** 2))), {}
    if kind in ("l2", "pkl2"):
        if pb.truth is None:
            raise ConfigError(f"the {kind} loss needs a known truth (builtin benchmark without a data file)")
        z = pb.truth(pb.quad.nodes)
        if kind == "l2":
            return (lambda t: l2_loss(z, pb.model, t, pb.quad)), {}
        return (lambda t: pkl2_loss(z, pb.model, t, pb.quad)), {}
    prep = prepare(cfg, pb)
    info = {"lambda_scale": prep.lam_scale, "lambda": prep.lam, "kernel": {"nu": prep.kernel.nu,
                                                                          "rho": prep.kernel.rho}}
    if kind == "l2-plugin":
        z = krr_predictor(pb.data, prep.kernel, prep.lam)(pb.quad.nodes)
        return (lambda t: l2_loss(z, pb.model, t, pb.quad)), info
    obj = PKObjective(pb.data, pb.model, prep.kernel, prep.lam, pb.quad)
    if kind == "pk":
        return obj.loss(LossKind.PK), info
    eta, _ = _eta(cfg, obj, pb)
    info["eta"] = eta
    return obj.loss(LossKind.PPK, eta), info


def cmd_scan(cfg: dict, out: Path, args) -> int:
    pb = build_problem(cfg)
    if pb.domain.dim > 2:
        raise ConfigError(f"scan supports at most two parameters, model has {pb.domain.dim}")
    kind = cfg["scan"]["loss"]
    if args.method is not None:
        kind = args.method if args.method != "l2" or pb.truth is not None else "l2-plugin"
        cfg["scan"]["loss"] = kind
    loss, info = _scan_loss(cfg, pb, kind)
    res = cfg["scan"]["resolution"]
    sc = scan(loss, pb.domain, res)
    q = sc.q
    cols = [f"theta{j + 1}" for j in range(q)]
    pts, raw, scaled = sc.grid_points(), sc.values.ravel(), sc.scaled.ravel()
    write_csv(out / "scan.csv", cols + ["raw", "scaled"],
              (list(p) + [r, s] for p, r, s in zip(pts, raw, scaled)))
    write_csv(out / "stationary.csv", cols + ["value", "kind"],
              (_floats(s.theta) + [s.value, s.kind] for s in sc.stationary))
    doc = _envelope("scan", cfg)
    doc.update(loss=kind, resolution=len(sc.axes[0]), stationary=len(sc.stationary), **info)
    write_json(out / "scan.json", doc)
    for s in sc.stationary:
        print(f"{s.kind:>7s} at {np.round(s.theta, 4).tolist()}  value {s.value:.6g}")
    return 0


def cmd_tune_eta(cfg: dict, out: Path, args) -> int:
    pb = build_problem(cfg)
    prep = prepare(cfg, pb)
    obj = PKObjective(pb.data, pb.model, prep.kernel, prep.lam, pb.quad)
    policy = cfg["eta"]["policy"]
    index = policy.split("-")[1] if policy.startswith("bic") else "nlo"
    eta, trace = select_eta(obj, index, _eta_grid(cfg), pb.optimizer, pb.domain)
    write_csv(out / "eta_trace.csv", _trace_header(pb.domain.dim), _trace_rows(trace, eta))
    doc = _envelope("tune-eta", cfg)
    doc.update(index=index, eta=eta, lambda_scale=prep.lam_scale, **{"lambda": prep.lam})
    write_json(out / "tune_eta.json", doc)
    print(f"selected eta = {eta:g} ({index})")
    return 0


def cmd_replicate(cfg: dict, out: Path, args) -> int:
    try:
        plan = ReplicationPlan.from_dict(cfg["plan"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"plan: {exc}") from None
    if args.seed is not None:
        plan = ReplicationPlan.from_dict(dict(plan.to_dict(), base_seed=args.seed))
    workers = _workers()
    summary = run_plan(plan, workers=workers)
    summary.to_csv(out / "summary.csv")
    cells = [{"method": c.method, "n": c.n, "median": _floats(c.median), "iqr": _floats(c.iqr),
              "bias": _floats(c.bias), "rmse": _floats(c.rmse), "failures": c.failures}
             for c in sorted(summary.cells.values(), key=lambda c: (c.method, c.n))]
    doc = {"schema_version": SCHEMA_VERSION, "command": "replicate", "version": __version__,
           "plan": plan.to_dict(), "theta_star": _floats(summary.theta_star), "cells": cells}
    problems = check_invariants(summary) if args.check else []
    if args.check:
        doc["assert"] = {"passed": not problems, "violations": problems}
    write_json(out / "summary.json", doc)
    for c in cells:
        print(f"{c['method']:>10s} n={c['n']:<4d} median={c['median']} rmse={c['rmse']}")
    if problems:
        for p in problems:
            print(f"assertion failed: {p}", file=sys.stderr)
        return 3
    return 0


def cmd_bayes(cfg: dict, out: Path, args) -> int:
    pb = build_problem(cfg)
    prep = prepare(cfg, pb)
    obj = PKObjective(pb.data, pb.model, prep.kernel, prep.lam, pb.quad)
    b = cfg["bayes"]
    if b["gamma"] is not None:
        gamma, eta = float(b["gamma"]), float(b["gamma"]) * prep.lam
    else:
        eta, _ = _eta(cfg, obj, pb)
        gamma = eta / prep.lam
    start = minimize(obj.loss(LossKind.PPK, eta), pb.domain, pb.optimizer, kind="ppk").theta
    post = PosteriorSpec(obj, gamma)
    chain = sample(post, b["iterations"], b["burn_in"], seed=cfg["seed"], theta0=start)
    chain.to_csv(out / "chain.csv")
    interval = credible_interval(chain, b["level"])
    doc = _envelope("bayes", cfg)
    doc.update(gamma=gamma, eta=eta, start=_floats(start), level=b["level"],
               interval=[list(iv) for iv in interval], acceptance_rate=chain.acceptance_rate,
               effective_samples=[effective_sample_size(chain.samples[:, j]) for j in range(chain.q)],
               proposal_scale=_floats(chain.scale), **{"lambda": prep.lam})
    write_json(out / "interval.json", doc)
    print(f"{int(100 * b['level'])}% interval: {interval}")
    return 0


HANDLERS = {"calibrate": cmd_calibrate, "scan": cmd_scan, "tune-eta": cmd_tune_eta,
            "replicate": cmd_replicate, "bayes": cmd_bayes}


def _workers() -> int:
    raw = os.environ.get("PPK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PPK_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"PPK_THREADS must be a positive integer, got {raw!r}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppkcal", description="Projected-kernel calibration of computer models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run config (plan file for replicate)")
        s.add_argument("--seed", type=int, help="override the config seed")
        s.add_argument("--method", choices=("ls", "l2", "pk", "ppk"))
        s.add_argument("--index", choices=("nlo", "amp"), help="ruggedness index for the eta rule")
        s.add_argument("--out", help="output directory")
        s.add_argument("--assert", dest="check", action="store_true", help="check ordinal invariants (replicate)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        raw = _read_json(args.config)
        base = Path(args.config).resolve().parent
        if args.command == "replicate":
            cfg = {"plan": raw, "out": args.out or raw.pop("out", "out")}
        else:
            cfg = resolve_config(raw, args, base)
        out = Path(cfg["out"])
        return HANDLERS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (CalibrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
