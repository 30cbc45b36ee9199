"""Replication harness for the synthetic benchmarks.

Each replication ``r`` uses seed ``base_seed + r`` for both the design and
the noise, runs every requested method on the same data and records the
estimate.  Summaries are pure functions of the persisted records.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize as sopt

from ._io import write_csv
from .errors import CalibrationError
from .kernels import KernelSpec
from .losses import PKObjective, l2_loss
from .optimize import (
    OptimizerConfig,
    calibrate_l2_plugin,
    calibrate_ls,
    calibrate_pk,
    calibrate_ppk,
    estimate_rho_mle,
    lambda_from_scale,
    select_lambda_scale,
)
from .surrogate import (
    Benchmark,
    BoxDomain,
    PhysicalData,
    QuadratureSet,
    builtin_benchmark,
    default_quadrature_size,
    midpoint_quadrature,
    uniform_quadrature,
)

logger = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "ReplicationPlan",
    "ReplicationRecord",
    "CellSummary",
    "ReplicationSummary",
    "run_plan",
    "theta_star_oracle",
    "benchmark_kernel",
    "check_invariants",
]

METHODS = ("LS", "L2_PLUGIN", "PK", "PPK_NLO", "PPK_AMP")


@dataclass(frozen=True)
class ReplicationPlan:
    """What to run: ``replications`` seeded data sets per sample size.

    ``pk_bounds`` narrows the parameter box for the ``PK`` method only
    (e.g. ``[(0.0, 0.5)]``); ``lam_scale`` skips cross-validation.
    """

    benchmark: str
    sample_sizes: tuple
    methods: tuple
    replications: int = 20
    base_seed: int = 0
    pk_bounds: tuple | None = None
    quad_size: int | None = None
    quad_seed: int = 0
    lam_scale: float | None = None
    n_starts: int = 12

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        object.__setattr__(self, "methods", tuple(str(m).upper() for m in self.methods))
        if self.pk_bounds is not None:
            object.__setattr__(self, "pk_bounds", tuple(tuple(float(v) for v in b) for b in self.pk_bounds))
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not self.methods:
            raise ValueError("methods must be nonempty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; choose from {list(METHODS)}")
        if not self.sample_sizes or min(self.sample_sizes) < 2:
            raise ValueError("sample sizes must be >= 2")

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicationPlan":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown plan fields {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if k == "pk_bounds" and v is not None else
                    list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class ReplicationRecord:
    method: str
    n: int
    replication: int
    theta: np.ndarray
    loss_value: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error) or not np.all(np.isfinite(self.theta))


@dataclass(frozen=True)
class CellSummary:
    method: str
    n: int
    thetas: np.ndarray  # (R, q), NaN rows for failed replications
    median: np.ndarray
    iqr: np.ndarray
    bias: np.ndarray
    rmse: np.ndarray
    failures: int


@dataclass
class ReplicationSummary:
    records: list
    theta_star: np.ndarray
    plan: ReplicationPlan | None = None
    cells: dict = field(init=False)

    def __post_init__(self):
        self.theta_star = np.atleast_1d(np.asarray(self.theta_star, dtype=float))
        self.cells = self._summarize()

    def _summarize(self) -> dict:
        groups: dict = {}
        for rec in self.records:
            groups.setdefault((rec.method, rec.n), []).append(rec)
        cells = {}
        for key, recs in groups.items():
            recs = sorted(recs, key=lambda r: r.replication)
            T = np.array([r.theta if not r.failed else np.full(self.q, np.nan) for r in recs], dtype=float)
            ok = T[~np.any(np.isnan(T), axis=1)]
            if len(ok):
                q1, med, q3 = np.percentile(ok, [25, 50, 75], axis=0)
                err = ok - self.theta_star
                bias, rmse = err.mean(axis=0), np.sqrt((err ** 2).mean(axis=0))
            else:
                med = q1 = q3 = bias = rmse = np.full(self.q, np.nan)
            cells[key] = CellSummary(key[0], key[1], T, med, q3 - q1, bias, rmse, len(recs) - len(ok))
        return cells

    @property
    def q(self) -> int:
        return self.theta_star.size

    def cell(self, method: str, n: int) -> CellSummary:
        return self.cells[(method.upper(), int(n))]

    def to_csv(self, path):
        header = ["method", "n", "replication"] + [f"theta_hat_{j + 1}" for j in range(self.q)] + ["loss_value"]
        rows = ([r.method, r.n, r.replication] + [float(t) for t in r.theta] + [float(r.loss_value)]
                for r in self.records)
        return write_csv(path, header, rows)

    @classmethod
    def from_csv(cls, path, theta_star) -> "ReplicationSummary":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        q = np.atleast_1d(theta_star).size
        recs = [ReplicationRecord(r["method"], int(r["n"]), int(r["replication"]),
                                  np.array([float(r[f"theta_hat_{j + 1}"]) for j in range(q)]),
                                  float(r["loss_value"]))
                for r in rows]
        return cls(recs, theta_star)


# --------------------------------------------------------------------------

def _as_benchmark(benchmark) -> Benchmark:
    return builtin_benchmark(benchmark) if isinstance(benchmark, str) else benchmark


def theta_star_oracle(benchmark, resolution: int | None = None, quad: QuadratureSet | None = None) -> np.ndarray:
    """Brute-force ``argmin_Theta int (zeta - y^s(., theta))^2``.

    The loss is evaluated on a tensor grid over ``Theta`` (301 points for
    one parameter, 61 per axis for two, 11 per axis beyond) and the best
    grid point is refined by bounded L-BFGS-B.  The default node set is a
    deterministic midpoint rule with about 2000 (``d <= 2``) or 5000 nodes.
    """
    bm = _as_benchmark(benchmark)
    dom = bm.param_domain
    if quad is None:
        d = bm.design_domain.dim
        per = int(np.ceil(default_quadrature_size(d) ** (1.0 / d)))
        quad = midpoint_quadrature(bm.design_domain, per)
    if resolution is None:
        resolution = {1: 301, 2: 61}.get(dom.dim, 11)
    z = bm.truth(quad.nodes)

    def f(theta):
        return l2_loss(z, bm.model, theta, quad)

    axes = [np.linspace(a, b, resolution) for a, b in dom.bounds]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.dim)
    vals = np.array([f(t) for t in grid])
    x0 = grid[int(np.argmin(vals))]
    res = sopt.minimize(f, x0, method="L-BFGS-B", bounds=dom.bounds,
                        options=dict(ftol=1e-15, gtol=1e-12, maxfun=5000))
    return dom.clip(res.x) if res.fun <= vals.min() else x0


def benchmark_kernel(bm: Benchmark, data: PhysicalData, theta0) -> KernelSpec:
    """The benchmark's kernel; a missing length-scale is fitted by maximum likelihood."""
    rho = bm.rho if bm.rho is not None else estimate_rho_mle(data, bm.model, theta0, bm.nu)
    return KernelSpec(bm.nu, rho)


def _run_cell(method: str, bm: Benchmark, data: PhysicalData, plan: ReplicationPlan, quad: QuadratureSet,
              config: OptimizerConfig, shared: dict):
    model = bm.model
    if method == "LS":
        res = shared["ls"]
        return res.theta, res.value
    kernel, lam_scale = shared["kernel"], shared["lam_scale"]
    lam = lambda_from_scale(lam_scale, data.n, kernel, data.d)
    if method == "L2_PLUGIN":
        res = calibrate_l2_plugin(data, model, kernel, lam, quad, config)
    elif method == "PK":
        dom = BoxDomain.from_bounds(plan.pk_bounds) if plan.pk_bounds else None
        res = calibrate_pk(PKObjective(data, model, kernel, lam, quad), config, dom)
    else:
        index = "nlo" if method == "PPK_NLO" else "amp"
        res = calibrate_ppk(data, model, kernel, quad, config, index=index, lam_scale=lam_scale,
                            theta0=shared["ls"].theta)
    return res.theta, res.value


def _replication(plan: ReplicationPlan, r: int) -> list:
    bm = _as_benchmark(plan.benchmark)
    N = plan.quad_size or default_quadrature_size(bm.design_domain.dim)
    quad = uniform_quadrature(bm.design_domain, N, plan.quad_seed)
    q = bm.param_domain.dim
    seed = plan.base_seed + r
    config = OptimizerConfig(n_starts=plan.n_starts, seed=seed)
    records = []
    for n in plan.sample_sizes:
        data = bm.simulate(n, seed)
        shared: dict = {}
        setup_error = ""
        try:
            shared["ls"] = calibrate_ls(data, bm.model, config)
            if set(plan.methods) - {"LS"}:
                shared["kernel"] = benchmark_kernel(bm, data, shared["ls"].theta)
                shared["lam_scale"] = plan.lam_scale or select_lambda_scale(
                    data, bm.model, shared["kernel"], shared["ls"].theta, quad, min(10, n))
        except (CalibrationError, ValueError, np.linalg.LinAlgError) as exc:
            setup_error = f"setup: {exc}"
        for method in plan.methods:
            if setup_error and not (method == "LS" and "ls" in shared):
                records.append(ReplicationRecord(method, n, r, np.full(q, np.nan), np.nan, setup_error))
                continue
            try:
                theta, value = _run_cell(method, bm, data, plan, quad, config, shared)
                records.append(ReplicationRecord(method, n, r, np.asarray(theta, float), float(value)))
            except (CalibrationError, ValueError, np.linalg.LinAlgError) as exc:
                logger.warning("%s n=%d r=%d failed: %s", method, n, r, exc)
                records.append(ReplicationRecord(method, n, r, np.full(q, np.nan), np.nan, str(exc)))
    return records


def run_plan(plan: ReplicationPlan, theta_star=None, workers: int = 1) -> ReplicationSummary:
    """Run every (replication, sample size, method) cell of ``plan``.

    Numerical failures in a cell are recorded with NaN estimates and an
    error message; they do not stop the run.  With ``workers > 1``
    replications run in separate processes; the records come back in the
    same order either way.
    """
    if theta_star is None:
        theta_star = theta_star_oracle(_as_benchmark(plan.benchmark))
    reps = range(plan.replications)
    if workers > 1 and plan.replications > 1:
        with ProcessPoolExecutor(max_workers=min(workers, plan.replications)) as pool:
            chunks = list(pool.map(_replication, [plan] * len(reps), reps))
    else:
        chunks = [_replication(plan, r) for r in reps]
    return ReplicationSummary([rec for chunk in chunks for rec in chunk], theta_star, plan)


def check_invariants(summary: ReplicationSummary, consistent: Sequence[str] = ("LS", "L2_PLUGIN", "PPK_NLO",
                                                                                  "PPK_AMP")) -> list[str]:
    """Ordinal checks on a summary; returns a list of violated statements.

    * RMSE at the largest sample size is below RMSE at the smallest for
      every method expected to be consistent;
    * at the largest sample size, the PK estimate on a narrowed box is no
      more spread out than least squares (an asymptotic efficiency claim,
      so small designs are not checked).
    """
    problems = []
    plan = summary.plan
    sizes = sorted({n for _, n in summary.cells})
    if len(sizes) >= 2:
        lo_n, hi_n = sizes[0], sizes[-1]
        for m in consistent:
            if (m, lo_n) in summary.cells and (m, hi_n) in summary.cells:
                a, b = summary.cells[(m, hi_n)].rmse, summary.cells[(m, lo_n)].rmse
                if not np.all(a < b):
                    problems.append(f"{m}: RMSE at n={hi_n} ({a}) not below n={lo_n} ({b})")
    if plan is not None and plan.pk_bounds and sizes:
        n = sizes[-1]
        if ("PK", n) in summary.cells and ("LS", n) in summary.cells:
            a, b = summary.cells[("PK", n)].iqr, summary.cells[("LS", n)].iqr
            if not np.all(a <= b):
                problems.append(f"PK IQR {a} exceeds LS IQR {b} at n={n}")
    return problems
