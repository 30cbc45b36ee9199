"""Point estimation, landscape scans and penalty selection.

Local searches are bounded Nelder-Mead runs (standard coefficients) from a
maximin Latin hypercube of starting points, each followed by an L-BFGS-B
polish on finite-difference gradients.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import optimize as sopt
from scipy.linalg import cho_solve
from scipy.spatial.distance import cdist

from .discrepancy import DiscrepancyFit, fit_discrepancy
from .errors import CalibrationError
from .kernels import KernelSpec, safe_cholesky
from .losses import LossKind, PKObjective, krr_predictor, scale_loss
from .projection import build_context
from .surrogate import BoxDomain, ComputerModel, PhysicalData, QuadratureSet, maximin_lhd

logger = logging.getLogger(__name__)

__all__ = [
    "OptimizerConfig",
    "StartTrace",
    "StationaryPoint",
    "LandscapeScan",
    "CalibrationResult",
    "RuggednessReport",
    "EtaCandidate",
    "lambda_rate",
    "lambda_from_scale",
    "cv_errors",
    "select_lambda_scale",
    "minimize",
    "scan",
    "nlo_index",
    "amp_index",
    "ruggedness",
    "select_eta",
    "calibrate_ls",
    "calibrate_l2_plugin",
    "calibrate_pk",
    "calibrate_ppk",
    "estimate_rho_mle",
    "predict_truth",
    "DEFAULT_ETA_GRID",
    "DEFAULT_LAMBDA_GRID",
]

DEFAULT_LAMBDA_GRID = tuple(10.0 ** np.linspace(-5, 1, 13))
DEFAULT_ETA_GRID = (0.0,) + tuple(10.0 ** np.arange(-3, 2.01, 0.5))


@dataclass(frozen=True)
class OptimizerConfig:
    n_starts: int = 12
    seed: int = 0
    f_tol: float = 1e-7
    x_tol: float = 1e-6
    max_evals: int = 2000
    polish: bool = True
    simplex_size: float = 0.05  # initial simplex edge, as a fraction of each width

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not (self.f_tol > 0 and self.x_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class StartTrace:
    start: np.ndarray
    theta: np.ndarray
    value: float
    evals: int
    converged: bool


@dataclass(frozen=True)
class StationaryPoint:
    theta: np.ndarray
    value: float
    kind: str  # "min", "max", "saddle" or "unknown"


@dataclass
class LandscapeScan:
    """Loss values on a tensor grid plus the interior stationary points found."""

    axes: list
    values: np.ndarray
    stationary: list

    @property
    def scaled(self) -> np.ndarray:
        return scale_loss(self.values.ravel()).reshape(self.values.shape)

    @property
    def q(self) -> int:
        return len(self.axes)

    @property
    def minima(self) -> list:
        return [s for s in self.stationary if s.kind == "min"]

    @property
    def maxima(self) -> list:
        return [s for s in self.stationary if s.kind == "max"]

    def grid_points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class CalibrationResult:
    """Point estimate with everything needed to reproduce and diagnose it."""

    theta: np.ndarray
    value: float
    kind: str
    starts: list = field(default_factory=list)
    lam: float | None = None
    lam_scale: float | None = None
    eta: float | None = None
    fit: DiscrepancyFit | None = None
    model: ComputerModel | None = None
    theta0: np.ndarray | None = None
    eta_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "theta": [float(t) for t in self.theta],
            "loss_kind": self.kind,
            "loss_value": float(self.value),
            "lambda": self.lam,
            "lambda_scale": self.lam_scale,
            "eta": self.eta,
            "theta0": None if self.theta0 is None else [float(t) for t in self.theta0],
        }


@dataclass(frozen=True)
class RuggednessReport:
    kind: str  # "nlo" or "amp"
    value: float
    detail: object = None


@dataclass(frozen=True)
class EtaCandidate:
    eta: float
    ri: float
    bic: float
    theta: np.ndarray
    pk_value: float
    ppk_value: float


# --------------------------------------------------------------------------
# ridge parameter

def lambda_rate(n: int, nu: float, d: int) -> float:
    """``n^(-2m/(2m+d))`` with ``m = nu + d/2``."""
    m = nu + d / 2.0
    return float(n) ** (-2.0 * m / (2.0 * m + d))


def lambda_from_scale(scale: float, n: int, kernel: KernelSpec, d: int) -> float:
    return scale * lambda_rate(n, kernel.nu, d)


def _folds(n: int, k: int) -> list[np.ndarray]:
    idx = np.arange(n)
    return [idx[idx % k == f] for f in range(k)]


def cv_errors(data: PhysicalData, model: ComputerModel, kernel, theta0, quad: QuadratureSet,
              folds: int = 10, grid: Sequence[float] = DEFAULT_LAMBDA_GRID) -> np.ndarray:
    """Mean held-out squared error of the discrepancy fit for each scale in ``grid``.

    Folds interleave the design order (point ``i`` goes to fold ``i mod K``);
    the ridge parameter inside a fold follows the rate for the training size.
    """
    n = data.n
    if not 2 <= folds <= n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    ctx = build_context(model, kernel, theta0, quad)
    delta = data.y - model(data.X, ctx.theta)
    K = ctx.cross(data.X)
    K = 0.5 * (K + K.T)
    parts = _folds(n, folds)
    errs = np.zeros(len(grid))
    for test in parts:
        train = np.setdiff1d(np.arange(n), test)
        Ktt = K[np.ix_(train, train)]
        Kst = K[np.ix_(test, train)]
        m = train.size
        for i, s in enumerate(grid):
            lam = lambda_from_scale(s, m, kernel, data.d)
            L, _ = safe_cholesky(Ktt + m * lam * np.eye(m))
            pred = Kst @ cho_solve((L, True), delta[train])
            errs[i] += np.sum((delta[test] - pred) ** 2)
    return errs / n


def select_lambda_scale(data: PhysicalData, model: ComputerModel, kernel, theta0, quad: QuadratureSet,
                        folds: int = 10, grid: Sequence[float] = DEFAULT_LAMBDA_GRID) -> float:
    """K-fold cross-validated ridge scale; the final ridge is ``scale * n^-rate``."""
    errs = cv_errors(data, model, kernel, theta0, quad, folds, grid)
    return float(grid[int(np.argmin(errs))])


# --------------------------------------------------------------------------
# minimization

def _safe(loss):
    def f(theta):
        try:
            v = float(loss(np.asarray(theta, dtype=float)))
        except CalibrationError:
            return np.inf
        return v if np.isfinite(v) else np.inf
    return f


def _initial_simplex(x0, domain: BoxDomain, size: float) -> np.ndarray:
    q = x0.size
    simplex = np.tile(x0, (q + 1, 1))
    for j in range(q):
        step = size * domain.widths[j]
        up = x0[j] + step
        simplex[j + 1, j] = up if up <= domain.hi[j] else x0[j] - step
    return simplex


def _local_search(f, x0, domain: BoxDomain, config: OptimizerConfig):
    evals = 0

    def counted(x):
        nonlocal evals
        evals += 1
        return f(x)

    # simplices holding several +inf vertices make scipy compute inf - inf
    with np.errstate(invalid="ignore"):
        res = sopt.minimize(
            counted, x0, method="Nelder-Mead", bounds=domain.bounds,
            options=dict(xatol=config.x_tol, fatol=config.f_tol, maxfev=config.max_evals,
                         initial_simplex=_initial_simplex(x0, domain, config.simplex_size)),
        )
    x, fx, ok = domain.clip(res.x), float(res.fun), bool(res.success)
    if config.polish and np.isfinite(fx):
        pol = sopt.minimize(counted, x, method="L-BFGS-B", bounds=domain.bounds,
                            options=dict(maxfun=max(50, config.max_evals // 10), ftol=1e-12,
                                         eps=1e-8 * max(1.0, domain.diameter)))
        if np.isfinite(pol.fun) and pol.fun < fx:
            x, fx = domain.clip(pol.x), float(pol.fun)
    return x, fx, ok, evals


def starting_points(domain: BoxDomain, config: OptimizerConfig) -> np.ndarray:
    if config.n_starts == 1:
        return domain.center[None, :]
    return maximin_lhd(domain, config.n_starts, config.seed)


def minimize(loss: Callable, domain: BoxDomain, config: OptimizerConfig = OptimizerConfig(),
             extra_starts=None, kind: str = "custom") -> CalibrationResult:
    """Multi-start bounded minimization of ``loss`` over ``domain``.

    Non-finite loss values count as ``+inf``.  The best converged point over
    all starts is returned; ties keep the earliest start.
    """
    f = _safe(loss)
    starts = starting_points(domain, config)
    if extra_starts is not None and len(extra_starts):
        starts = np.vstack([starts, np.asarray(extra_starts, dtype=float).reshape(-1, domain.dim)])
    traces = []
    for x0 in starts:
        x, fx, ok, evals = _local_search(f, x0, domain, config)
        traces.append(StartTrace(np.array(x0), x, fx, evals, ok))
    best = min(range(len(traces)), key=lambda i: (traces[i].value, i))
    if not np.isfinite(traces[best].value):
        raise CalibrationError("no start produced a finite loss value")
    t = traces[best]
    return CalibrationResult(theta=t.theta, value=t.value, kind=kind, starts=traces,
                             diagnostics={"evaluations": sum(tr.evals for tr in traces)})


# --------------------------------------------------------------------------
# landscapes

def _hessian(f, x, step) -> np.ndarray:
    q = x.size
    Hm = np.zeros((q, q))
    f0 = f(x)
    for i in range(q):
        ei = np.zeros(q)
        ei[i] = step[i]
        Hm[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / step[i] ** 2
        for j in range(i + 1, q):
            ej = np.zeros(q)
            ej[j] = step[j]
            Hm[i, j] = Hm[j, i] = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (
                4 * step[i] * step[j])
    return Hm


def _classify(f, x, step, domain: BoxDomain, band: float, fallback: str = "unknown") -> str:
    # keep the stencil inside the box
    room = np.minimum(x - domain.lo, domain.hi - x)
    step = np.minimum(step, np.maximum(room, 1e-12))
    ev = np.linalg.eigvalsh(_hessian(f, x, step))
    if np.all(ev > band):
        return "min"
    if np.all(ev < -band):
        return "max"
    if np.any(ev > band) and np.any(ev < -band):
        return "saddle"
    return fallback


def _dedupe(points: list, radius: float) -> list:
    kept = []
    for p in points:
        if all(np.linalg.norm(p.theta - k.theta) > radius for k in kept):
            kept.append(p)
    return kept


def _scan_1d(f, domain: BoxDomain, resolution: int, polish: bool):
    lo, hi = domain.lower[0], domain.upper[0]
    grid = np.linspace(lo, hi, resolution)
    vals = np.array([f(np.array([t])) for t in grid])
    spacing = grid[1] - grid[0]
    diffs = np.diff(vals)
    span = np.ptp(vals[np.isfinite(vals)]) if np.any(np.isfinite(vals)) else 0.0
    # differences at rounding level carry no sign information
    tiny = 1e-12 * max(span, np.max(np.abs(vals[np.isfinite(vals)]), initial=0.0))
    sgn = np.where(np.abs(diffs) > tiny, np.sign(diffs), 0.0)
    h = 1e-7 * (hi - lo)

    def deriv(t):
        a, b = max(t - h, lo), min(t + h, hi)
        return (f(np.array([b])) - f(np.array([a]))) / (b - a)

    points = []
    last_sign, last_idx = 0.0, None
    for i, s in enumerate(sgn):
        if s == 0:
            continue
        if last_sign and s != last_sign:
            # extremum between grid[last_idx] and grid[i + 1]
            a, b = grid[last_idx], grid[i + 1]
            kind = "min" if last_sign < 0 else "max"
            k_best = last_idx + 1 + int(np.argmin(vals[last_idx + 1:i + 1]) if kind == "min"
                                        else np.argmax(vals[last_idx + 1:i + 1]))
            t = grid[k_best]
            if polish:
                da, db = deriv(a), deriv(b)
                if np.sign(da) != np.sign(db) and np.isfinite(da) and np.isfinite(db):
                    while b - a > 1e-6:
                        m = 0.5 * (a + b)
                        dm = deriv(m)
                        if np.sign(dm) == np.sign(da):
                            a, da = m, dm
                        else:
                            b = m
                    t = 0.5 * (a + b)
            x = np.array([t])
            fx = f(x)
            band = 1e-9 * max(span, 1e-300) / (hi - lo) ** 2
            kind_h = _classify(f, x, np.array([0.25 * spacing]), domain, band, fallback=kind)
            if kind_h in ("min", "max") and kind_h != kind:
                kind_h = kind  # sub-grid wiggle: trust the bracketing sign change
            points.append(StationaryPoint(x, float(fx), kind_h))
        last_sign, last_idx = s, i
    return [grid], vals, points


def _scan_2d(f, domain: BoxDomain, resolution: int, polish: bool):
    axes = [np.linspace(a, b, resolution) for a, b in domain.bounds]
    T1, T2 = np.meshgrid(*axes, indexing="ij")
    vals = np.array([f(np.array([a, b])) for a, b in zip(T1.ravel(), T2.ravel())]).reshape(T1.shape)
    spacing = np.array([ax[1] - ax[0] for ax in axes])
    span = np.ptp(vals[np.isfinite(vals)])
    band = 1e-9 * max(span, 1e-300) / domain.diameter ** 2
    cfg = OptimizerConfig(n_starts=1, polish=True, simplex_size=0.5 * float(spacing.min() / domain.widths.max()))
    found = []
    inner = vals[1:-1, 1:-1]
    neigh = np.stack([vals[1 + di:resolution - 1 + di, 1 + dj:resolution - 1 + dj]
                      for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj])
    for sign, kind in ((1.0, "min"), (-1.0, "max")):
        mask = np.all(sign * inner[None] < sign * neigh, axis=0)
        for i, j in zip(*np.nonzero(mask)):
            x0 = np.array([axes[0][i + 1], axes[1][j + 1]])
            if polish:
                x, fx, _, _ = _local_search(lambda t, s=sign: s * f(t), x0, domain, cfg)
                fx = sign * fx
            else:
                x, fx = x0, vals[i + 1, j + 1]
            on_edge = np.any(np.minimum(x - domain.lo, domain.hi - x) < 1e-6 * domain.widths)
            if on_edge:
                continue
            k = _classify(f, x, 0.25 * spacing, domain, band, fallback=kind)
            found.append(StationaryPoint(x, float(fx), k))
    return axes, vals, found


def scan(loss: Callable, domain: BoxDomain, resolution: int | None = None,
         polish: bool = True) -> LandscapeScan:
    """Evaluate ``loss`` on a tensor grid and locate interior stationary points.

    One dimension: sign changes of the grid differences, polished by bisection
    on a central-difference derivative.  Two dimensions: grid cells beating
    all eight neighbours, polished by bounded local search.  Points closer
    than ``1e-3 * diam`` are merged.
    """
    q = domain.dim
    if q > 2:
        raise ValueError("grid scans support at most two parameters")
    if resolution is None:
        resolution = 300 if q == 1 else 41
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    f = _safe(loss)
    if q == 1:
        axes, vals, pts = _scan_1d(f, domain, resolution, polish)
    else:
        axes, vals, pts = _scan_2d(f, domain, resolution, polish)
    return LandscapeScan(axes, vals, _dedupe(pts, 1e-3 * domain.diameter))


def nlo_index(loss: Callable, domain: BoxDomain, config: OptimizerConfig = OptimizerConfig(),
              resolution: int | None = None, polish: bool = True) -> RuggednessReport:
    """Number of interior local optima (minima and maxima).

    With ``polish=False`` the grid locations are counted as found, which
    is enough for the count and much cheaper.
    """
    if domain.dim <= 2:
        sc = scan(loss, domain, resolution, polish)
        return RuggednessReport("nlo", float(len(sc.stationary)), sc.stationary)
    res = minimize(loss, domain, config)
    pts = [StationaryPoint(t.theta, t.value, "min") for t in res.starts
           if np.all(np.minimum(t.theta - domain.lo, domain.hi - t.theta) > 1e-6 * domain.widths)]
    pts = _dedupe(pts, 1e-3 * domain.diameter)
    return RuggednessReport("nlo", float(len(pts)), pts)


def amp_index(loss: Callable, domain: BoxDomain, n_samples: int = 100, seed: int = 0,
              thetas=None) -> RuggednessReport:
    """Amplitude index ``(max - min) / mean(L - min)`` over uniform samples of theta."""
    if thetas is None:
        if n_samples < 2:
            raise ValueError("need at least two samples")
        thetas = domain.sample(np.random.default_rng(seed), n_samples)
    vals = np.array([float(loss(t)) for t in thetas])
    lo = vals.min()
    dev = vals - lo
    top = dev.max()
    value = 0.0 if top == 0 else float(top / dev.mean())
    return RuggednessReport("amp", value, {"n": len(vals), "min": float(lo), "max": float(vals.max()),
                                           "mean": float(vals.mean())})


def ruggedness(index: str, loss: Callable, domain: BoxDomain, config: OptimizerConfig = OptimizerConfig(),
               resolution: int | None = None, n_samples: int = 100, polish: bool = True) -> RuggednessReport:
    if index == "nlo":
        return nlo_index(loss, domain, config, resolution, polish)
    if index == "amp":
        return amp_index(loss, domain, n_samples, config.seed)
    raise ValueError(f"unknown ruggedness index {index!r}")


# --------------------------------------------------------------------------
# penalty selection and calibration pipelines

def select_eta(objective: PKObjective, index: str = "nlo", eta_grid: Sequence[float] = DEFAULT_ETA_GRID,
               config: OptimizerConfig = OptimizerConfig(), domain: BoxDomain | None = None,
               resolution: int | None = None):
    """BIC-type choice of the penalty weight.

    For each candidate, minimize the PPK loss, then score
    ``log(L_PK(theta_hat)) + RI(L_PPK) * log(n) / n``.  Returns the winning
    ``eta`` and the per-candidate trace; ties go to the smaller ``eta``.
    """
    if len(eta_grid) == 0:
        raise ValueError("eta grid is empty")
    domain = objective.domain if domain is None else domain
    n = objective.n
    trace = []
    for eta in sorted(float(e) for e in eta_grid):
        loss = objective.loss(LossKind.PPK, eta)
        res = minimize(loss, domain, config, kind="ppk")
        ri = ruggedness(index, loss, domain, config, resolution, polish=False).value
        pk = objective.pk(res.theta)
        bic = float(np.log(max(pk, np.finfo(float).tiny)) + ri * np.log(n) / n)
        trace.append(EtaCandidate(eta, ri, bic, res.theta, pk, res.value))
        logger.debug("eta=%g RI=%g bic=%g theta=%s", eta, ri, bic, res.theta)
    best = trace[0]
    for cand in trace[1:]:
        if cand.bic < best.bic:
            best = cand
    return best.eta, trace


def calibrate_ls(data: PhysicalData, model: ComputerModel, config: OptimizerConfig = OptimizerConfig(),
                 domain: BoxDomain | None = None) -> CalibrationResult:
    """Least-squares calibration ``argmin (1/n) sum (y_i - y^s(x_i, theta))^2``."""
    domain = model.param_domain if domain is None else domain

    def loss(theta):
        r = data.y - model(data.X, theta)
        return float(np.mean(r ** 2))

    res = minimize(loss, domain, config, kind="ls")
    res.model = model
    return res


def calibrate_l2_plugin(data: PhysicalData, model: ComputerModel, kernel, lam: float, quad: QuadratureSet,
                        config: OptimizerConfig = OptimizerConfig(),
                        domain: BoxDomain | None = None) -> CalibrationResult:
    """``L2`` calibration against a kernel-ridge estimate of the truth."""
    domain = model.param_domain if domain is None else domain
    z = krr_predictor(data, kernel, lam)(quad.nodes)

    def loss(theta):
        r = z - model(quad.nodes, theta)
        return float(quad.weight * r @ r)

    res = minimize(loss, domain, config, kind="l2-plugin")
    res.lam = lam
    res.model = model
    return res


def _attach_fit(res: CalibrationResult, objective: PKObjective) -> CalibrationResult:
    res.fit = objective.fit(res.theta)
    res.model = objective.model
    res.lam = objective.lam
    res.diagnostics.update(cache_hits=objective.hits, cache_misses=objective.misses,
                           max_jitter=objective.max_jitter)
    return res


def calibrate_pk(objective: PKObjective, config: OptimizerConfig = OptimizerConfig(),
                 domain: BoxDomain | None = None) -> CalibrationResult:
    """Projected-kernel calibration (PPK with ``eta = 0``)."""
    domain = objective.domain if domain is None else domain
    res = minimize(objective.loss(LossKind.PK), domain, config, kind="pk")
    res.eta = 0.0
    return _attach_fit(res, objective)


def calibrate_ppk(data: PhysicalData, model: ComputerModel, kernel, quad: QuadratureSet,
                  config: OptimizerConfig = OptimizerConfig(), index: str = "nlo",
                  eta_grid: Sequence[float] = DEFAULT_ETA_GRID, lam_scale: float | None = None,
                  eta: float | None = None, folds: int = 10, theta0=None,
                  domain: BoxDomain | None = None, resolution: int | None = None) -> CalibrationResult:
    """Two-step penalized projected-kernel calibration.

    Least squares gives a preliminary ``theta0``; the ridge scale is chosen
    by K-fold CV at ``theta0`` unless given; ``eta`` is chosen by the BIC
    rule with the requested ruggedness index unless given; finally the PPK
    loss is minimized.
    """
    domain = model.param_domain if domain is None else domain
    if theta0 is None:
        theta0 = calibrate_ls(data, model, config, domain).theta
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if lam_scale is None:
        lam_scale = select_lambda_scale(data, model, kernel, theta0, quad, min(folds, data.n))
    lam = lambda_from_scale(lam_scale, data.n, kernel, data.d)
    objective = PKObjective(data, model, kernel, lam, quad)
    trace = []
    if eta is None:
        eta, trace = select_eta(objective, index, eta_grid, config, domain, resolution)
    res = minimize(objective.loss(LossKind.PPK, eta), domain, config, kind="ppk")
    res.eta = float(eta)
    res.lam_scale = float(lam_scale)
    res.theta0 = theta0
    res.eta_trace = trace
    res.diagnostics["index"] = index
    return _attach_fit(res, objective)


def predict_truth(result: CalibrationResult, x) -> np.ndarray:
    """``zeta_hat(x) = delta_hat(x) + y^s(x, theta_hat)``."""
    if result.fit is None or result.model is None:
        raise ValueError("result carries no discrepancy fit")
    X = np.asarray(x, dtype=float).reshape(-1, result.model.d)
    return result.fit.predict(X) + result.model(X, result.theta)


# --------------------------------------------------------------------------
# length-scale by maximum likelihood

def _profile_nll(K: np.ndarray, r: np.ndarray, log_g: float) -> float:
    n = r.size
    try:
        L, _ = safe_cholesky(K + np.exp(log_g) * np.eye(n))
    except CalibrationError:
        return np.inf
    alpha = cho_solve((L, True), r)
    tau2 = max(r @ alpha / n, 1e-300)
    return 0.5 * n * np.log(tau2) + np.sum(np.log(np.diag(L))) + 0.5 * n


def _golden(f, a: float, b: float, tol: float = 1e-4) -> tuple[float, float]:
    invphi = (np.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def estimate_rho_mle(data: PhysicalData, model: ComputerModel, theta0, nu: float,
                     grid_size: int = 21, log_nugget_bounds=(np.log(1e-10), np.log(1e2))):
    """Maximum-likelihood length-scale of a zero-mean GP fitted to the residuals.

    Residuals ``r = y - y^s(X, theta0)`` get covariance ``tau2 (K_rho + g I)``;
    ``tau2`` is profiled out in closed form, the nugget ratio ``g`` is
    optimized on a log scale for every ``rho``, and ``log rho`` is searched
    on ``[log(0.01 diam), log(10 diam)]`` by a coarse grid followed by
    golden-section refinement.
    """
    r = data.y - model(data.X, theta0)
    diam = model.design_domain.diameter
    if np.ptp(r) <= 1e-12 * max(1.0, np.max(np.abs(r))):
        warnings.warn("residuals are constant; using rho = diam / 2", RuntimeWarning, stacklevel=2)
        return diam / 2.0
    D = cdist(data.X, data.X)

    def nll(log_rho: float) -> float:
        K = KernelSpec(nu, float(np.exp(log_rho)))(D)
        inner = sopt.minimize_scalar(lambda lg: _profile_nll(K, r, lg), bounds=log_nugget_bounds,
                                     method="bounded", options=dict(xatol=1e-3))
        return float(inner.fun)

    a, b = np.log(0.01 * diam), np.log(10.0 * diam)
    grid = np.linspace(a, b, grid_size)
    vals = np.array([nll(t) for t in grid])
    k = int(np.argmin(vals))
    lo_, hi_ = grid[max(k - 1, 0)], grid[min(k + 1, grid_size - 1)]
    t, ft = _golden(nll, lo_, hi_)
    if ft > vals[k]:
        t = grid[k]
    return float(np.exp(t))


def with_seed(config: OptimizerConfig, seed: int) -> OptimizerConfig:
    return replace(config, seed=seed)
