"""Loss surfaces over the calibration parameter.

:class:`PKObjective` is the workhorse: for a fixed data set, kernel,
ridge parameter and node set it evaluates the projected-kernel loss
``lam * Delta' (K_theta + n lam I)^-1 Delta`` and the ``L2`` norm of the
fitted discrepancy from one factorization, caching both per theta.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
from scipy.linalg import cho_solve

from .discrepancy import DiscrepancyFit, fit_discrepancy, l2_norm_sq, rkhs_norm_sq
from .errors import CalibrationError, DegenerateGradientError, NotPSDError
from .kernels import safe_cholesky
from .projection import ProjectionContext, base_cross, build_context
from .surrogate import ComputerModel, PhysicalData, QuadratureSet

__all__ = [
    "LossKind",
    "Evaluation",
    "PKObjective",
    "l2_loss",
    "pk_loss",
    "pk_loss_sum_form",
    "ppk_loss",
    "pkl2_loss",
    "scale_loss",
    "krr_predictor",
]


class LossKind(str, Enum):
    L2_TRUE = "l2"
    L2_PLUGIN = "l2-plugin"
    PK = "pk"
    PPK = "ppk"
    PKL2 = "pkl2"


@dataclass(frozen=True, eq=False)
class Evaluation:
    fit: DiscrepancyFit
    pk: float
    l2: float

    @property
    def ctx(self) -> ProjectionContext:
        return self.fit.ctx


def _key(theta) -> tuple:
    return tuple(np.round(np.atleast_1d(np.asarray(theta, dtype=float)), 12).tolist())


class PKObjective:
    """PK and PPK losses for one data set, sharing all theta-free work.

    Parameters
    ----------
    data, model, kernel, lam, quad
        Physical data, computer model, base kernel, ridge parameter and the
        single node set used for every integral.
    cache_size : int
        Number of per-theta evaluations kept (keyed by theta rounded to 12
        decimals).
    """

    def __init__(self, data: PhysicalData, model: ComputerModel, kernel, lam: float,
                 quad: QuadratureSet, cache_size: int = 4096):
        if not lam > 0:
            raise ValueError(f"lam must be positive, got {lam}")
        self.data = data
        self.model = model
        self.kernel = kernel
        self.lam = float(lam)
        self.quad = quad
        self.K_xn = base_cross(kernel, data.X, quad.nodes)
        self.K_xx = base_cross(kernel, data.X)
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        self.hits = 0
        self.misses = 0
        self.max_jitter = 0.0

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def domain(self):
        return self.model.param_domain

    def context(self, theta) -> ProjectionContext:
        return self.evaluate(theta).ctx

    def evaluate(self, theta) -> Evaluation:
        key = _key(theta)
        ev = self._cache.get(key)
        if ev is not None:
            self.hits += 1
            self._cache.move_to_end(key)
            return ev
        self.misses += 1
        theta = np.array(key)
        ctx = build_context(self.model, self.kernel, theta, self.quad)
        fit = fit_discrepancy(self.data, ctx, self.lam, self.K_xn, self.K_xx)
        pk = float(self.lam * fit.delta @ fit.coef)
        l2 = l2_norm_sq(fit)
        self.max_jitter = max(self.max_jitter, fit.jitter, ctx.E_jitter, ctx.H_jitter)
        ev = Evaluation(fit, pk, l2)
        self._cache[key] = ev
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return ev

    def fit(self, theta) -> DiscrepancyFit:
        return self.evaluate(theta).fit

    def pk(self, theta) -> float:
        return self.evaluate(theta).pk

    def l2(self, theta) -> float:
        """``||delta_hat_theta||^2`` in ``L2(Omega)``."""
        return self.evaluate(theta).l2

    def ppk(self, theta, eta: float) -> float:
        ev = self.evaluate(theta)
        return ev.pk + eta * ev.l2 if eta else ev.pk

    def loss(self, kind: LossKind | str = LossKind.PK, eta: float = 0.0) -> Callable[[np.ndarray], float]:
        """Scalar loss ``theta -> value``; degenerate thetas map to ``inf``."""
        kind = LossKind(kind)
        if kind is LossKind.PK:
            def f(theta):
                return self._safe(self.pk, theta)
        elif kind is LossKind.PPK:
            def f(theta):
                return self._safe(self.ppk, theta, eta)
        else:
            raise ValueError(f"PKObjective cannot evaluate {kind}")
        return f

    @staticmethod
    def _safe(fn, *args) -> float:
        try:
            return fn(*args)
        except CalibrationError:
            return np.inf


def l2_loss(truth: Callable, model: ComputerModel, theta, quad: QuadratureSet) -> float:
    """``int (zeta - y^s(., theta))^2`` by quadrature.

    ``truth`` is either a callable of the node array or the precomputed
    vector of its values at ``quad.nodes``.
    """
    z = truth(quad.nodes) if callable(truth) else np.asarray(truth, dtype=float)
    r = z - model(quad.nodes, theta)
    return float(quad.weight * r @ r)


def pk_loss(data: PhysicalData, model: ComputerModel, kernel, theta, lam: float,
            quad: QuadratureSet) -> float:
    """``lam * Delta' (K_theta + n lam I)^-1 Delta`` (one Cholesky solve)."""
    ctx = build_context(model, kernel, theta, quad)
    fit = fit_discrepancy(data, ctx, lam)
    return float(lam * fit.delta @ fit.coef)


def pk_loss_sum_form(data: PhysicalData, model: ComputerModel, kernel, theta, lam: float,
                     quad: QuadratureSet) -> float:
    """Residual-plus-penalty form ``(1/n) sum (Delta_i - delta_hat(x_i))^2 + lam ||delta_hat||^2``."""
    ctx = build_context(model, kernel, theta, quad)
    fit = fit_discrepancy(data, ctx, lam)
    resid = fit.delta - fit.fitted()
    return float(np.mean(resid ** 2) + lam * rkhs_norm_sq(fit))


def ppk_loss(data: PhysicalData, model: ComputerModel, kernel, theta, lam: float, eta: float,
             quad: QuadratureSet) -> float:
    """PK loss plus ``eta`` times the squared ``L2`` norm of the same fit."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    ctx = build_context(model, kernel, theta, quad)
    fit = fit_discrepancy(data, ctx, lam)
    pk = float(lam * fit.delta @ fit.coef)
    return pk + eta * l2_norm_sq(fit) if eta else pk


def pkl2_loss(truth: Callable, model: ComputerModel, theta, quad: QuadratureSet, C: float = 0.0) -> float:
    """``||P_G delta_theta||^2 + C`` computed as ``a' E^-1 a + C``.

    ``a_j = <zeta - y^s(., theta), dy^s/dtheta_j>`` over the node set.
    """
    z = truth(quad.nodes) if callable(truth) else np.asarray(truth, dtype=float)
    g = model.grad(quad.nodes, theta)
    E = quad.inner(g)
    try:
        L, _ = safe_cholesky(0.5 * (E + E.T))
    except NotPSDError:
        raise DegenerateGradientError(f"parameter gradient directions degenerate at theta={theta}") from None
    a = quad.inner(g, z - model(quad.nodes, theta))
    return float(a @ cho_solve((L, True), a) + C)


def scale_loss(values) -> np.ndarray:
    """Affine map of ``values`` onto ``[0, 1]``; constant input gives zeros."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("need at least one value")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def krr_predictor(data: PhysicalData, kernel, lam: float) -> Callable[[np.ndarray], np.ndarray]:
    """Kernel ridge regression of ``y`` on ``X`` with the unprojected kernel."""
    n = data.n
    L, _ = safe_cholesky(base_cross(kernel, data.X) + n * lam * np.eye(n))
    coef = cho_solve((L, True), data.y)

    def zeta_hat(X):
        return base_cross(kernel, np.asarray(X, dtype=float).reshape(-1, data.d), data.X) @ coef

    return zeta_hat
