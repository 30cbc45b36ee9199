"""Kernel ridge regression of the discrepancy under a projected kernel."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .kernels import safe_cholesky
from .projection import ProjectionContext, base_cross
from .surrogate import PhysicalData, QuadratureSet

__all__ = [
    "DiscrepancyFit",
    "fit_discrepancy",
    "predict",
    "rkhs_norm_sq",
    "l2_norm_sq",
    "empirical_norm_sq",
]


@dataclass(frozen=True, eq=False)
class DiscrepancyFit:
    """Solution ``c`` of ``(K_theta + n lam I) c = Delta_theta`` and what produced it."""

    theta: np.ndarray
    lam: float
    X: np.ndarray
    delta: np.ndarray  # Delta_theta = y - y^s(X, theta)
    coef: np.ndarray
    gram: np.ndarray  # K_theta on the design
    chol: np.ndarray  # factor of gram + n lam I (+ jitter)
    jitter: float
    ctx: ProjectionContext
    features: tuple  # (g, h, w) at the design points
    K_xn: np.ndarray | None = None  # base kernel between design and quadrature nodes

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def fitted(self) -> np.ndarray:
        """``delta_hat`` at the design points."""
        return self.gram @ self.coef

    def solve(self, b) -> np.ndarray:
        return cho_solve((self.chol, True), b)

    def predict(self, Xnew) -> np.ndarray:
        Xnew = np.asarray(Xnew, dtype=float).reshape(-1, self.X.shape[1])
        fnew = self.ctx.features(Xnew)
        K = self.ctx.kernel_from_features(base_cross(self.ctx.kernel, Xnew, self.X), fnew, self.features)
        return K @ self.coef

    def predict_nodes(self) -> np.ndarray:
        """``delta_hat`` at the context's quadrature nodes, reusing cached integrals."""
        ctx = self.ctx
        _, h_x, w_x = self.features
        g_n, h_n, w_n = ctx.node_features()
        K_nx = (self.K_xn if self.K_xn is not None else base_cross(ctx.kernel, self.X, ctx.quad.nodes)).T
        return (K_nx @ self.coef
                - h_n @ ctx.solve_H(h_x.T @ self.coef)
                + w_n @ ctx.solve_H(w_x.T @ self.coef))


def fit_discrepancy(data: PhysicalData, ctx: ProjectionContext, lam: float,
                    K_xn=None, K_xx=None) -> DiscrepancyFit:
    """Ridge fit of ``y - y^s(., theta)`` in the native space of ``K_theta``.

    ``K_xn`` and ``K_xx`` are optional precomputed base-kernel matrices
    (design x nodes, design x design); they do not depend on theta.
    """
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    X = data.X
    n = data.n
    delta = data.y - ctx.model(X, ctx.theta)
    if K_xn is None:
        K_xn = base_cross(ctx.kernel, X, ctx.quad.nodes)
    if K_xx is None:
        K_xx = base_cross(ctx.kernel, X)
    feats = ctx.features(X, K_xn)
    gram = ctx.kernel_from_features(K_xx, feats, feats)
    gram = 0.5 * (gram + gram.T)
    chol, jitter = safe_cholesky(gram + n * lam * np.eye(n))
    coef = cho_solve((chol, True), delta)
    return DiscrepancyFit(ctx.theta, float(lam), X, delta, coef, gram, chol, jitter, ctx, feats, K_xn)


def predict(fit: DiscrepancyFit, x) -> np.ndarray | float:
    """``delta_hat(x) = sum_i c_i K_theta(x, x_i)``."""
    out = fit.predict(x)
    return float(out[0]) if np.ndim(x) <= 1 and out.shape == (1,) else out


def rkhs_norm_sq(fit: DiscrepancyFit) -> float:
    """Native-space norm ``c' K_theta c``."""
    return float(max(fit.coef @ fit.gram @ fit.coef, 0.0))


def l2_norm_sq(fit: DiscrepancyFit, quad: QuadratureSet | None = None) -> float:
    """Squared ``L2(Omega)`` norm of ``delta_hat`` by quadrature."""
    if quad is None or quad is fit.ctx.quad:
        vals = fit.predict_nodes()
        return float(fit.ctx.quad.weight * vals @ vals)
    vals = fit.predict(quad.nodes)
    return float(quad.weight * vals @ vals)


def empirical_norm_sq(values) -> float:
    """``(1/n) sum v_i^2``."""
    v = np.asarray(values, dtype=float)
    return float(np.mean(v ** 2)) if v.size else 0.0
