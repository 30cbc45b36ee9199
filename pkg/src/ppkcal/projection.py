"""Projected kernels built from quadrature integrals.

For a parameter value ``theta`` with gradient functions ``g_theta(x)``
(``q`` of them) and a base kernel ``K``, the projected kernel is::

    K_theta(x1, x2) = K(x1, x2) + w(x1)' H^-1 w(x2) - h(x1)' H^-1 h(x2)

with ``h(x) = <K(x, .), g>``, ``E = <g, g'>``, ``H = <<K, g g'>>`` and
``w(x) = H E^-1 g(x) - h(x)``.  Every integral is taken with the same
equal-weight node set, which makes ``<K_theta(x, .), g_j> = 0`` hold to
rounding error rather than only asymptotically.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .errors import DegenerateGradientError, NotPSDError
from .kernels import KernelMatrix, cross_kernel, safe_cholesky
from .surrogate import ComputerModel, QuadratureSet

__all__ = [
    "ProjectionContext",
    "build_context",
    "base_cross",
    "node_gram",
    "node_gram_times",
    "h_vec",
    "w_vec",
    "projected_kernel",
    "ogp_kernel",
    "projected_gram",
]

# full node Gram matrices are kept up to this many nodes; larger sets stream
STREAM_THRESHOLD = 6000
_BLOCK = 1024
_GRAM_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_GRAM_CACHE_SIZE = 3
# K(nodes, nodes) @ g keyed by the exact gradient values, so models whose
# gradient does not depend on theta skip the node-Gram product entirely
_KG_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_KG_CACHE_SIZE = 8


def base_cross(kernel, A, B=None) -> np.ndarray:
    """Unprojected kernel matrix; accepts any object with a ``cross`` method."""
    if hasattr(kernel, "cross"):
        return kernel.cross(A, B)
    return cross_kernel(kernel, A, B)


def node_gram(kernel, quad: QuadratureSet) -> np.ndarray | None:
    """Cached ``K(xi_i, xi_j)``; ``None`` when the node set is too large to hold."""
    if quad.N > STREAM_THRESHOLD:
        return None
    key = (kernel, quad.key)
    gram = _GRAM_CACHE.get(key)
    if gram is None:
        gram = base_cross(kernel, quad.nodes)
        gram.setflags(write=False)
        _GRAM_CACHE[key] = gram
        while len(_GRAM_CACHE) > _GRAM_CACHE_SIZE:
            _GRAM_CACHE.popitem(last=False)
    else:
        _GRAM_CACHE.move_to_end(key)
    return gram


def node_gram_times(kernel, quad: QuadratureSet, G: np.ndarray) -> np.ndarray:
    """``K(nodes, nodes) @ G`` without materializing large Gram matrices."""
    G = np.ascontiguousarray(G, dtype=float)
    key = (kernel, quad.key, G.shape, G.tobytes())
    out = _KG_CACHE.get(key)
    if out is not None:
        _KG_CACHE.move_to_end(key)
        return out
    gram = node_gram(kernel, quad)
    if gram is not None:
        out = gram @ G
    else:
        out = np.empty((quad.N, G.shape[1]))
        for start in range(0, quad.N, _BLOCK):
            block = base_cross(kernel, quad.nodes[start:start + _BLOCK], quad.nodes)
            out[start:start + _BLOCK] = block @ G
    out.setflags(write=False)
    _KG_CACHE[key] = out
    while len(_KG_CACHE) > _KG_CACHE_SIZE:
        _KG_CACHE.popitem(last=False)
    return out


@dataclass(frozen=True, eq=False)
class ProjectionContext:
    """Per-theta integrals needed to evaluate ``K_theta`` in closed form."""

    theta: np.ndarray
    model: ComputerModel
    kernel: object
    quad: QuadratureSet
    g_nodes: np.ndarray  # (N, q)
    h_nodes: np.ndarray  # (N, q)
    E: np.ndarray
    H: np.ndarray
    E_chol: np.ndarray
    H_chol: np.ndarray
    E_jitter: float
    H_jitter: float

    @property
    def q(self) -> int:
        return self.E.shape[0]

    def solve_E(self, B):
        return cho_solve((self.E_chol, True), B)

    def solve_H(self, B):
        return cho_solve((self.H_chol, True), B)

    def g(self, X) -> np.ndarray:
        return self.model.grad(X, self.theta)

    def h(self, X, K_xn=None) -> np.ndarray:
        """``h_theta`` at the rows of ``X``; ``K_xn`` is ``K(X, nodes)`` if known."""
        if K_xn is None:
            K_xn = base_cross(self.kernel, X, self.quad.nodes)
        return self.quad.weight * (K_xn @ self.g_nodes)

    def w_from(self, g, h) -> np.ndarray:
        # rows of w are g' E^-1 H - h'
        return self.solve_E(g.T).T @ self.H - h

    def features(self, X, K_xn=None):
        """``(g, h, w)`` at the rows of ``X``, each of shape ``(n, q)``."""
        g = self.g(X)
        h = self.h(X, K_xn)
        return g, h, self.w_from(g, h)

    def node_features(self):
        return self.g_nodes, self.h_nodes, self.w_from(self.g_nodes, self.h_nodes)

    def kernel_from_features(self, K12, f1, f2, ogp: bool = False) -> np.ndarray:
        """Projected (or OGP) kernel block from base kernel values and features."""
        _, h1, w1 = f1
        _, h2, w2 = f2
        out = K12 - h1 @ self.solve_H(h2.T)
        if not ogp:
            out = out + w1 @ self.solve_H(w2.T)
        return out

    def cross(self, X1, X2=None, ogp: bool = False) -> np.ndarray:
        X1 = np.atleast_2d(X1)
        X2 = X1 if X2 is None else np.atleast_2d(X2)
        f1 = self.features(X1)
        f2 = f1 if X2 is X1 else self.features(X2)
        return self.kernel_from_features(base_cross(self.kernel, X1, X2), f1, f2, ogp)


def build_context(model: ComputerModel, kernel, theta, quad: QuadratureSet) -> ProjectionContext:
    """Compute ``E_theta``, ``H_theta`` and node-level ``g``/``h`` for one theta.

    Raises
    ------
    DegenerateGradientError
        If ``E_theta`` (or ``H_theta``) is not positive definite even after
        jitter, i.e. the parameter-gradient directions are linearly dependent.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if quad.N < model.q + 1:
        raise ValueError(f"need at least q + 1 = {model.q + 1} quadrature nodes")
    g_nodes = model.grad(quad.nodes, theta)
    E = quad.inner(g_nodes)
    h_nodes = quad.weight * node_gram_times(kernel, quad, g_nodes)
    H = quad.inner(g_nodes, h_nodes)
    E = 0.5 * (E + E.T)
    H = 0.5 * (H + H.T)
    try:
        E_chol, E_jit = safe_cholesky(E)
    except NotPSDError:
        raise DegenerateGradientError(
            f"parameter gradient directions degenerate at theta={theta}"
        ) from None
    try:
        H_chol, H_jit = safe_cholesky(H)
    except NotPSDError:
        raise DegenerateGradientError(
            f"projected Gram matrix H degenerate at theta={theta}"
        ) from None
    return ProjectionContext(theta, model, kernel, quad, g_nodes, h_nodes, E, H,
                             E_chol, H_chol, E_jit, H_jit)


def _points(ctx, x):
    return np.asarray(x, dtype=float).reshape(-1, ctx.model.d)


def h_vec(ctx: ProjectionContext, x) -> np.ndarray:
    """``h_theta(x)``; a ``(q,)`` vector for one point, ``(n, q)`` for many."""
    X = _points(ctx, x)
    out = ctx.h(X)
    return out[0] if X.shape[0] == 1 and np.ndim(x) <= 1 else out


def w_vec(ctx: ProjectionContext, x) -> np.ndarray:
    """``w_theta(x) = H E^-1 g(x) - h(x)``."""
    X = _points(ctx, x)
    out = ctx.features(X)[2]
    return out[0] if X.shape[0] == 1 and np.ndim(x) <= 1 else out


def projected_kernel(ctx: ProjectionContext, x1, x2) -> float:
    """``K_theta(x1, x2)`` for two single points."""
    return float(ctx.cross(_points(ctx, x1), _points(ctx, x2))[0, 0])


def ogp_kernel(ctx: ProjectionContext, x1, x2) -> float:
    """Orthogonal-GP kernel ``K(x1, x2) - h(x1)' H^-1 h(x2)``."""
    return float(ctx.cross(_points(ctx, x1), _points(ctx, x2), ogp=True)[0, 0])


def projected_gram(ctx: ProjectionContext, points) -> KernelMatrix:
    """``[K_theta(x_i, x_j)]`` as a symmetrized :class:`KernelMatrix`."""
    M = ctx.cross(_points(ctx, points))
    return KernelMatrix(0.5 * (M + M.T))
