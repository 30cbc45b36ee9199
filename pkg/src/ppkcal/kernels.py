"""Matern kernels, kernel matrices and jittered Cholesky factorization.

The Matern correlation is used with the raw scaled distance ``r = h / rho``
(no ``sqrt(2 nu)`` factor)::

    k(h) = r**nu * K_nu(r) / (Gamma(nu) * 2**(nu - 1))

so that ``k(0) = 1``.  Half-integer smoothness values use the exact
polynomial-times-exponential form; everything else goes through
:func:`scipy.special.kv`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial

import numpy as np
from scipy import linalg, special
from scipy.spatial.distance import cdist

from .errors import NotPSDError

__all__ = [
    "KernelSpec",
    "KernelMatrix",
    "matern_eval",
    "matern_bessel",
    "cross_kernel",
    "kernel_matrix",
    "safe_cholesky",
    "JITTER_LADDER",
]

JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8, 1e-6)

# closed forms are used up to nu = 10.5; beyond that the Bessel route is fine
_MAX_HALF_INTEGER_ORDER = 10


@dataclass(frozen=True)
class KernelSpec:
    """Stationary isotropic kernel with unit variance.

    Parameters
    ----------
    nu : float
        Smoothness of the Matern family.
    rho : float
        Length-scale, in the units of the input distance.
    family : str
        Only ``"matern"`` is implemented.
    """

    nu: float
    rho: float
    family: str = "matern"

    def __post_init__(self):
        if not (self.nu > 0 and np.isfinite(self.nu)):
            raise ValueError(f"smoothness must be positive, got {self.nu}")
        if not (self.rho > 0 and np.isfinite(self.rho)):
            raise ValueError(f"length-scale must be positive, got {self.rho}")
        if self.family != "matern":
            raise ValueError(f"unsupported kernel family {self.family!r}")

    @property
    def half_integer_order(self) -> int | None:
        """``p`` when ``nu == p + 1/2`` (and small enough for the closed form)."""
        p = self.nu - 0.5
        if p >= 0 and p == int(p) and p <= _MAX_HALF_INTEGER_ORDER:
            return int(p)
        return None

    def sobolev_order(self, d: int) -> float:
        """Order ``m = nu + d/2`` of the Sobolev space equal to the native space."""
        return self.nu + d / 2.0

    def __call__(self, h):
        return matern_eval(self, h)

    def cross(self, A, B=None) -> np.ndarray:
        return cross_kernel(self, A, B)

    def with_rho(self, rho: float) -> "KernelSpec":
        return KernelSpec(self.nu, rho, self.family)


def _half_integer(p: int, r: np.ndarray) -> np.ndarray:
    # exp(-r) * p!/(2p)! * sum_i (p+i)!/(i!(p-i)!) (2r)^(p-i)
    poly = np.zeros_like(r)
    for i in range(p + 1):
        coef = factorial(p + i) / (factorial(i) * factorial(p - i))
        poly += coef * (2.0 * r) ** (p - i)
    return np.exp(-r) * poly * factorial(p) / factorial(2 * p)


def matern_bessel(nu: float, r) -> np.ndarray:
    """General Matern correlation at scaled distance ``r`` via the Bessel function."""
    r = np.asarray(r, dtype=float)
    out = np.ones_like(r)
    pos = r > 0
    rp = r[pos]
    with np.errstate(over="ignore", invalid="ignore"):
        val = np.exp(nu * np.log(rp) - special.gammaln(nu) - (nu - 1) * np.log(2.0)) * special.kv(nu, rp)
    # kv underflows to 0 for huge r, and r**nu * kv -> 0 there as well
    val[~np.isfinite(val)] = 0.0
    out[pos] = val
    return out


def matern_eval(spec: KernelSpec, h) -> np.ndarray | float:
    """Evaluate the kernel at nonnegative distance(s) ``h``."""
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0):
        raise ValueError("distances must be nonnegative")
    r = h_arr / spec.rho
    p = spec.half_integer_order
    if p is not None:
        out = _half_integer(p, r)
    else:
        out = matern_bessel(spec.nu, r)
    if out.ndim == 0:
        return float(out)
    return out


def _as_points(points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array of shape (n, d)")
    if not np.all(np.isfinite(X)):
        raise ValueError("points contain non-finite coordinates")
    return X


def cross_kernel(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Kernel matrix ``[k(|a_i - b_j|)]`` between two point sets."""
    A = _as_points(A)
    B = A if B is None else _as_points(B)
    return matern_eval(spec, cdist(A, B))


@dataclass
class KernelMatrix:
    """Symmetric kernel matrix with a lazily computed jittered Cholesky factor."""

    values: np.ndarray
    _factor: tuple | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def cholesky(self) -> np.ndarray:
        if self._factor is None:
            self._factor = safe_cholesky(self.values)
        return self._factor[0]

    @property
    def jitter(self) -> float:
        if self._factor is None:
            self.cholesky()
        return self._factor[1]

    def min_max_eigenvalues(self) -> tuple[float, float]:
        ev = np.linalg.eigvalsh(self.values)
        return float(ev[0]), float(ev[-1])


def kernel_matrix(spec: KernelSpec, points) -> KernelMatrix:
    """Gram matrix of ``spec`` on ``points`` (shape ``(n, d)`` or ``(n,)``)."""
    X = _as_points(points)
    if X.shape[0] == 0:
        raise ValueError("need at least one point")
    K = cross_kernel(spec, X)
    np.fill_diagonal(K, 1.0)
    return KernelMatrix(K)


def safe_cholesky(M) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``M + j I`` for the smallest workable jitter ``j``.

    ``j`` runs over :data:`JITTER_LADDER` times ``trace(M)/n``.  Returns the
    factor and the jitter that was applied.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    scale = np.trace(M) / n if n else 0.0
    if not np.isfinite(scale):
        raise NotPSDError("matrix not numerically PSD (non-finite entries)")
    eye = np.eye(n)
    for rung in JITTER_LADDER:
        jitter = rung * scale
        try:
            L = linalg.cholesky(M + jitter * eye, lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        return L, float(jitter)
    raise NotPSDError("matrix not numerically PSD")
