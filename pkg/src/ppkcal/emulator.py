"""Computer models given only as a table of runs.

The table holds rows ``(x_1..x_d, theta_1..theta_q, y)``.  A kernel ridge
fit with the plain Matérn kernel on inputs rescaled to the unit cube
stands in for the simulator; its parameter gradient comes from
finite differences.
"""

from __future__ import annotations

import csv

import numpy as np
from scipy.linalg import cho_solve

from .kernels import KernelSpec, cross_kernel, safe_cholesky
from .surrogate import BoxDomain, ComputerModel

__all__ = ["read_runs", "tabulated_model"]


def read_runs(path, d: int, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a run table with header ``x1..xd,theta1..thetaq,y``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    want = [f"x{i + 1}" for i in range(d)] + [f"theta{j + 1}" for j in range(q)] + ["y"]
    header = [h.strip() for h in rows[0]]
    if header != want:
        raise ValueError(f"{path}: header must be {','.join(want)}; got {','.join(header)}")
    body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if body.shape[0] < 2 or not np.all(np.isfinite(body)):
        raise ValueError(f"{path}: need at least two finite rows")
    return body[:, :d], body[:, d:d + q], body[:, -1]


def tabulated_model(X, T, y, design_domain: BoxDomain, param_domain: BoxDomain,
                    kernel: KernelSpec = KernelSpec(2.5, 0.5), lam: float = 1e-8,
                    name: str = "tabulated") -> ComputerModel:
    """Kernel ridge emulator of the runs ``y_k = y^s(X_k, T_k)``.

    Inputs are mapped to ``[0, 1]^(d+q)`` before the kernel is applied, so
    ``kernel.rho`` is a length-scale in unit-cube coordinates.
    """
    X = np.asarray(X, dtype=float).reshape(-1, design_domain.dim)
    T = np.asarray(T, dtype=float).reshape(-1, param_domain.dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    lo = np.concatenate([design_domain.lo, param_domain.lo])
    w = np.concatenate([design_domain.widths, param_domain.widths])
    Z = (np.hstack([X, T]) - lo) / w
    m = Z.shape[0]
    L, _ = safe_cholesky(cross_kernel(kernel, Z) + m * lam * np.eye(m))
    coef = cho_solve((L, True), y)

    def func(Xn, theta):
        Zn = (np.hstack([Xn, np.broadcast_to(theta, (Xn.shape[0], theta.size))]) - lo) / w
        return cross_kernel(kernel, Zn, Z) @ coef

    return ComputerModel(func, design_domain, param_domain, None, name)
