"""Computer models, physical data, quadrature node sets and designs.

Models are vectorized: ``model(X, theta)`` takes an ``(n, d)`` array of
inputs and a ``(q,)`` parameter vector and returns ``(n,)`` outputs.  The
optional ``gradient`` callable has the same signature and returns the
``(n, q)`` matrix of parameter derivatives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from .errors import CalibrationError

__all__ = [
    "BoxDomain",
    "ComputerModel",
    "PhysicalData",
    "QuadratureSet",
    "Benchmark",
    "model_gradient",
    "uniform_quadrature",
    "midpoint_quadrature",
    "default_quadrature_size",
    "equispaced_design",
    "random_lhd",
    "maximin_lhd",
    "park_function",
    "builtin_benchmark",
    "BENCHMARKS",
]


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[lower_1, upper_1] x ... x [lower_d, upper_d]``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper bounds must have the same nonzero length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ValueError(f"need lower < upper in every dimension, got {lo} / {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_bounds(cls, bounds) -> "BoxDomain":
        """Build from ``[(lo, hi), ...]``."""
        bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        return cls(tuple(bounds[:, 0]), tuple(bounds[:, 1]))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def bounds(self) -> list[tuple[float, float]]:
        return list(zip(self.lower, self.upper))

    def contains(self, X, slack: float = 1e-9) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all((X >= self.lo - slack) & (X <= self.hi + slack), axis=1)

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def from_unit(self, U) -> np.ndarray:
        """Map points of the unit cube onto the box."""
        return self.lo + np.asarray(U) * self.widths

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.from_unit(rng.random((n, self.dim)))


def _as_theta(theta) -> np.ndarray:
    return np.atleast_1d(np.asarray(theta, dtype=float))


def _as_inputs(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim <= 1:
        X = X.reshape(-1, d) if d > 1 or X.ndim == 0 else X[:, None]
    return X


@dataclass(frozen=True, eq=False)
class ComputerModel:
    """A simulator ``y^s(x, theta)`` with design and parameter domains.

    Construction probes the evaluator at 32 random points of
    ``design_domain x param_domain`` and rejects non-finite output.
    """

    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    design_domain: BoxDomain
    param_domain: BoxDomain
    gradient: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    name: str = "model"

    def __post_init__(self):
        rng = np.random.default_rng(20240611)
        X = self.design_domain.sample(rng, 32)
        thetas = self.param_domain.sample(rng, 32)
        for x, th in zip(X, thetas):
            val = np.asarray(self.func(x[None, :], th), dtype=float)
            if val.shape != (1,) or not np.all(np.isfinite(val)):
                raise CalibrationError(
                    f"{self.name}: evaluator returned {val!r} at x={x}, theta={th}"
                )

    @property
    def d(self) -> int:
        return self.design_domain.dim

    @property
    def q(self) -> int:
        return self.param_domain.dim

    def __call__(self, X, theta) -> np.ndarray:
        X = _as_inputs(X, self.d)
        return np.asarray(self.func(X, _as_theta(theta)), dtype=float).reshape(X.shape[0])

    def grad(self, X, theta) -> np.ndarray:
        return model_gradient(self, X, theta)


def model_gradient(model: ComputerModel, X, theta) -> np.ndarray:
    """Parameter gradient ``g_theta(x)`` as an ``(n, q)`` array.

    Uses the analytic gradient when the model has one; otherwise central
    differences with step ``1e-5 * (1 + |theta_j|)``, falling back to
    one-sided differences where ``theta +/- h`` would leave the parameter box.
    """
    X = _as_inputs(X, model.d)
    theta = _as_theta(theta)
    if model.gradient is not None:
        G = np.asarray(model.gradient(X, theta), dtype=float)
        return G.reshape(X.shape[0], model.q)
    lo, hi = model.param_domain.lo, model.param_domain.hi
    G = np.empty((X.shape[0], model.q))
    for j in range(model.q):
        h = 1e-5 * (1.0 + abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] = min(theta[j] + h, hi[j])
        down[j] = max(theta[j] - h, lo[j])
        # at a face of the box one side collapses onto theta: one-sided difference
        G[:, j] = (model(X, up) - model(X, down)) / (up[j] - down[j])
    if not np.all(np.isfinite(G)):
        raise CalibrationError(f"{model.name}: non-finite output while differencing at theta={theta}")
    return G


@dataclass(frozen=True, eq=False)
class PhysicalData:
    """Field observations ``y_i = zeta(x_i) + noise``."""

    X: np.ndarray
    y: np.ndarray
    noise_sd: float | None = None
    domain: BoxDomain | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if X.shape[0] < 2:
            raise ValueError("need at least two observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("data contain non-finite values")
        if self.domain is not None and not np.all(self.domain.contains(X)):
            raise ValueError("some design points lie outside the design domain")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_csv(cls, path, domain: BoxDomain | None = None, noise_sd=None) -> "PhysicalData":
        """Read a ``x1,...,xd,y`` CSV file."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty file")
        header = [h.strip() for h in rows[0]]
        if header[-1] != "y" or any(h != f"x{i + 1}" for i, h in enumerate(header[:-1])):
            raise ValueError(f"{path}: header must be x1,...,xd,y; got {','.join(header)}")
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        return cls(body[:, :-1], body[:, -1], noise_sd=noise_sd, domain=domain)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i + 1}" for i in range(self.d)] + ["y"])
            for x, y in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


@dataclass(frozen=True, eq=False)
class QuadratureSet:
    """Equal-weight node set approximating integrals over a box.

    ``inner(f, g) = weight * sum_k f(xi_k) g(xi_k)`` with
    ``weight = vol / N``.
    """

    nodes: np.ndarray
    domain: BoxDomain
    seed: int | None
    kind: str = "uniform"
    _key: tuple = field(default=(), repr=False)

    @property
    def N(self) -> int:
        return self.nodes.shape[0]

    @property
    def weight(self) -> float:
        return self.domain.volume / self.N

    @property
    def key(self) -> tuple:
        """Hashable identity: node sets with equal keys are bit-identical."""
        return (self.kind, self.N, self.seed, self.domain.lower, self.domain.upper) + self._key

    def inner(self, f1, f2=None) -> np.ndarray | float:
        """``<f1, f2>`` from values at the nodes; matrices give Gram matrices."""
        f1 = np.asarray(f1, dtype=float)
        f2 = f1 if f2 is None else np.asarray(f2, dtype=float)
        return self.weight * (f1.T @ f2)

    def integrate(self, values) -> float:
        return float(self.weight * np.sum(values))


def default_quadrature_size(d: int) -> int:
    return 2000 if d <= 2 else 5000


def uniform_quadrature(domain: BoxDomain, N: int, seed: int, min_nodes: int = 1) -> QuadratureSet:
    """``N`` i.i.d. uniform nodes in ``domain`` from ``numpy.random.default_rng(seed)``."""
    if N < max(min_nodes, 1):
        raise ValueError(f"need at least {max(min_nodes, 1)} quadrature nodes, got {N}")
    rng = np.random.default_rng(seed)
    return QuadratureSet(domain.sample(rng, int(N)), domain, int(seed), "uniform")


def midpoint_quadrature(domain: BoxDomain, per_dim) -> QuadratureSet:
    """Deterministic tensor midpoint rule; still equal-weight."""
    per_dim = np.broadcast_to(np.atleast_1d(per_dim), (domain.dim,)).astype(int)
    axes = [(np.arange(m) + 0.5) / m for m in per_dim]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    return QuadratureSet(domain.from_unit(grid), domain, None, "midpoint", tuple(per_dim))


def equispaced_design(domain: BoxDomain, n: int) -> np.ndarray:
    """``x_i = a + (b - a)(i - 1)/(n - 1)`` on a 1-D domain."""
    if domain.dim != 1:
        raise ValueError("equispaced designs are 1-D")
    if n < 2:
        raise ValueError("need n >= 2")
    a, b = domain.lower[0], domain.upper[0]
    return (a + (b - a) * np.arange(n) / (n - 1))[:, None]


def random_lhd(n: int, d: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Random Latin hypercube on the unit cube; also returns stratum indices."""
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    U = (strata + rng.random((n, d))) / n
    return U, strata


def maximin_lhd(domain: BoxDomain, n: int, seed: int, budget: int | None = None) -> np.ndarray:
    """Latin hypercube improved towards maximin distance by column swaps.

    A random LHD is perturbed by swapping two entries within one column,
    keeping the swap when the minimum pairwise distance does not decrease.
    ``budget`` defaults to ``10 * n * d`` proposed swaps.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    d = domain.dim
    rng = np.random.default_rng(seed)
    U, _ = random_lhd(n, d, rng)
    budget = 10 * n * d if budget is None else budget
    best = pdist(U).min()
    for _ in range(budget):
        j = rng.integers(d)
        a, b = rng.choice(n, size=2, replace=False)
        U[[a, b], j] = U[[b, a], j]
        cand = pdist(U).min()
        if cand >= best:
            best = cand
        else:
            U[[a, b], j] = U[[b, a], j]
    return domain.from_unit(U)


def park_function(X) -> np.ndarray:
    """PARK test function on ``[0, 1]^4``.

    The first term is written as ``(sqrt(x1^2 + (x2 + x3^2) x4) - x1) / 2``,
    which equals ``x1/2 (sqrt(1 + (x2 + x3^2) x4 / x1^2) - 1)`` for
    ``x1 > 0`` and stays finite at ``x1 = 0``.
    """
    X = np.atleast_2d(X)
    x1, x2, x3, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return 0.5 * (np.sqrt(x1 ** 2 + (x2 + x3 ** 2) * x4) - x1) + (x1 + 3 * x4) * np.exp(1 + np.sin(x3))


def _sine_truth(X):
    x = np.asarray(X, dtype=float).reshape(-1)
    return x * np.cos(1.5 * x) + x


def _sine_model(X, theta):
    x = X[:, 0]
    return np.sin(theta[0] * x) + np.exp(-2 * np.abs(x))


def _sine_grad(X, theta):
    x = X[:, 0]
    return (x * np.cos(theta[0] * x))[:, None]


def _park_shape(X):
    return -2 * X[:, 0] + X[:, 1] ** 2 + X[:, 2] ** 2


def _park_model(X, theta):
    return (theta[0] + np.sin(X[:, 0]) / 10) * park_function(X) + theta[1] * _park_shape(X) + 0.5


def _park_grad(X, theta):
    return np.column_stack([park_function(X), _park_shape(X)])


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A synthetic truth/model pair plus its data-generating recipe."""

    name: str
    truth: Callable[[np.ndarray], np.ndarray]
    model: ComputerModel
    noise_sd: float
    design: str  # "equispaced" or "maximin_lhd"
    nu: float
    rho: float | None  # None: estimate by maximum likelihood

    @property
    def design_domain(self) -> BoxDomain:
        return self.model.design_domain

    @property
    def param_domain(self) -> BoxDomain:
        return self.model.param_domain

    def design_points(self, n: int, seed: int = 0) -> np.ndarray:
        if self.design == "equispaced":
            return equispaced_design(self.design_domain, n)
        return maximin_lhd(self.design_domain, n, seed)

    def simulate(self, n: int, seed: int, noise_sd: float | None = None) -> PhysicalData:
        """Design of size ``n`` with seeded Gaussian noise added to the truth."""
        sd = self.noise_sd if noise_sd is None else noise_sd
        X = self.design_points(n, seed)
        rng = np.random.default_rng([seed, 1])
        y = self.truth(X) + sd * rng.standard_normal(n)
        return PhysicalData(X, y, noise_sd=sd, domain=self.design_domain)


def _make_sine() -> Benchmark:
    model = ComputerModel(
        _sine_model, BoxDomain((-5.0,), (5.0,)), BoxDomain((0.0,), (3.0,)), _sine_grad, "sine"
    )
    return Benchmark("sine", _sine_truth, model, 0.2, "equispaced", 0.5, 0.5)


def _make_park() -> Benchmark:
    model = ComputerModel(
        _park_model, BoxDomain((0.0,) * 4, (1.0,) * 4), BoxDomain((-5.0, -5.0), (5.0, 5.0)), _park_grad, "park"
    )
    return Benchmark("park", park_function, model, 0.1, "maximin_lhd", 3.5, None)


BENCHMARKS = {"sine": _make_sine, "park": _make_park}


def builtin_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
