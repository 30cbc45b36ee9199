"""Posterior of the calibration parameter and a random-walk Metropolis sampler.

With ``n lam = sigma^2 / tau^2`` the projected-kernel likelihood gives the
log density ``-1/2 Delta' (K_theta + n lam I)^-1 Delta``; the penalty
``gamma = eta / lam`` adds ``-gamma/2 ||delta_hat||^2`` as a prior on theta.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._io import write_csv
from .errors import CalibrationError
from .losses import PKObjective
from .surrogate import BoxDomain, ComputerModel, PhysicalData, QuadratureSet

logger = logging.getLogger(__name__)

__all__ = [
    "PosteriorSpec",
    "PosteriorChain",
    "log_posterior",
    "sample",
    "credible_interval",
    "effective_sample_size",
]

MIN_INTERVAL_SAMPLES = 100
MIN_EFFECTIVE_SAMPLES = 100


@dataclass(frozen=True, eq=False)
class PosteriorSpec:
    """Unnormalized posterior on ``Theta``.

    Parameters
    ----------
    objective : PKObjective
        Supplies data, model, kernel, ridge parameter and node set.
    gamma : float
        Prior weight ``eta / lam`` on the squared ``L2`` norm of the fitted
        discrepancy.
    domain : BoxDomain, optional
        Hard support; defaults to the model's parameter box.
    """

    objective: PKObjective
    gamma: float = 0.0
    domain: BoxDomain | None = None

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        if self.domain is None:
            object.__setattr__(self, "domain", self.objective.domain)

    @classmethod
    def build(cls, data: PhysicalData, model: ComputerModel, kernel, lam: float, quad: QuadratureSet,
              gamma: float = 0.0, domain: BoxDomain | None = None) -> "PosteriorSpec":
        return cls(PKObjective(data, model, kernel, lam, quad), gamma, domain)

    @classmethod
    def from_eta(cls, objective: PKObjective, eta: float, domain: BoxDomain | None = None) -> "PosteriorSpec":
        return cls(objective, eta / objective.lam, domain)

    @property
    def lam(self) -> float:
        return self.objective.lam

    def __call__(self, theta) -> float:
        return log_posterior(self, theta)


def log_posterior(spec: PosteriorSpec, theta) -> float:
    """``-1/2 Delta'(K_theta + n lam I)^-1 Delta - gamma/2 ||delta_hat||^2``; ``-inf`` off the support."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if not spec.domain.contains(theta, slack=0.0)[0]:
        return -np.inf
    try:
        ev = spec.objective.evaluate(theta)
    except CalibrationError as exc:
        logger.warning("log_posterior: %s at theta=%s", exc, theta)
        return -np.inf
    value = -0.5 * ev.pk / spec.lam
    if spec.gamma:
        value -= 0.5 * spec.gamma * ev.l2
    return float(value)


@dataclass(frozen=True, eq=False)
class PosteriorChain:
    samples: np.ndarray  # post burn-in draws, shape (m, q)
    log_density: np.ndarray
    acceptance_rate: float  # post burn-in
    burn_in: int
    seed: int
    scale: np.ndarray  # proposal standard deviations after adaptation
    accepted: np.ndarray  # accept/reject decision per post burn-in step

    @property
    def q(self) -> int:
        return self.samples.shape[1]

    def to_csv(self, path):
        header = [f"theta{j + 1}" for j in range(self.q)] + ["log_density"]
        rows = (list(s) + [lp] for s, lp in zip(self.samples, self.log_density))
        return write_csv(path, header, rows)


def _reflect(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    w = hi - lo
    t = np.mod(x - lo, 2 * w)
    return lo + np.where(t > w, 2 * w - t, t)


def sample(target: PosteriorSpec | Callable, iterations: int = 50_000, burn_in: int = 5_000, seed: int = 0,
           theta0=None, domain: BoxDomain | None = None, scale=None, adapt_every: int = 100) -> PosteriorChain:
    """Random-walk Metropolis with a Gaussian proposal reflected into ``Theta``.

    During burn-in the per-dimension proposal scale is shrunk or grown
    every ``adapt_every`` steps to keep the batch acceptance rate within
    ``[0.25, 0.40]``; it is frozen afterwards.  ``iterations`` counts all
    steps including burn-in.
    """
    if not iterations > burn_in >= 0:
        raise ValueError("need iterations > burn_in >= 0")
    if isinstance(target, PosteriorSpec):
        domain = target.domain if domain is None else domain
    elif domain is None:
        raise ValueError("a domain is required for a plain callable target")
    lo, hi = domain.lo, domain.hi
    x = domain.center.copy() if theta0 is None else np.atleast_1d(np.asarray(theta0, dtype=float)).copy()
    lp = float(target(x))
    if not np.isfinite(lp):
        raise CalibrationError(f"log density is not finite at the initial point {x}")
    step = 0.1 * domain.widths if scale is None else np.broadcast_to(np.asarray(scale, float), x.shape).copy()
    rng = np.random.default_rng(seed)
    kept = iterations - burn_in
    out = np.empty((kept, x.size))
    out_lp = np.empty(kept)
    decisions = np.zeros(kept, dtype=bool)
    batch = 0
    for it in range(iterations):
        z = rng.standard_normal(x.size)
        u = rng.random()
        prop = _reflect(x + step * z, lo, hi)
        lp_prop = float(target(prop))
        ok = bool(np.log(u) < lp_prop - lp) if np.isfinite(lp_prop) else False
        if ok:
            x, lp = prop, lp_prop
        if it < burn_in:
            batch += ok
            if (it + 1) % adapt_every == 0:
                rate = batch / adapt_every
                if rate < 0.25:
                    step *= 0.7
                elif rate > 0.40:
                    step *= 1.3
                step = np.clip(step, 1e-10 * domain.widths, domain.widths)
                batch = 0
        else:
            k = it - burn_in
            out[k], out_lp[k], decisions[k] = x, lp, ok
    return PosteriorChain(out, out_lp, float(decisions.mean()), burn_in, seed, step, decisions)


def effective_sample_size(x) -> float:
    """Geyer initial-positive-sequence ESS of a 1-D chain; 0 for a constant chain."""
    x = np.asarray(x, dtype=float)
    m = x.size
    xc = x - x.mean()
    var = xc @ xc / m
    if m < 4 or var <= 1e-300:
        return 0.0
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:m] / (m * var)
    tau = -1.0
    for k in range(0, m - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(m / max(tau, 1e-12))


def credible_interval(chain: PosteriorChain | np.ndarray, level: float = 0.95) -> list[tuple[float, float]]:
    """Equal-tailed per-dimension interval from the empirical quantiles."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    S = chain.samples if isinstance(chain, PosteriorChain) else np.asarray(chain, dtype=float)
    S = S.reshape(S.shape[0], -1)
    if S.shape[0] < MIN_INTERVAL_SAMPLES:
        raise ValueError(f"need at least {MIN_INTERVAL_SAMPLES} samples, got {S.shape[0]}")
    ess = min(effective_sample_size(S[:, j]) for j in range(S.shape[1]))
    if ess < MIN_EFFECTIVE_SAMPLES:
        warnings.warn(f"too few effective samples ({ess:.1f})", RuntimeWarning, stacklevel=2)
    a = 0.5 * (1 - level)
    lo = np.quantile(S, a, axis=0)
    hi = np.quantile(S, 1 - a, axis=0)
    return [(float(l), float(h)) for l, h in zip(lo, hi)]
