"""Benchmark objectives: GP-sample surrogates, analytic functions, noise.

Every objective is deterministic given its seed; observation noise comes
from a counter-based stream (value = g(seed, eval_index)) so runs replay
exactly and parallel runs never share generator state.  Policies always
minimize: objectives declared as maximization are negated internally and
carry ``negated=True`` so reporting can flip the sign back.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError, DomainError

__all__ = [
    "Objective",
    "NoiseStream",
    "evaluate",
    "make_rff_objective",
    "sobol_starts",
    "analytic_suite",
]


@dataclass
class Objective:
    """A box-bounded black-box function in the internal minimization convention."""

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    noise_std: float = 0.0
    negated: bool = False  # True when the user-facing problem is maximization
    fn: Callable[[np.ndarray], float] = field(default=None, repr=False)  # type: ignore[assignment]
    grad: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    optimum: np.ndarray | None = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
            raise ConfigError("bounds must match the objective dimension")
        if not np.all(self.lower < self.upper):
            raise ConfigError("domain box requires lower < upper per dimension")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be non-negative")

    def f(self, x: np.ndarray) -> float:
        """Noiseless internal (minimized) value; raises DomainError outside the box."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise DomainError(f"point has dimension {x.shape[0]}, objective has {self.dim}")
        if np.any(x < self.lower) or np.any(x > self.upper):
            raise DomainError("point lies outside the domain box")
        return float(self.fn(x))

    def report(self, y: float) -> float:
        """Convert an internal value back to the user-facing convention."""
        return -y if self.negated else y

    def close(self) -> None:  # external objectives override this
        pass


class NoiseStream:
    """Counter-based Gaussian noise: draw i is a pure function of (seed, i)."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.count = 0

    def normal_at(self, index: int) -> float:
        return float(np.random.default_rng((0x6E6F6973, self.seed, int(index))).standard_normal())

    def draw(self) -> float:
        z = self.normal_at(self.count)
        self.count += 1
        return z


def evaluate(obj: Objective, x: np.ndarray, noise: NoiseStream) -> float:
    """One noisy observation y = f(x) + noise_std * z in internal units."""
    y = obj.f(x)
    if obj.noise_std > 0:
        y += obj.noise_std * noise.draw()
    else:
        noise.count += 1  # keep eval indices aligned with the noisy case
    return y


def make_rff_objective(
    dim: int,
    lengthscale: float | np.ndarray | None = None,
    outputscale: float = 1.0,
    features: int = 1024,
    seed: int = 0,
    noise_std: float = 0.0,
    maximize: bool = True,
    lower: np.ndarray | None = None,
    upper: np.ndarray | None = None,
    name: str | None = None,
) -> Objective:
    """Approximate draw from an ARD squared-exponential GP via random Fourier features.

    f(x) = s sqrt(2/F) sum_i a_i cos(w_i'x + b_i), with frequencies from the
    kernel's spectral density (coordinate k scaled by 1/lengthscale_k).  The
    default domain is the unit hypercube and the default lengthscale
    0.1*sqrt(dim) keeps difficulty roughly comparable across dimensions.
    Deterministic given (seed, dim, lengthscale, outputscale, features).
    """
    if dim < 1 or features < 1:
        raise ConfigError("dim and features must be positive")
    if lengthscale is None:
        lengthscale = 0.1 * np.sqrt(dim)
    ls = np.broadcast_to(np.asarray(lengthscale, dtype=float), (dim,)).copy()
    if not np.all(ls > 0) or not outputscale > 0:
        raise ConfigError("lengthscale and outputscale must be positive")
    rng = np.random.default_rng((0x52464653, int(seed), int(dim), int(features)))
    W = rng.standard_normal((features, dim)) / ls
    b = rng.uniform(0.0, 2.0 * np.pi, size=features)
    a = rng.standard_normal(features)
    amp = np.sqrt(outputscale) * np.sqrt(2.0 / features)

    def sample_path(x: np.ndarray) -> float:
        return float(amp * (a @ np.cos(W @ x + b)))

    def sample_grad(x: np.ndarray) -> np.ndarray:
        return -amp * ((a * np.sin(W @ x + b)) @ W)

    sign = -1.0 if maximize else 1.0
    lo = np.zeros(dim) if lower is None else np.asarray(lower, dtype=float)
    hi = np.ones(dim) if upper is None else np.asarray(upper, dtype=float)
    return Objective(
        name=name or f"rff-d{dim}-s{seed}",
        dim=dim,
        lower=lo,
        upper=hi,
        noise_std=noise_std,
        negated=maximize,
        fn=lambda x: sign * sample_path(x),
        grad=lambda x: sign * sample_grad(x),
    )


def sobol_starts(dim: int, count: int, lower: np.ndarray, upper: np.ndarray, seed: int) -> np.ndarray:
    """count x dim matrix of scrambled-Sobol points mapped into the box.

    Owen scrambling keeps the dyadic balance of the sequence; the points are
    reproducible for a given (seed, dim, count) and scipy generation rule.
    """
    if count < 1:
        raise ConfigError("count must be positive")
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    with warnings.catch_warnings():
        # balance only matters for power-of-two counts; callers pick any count
        warnings.simplefilter("ignore", UserWarning)
        unit = sampler.random(count)
    return lower + unit * (upper - lower)


def _quadratic(dim: int, center: np.ndarray) -> tuple[Callable, Callable]:
    def f(x):
        r = x - center
        return float(r @ r)

    return f, lambda x: 2.0 * (x - center)


def _linear(dim: int, slope: np.ndarray) -> tuple[Callable, Callable]:
    return (lambda x: float(slope @ x)), (lambda x: slope.copy())


def _ridge(dim: int, center: np.ndarray, weights: np.ndarray) -> tuple[Callable, Callable]:
    def f(x):
        return float(weights @ np.abs(x - center))

    def g(x):
        return weights * np.sign(x - center)

    return f, g


def analytic_suite(name: str, dim: int, noise_std: float = 0.0, **kwargs) -> Objective:
    """Named analytic objectives with known optima and oracle gradients.

    quadratic: |x - c|^2, minimum 0 at c (kwarg ``center``).
    linear:    a'x, minimized at the box vertex selected by sign(a) (kwarg ``slope``).
    ridge:     sum_j w_j |x_j - c_j|, piecewise linear, minimum at c.

    Oracle gradients are for tests only; policies never see them.
    """
    lower = np.zeros(dim)
    upper = np.ones(dim)
    if name == "quadratic":
        center = np.asarray(kwargs.pop("center", np.full(dim, 0.5)), dtype=float)
        fn, grad = _quadratic(dim, center)
        opt = center
    elif name == "linear":
        default = np.array([(-1.0) ** i * (1.0 + i / dim) for i in range(dim)])
        slope = np.asarray(kwargs.pop("slope", default), dtype=float)
        fn, grad = _linear(dim, slope)
        opt = np.where(slope > 0, lower, upper)
    elif name == "ridge":
        center = np.asarray(kwargs.pop("center", np.full(dim, 0.5)), dtype=float)
        weights = np.asarray(kwargs.pop("weights", np.linspace(1.0, 2.0, dim)), dtype=float)
        fn, grad = _ridge(dim, center, weights)
        opt = center
    else:
        raise ConfigError(f"unknown analytic objective {name!r}")
    if kwargs:
        raise ConfigError(f"unexpected parameters for {name!r}: {sorted(kwargs)}")
    return Objective(
        name=f"{name}-d{dim}",
        dim=dim,
        lower=lower,
        upper=upper,
        noise_std=noise_std,
        fn=fn,
        grad=grad,
        optimum=opt,
    )
