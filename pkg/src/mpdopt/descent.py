"""Descent-probability computations and the iterative move step.

Under a Gaussian gradient belief N(mu, Sigma) the directional derivative
along v is N(v'mu, v'Sigma v), so the probability that v points downhill is
Phi(-v'mu / sqrt(v'Sigma v)).  The direction maximizing that probability is
-Sigma^-1 mu (unique up to positive scaling), with maximum probability
Phi(sqrt(mu'Sigma^-1 mu)).  The move loop takes repeated small steps along
the current most probable descent direction until the maximum descent
probability drops to the configured threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import ndtr

from .errors import DegenerateBeliefError, NumericalError
from .gp import GpPosterior, GradientBelief, gradient_posterior

__all__ = [
    "MoveConfig",
    "descent_probability",
    "most_probable_direction",
    "max_descent_probability",
    "move_loop",
]


@dataclass(frozen=True)
class MoveConfig:
    """Step size, stopping threshold, iteration cap, and domain box.

    threshold 0.5 disables the probability gate entirely (any informative
    belief moves); values below 0.5 or at/above 1 are rejected.
    """

    step: float
    threshold: float = 0.65
    max_inner_steps: int = 1000
    lower: np.ndarray = field(default=None)  # type: ignore[assignment]
    upper: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not 0.5 <= self.threshold < 1.0:
            raise ValueError("threshold must lie in [0.5, 1)")
        if self.max_inner_steps < 1:
            raise ValueError("max_inner_steps must be positive")
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("bounds must satisfy lower < upper per dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)


def descent_probability(belief: GradientBelief, v: np.ndarray) -> float:
    """Probability that the directional derivative along v is negative.

    Invariant under positive rescaling of v.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != belief.dim:
        raise ValueError(f"direction has dimension {v.shape[0]}, belief has {belief.dim}")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("direction must be a nonzero vector")
    v = v / norm
    quad = v @ belief.sigma @ v
    if quad <= 0.0:
        raise NumericalError(f"direction variance {quad:.3g} is not positive")
    return float(ndtr(-(v @ belief.mu) / np.sqrt(quad)))


def most_probable_direction(belief: GradientBelief) -> np.ndarray:
    """Unit vector maximizing the descent probability: -Sigma^-1 mu, normalized.

    Solved with the belief's stored Cholesky factor; an exactly-zero mean has
    no preferred direction and raises DegenerateBeliefError.
    """
    if not np.any(belief.mu):
        raise DegenerateBeliefError("gradient belief mean is zero; direction undefined")
    d = cho_solve((belief.chol, True), belief.mu)
    v = -d
    return v / np.linalg.norm(v)


def max_descent_probability(belief: GradientBelief) -> float:
    """Phi(sqrt(mu' Sigma^-1 mu)), the descent probability along the best direction."""
    w = solve_triangular(belief.chol, belief.mu, lower=True)
    return float(ndtr(np.sqrt(w @ w)))


def move_loop(gp: GpPosterior, x0: np.ndarray, cfg: MoveConfig):
    """Repeatedly step along the most probable descent direction.

    No objective evaluations happen here: each step recomputes the gradient
    belief from the fixed GP at the current location, stops once the maximum
    descent probability falls to cfg.threshold, and clips to the domain box.

    Returns (x_final, inner_steps, final_prob) where final_prob is the
    maximum descent probability at x_final.
    """
    x = np.clip(np.asarray(x0, dtype=float).reshape(-1), cfg.lower, cfg.upper)
    steps = 0
    while True:
        belief = gradient_posterior(gp, x)
        if not np.any(belief.mu):
            return x, steps, 0.5
        prob = max_descent_probability(belief)
        if prob <= cfg.threshold or steps >= cfg.max_inner_steps:
            return x, steps, prob
        v = most_probable_direction(belief)
        x = np.clip(x + cfg.step * v, cfg.lower, cfg.upper)
        steps += 1
