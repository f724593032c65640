"""Gaussian-process regression with analytic kernel derivatives.

The model is an ARD squared-exponential GP with constant prior mean and
i.i.d. Gaussian observation noise.  Because the kernel is twice
differentiable, the posterior over the objective's gradient at any point is
itself Gaussian; :func:`gradient_posterior` returns that belief in closed
form.  Hyperparameters are fitted by MAP (log marginal likelihood plus log
hyperprior density) with multi-start L-BFGS in log-space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import NumericalError

__all__ = [
    "KernelParams",
    "Normal",
    "Uniform",
    "Fixed",
    "Hyperpriors",
    "Dataset",
    "GpPosterior",
    "GradientBelief",
    "kernel_eval",
    "kernel_grad_x1",
    "kernel_hess_cross",
    "fit_gp",
    "gradient_posterior",
    "posterior_mean_var",
    "chol_with_jitter",
    "chol_psd",
]

# Relative diagonal inflation used whenever a covariance matrix is factorized.
BASE_JITTER = 1e-8
MAX_JITTER_DOUBLINGS = 8


@dataclass(frozen=True)
class KernelParams:
    """ARD squared-exponential hyperparameters.

    lengthscales: per-dimension scales (input units), strictly positive.
    outputscale:  signal variance (output units squared), strictly positive.
    noise_var:    observation noise variance, non-negative.
    """

    lengthscales: np.ndarray
    outputscale: float
    noise_var: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if ls.ndim != 1 or not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be a vector of strictly positive finite reals")
        if not (self.outputscale > 0 and math.isfinite(self.outputscale)):
            raise ValueError("outputscale must be strictly positive")
        if not (self.noise_var >= 0 and math.isfinite(self.noise_var)):
            raise ValueError("noise_var must be non-negative")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class Normal:
    """Normal hyperprior on the raw (positive) parameter value."""

    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("Normal prior requires sd > 0")

    def logpdf(self, value: float) -> float:
        z = (value - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2 * math.pi)

    # d/d log(value) of logpdf(value)
    def dlogpdf_dlog(self, value: float) -> float:
        return -(value - self.mean) / (self.sd**2) * value


@dataclass(frozen=True)
class Uniform:
    """Uniform hyperprior on the raw parameter value over [lo, hi]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("Uniform prior requires lo < hi")

    def logpdf(self, value: float) -> float:
        if self.lo <= value <= self.hi:
            return -math.log(self.hi - self.lo)
        return -math.inf

    def dlogpdf_dlog(self, value: float) -> float:
        return 0.0


@dataclass(frozen=True)
class Fixed:
    """Pin a hyperparameter to a constant; it is excluded from fitting."""

    value: float

    def logpdf(self, value: float) -> float:
        return 0.0

    def dlogpdf_dlog(self, value: float) -> float:
        return 0.0


Prior = Normal | Uniform | Fixed


@dataclass(frozen=True)
class Hyperpriors:
    """Per-parameter prior specs; None leaves a parameter unconstrained.

    The lengthscale prior applies independently to every dimension.
    """

    lengthscales: Prior | None = None
    outputscale: Prior | None = None
    noise_var: Prior | None = None


class Dataset:
    """Sliding window of (x, y) observations with FIFO eviction.

    Only the most recent ``capacity`` points are retained; the GP is always
    trained on exactly this window.
    """

    def __init__(self, dim: int, capacity: int = 512):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.dim = int(dim)
        self.capacity = int(capacity)
        self._xs: list[np.ndarray] = []
        self._ys: list[float] = []

    def append(self, x: np.ndarray, y: float) -> None:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"expected point of dimension {self.dim}, got {x.shape[0]}")
        self._xs.append(x.copy())
        self._ys.append(float(y))
        if len(self._xs) > self.capacity:
            del self._xs[0]
            del self._ys[0]

    def __len__(self) -> int:
        return len(self._xs)

    @property
    def X(self) -> np.ndarray:
        return np.array(self._xs, dtype=float).reshape(len(self._xs), self.dim)

    @property
    def y(self) -> np.ndarray:
        return np.array(self._ys, dtype=float)


@dataclass(frozen=True)
class GpPosterior:
    """Immutable fitted-GP snapshot.

    L is the lower Cholesky factor of K(X,X) + noise_var*I + jitter*I and
    alpha solves (K + noise_var*I) alpha = y - mean_const.  Safe to share
    across threads; refitting produces a new snapshot.
    """

    X: np.ndarray
    y: np.ndarray
    params: KernelParams
    mean_const: float
    L: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


class GradientBelief:
    """Multivariate normal belief over the objective gradient at one point.

    The covariance is symmetrized on construction and factorized with jitter;
    construction fails with NumericalError if it is not positive definite.
    """

    def __init__(self, mu: np.ndarray, sigma: np.ndarray):
        mu = np.asarray(mu, dtype=float).reshape(-1)
        sigma = np.asarray(sigma, dtype=float)
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise ValueError(f"sigma must be {d}x{d}, got {sigma.shape}")
        sigma = 0.5 * (sigma + sigma.T)
        scale = max(float(np.mean(np.abs(np.diag(sigma)))), np.finfo(float).tiny)
        self.mu = mu
        self.sigma, self.chol, self.jitter = chol_psd(sigma, BASE_JITTER * scale)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n gradient vectors; rows are samples."""
        z = rng.standard_normal((n, self.dim))
        return self.mu + z @ self.chol.T


def chol_with_jitter(A: np.ndarray, base_jitter: float, max_doublings: int = MAX_JITTER_DOUBLINGS):
    """Lower-Cholesky factorize A + jitter*I, doubling jitter on failure.

    Returns (jittered matrix, factor, jitter used).  Raises NumericalError
    with condition diagnostics once the jitter budget is exhausted.
    """
    jitter = base_jitter
    eye = np.eye(A.shape[0])
    for _ in range(max_doublings + 1):
        try:
            Aj = A + jitter * eye
            L = cholesky(Aj, lower=True)
            return Aj, L, jitter
        except np.linalg.LinAlgError:
            jitter = max(jitter * 2.0, base_jitter)
        except ValueError:
            break
    eigs = np.linalg.eigvalsh(0.5 * (A + A.T))
    raise NumericalError(
        "Cholesky factorization failed after jitter escalation "
        f"(final jitter {jitter:.3g}, eigenvalue range [{eigs.min():.3g}, {eigs.max():.3g}])"
    )


def chol_psd(A: np.ndarray, base_jitter: float):
    """Like chol_with_jitter but attempts a raw factorization first.

    Used for derived covariances (gradient beliefs, conditioned batches)
    where an unperturbed factor keeps closed forms exact; the jitter ladder
    is purely a fallback.
    """
    try:
        return A, cholesky(A, lower=True), 0.0
    except np.linalg.LinAlgError:
        return chol_with_jitter(A, base_jitter)


def _check_inputs(X1: np.ndarray, X2: np.ndarray, params: KernelParams):
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    d = params.dim
    if X1.shape[1] != d or X2.shape[1] != d:
        raise ValueError(
            f"input dimension mismatch: lengthscales have d={d}, "
            f"inputs have {X1.shape[1]} and {X2.shape[1]} columns"
        )
    return X1, X2


def kernel_eval(X1: np.ndarray, X2: np.ndarray, params: KernelParams) -> np.ndarray:
    """ARD squared-exponential kernel matrix, entry (i,j) = k(X1[i], X2[j])."""
    X1, X2 = _check_inputs(X1, X2, params)
    inv_ls = 1.0 / params.lengthscales
    a = X1 * inv_ls
    b = X2 * inv_ls
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    np.maximum(sq, 0.0, out=sq)
    return params.outputscale * np.exp(-0.5 * sq)


def kernel_grad_x1(x: np.ndarray, X: np.ndarray, params: KernelParams) -> np.ndarray:
    """Derivative of k(x, .) in its first argument: entry (k, j) = dk(x, X[j])/dx_k."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2d, X = _check_inputs(x[None, :], X, params)
    k = kernel_eval(x2d, X, params)[0]  # (n,)
    diff = (x[:, None] - X.T) / (params.lengthscales[:, None] ** 2)  # (d, n)
    return -diff * k[None, :]


def kernel_hess_cross(x: np.ndarray, x2: np.ndarray, params: KernelParams) -> np.ndarray:
    """Mixed second derivative d^2 k(x, x2) / dx_i dx2_j as a d x d matrix."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    a, b = _check_inputs(x[None, :], x2[None, :], params)
    k = kernel_eval(a, b, params)[0, 0]
    inv_sq = 1.0 / params.lengthscales**2
    scaled = (x - x2) * inv_sq
    return (np.diag(inv_sq) - np.outer(scaled, scaled)) * k


def _log_marginal_and_grad(
    log_theta: np.ndarray,
    X: np.ndarray,
    resid: np.ndarray,
    priors: Hyperpriors,
    free: dict,
    fixed: KernelParams,
):
    """Negative MAP objective and gradient in log-parameter space.

    The gradient uses the standard trace identity
    d logML/d theta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta).
    """
    n, d = X.shape
    params = _unpack(log_theta, free, fixed)
    ls, s2, nv = params.lengthscales, params.outputscale, params.noise_var

    K0 = kernel_eval(X, X, params)
    jitter = BASE_JITTER * s2
    try:
        Kn = K0 + (nv + jitter) * np.eye(n)
        L = cholesky(Kn, lower=True)
    except np.linalg.LinAlgError:
        return np.inf, np.zeros_like(log_theta)

    alpha = cho_solve((L, True), resid)
    logml = -0.5 * resid @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)

    Kinv = cho_solve((L, True), np.eye(n))
    aaT_minus_Kinv = np.outer(alpha, alpha) - Kinv

    grad = np.zeros_like(log_theta)
    pos = 0
    logp = 0.0
    if "lengthscales" in free:
        prior = priors.lengthscales
        W = aaT_minus_Kinv * K0
        if n * n * d <= 4_000_000:  # one einsum over the difference tensor
            diffs = X[:, None, :] - X[None, :, :]
            grad[pos : pos + d] = 0.5 * np.einsum("ij,ijk->k", W, diffs**2) / ls**2
        else:
            for k in range(d):
                diff = X[:, k, None] - X[None, :, k]
                grad[pos + k] = 0.5 * np.sum(W * diff**2) / ls[k] ** 2
        if prior is not None:
            for k in range(d):
                logp += prior.logpdf(ls[k])
                grad[pos + k] += prior.dlogpdf_dlog(ls[k])
        pos += d
    elif priors.lengthscales is not None:
        logp += sum(priors.lengthscales.logpdf(v) for v in ls)
    if "outputscale" in free:
        grad[pos] = 0.5 * np.sum(aaT_minus_Kinv * K0)
        if priors.outputscale is not None:
            logp += priors.outputscale.logpdf(s2)
            grad[pos] += priors.outputscale.dlogpdf_dlog(s2)
        pos += 1
    elif priors.outputscale is not None:
        logp += priors.outputscale.logpdf(s2)
    if "noise_var" in free:
        grad[pos] = 0.5 * nv * np.trace(aaT_minus_Kinv)
        if priors.noise_var is not None:
            logp += priors.noise_var.logpdf(nv)
            grad[pos] += priors.noise_var.dlogpdf_dlog(nv)
        pos += 1
    elif priors.noise_var is not None:
        logp += priors.noise_var.logpdf(nv)

    return -(logml + logp), -grad


# Absolute guards on log-parameters so optimizer excursions cannot overflow.
_LOG_LO, _LOG_HI = math.log(1e-6), math.log(1e6)


def _free_structure(priors: Hyperpriors, d: int):
    """Which parameter blocks are optimized, with their log-space bounds."""
    free: dict[str, int] = {}
    bounds: list[tuple[float, float]] = []

    def block_bounds(prior):
        if isinstance(prior, Uniform):
            return (math.log(max(prior.lo, 1e-300)), math.log(prior.hi))
        return (_LOG_LO, _LOG_HI)

    if not isinstance(priors.lengthscales, Fixed):
        free["lengthscales"] = d
        bounds += [block_bounds(priors.lengthscales)] * d
    if not isinstance(priors.outputscale, Fixed):
        free["outputscale"] = 1
        bounds.append(block_bounds(priors.outputscale))
    if not isinstance(priors.noise_var, Fixed):
        free["noise_var"] = 1
        bounds.append(block_bounds(priors.noise_var))
    return free, bounds


def _pack(params: KernelParams, free: dict) -> np.ndarray:
    parts = []
    if "lengthscales" in free:
        parts.append(np.log(params.lengthscales))
    if "outputscale" in free:
        parts.append([math.log(params.outputscale)])
    if "noise_var" in free:
        parts.append([math.log(max(params.noise_var, 1e-300))])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts]) if parts else np.empty(0)


def _unpack(log_theta: np.ndarray, free: dict, fixed: KernelParams) -> KernelParams:
    pos = 0
    d = fixed.dim
    if "lengthscales" in free:
        ls = np.exp(log_theta[pos : pos + d])
        pos += d
    else:
        ls = fixed.lengthscales
    if "outputscale" in free:
        s2 = math.exp(log_theta[pos])
        pos += 1
    else:
        s2 = fixed.outputscale
    if "noise_var" in free:
        nv = math.exp(log_theta[pos])
        pos += 1
    else:
        nv = fixed.noise_var
    return KernelParams(ls, s2, nv)


def _restart_point(priors: Hyperpriors, init: KernelParams, free: dict, rng: np.random.Generator):
    """Random multi-start initialization drawn from the priors where proper."""
    d = init.dim

    def draw(prior, current):
        if isinstance(prior, Uniform):
            return math.exp(rng.uniform(math.log(max(prior.lo, 1e-300)), math.log(prior.hi)))
        if isinstance(prior, Normal):
            return max(abs(rng.normal(prior.mean, prior.sd)), 1e-6)
        return current * math.exp(rng.normal(0.0, 1.0))

    ls = init.lengthscales
    if "lengthscales" in free:
        ls = np.array([draw(priors.lengthscales, v) for v in init.lengthscales])
    s2 = draw(priors.outputscale, init.outputscale) if "outputscale" in free else init.outputscale
    nv = draw(priors.noise_var, max(init.noise_var, 1e-300)) if "noise_var" in free else init.noise_var
    return KernelParams(ls, s2, nv)


def _apply_fixed(priors: Hyperpriors, init: KernelParams) -> KernelParams:
    ls = init.lengthscales
    if isinstance(priors.lengthscales, Fixed):
        ls = np.full(init.dim, priors.lengthscales.value)
    s2 = priors.outputscale.value if isinstance(priors.outputscale, Fixed) else init.outputscale
    nv = priors.noise_var.value if isinstance(priors.noise_var, Fixed) else init.noise_var
    return KernelParams(ls, s2, nv)


def _factorize(X, y, params: KernelParams, mean_const: float) -> GpPosterior:
    n = X.shape[0]
    K = kernel_eval(X, X, params) + params.noise_var * np.eye(n)
    _, L, jitter = chol_with_jitter(K, BASE_JITTER * params.outputscale)
    resid = y - mean_const
    alpha = cho_solve((L, True), resid)
    return GpPosterior(
        X=X.copy(), y=y.copy(), params=params, mean_const=mean_const, L=L, alpha=alpha, jitter=jitter
    )


def fit_gp(
    data: Dataset,
    priors: Hyperpriors = Hyperpriors(),
    init: KernelParams | None = None,
    refit: bool = True,
    restarts: int = 4,
    max_iters: int = 100,
    rng: np.random.Generator | None = None,
    mean_const: float | None = None,
) -> GpPosterior:
    """Fit (or just factorize) a GP on the dataset's current window.

    With refit=True the kernel parameters maximize log marginal likelihood
    plus log prior density, by L-BFGS from `init` plus `restarts` random
    starts; Fixed-prior parameters are held constant.  With refit=False the
    init parameters are used as given.  mean_const defaults to the mean of
    the windowed targets.
    """
    if len(data) == 0:
        raise ValueError("cannot fit a GP on an empty dataset")
    X, y = data.X, data.y
    if init is None:
        init = KernelParams(np.ones(data.dim), 1.0, 1e-4)
    init = _apply_fixed(priors, init)
    mu0 = float(np.mean(y)) if mean_const is None else float(mean_const)

    if not refit:
        return _factorize(X, y, init, mu0)

    free, bounds = _free_structure(priors, data.dim)
    if not free:
        return _factorize(X, y, init, mu0)
    if rng is None:
        rng = np.random.default_rng(0)
    resid = y - mu0

    starts = [init] + [_restart_point(priors, init, free, rng) for _ in range(restarts)]
    best_val, best_params = np.inf, init
    for start in starts:
        theta0 = np.clip(_pack(start, free), [b[0] for b in bounds], [b[1] for b in bounds])
        res = minimize(
            _log_marginal_and_grad,
            theta0,
            args=(X, resid, priors, free, init),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": max_iters, "ftol": 1e-9},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_params = res.fun, _unpack(res.x, free, init)
    return _factorize(X, y, best_params, mu0)


def gradient_posterior(gp: GpPosterior, x: np.ndarray) -> GradientBelief:
    """Closed-form Gaussian belief over the objective gradient at x.

    mean  = dK(x,X) (K + noise I)^-1 (y - mean_const)        (constant prior
    cov   = d2K(x,x) - dK(x,X) (K + noise I)^-1 dK(x,X)^T     mean: d mu = 0)
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != gp.dim:
        raise ValueError(f"point has dimension {x.shape[0]}, GP has {gp.dim}")
    G = kernel_grad_x1(x, gp.X, gp.params)  # (d, n)
    mu = G @ gp.alpha
    H = kernel_hess_cross(x, x, gp.params)
    V = cho_solve((gp.L, True), G.T)  # (n, d)
    sigma = H - G @ V
    return GradientBelief(mu, sigma)


def posterior_mean_var(gp: GpPosterior, x: np.ndarray) -> tuple[float, float]:
    """Predictive mean and (non-negative) latent variance at x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != gp.dim:
        raise ValueError(f"point has dimension {x.shape[0]}, GP has {gp.dim}")
    k = kernel_eval(x[None, :], gp.X, gp.params)[0]
    mean = gp.mean_const + k @ gp.alpha
    w = solve_triangular(gp.L, k, lower=True)
    var = gp.params.outputscale - w @ w
    return float(mean), float(max(var, 0.0))
