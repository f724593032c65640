"""Optimization policies assembled from interchangeable learn/move rules.

The GP-based policies share one skeleton: observe the objective at the
current point, refit the GP, spend M queries learning about the gradient
(chosen by an acquisition rule), then move (either the iterative
most-probable-descent loop or a single normalized expected-gradient step).
ARS is the GP-free baseline built on symmetric random perturbations.

All policies minimize; maximization objectives arrive pre-negated.  Runs are
deterministic given (config, seed, objective): every random draw comes from
generators keyed on the run seed, and observation noise is counter-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcqOptConfig, optimize_acquisition
from .descent import MoveConfig, max_descent_probability, move_loop
from .errors import ConfigError, EvaluationError, NumericalError
from .gp import Dataset, GpPosterior, Hyperpriors, KernelParams, fit_gp, gradient_posterior
from .objectives import NoiseStream, Objective, evaluate

__all__ = ["PolicyConfig", "TraceRecord", "RunTrace", "run_mpd", "run_gibo", "run_ars", "run_variant", "run_policy"]

LEARN_RULES = ("mpd_acq", "trace_acq", "none")
MOVE_RULES = ("mpd_direction", "expected_gradient", "ars_update")


@dataclass(frozen=True)
class PolicyConfig:
    """Everything a single optimization run needs besides the objective.

    Exactly one of budget (exact evaluation count) or n_iters (outer
    iterations, Algorithm-style accounting) drives termination; budget wins
    if both are set.
    """

    kind: str = "mpd"  # mpd | gibo | ars | custom
    name: str = ""
    seed: int = 0
    budget: int | None = None
    n_iters: int | None = None
    # learn/move rules; resolved from kind unless kind == "custom"
    learn: str = ""
    move: str = ""
    # GP-policy settings
    queries_per_iter: int = 1  # M
    step: float = 1e-3  # move-loop step size
    p_star: float = 0.65
    max_inner_steps: int = 1000
    eta: float | None = None  # expected-gradient step; default 0.01 * mean box width
    window: int = 512  # sliding-window capacity
    priors: Hyperpriors = Hyperpriors()
    init_lengthscale: float = 0.2
    init_outputscale: float = 1.0
    init_noise_var: float = 1e-4
    refit_every: int = 1
    fit_restarts: int = 4
    fit_max_iters: int = 100
    acq: AcqOptConfig = AcqOptConfig()
    # ARS settings
    ars_directions: int = 4  # perturbations per iteration
    ars_top: int | None = None  # elite directions used in the update; default all
    ars_noise: float = 0.02  # perturbation radius
    ars_step: float = 0.02  # update step size

    def resolved(self) -> "PolicyConfig":
        """Fill derived fields and validate cross-field consistency."""
        learn, move = self.learn, self.move
        if self.kind == "mpd":
            learn, move = "mpd_acq", "mpd_direction"
        elif self.kind == "gibo":
            learn, move = "trace_acq", "expected_gradient"
        elif self.kind == "ars":
            learn, move = "none", "ars_update"
        elif self.kind == "custom":
            if learn not in ("mpd_acq", "trace_acq") or move not in ("mpd_direction", "expected_gradient"):
                raise ConfigError(
                    f"custom policy needs learn in (mpd_acq, trace_acq) and "
                    f"move in (mpd_direction, expected_gradient); got ({self.learn!r}, {self.move!r})"
                )
        else:
            raise ConfigError(f"unknown policy kind {self.kind!r}")
        if self.kind == "ars" and self.learn in ("mpd_acq", "trace_acq"):
            raise ConfigError("ars policies cannot use GP-based learn rules")
        if self.budget is None and self.n_iters is None:
            raise ConfigError("set budget or n_iters")
        if self.budget is not None and self.budget < 1:
            raise ConfigError("budget must be positive")
        if self.n_iters is not None and self.n_iters < 0:
            raise ConfigError("n_iters must be non-negative")
        if self.queries_per_iter < 0:
            raise ConfigError("queries_per_iter must be non-negative")
        if not 0.5 <= self.p_star < 1.0:
            raise ConfigError("p_star must lie in [0.5, 1)")
        if self.step <= 0:
            raise ConfigError("step must be positive")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be at least 1")
        if self.kind == "ars":
            if self.ars_directions < 1:
                raise ConfigError("ars_directions must be positive")
            top = self.ars_top if self.ars_top is not None else self.ars_directions
            if not 1 <= top <= self.ars_directions:
                raise ConfigError("ars_top must lie in [1, ars_directions]")
        return replace(self, learn=learn, move=move, name=self.name or self.kind)


@dataclass
class TraceRecord:
    """One objective evaluation plus the diagnostics known around it."""

    eval_index: int
    phase: str  # observe | learn
    x: np.ndarray
    y: float
    best_y: float
    max_descent_prob: float | None = None
    acq_value: float | None = None
    inner_steps: int | None = None


@dataclass
class RunTrace:
    policy: str
    start: np.ndarray
    seed: int
    records: list[TraceRecord] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""
    final_x: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def best_y(self) -> float:
        return self.records[-1].best_y if self.records else float("nan")


class _Run:
    """Bookkeeping shared by all policy loops."""

    def __init__(self, objective: Objective, x0: np.ndarray, cfg: PolicyConfig):
        self.objective = objective
        self.cfg = cfg
        self.lower, self.upper = objective.lower, objective.upper
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape[0] != objective.dim:
            raise ConfigError(f"start point has dimension {x0.shape[0]}, objective has {objective.dim}")
        if np.any(x0 < self.lower) or np.any(x0 > self.upper):
            raise ConfigError("start point lies outside the domain box")
        self.x = x0.copy()
        self.noise = NoiseStream(cfg.seed)
        self.rng = np.random.default_rng((0x706F6C69, cfg.seed))
        self.trace = RunTrace(policy=cfg.name, start=x0.copy(), seed=cfg.seed)
        self.best = np.inf
        self.evals = 0

    def budget_left(self) -> bool:
        return self.cfg.budget is None or self.evals < self.cfg.budget

    def observe(self, xq: np.ndarray, phase: str, acq_value: float | None = None) -> float:
        y = evaluate(self.objective, xq, self.noise)
        self.best = min(self.best, y)
        self.trace.records.append(
            TraceRecord(self.evals, phase, np.array(xq, dtype=float), y, self.best, acq_value=acq_value)
        )
        self.evals += 1
        return y


def _init_params(dim: int, cfg: PolicyConfig) -> KernelParams:
    return KernelParams(np.full(dim, cfg.init_lengthscale), cfg.init_outputscale, cfg.init_noise_var)


def _run_gp_policy(objective: Objective, x0: np.ndarray, cfg: PolicyConfig) -> RunTrace:
    run = _Run(objective, x0, cfg)
    data = Dataset(objective.dim, cfg.window)
    move_cfg = MoveConfig(
        step=cfg.step,
        threshold=cfg.p_star,
        max_inner_steps=cfg.max_inner_steps,
        lower=run.lower,
        upper=run.upper,
    )
    eta = cfg.eta if cfg.eta is not None else 0.01 * float(np.mean(run.upper - run.lower))
    acq_kind = "mpd" if cfg.learn == "mpd_acq" else "trace"
    gp: GpPosterior | None = None
    obs_count = 0

    def absorb(xq: np.ndarray, y: float) -> None:
        nonlocal gp, obs_count
        data.append(xq, y)
        obs_count += 1
        do_refit = obs_count % cfg.refit_every == 0 or gp is None
        init = gp.params if gp is not None else _init_params(objective.dim, cfg)
        gp = fit_gp(
            data,
            cfg.priors,
            init=init,
            refit=do_refit,
            restarts=cfg.fit_restarts,
            max_iters=cfg.fit_max_iters,
            rng=run.rng,
        )

    t = 0
    try:
        while run.budget_left() and (cfg.budget is not None or t <= cfg.n_iters):
            y = run.observe(run.x, "observe")
            absorb(run.x, y)

            for _ in range(cfg.queries_per_iter):
                if not run.budget_left():
                    break
                result = optimize_acquisition(gp, run.x, acq_kind, cfg.acq, run.lower, run.upper, run.rng)
                if result.fallback:
                    run.trace.events.append(f"eval {run.evals}: acquisition fallback to random candidate")
                for z in result.batch:
                    if not run.budget_left():
                        break
                    y = run.observe(z, "learn", acq_value=result.value)
                    absorb(z, y)
            if not run.budget_left():
                break

            try:
                belief = gradient_posterior(gp, run.x)
                pre_prob = max_descent_probability(belief) if np.any(belief.mu) else 0.5
                if cfg.move == "mpd_direction":
                    run.x, inner, _ = move_loop(gp, run.x, move_cfg)
                else:  # expected_gradient
                    norm = np.linalg.norm(belief.mu)
                    inner = 0
                    if norm > 0:
                        run.x = np.clip(run.x - eta * belief.mu / norm, run.lower, run.upper)
                        inner = 1
            except NumericalError as exc:
                # An ill-conditioned belief must not sink a long run: hold
                # position, record the event, and let the next refit recover.
                run.trace.events.append(f"eval {run.evals}: move skipped ({exc})")
                pre_prob, inner = None, 0
            last = run.trace.records[-1]
            last.max_descent_prob = pre_prob
            last.inner_steps = inner
            t += 1
    except EvaluationError as exc:
        run.trace.aborted = True
        run.trace.abort_reason = str(exc)
        client = getattr(objective, "client", None)
        if client is not None:
            run.trace.events.extend(client.fault_log)
    run.trace.final_x = run.x.copy()
    return run.trace


def _run_ars_policy(objective: Objective, x0: np.ndarray, cfg: PolicyConfig) -> RunTrace:
    run = _Run(objective, x0, cfg)
    k = cfg.ars_directions
    b = cfg.ars_top if cfg.ars_top is not None else k
    t = 0
    try:
        while run.budget_left() and (cfg.budget is not None or t <= cfg.n_iters):
            dirs = run.rng.standard_normal((k, objective.dim))
            r_plus = np.empty(k)
            r_minus = np.empty(k)
            complete = True
            for i in range(k):
                if not run.budget_left():
                    complete = False
                    break
                r_plus[i] = -run.observe(np.clip(run.x + cfg.ars_noise * dirs[i], run.lower, run.upper), "learn")
                if not run.budget_left():
                    complete = False
                    break
                r_minus[i] = -run.observe(np.clip(run.x - cfg.ars_noise * dirs[i], run.lower, run.upper), "learn")
            if not complete:
                break
            elite = np.argsort(np.maximum(r_plus, r_minus))[::-1][:b]
            sigma_r = max(float(np.concatenate([r_plus[elite], r_minus[elite]]).std()), 1e-8)
            g = (cfg.ars_step / b) * ((r_plus[elite] - r_minus[elite]) @ dirs[elite]) / sigma_r
            run.x = np.clip(run.x + g, run.lower, run.upper)
            t += 1
    except EvaluationError as exc:
        run.trace.aborted = True
        run.trace.abort_reason = str(exc)
    run.trace.final_x = run.x.copy()
    return run.trace


def run_mpd(objective: Objective, x0: np.ndarray, cfg: PolicyConfig) -> RunTrace:
    """Observe, learn via the descent-signal acquisition, then iteratively move
    in the most probable descent direction until the probability gate closes."""
    cfg = cfg.resolved()
    if cfg.kind != "mpd":
        raise ConfigError(f"run_mpd requires kind='mpd', got {cfg.kind!r}")
    return _run_gp_policy(objective, x0, cfg)


def run_gibo(objective: Objective, x0: np.ndarray, cfg: PolicyConfig) -> RunTrace:
    """Baseline: learn by minimizing gradient-covariance trace, move one
    normalized expected-gradient step per iteration."""
    cfg = cfg.resolved()
    if cfg.kind != "gibo":
        raise ConfigError(f"run_gibo requires kind='gibo', got {cfg.kind!r}")
    return _run_gp_policy(objective, x0, cfg)


def run_ars(objective: Objective, x0: np.ndarray, cfg: PolicyConfig) -> RunTrace:
    """Augmented random search: symmetric perturbations, elite-averaged update
    scaled by the reward standard deviation."""
    cfg = cfg.resolved()
    if cfg.kind != "ars":
        raise ConfigError(f"run_ars requires kind='ars', got {cfg.kind!r}")
    return _run_ars_policy(objective, x0, cfg)


def run_variant(objective: Objective, x0: np.ndarray, cfg: PolicyConfig) -> RunTrace:
    """Ablation cell: any (learn, move) pairing of the GP-policy skeleton."""
    cfg = cfg.resolved()
    if cfg.kind != "custom":
        raise ConfigError(f"run_variant requires kind='custom', got {cfg.kind!r}")
    return _run_gp_policy(objective, x0, cfg)


def run_policy(objective: Objective, x0: np.ndarray, cfg: PolicyConfig) -> RunTrace:
    """Dispatch on cfg.kind; the entry point used by the experiment harness."""
    cfg = cfg.resolved()
    if cfg.kind == "ars":
        return _run_ars_policy(objective, x0, cfg)
    return _run_gp_policy(objective, x0, cfg)
