"""Local Bayesian optimization via most-probable descent.

A Gaussian process over the objective induces a Gaussian belief over its
gradient at any point.  This package learns about that gradient with a
look-ahead acquisition on the descent-probability signal, then moves in the
direction most likely to descend, alongside trace-minimizing and
random-search baselines and a reproducible benchmark harness.
"""

from .acquisition import (
    AcqOptConfig,
    AcqOptResult,
    FantasyGradient,
    fantasy_gradient,
    mpd_acquisition,
    optimize_acquisition,
    trace_acquisition,
)
from .descent import (
    MoveConfig,
    descent_probability,
    max_descent_probability,
    most_probable_direction,
    move_loop,
)
from .errors import (
    ConfigError,
    DegenerateBeliefError,
    DomainError,
    EvaluationError,
    NumericalError,
)
from .gp import (
    Dataset,
    Fixed,
    GpPosterior,
    GradientBelief,
    Hyperpriors,
    KernelParams,
    Normal,
    Uniform,
    fit_gp,
    gradient_posterior,
    kernel_eval,
    kernel_grad_x1,
    kernel_hess_cross,
    posterior_mean_var,
)
from .harness import ExperimentConfig, SummaryRow, load_config, run_experiment, summarize
from .objectives import (
    NoiseStream,
    Objective,
    analytic_suite,
    evaluate,
    make_rff_objective,
    sobol_starts,
)
from .policies import PolicyConfig, RunTrace, TraceRecord, run_ars, run_gibo, run_mpd, run_policy, run_variant

__version__ = "0.1.0"
