"""Second-order stationary points by variance-reduced epochs and third-order negative-curvature steps."""

from .descent import Moved, descent_step, ncd2_baseline_step, ncd3_step
from .eigen import EigenResult, dense_eigensolve
from .flash import (
    Certificate,
    FlashConfig,
    RunRecord,
    Targets,
    certify_sosp,
    concentration_batch_size,
    counter_audit,
    default_K,
    flash_finite_sum,
    flash_stochastic,
)
from .harness import ExperimentConfig, decrement_experiment, eval_advantage_experiment, parse_config, run_experiment
from .negcurve import BOT, Direction, Inconclusive, NCConfig, approx_nc_finite_sum, approx_nc_stochastic, rayleigh_quotient
from .oracle import (
    ConfigurationError,
    ContractViolation,
    Counters,
    FiniteSumProblem,
    SmoothnessConstants,
    StochasticProblem,
    check_derivatives,
    full_gradient,
    hvp,
    make_test_problem,
    sampled_hvp,
    subsampled_gradient,
)
from .rng import make_rng
from .scsg import ScsgConfig, epoch_progress_check, geometric_sample, scsg_epoch, scsg_run

__version__ = "0.1.0"
