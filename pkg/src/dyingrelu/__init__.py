"""Convergence analysis of a single ReLU unit trained by gated LMS / backprop."""

__version__ = "0.1.0"

from .moments import (
    ScalarGaussian,
    inverse_std_normal_cdf,
    moment0,
    moment1,
    moment2,
    std_normal_cdf,
)
from .model import SamplePair, SignalModel, make_model_with_activation, optimal_weights, sweep_mu, sample
from .theory import (
    BlockMoments,
    TheoryOperator,
    assemble_blocks,
    assemble_operator,
    averaged_error_curve,
    default_step_size,
    eigen_report,
    fixed_point,
    iterate_mean,
)
from .simulator import (
    SimulationConfig,
    TrajectoryRecord,
    UnitState,
    run_monte_carlo,
    step_analysis,
    step_original,
    time_to_threshold,
)
from .probe import MlpConfig, gradient_check, train_and_probe
