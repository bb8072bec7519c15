"""Unbiased MCMC from successful couplings of lagged Markov chains.

Pairs of chains driven by a coupled transition meet exactly in finite time;
from the meeting time and the pre-meeting states one gets estimators of
stationary expectations with no initialization bias, signed empirical
measures, computable convergence bounds, and unbiased estimates of the
asymptotic variance of the underlying chain.  Replicates are embarrassingly
parallel and deterministic given a master seed.
"""

__version__ = "0.1.0"

from .rng import StreamKey, derive_stream, standard_normal, uniform
from .targets import (
    Ar1Oracle,
    MomentOracle,
    QuadratureError,
    TargetDistribution,
    make_ar1_oracle,
    make_normal_mixture,
    make_std_normal,
    true_tv_normal,
)
from .couplings import (
    CoupledDraw,
    DensityHandle,
    RejectionCapError,
    crn_quantile_coupling,
    eta_coupling,
    mixture_maximal_coupling,
    normal_overlap,
    reflection_maximal_coupling,
)
from .kernels import (
    CoupledStepResult,
    KernelSpec,
    TransitionPair,
    coupled_independence_oracle_step,
    coupled_mixture_step,
    coupled_mrth_step,
    independence_oracle_step,
    make_ar1_transitions,
    make_transitions,
    mixture_step,
    mrth_step,
)
from .chains import (
    CoupledTrajectory,
    MeetingTimeSample,
    StorageRequest,
    run_lagged_coupling,
    sample_meeting_times,
    state_storage_policy,
)
from .estimators import (
    AggregateReport,
    EstimatorRecord,
    SignedMeasure,
    TruncationLaw,
    UnmetTrajectoryError,
    aggregate,
    asymptotic_variance,
    correction_weight,
    estimator_cost,
    geometric_truncation,
    make_test_function,
    poisson_difference_estimate,
    signed_measure,
    subsample,
    telescope_coupled_sum,
    telescope_single_term,
    time_averaged_estimate,
    unbiased_estimate,
)
from .diagnostics import BoundCurve, TuningAdvice, tune, tv_bound, tv_bound_curve, w1_bound_curve
from .batch import BatchEstimates, batch_estimates, batch_meeting_times, batch_poisson_sums
from .config import ExperimentConfig, ConfigError, build_pi0, build_target, build_transitions
