"""Hammerstein model of a magnetorheological-membrane actuator and its identification.

A polynomial static map ``f(u)`` drives a fast under-damped block in series
with a slow lead-lag block whose static gains multiply to one. The package
simulates the model, builds step and chirp experiments, and recovers the model
from step records in three stages (static, fast, slow) with median
aggregation.
"""

from .model import (
    FastDynamics,
    FrequencyResponse,
    HammersteinModel,
    PolynomialNonlinearity,
    SlowDynamics,
    TimeSeries,
    eval_nonlinearity,
    frequency_response,
    simulate,
    step_response_fast,
    step_response_series,
    step_response_slow,
)
from .signals import (
    StaticCharacteristic,
    StepRecord,
    StepSchedule,
    add_noise,
    chirp_excitation,
    default_schedule,
    make_step_excitation,
    split_steps,
    steady_state_points,
)
from .sysid import (
    BaselineTF,
    FitReport,
    IdentificationError,
    NonIdentifiableError,
    OptimizerSettings,
    PerRecordEstimates,
    UnstableModelError,
    aggregate_median,
    close_constraint,
    fit_baseline,
    fit_baseline_pooled,
    fit_fast_single,
    fit_report,
    fit_slow_single,
    fit_static,
    identify,
    select_degree,
    validate,
)

__version__ = "0.1.0"
