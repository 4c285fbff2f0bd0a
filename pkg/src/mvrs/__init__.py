"""Maximum-variance-reduction stratified subsampling for GLM M-estimation."""

from .errors import (
    DegenerateScores,
    DegenerateVariance,
    DimensionError,
    Diverged,
    InvalidInput,
    MVRSError,
    RateOverflow,
    SingularHessian,
)
from .model import Family, hessian, loglik, score
from .data import Dataset, load_csv, write_csv
from .estimator import FitResult, fit, full_fit
from .sampling import Draw, SamplingPlan, draw_with_replacement, optimal_probs, uniform_probs
from .stratify import (
    Direction,
    StratPlan,
    allocate,
    leading_direction,
    optimal_partition,
    partition_equal_count,
    strat_scores,
    stratified_draw,
)
from .variance import CovEstimate, exact_v_str, exact_v_sub, plug_in_estimate
from .pipeline import METHODS, PilotContext, SubsampleResult, prepare_pilot, run_method

__version__ = "0.1.0"
