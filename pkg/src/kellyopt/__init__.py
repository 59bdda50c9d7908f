"""Log-optimal betting at scale.

Solvers for maximizing expected log wealth over many independent binary
bets (exact enumeration for small sets, an integral-transform objective
for large ones), certified lower/upper bounds with shortfall profiles,
synthetic prediction-market instance generation, and the scaling-law
pipeline that models how certified accuracy grows with subproblem size.
"""

from .bounds import (
    BoundEntry,
    BoundsProfile,
    LowerBound,
    bounds_profile,
    greedy_lower,
    greedy_rank,
    stepwise_lower,
    upper_bound,
)
from .core import (
    Bet,
    Contract,
    Logits,
    Portfolio,
    ProblemInstance,
    Regime,
    VarianceLevel,
    bet_from_contract,
    kelly_from_mu_sigma,
    mu_sigma,
    single_bet_kelly,
    single_bet_log_wealth,
)
from .datagen import (
    RegimeSpec,
    RngStream,
    calibrate_beta_concentration,
    gen_beta_instance,
    gen_logit_offset_instance,
    generate_instance,
    gnd_calibrate,
    gnd_sample,
)
from .errors import (
    CalibrationError,
    CapacityError,
    ConvergenceError,
    EdgeError,
    FitError,
    InputError,
    KellyoptError,
    QuadratureError,
)
from .exhaustive import ScenarioTable, enumerate_scenarios, solve_exhaustive
from .newton import SolveResult
from .scaling import (
    LinearParamModel,
    ScalingDataset,
    ScalingRecord,
    SigmoidParams,
    collapse_transform,
    compute_features,
    evaluate_model,
    fit_sigmoid,
    sigmoid_eval,
    split_dataset,
    train_param_model,
)
from .transform import (
    ItmSolveResult,
    QuadratureGrid,
    TransformObjective,
    build_grid,
    frullani_log,
    laplace_transform,
    solve_itm,
)

__version__ = "0.1.0"
