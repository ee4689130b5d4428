"""Budget-constrained collaborative forecasting market.

Sellers price feature groups, buyers state what a forecast-accuracy gain is
worth to them, and the operator fits budget-constrained spline LASSO models,
prices the forecasts from bid-gain tables, and settles seller revenues so
the books balance exactly.
"""

from .benchmarks import (
    EXTERNAL_COLUMNS,
    BaselineConfig,
    LocalFit,
    compare,
    fit_local,
    load_external_forecasts,
)
from .dataset import (
    AgentSchema,
    ContiguousKFold,
    HoldoutSplit,
    HorizonTable,
    LagSchedule,
    MarketFrame,
    SlidingWindowSplit,
    SyntheticSpec,
    build_lagged,
    load_csv,
    snapshot_table,
    split,
    synthesize,
    synthesize_zones,
)
from .errors import (
    BoundsError,
    ConfigError,
    DegenerateFeatureError,
    EstimationError,
    FeasibilityError,
    FilterError,
    IntegrityError,
    MarketError,
    SchemaError,
    TuningError,
)
from .market import (
    BidGainTable,
    PriceDecision,
    SessionConfig,
    SettlementReport,
    ValueFunction,
    build_bgt,
    gain,
    lrm_benchmark,
    resolve_price,
    revenues,
    run_session,
    set_price,
)
from .presets import (
    PRESET_NAMES,
    Preset,
    basic_prices,
    make_preset,
    preset_with_config,
    session_config_from_mapping,
)
from .solver import (
    BudgetConstrainedLasso,
    CoefficientSet,
    SolveResult,
    SolverConfig,
    dominant_live_mask,
    fit_budget_constrained,
    gradient_step_vector,
    knapsack,
    loss_value,
    predict,
    prox_knapsack,
    soft_threshold,
    step_constant,
)
from .splines import (
    FeatureMeta,
    GroupedDesign,
    GroupInfo,
    PartialCorrelationFilter,
    SplineConfig,
    SplineGroupExpander,
    expand_design,
    filter_design,
    partial_correlation_mask,
)
from .tuning import TuningGrid, TuningResult, tune, tune_bids
from .variants import (
    CoefficientWeightedResult,
    MixedEffectsResult,
    fit_coefficient_weighted,
    fit_mixed_effects,
)

__version__ = "0.1.0"

__all__ = [
    "AgentSchema",
    "BaselineConfig",
    "BidGainTable",
    "BoundsError",
    "BudgetConstrainedLasso",
    "CoefficientSet",
    "CoefficientWeightedResult",
    "ConfigError",
    "ContiguousKFold",
    "DegenerateFeatureError",
    "EstimationError",
    "EXTERNAL_COLUMNS",
    "FeasibilityError",
    "FeatureMeta",
    "FilterError",
    "GroupInfo",
    "GroupedDesign",
    "HoldoutSplit",
    "HorizonTable",
    "IntegrityError",
    "LagSchedule",
    "LocalFit",
    "MarketError",
    "MarketFrame",
    "MixedEffectsResult",
    "PartialCorrelationFilter",
    "PriceDecision",
    "Preset",
    "PRESET_NAMES",
    "SchemaError",
    "SessionConfig",
    "SettlementReport",
    "SlidingWindowSplit",
    "SolveResult",
    "SolverConfig",
    "SplineConfig",
    "SplineGroupExpander",
    "SyntheticSpec",
    "TuningError",
    "TuningGrid",
    "TuningResult",
    "ValueFunction",
    "basic_prices",
    "build_bgt",
    "build_lagged",
    "compare",
    "dominant_live_mask",
    "expand_design",
    "filter_design",
    "fit_budget_constrained",
    "fit_coefficient_weighted",
    "fit_local",
    "fit_mixed_effects",
    "gain",
    "gradient_step_vector",
    "knapsack",
    "load_csv",
    "load_external_forecasts",
    "loss_value",
    "lrm_benchmark",
    "make_preset",
    "partial_correlation_mask",
    "predict",
    "preset_with_config",
    "prox_knapsack",
    "resolve_price",
    "revenues",
    "run_session",
    "session_config_from_mapping",
    "set_price",
    "snapshot_table",
    "soft_threshold",
    "split",
    "step_constant",
    "synthesize",
    "synthesize_zones",
    "tune",
    "tune_bids",
]
