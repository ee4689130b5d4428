"""Exception types raised by the market components."""


class MarketError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(MarketError):
    """Input data does not match the declared schema (missing columns, bad agent ids)."""


class IntegrityError(MarketError):
    """Data fails an integrity check (gaps, duplicates, missing values)."""


class BoundsError(MarketError):
    """A value falls outside its documented range."""


class ConfigError(MarketError):
    """A configuration object is inconsistent or incomplete."""


class DegenerateFeatureError(MarketError):
    """A feature cannot support the requested basis (constant column)."""


class FilterError(MarketError):
    """The relevance filter cannot run (degenerate target)."""


class FeasibilityError(MarketError):
    """A starting point or constraint set admits no feasible solution."""


class TuningError(MarketError):
    """Hyperparameter search failed on every candidate."""


class EstimationError(MarketError):
    """A gain or loss estimate cannot be formed (empty validation set)."""
