"""Reference local models and the local-vs-market comparison harness.

Two baselines run on a buyer's own columns only: a plain LASSO on the raw
features and the spline LASSO used by the market itself, both cross-validated
over their penalty (and basis) grids.  The comparison harness turns settled
session reports into a per-zone, per-horizon RMSE table with relative
improvements, and accepts externally produced forecast CSVs so models this
package does not implement can sit in the same table.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dataset import ContiguousKFold, split
from .errors import (
    ConfigError,
    DegenerateFeatureError,
    EstimationError,
    FilterError,
    IntegrityError,
    SchemaError,
    TuningError,
)
from .solver import SolverConfig, fit_budget_constrained
from .splines import SplineGroupExpander
from .tuning import _default_lambdas

__all__ = [
    "BaselineConfig",
    "LocalFit",
    "compare",
    "fit_local",
    "load_external_forecasts",
]

_KINDS = ("lasso", "spline-lasso")
_DEGENERATE = (DegenerateFeatureError, EstimationError, FilterError)

EXTERNAL_COLUMNS = ["zone", "timestamp", "horizon", "forecast"]


@dataclass(frozen=True)
class BaselineConfig:
    """Search space and solver budget for one local baseline."""

    kind: str = "lasso"
    lambdas: tuple = field(default_factory=_default_lambdas)
    degrees: tuple = (1, 2, 3)
    knot_counts: tuple = (3, 5, 8)
    cv: object = ContiguousKFold(12)  # None fits and scores on the same rows
    tol: float = 1e-8
    max_iter: int = 500
    resolution: int = 100

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        lams = tuple(sorted(set(float(l) for l in self.lambdas)))
        degrees = tuple(sorted(set(int(d) for d in self.degrees)))
        knots = tuple(sorted(set(int(k) for k in self.knot_counts)))
        if not lams or lams[0] <= 0:
            raise ConfigError("penalties must be positive")
        if not degrees or degrees[0] < 1 or not knots or knots[0] < 2:
            raise ConfigError("spline axes must hold degrees >= 1, knots >= 2")
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "knot_counts", knots)

    def candidates(self):
        """(degree, knots, lam) triples; plain lasso pins the basis axes."""
        if self.kind == "lasso":
            return [(0, 0, lam) for lam in self.lambdas]
        return [
            (d, k, lam)
            for d in self.degrees
            for k in self.knot_counts
            for lam in self.lambdas
        ]


@dataclass(frozen=True)
class LocalFit:
    """A fitted local baseline and the search that selected it."""

    kind: str
    buyer: int
    own_columns: tuple
    coefficients: object
    expander: object  # None for the raw-feature kind
    degree: int
    knots: int
    lam: float
    cv_loss: float

    def design(self, features):
        X = np.asarray(features, dtype=float)[:, list(self.own_columns)]
        if self.expander is None:
            return X
        return self.expander.transform(X)

    def predict(self, features, clip=None):
        return self.coefficients.predict(self.design(features), clip=clip)


def _rmse(pred, actual):
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def _own_raw_columns(table, buyer):
    return [j for j, m in enumerate(table.feature_meta) if m.owner == buyer]


def _candidate_design(X, train, degree, knots):
    """Design over all rows with any basis fitted on the training rows only."""
    if degree == 0:
        return X, None
    expander = SplineGroupExpander(degree=degree, n_knots=knots)
    expander.fit(X[train])
    return expander.transform(X), expander


def fit_local(table, buyer, config=None):
    """Cross-validate and fit one local baseline on the buyer's own columns.

    Every candidate basis is refitted per fold on that fold's training rows;
    the winning triple (ties toward the simplest basis, then the larger
    penalty) is refitted on all rows.  With ``cv=None`` the model fits and
    scores on the same rows, so the full-shrinkage limit returns exactly the
    population standard deviation of the target.
    """
    config = BaselineConfig() if config is None else config
    if buyer not in table.targets:
        raise ConfigError(f"agent {buyer} has no target to forecast")
    y = table.targets[buyer]
    if np.ptp(y) == 0:
        raise EstimationError(f"buyer {buyer}: target is constant")
    own = _own_raw_columns(table, buyer)
    if not own:
        raise EstimationError(f"buyer {buyer} owns no feature columns")
    X = table.features[:, own]
    T = X.shape[0]
    if config.cv is None:
        folds = [(np.arange(T), np.arange(T))]
    else:
        folds = split(table.launch_times, config.cv)

    def solve(matrix, rows, lam, theta0=None):
        cfg = SolverConfig(
            lam=lam,
            budget=math.inf,
            tol=config.tol,
            max_iter=config.max_iter,
            resolution=config.resolution,
        )
        return fit_budget_constrained(
            matrix[rows], y[rows], config=cfg, theta0=theta0
        ).coefficients

    totals = {}
    bases = {}
    for degree, knots, _ in config.candidates():
        bases.setdefault((degree, knots), None)
    for degree, knots in bases:
        for train, val in folds:
            try:
                matrix, _ = _candidate_design(X, train, degree, knots)
            except _DEGENERATE:
                for lam in config.lambdas:
                    totals[(degree, knots, lam)] = math.inf
                continue
            for lam in config.lambdas:
                key = (degree, knots, lam)
                if totals.get(key) == math.inf:
                    continue
                model = solve(matrix, train, lam)
                totals[key] = totals.get(key, 0.0) + _rmse(
                    model.predict(matrix[val]), y[val]
                )
    finite = {k: v for k, v in totals.items() if math.isfinite(v)}
    if not finite:
        raise TuningError(f"buyer {buyer}: no baseline candidate survived")
    (degree, knots, lam), total = min(
        finite.items(), key=lambda kv: (kv[1], kv[0][0], kv[0][1], -kv[0][2])
    )

    matrix, expander = _candidate_design(X, np.arange(T), degree, knots)
    final = solve(matrix, np.arange(T), lam)
    return LocalFit(
        kind=config.kind,
        buyer=buyer,
        own_columns=tuple(own),
        coefficients=final,
        expander=expander,
        degree=degree,
        knots=knots,
        lam=lam,
        cv_loss=total / len(folds),
    )


# ---------------------------------------------------------------------------
# comparison harness


def load_external_forecasts(path):
    """Read a plug-in forecast CSV with columns (zone, timestamp, horizon, forecast)."""
    df = pd.read_csv(path)
    missing = [c for c in EXTERNAL_COLUMNS if c not in df.columns]
    if missing:
        raise SchemaError(f"external forecast file lacks columns {missing}")
    df = df[EXTERNAL_COLUMNS].copy()
    df["timestamp"] = pd.to_datetime(df["timestamp"])
    if df[["zone", "timestamp", "horizon"]].duplicated().any():
        raise IntegrityError("duplicate (zone, timestamp, horizon) forecasts")
    return df


def _align_external(reports, df):
    """Per-buyer local forecast arrays matched on (timestamp, horizon)."""
    out = {}
    for rep in reports:
        sub = df[df["zone"] == rep.buyer]
        lookup = {
            (ts, int(h)): float(v)
            for ts, h, v in zip(sub["timestamp"], sub["horizon"], sub["forecast"])
        }
        times = pd.DatetimeIndex(rep.target_times)
        values = np.empty(len(times))
        for i, (ts, h) in enumerate(zip(times, rep.horizon_tags)):
            key = (ts, int(h))
            if key not in lookup:
                raise IntegrityError(
                    f"no external forecast for zone {rep.buyer} at {ts} h={h}"
                )
            values[i] = lookup[key]
        out[rep.buyer] = values
    return out


def compare(reports, locals=None):
    """Per-zone, per-horizon RMSE of local vs delivered market forecasts.

    ``locals`` may replace the sessions' own local forecasts: a mapping of
    buyer -> aligned forecast array, or a DataFrame in the external-forecast
    layout.  Improvement is the unclamped 100 * (1 - rmse_market/rmse_local),
    negative when the market forecast is worse.
    """
    reports = list(reports)
    if not reports:
        raise EstimationError("no reports to compare")
    if isinstance(locals, pd.DataFrame):
        locals = _align_external(reports, locals)
    rows = []
    for rep in reports:
        if locals is None:
            base = np.asarray(rep.local_forecasts, dtype=float)
        else:
            if rep.buyer not in locals:
                raise ConfigError(f"no local forecasts supplied for zone {rep.buyer}")
            base = np.asarray(locals[rep.buyer], dtype=float)
        target = np.asarray(rep.target, dtype=float)
        if base.shape != target.shape:
            raise ConfigError(
                f"zone {rep.buyer}: {base.shape[0]} local forecasts for "
                f"{target.shape[0]} test rows"
            )
        if target.size == 0:
            raise EstimationError(f"zone {rep.buyer}: empty test set")
        market = np.asarray(rep.forecasts, dtype=float)
        tags = np.asarray(rep.horizon_tags)
        for h in np.unique(tags):
            mask = tags == h
            l = _rmse(base[mask], target[mask])
            m = _rmse(market[mask], target[mask])
            improvement = 100.0 * (1.0 - m / l) if l > 0 else math.nan
            rows.append((rep.buyer, int(h), l, m, improvement))
    return pd.DataFrame(
        rows, columns=["zone", "horizon", "rmse_local", "rmse_market", "improvement"]
    )
