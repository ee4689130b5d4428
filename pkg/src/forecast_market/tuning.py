"""Cross-validated grid search over the spline model's hyperparameters.

For every (degree, knot count) pair the spline transformer and the
partial-correlation filter are fitted once per fold and reused across all
penalty values, so the expensive design construction never repeats inside
the penalty loop.  Per-fold validation losses accumulate into a table whose
argmin (ties broken toward the simplest model) is the returned triple.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from ._validation import standardize_columns
from .dataset import ContiguousKFold, split
from .errors import (
    BoundsError,
    ConfigError,
    DegenerateFeatureError,
    EstimationError,
    FilterError,
    TuningError,
)
from .market import resolve_price
from .solver import (
    SolverConfig,
    dominant_live_mask,
    fit_budget_constrained,
    step_constant,
)
from .splines import SplineGroupExpander, expand_design, partial_correlation_mask

__all__ = ["TuningGrid", "TuningResult", "tune", "tune_bids"]

_DEGENERATE = (BoundsError, DegenerateFeatureError, EstimationError, FilterError)


def _default_lambdas():
    return tuple(float(v) for v in np.logspace(-3.0, 2.0, 10))


@dataclass(frozen=True)
class TuningGrid:
    """Search space for (degree, knot count, penalty) plus the CV policy."""

    degrees: tuple = tuple(range(1, 8))
    knot_counts: tuple = tuple(range(3, 31))
    lambdas: tuple = field(default_factory=_default_lambdas)
    alpha: float = 0.05
    cv: object = ContiguousKFold(12)

    def __post_init__(self):
        degrees = tuple(sorted(set(int(d) for d in self.degrees)))
        knots = tuple(sorted(set(int(k) for k in self.knot_counts)))
        lams = tuple(sorted(set(float(l) for l in self.lambdas)))
        if not degrees or not knots or not lams:
            raise ConfigError("every grid axis needs at least one value")
        if degrees[0] < 1:
            raise ConfigError(f"degrees must be >= 1, got {degrees[0]}")
        if knots[0] < 2:
            raise ConfigError(f"knot counts must be >= 2, got {knots[0]}")
        if lams[0] <= 0 or not math.isfinite(lams[-1]):
            raise ConfigError("penalties must be finite and positive")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "degrees", degrees)
        object.__setattr__(self, "knot_counts", knots)
        object.__setattr__(self, "lambdas", lams)

    @property
    def n_combinations(self):
        return len(self.degrees) * len(self.knot_counts) * len(self.lambdas)


@dataclass(frozen=True)
class TuningResult:
    """Winning triple plus the full per-fold loss table behind it."""

    degree: int
    knots: int
    lam: float
    loss: float
    bid: float
    rows: tuple  # of (degree, knots, lam, fold, loss)

    def to_frame(self):
        return pd.DataFrame(
            list(self.rows), columns=["D", "K", "lambda", "fold", "loss"]
        )

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def totals(self):
        """Accumulated loss per triple; NaN-poisoned cells total to inf."""
        out = {}
        for d, k, lam, _, loss in self.rows:
            key = (d, k, lam)
            bad = not math.isfinite(loss)
            prev = out.get(key, 0.0)
            out[key] = math.inf if bad or not math.isfinite(prev) else prev + loss
        return out


def _rmse(pred, actual):
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def _priced_meta(table, buyer, prices):
    return [
        replace(
            m, price=0.0 if m.owner == buyer else resolve_price(prices, m.owner, m.name)
        )
        for m in table.feature_meta
    ]


def _cell_losses(features, y, metas, buyer, degree, knots, train, val, bid,
                 lambdas, alpha, tol, max_iter, resolution):
    """Validation loss per penalty for one (degree, knots, fold) cell.

    The transformer and the filter run once here; only the solver repeats
    across penalties.  Returns None when the cell is degenerate.
    """
    try:
        expander = SplineGroupExpander(degree=degree, n_knots=knots)
        expander.fit(features[train])
        design = expand_design(features, metas, expander)
        active = design.active_columns()
        own = np.intersect1d(design.columns_of_owner(buyer), active)
        candidates = np.setdiff1d(active, own)
        keep, _ = partial_correlation_mask(
            design.matrix[train],
            y[train],
            alpha,
            control_columns=own,
            candidate_columns=candidates,
        )
        design = design.deactivate_columns(candidates[~keep[candidates]])
        matrix, col_gids, group_prices, _ = design.solver_view()
        if matrix.shape[1] == 0:
            raise EstimationError("no usable design columns")
        live = dominant_live_mask(matrix[train], col_gids, group_prices)
        Z_tr, _, _ = standardize_columns(matrix[train])
        C = step_constant(Z_tr[:, live])
    except _DEGENERATE:
        return None
    losses = []
    for lam in lambdas:
        cfg = SolverConfig(
            lam=lam, budget=bid, tol=tol, max_iter=max_iter, resolution=resolution
        )
        res = fit_budget_constrained(
            matrix[train],
            y[train],
            groups=col_gids,
            prices=group_prices,
            config=cfg,
            C=C,
        )
        losses.append(_rmse(res.coefficients.predict(matrix[val]), y[val]))
    return losses


def tune(table, buyer, bid, grid=None, prices=0.0, tol=1e-8, max_iter=500,
         resolution=100, jobs=1):
    """Grid-search (degree, knots, penalty) for one buyer at one bid.

    Per (degree, knots, fold) the spline transformer is fitted on the fold's
    training rows, the partial-correlation filter prunes seller columns, and
    each penalty value is solved at the given budget; the fold's validation
    RMSE accumulates per triple.  The argmin triple is returned with the full
    loss table; exact ties go to the smaller degree, then the smaller knot
    count, then the larger penalty.
    """
    grid = TuningGrid() if grid is None else grid
    if buyer not in table.targets:
        raise ConfigError(f"agent {buyer} has no target to forecast")
    bid = float(bid)
    if math.isnan(bid) or bid < 0:
        raise ConfigError(f"bid must be a non-negative budget, got {bid}")
    y = table.targets[buyer]
    folds = split(table.launch_times, grid.cv)
    if len(folds) < 2:
        raise ConfigError(
            f"tuning needs at least 2 cross-validation folds, policy gave {len(folds)}"
        )
    metas = _priced_meta(table, buyer, prices)
    features = table.features

    cells = [
        (d, k, fi, train, val)
        for d in grid.degrees
        for k in grid.knot_counts
        for fi, (train, val) in enumerate(folds)
    ]
    args = [
        (features, y, metas, buyer, d, k, train, val, float(bid),
         grid.lambdas, grid.alpha, tol, max_iter, resolution)
        for d, k, fi, train, val in cells
    ]
    if jobs != 1:
        results = Parallel(n_jobs=jobs)(delayed(_cell_losses)(*a) for a in args)
    else:
        results = [_cell_losses(*a) for a in args]

    rows = []
    for (d, k, fi, _, _), losses in zip(cells, results):
        if losses is None:
            rows.extend((d, k, lam, fi, math.nan) for lam in grid.lambdas)
        else:
            rows.extend(
                (d, k, lam, fi, loss) for lam, loss in zip(grid.lambdas, losses)
            )
    rows = tuple(rows)

    totals = {}
    for d, k, lam, _, loss in rows:
        key = (d, k, lam)
        bad = not math.isfinite(loss)
        prev = totals.get(key, 0.0)
        totals[key] = math.inf if bad or not math.isfinite(prev) else prev + loss
    eligible = {k: v for k, v in totals.items() if math.isfinite(v)}
    if not eligible:
        raise TuningError(
            "every cross-validation fold is degenerate; no triple produced a loss"
        )
    (d, k, lam), loss = min(
        eligible.items(), key=lambda kv: (kv[1], kv[0][0], kv[0][1], -kv[0][2])
    )
    return TuningResult(degree=d, knots=k, lam=lam, loss=loss, bid=float(bid),
                        rows=rows)


def tune_bids(table, buyer, bids, grid=None, prices=0.0, shared=False, tol=1e-8,
              max_iter=500, resolution=100, jobs=1):
    """Tune per bid, or once at the largest bid when ``shared`` is set.

    Returns one TuningResult per entry of ``bids``, in order.  The shared
    mode reuses the least-constrained search for every bid, trading fidelity
    for an n_bids-fold cost reduction.
    """
    bids = [float(b) for b in bids]
    if not bids:
        raise ConfigError("bids must be non-empty")
    if shared:
        ref = tune(table, buyer, max(bids), grid=grid, prices=prices, tol=tol,
                   max_iter=max_iter, resolution=resolution, jobs=jobs)
        return [replace(ref, bid=b) for b in bids]
    return [
        tune(table, buyer, b, grid=grid, prices=prices, tol=tol,
             max_iter=max_iter, resolution=resolution, jobs=jobs)
        for b in bids
    ]
