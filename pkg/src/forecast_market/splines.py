"""Per-feature B-spline expansion into priced column groups, and the
partial-correlation filter that prunes irrelevant columns before fitting."""

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.interpolate import BSpline
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.feature_selection import SelectorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_array_2d, check_vector
from .errors import ConfigError, DegenerateFeatureError, FilterError

PLACEMENTS = ("quantile", "uniform")


@dataclass(frozen=True)
class SplineConfig:
    """Basis shape: degree D and number of interior knots K.

    Every feature expands into M = D + K + 1 columns (clamped boundary knots
    at the training min/max plus K interior knots).
    """

    degree: int = 3
    n_knots: int = 5
    placement: str = "quantile"

    def __post_init__(self):
        if self.degree < 1:
            raise ConfigError(f"degree must be >= 1, got {self.degree}")
        if self.n_knots < 2:
            raise ConfigError(f"n_knots must be >= 2, got {self.n_knots}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(
                f"placement must be one of {PLACEMENTS}, got {self.placement!r}"
            )

    @property
    def columns_per_feature(self):
        return self.degree + self.n_knots + 1


class SplineGroupExpander(TransformerMixin, BaseEstimator):
    """Expands each input column into a clamped B-spline basis.

    Knots come from the training data: interior knots at equally spaced
    quantiles (or equally spaced points with placement="uniform"), boundary
    knots at the column min/max.  Transform clamps new values into the
    training range, so each feature's columns always sum to one.

    Columns with fewer distinct training values than interior knots fall back
    to uniform placement (recorded in ``fallback_``); constant columns are
    degenerate and transform to all-zero blocks (recorded in ``degenerate_``).
    """

    def __init__(self, degree=3, n_knots=5, placement="quantile"):
        self.degree = degree
        self.n_knots = n_knots
        self.placement = placement

    def _spline_config(self):
        return SplineConfig(self.degree, self.n_knots, self.placement)

    def fit(self, X, y=None):
        cfg = self._spline_config()
        X = check_array_2d(X, name="X")
        if X.shape[0] < 2:
            raise ValueError("need at least two rows to place knots")
        n_features = X.shape[1]
        D, K = cfg.degree, cfg.n_knots
        self.knots_ = []
        self.bounds_ = []
        self.degenerate_ = np.zeros(n_features, dtype=bool)
        self.fallback_ = np.zeros(n_features, dtype=bool)
        for j in range(n_features):
            col = X[:, j]
            lo, hi = float(col.min()), float(col.max())
            self.bounds_.append((lo, hi))
            if lo == hi:
                self.degenerate_[j] = True
                self.knots_.append(None)
                continue
            interior = None
            if cfg.placement == "quantile" and np.unique(col).shape[0] > K:
                q = np.quantile(col, np.arange(1, K + 1) / (K + 1))
                inside = (q > lo) & (q < hi)
                if np.all(inside) and np.all(np.diff(q) > 0):
                    interior = q
            if interior is None:
                interior = lo + np.arange(1, K + 1) / (K + 1) * (hi - lo)
                if cfg.placement == "quantile":
                    self.fallback_[j] = True
            t = np.r_[[lo] * (D + 1), interior, [hi] * (D + 1)]
            self.knots_.append(t)
        self.n_features_in_ = n_features
        self.columns_per_feature_ = cfg.columns_per_feature
        return self

    def transform(self, X):
        check_is_fitted(self, "knots_")
        cfg = self._spline_config()
        X = check_array_2d(X, name="X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expander was fit on {self.n_features_in_}"
            )
        M = self.columns_per_feature_
        out = np.zeros((X.shape[0], self.n_features_in_ * M))
        for j in range(self.n_features_in_):
            if self.degenerate_[j]:
                continue
            lo, hi = self.bounds_[j]
            x = np.clip(X[:, j], lo, hi)
            block = BSpline.design_matrix(x, self.knots_[j], cfg.degree).toarray()
            out[:, j * M : (j + 1) * M] = block
        return out


@dataclass
class GroupInfo:
    """One priced column group: a seller's feature expanded into basis columns."""

    group_id: int
    owner: int
    source: str
    price: float
    columns: tuple  # (start, stop) in the full design matrix
    active: bool = True
    kind: str = "exog"  # "exog" or "lag"

    def column_indices(self):
        return np.arange(self.columns[0], self.columns[1])


@dataclass
class GroupedDesign:
    """A design matrix whose columns belong to priced, deactivatable groups.

    Column positions are fixed at construction; filtering only flips
    ``column_active`` flags, so group column ranges stay valid throughout.
    The solver sees the active columns only.
    """

    matrix: np.ndarray
    groups: list
    column_active: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise ValueError("matrix must be 2-D")
        if self.column_active.shape[0] != self.matrix.shape[1]:
            raise ValueError("column_active must flag every matrix column")
        stops = [g.columns[1] for g in self.groups]
        if self.groups and max(stops) > self.matrix.shape[1]:
            raise ValueError("group column ranges exceed the matrix")

    def group_by_id(self, group_id):
        for g in self.groups:
            if g.group_id == group_id:
                return g
        raise KeyError(f"no group with id {group_id}")

    def group_active(self, group):
        return group.active and bool(self.column_active[slice(*group.columns)].any())

    def active_groups(self):
        return [g for g in self.groups if self.group_active(g)]

    def active_columns(self):
        """Absolute indices of columns the solver may use."""
        mask = self.column_active.copy()
        for g in self.groups:
            if not g.active:
                mask[slice(*g.columns)] = False
        return np.nonzero(mask)[0]

    def solver_view(self):
        """(matrix, per-column group ids, per-group prices) over active columns."""
        cols = self.active_columns()
        col_gids = np.empty(self.matrix.shape[1], dtype=int)
        for g in self.groups:
            col_gids[slice(*g.columns)] = g.group_id
        prices = {g.group_id: g.price for g in self.groups}
        return self.matrix[:, cols], col_gids[cols], prices, cols

    def deactivate_columns(self, columns):
        """Copy of the design with the given absolute columns switched off."""
        mask = self.column_active.copy()
        mask[np.asarray(columns, dtype=int)] = False
        groups = [replace(g) for g in self.groups]
        design = GroupedDesign(self.matrix, groups, mask)
        for g in design.groups:
            if not mask[slice(*g.columns)].any():
                g.active = False
        return design

    def columns_of_owner(self, owner):
        out = []
        for g in self.groups:
            if g.owner == owner:
                out.extend(range(*g.columns))
        return np.array(out, dtype=int)


@dataclass(frozen=True)
class FeatureMeta:
    """Raw-column metadata used to build design groups."""

    owner: int
    name: str
    price: float = 0.0
    kind: str = "exog"


def expand_design(X, features, expander):
    """Spline-expand raw columns into a GroupedDesign.

    Parameters
    ----------
    X : (T, F) array of raw feature columns.
    features : list of FeatureMeta, one per column of X.
    expander : SplineGroupExpander, fitted or not (fit happens here if needed).

    Returns the design; constant columns yield inactive groups.
    """
    X = check_array_2d(X, name="X")
    if len(features) != X.shape[1]:
        raise ValueError("features must describe every column of X")
    if not hasattr(expander, "knots_"):
        expander.fit(X)
    matrix = expander.transform(X)
    M = expander.columns_per_feature_
    groups = []
    for j, meta in enumerate(features):
        groups.append(
            GroupInfo(
                group_id=j,
                owner=meta.owner,
                source=meta.name,
                price=float(meta.price),
                columns=(j * M, (j + 1) * M),
                active=not bool(expander.degenerate_[j]),
                kind=meta.kind,
            )
        )
    column_active = np.ones(matrix.shape[1], dtype=bool)
    for g in groups:
        if not g.active:
            column_active[slice(*g.columns)] = False
    if groups and not any(g.active for g in groups):
        raise DegenerateFeatureError("every feature column is constant")
    return GroupedDesign(matrix=matrix, groups=groups, column_active=column_active)


def partial_correlation_mask(X, y, alpha, control_columns=None, candidate_columns=None):
    """Two-sided partial-correlation test of each candidate column against y.

    Residualizes candidates and target on the controls (plus an intercept),
    computes Pearson correlations of the residuals and the t statistic
    r * sqrt((T - 2 - c) / (1 - r^2)) with c control columns.  Columns whose
    p-value is >= alpha are dropped.

    Returns (keep_mask, p_values) over all columns of X; non-candidate
    columns keep True and p-value NaN.
    """
    X = check_array_2d(X, name="X")
    y = check_vector(y, name="y", n=X.shape[0])
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    if np.std(y) == 0:
        raise FilterError("target is constant; correlations are undefined")
    T, p = X.shape
    controls = np.asarray(control_columns, dtype=int) if control_columns is not None else np.zeros(0, dtype=int)
    if candidate_columns is None:
        candidates = np.setdiff1d(np.arange(p), controls)
    else:
        candidates = np.setdiff1d(np.asarray(candidate_columns, dtype=int), controls)
    keep = np.ones(p, dtype=bool)
    pvalues = np.full(p, np.nan)
    if candidates.size == 0:
        return keep, pvalues
    c = controls.shape[0]
    df = T - 2 - c
    if df < 1:
        raise FilterError(
            f"{T} rows with {c} controls leave {df} degrees of freedom"
        )
    if alpha == 1.0:
        return keep, pvalues

    Q = np.column_stack([np.ones(T), X[:, controls]]) if c else np.ones((T, 1))
    targets = np.column_stack([y, X[:, candidates]])
    beta, *_ = np.linalg.lstsq(Q, targets, rcond=None)
    resid = targets - Q @ beta
    ry = resid[:, 0]
    rX = resid[:, 1:]
    ny = float(np.sqrt(ry @ ry))
    nx = np.sqrt(np.einsum("ij,ij->j", rX, rX))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (rX.T @ ry) / (nx * ny)
    r = np.where((nx == 0) | (ny == 0), 0.0, r)
    r = np.clip(r, -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = r * np.sqrt(df / (1.0 - r**2))
    t = np.where(np.abs(r) == 1.0, np.inf * np.sign(r), t)
    pv = 2.0 * stats.t.sf(np.abs(t), df)
    pvalues[candidates] = pv
    keep[candidates] = pv < alpha
    return keep, pvalues


def filter_design(design, y, alpha, control_columns=None):
    """Apply the partial-correlation filter to a GroupedDesign's active columns.

    Control columns (typically the buyer's own) are never dropped.  Returns a
    new design; groups whose columns all fail turn inactive.
    """
    active = design.active_columns()
    controls = (
        np.intersect1d(np.asarray(control_columns, dtype=int), active)
        if control_columns is not None
        else np.zeros(0, dtype=int)
    )
    candidates = np.setdiff1d(active, controls)
    keep, pvalues = partial_correlation_mask(
        design.matrix, y, alpha,
        control_columns=controls, candidate_columns=candidates,
    )
    dropped = candidates[~keep[candidates]]
    filtered = design.deactivate_columns(dropped)
    return filtered, pvalues


class PartialCorrelationFilter(SelectorMixin, BaseEstimator):
    """sklearn selector wrapping the partial-correlation relevance test.

    Parameters
    ----------
    alpha : significance threshold; columns with p >= alpha are dropped.
    control_columns : indices residualized against and always kept.
    """

    def __init__(self, alpha=0.05, control_columns=None):
        self.alpha = alpha
        self.control_columns = control_columns

    def fit(self, X, y):
        X = check_array_2d(X, name="X")
        keep, pvalues = partial_correlation_mask(
            X, check_vector(y, name="y", n=X.shape[0]),
            self.alpha, control_columns=self.control_columns,
        )
        self.support_mask_ = keep
        self.p_values_ = pvalues
        self.n_features_in_ = X.shape[1]
        return self

    def _get_support_mask(self):
        check_is_fitted(self, "support_mask_")
        return self.support_mask_
