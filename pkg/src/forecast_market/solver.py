"""Budget-constrained spline-LASSO solver.

The model buys feature groups: a group either enters the fit (its owner's price
is charged once) or every coefficient in it is zero.  Each proximal step first
soft-thresholds the gradient point, then runs an exact 0-1 knapsack over groups
to decide which ones the remaining budget keeps.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import (
    check_array_2d,
    check_same_rows,
    check_vector,
    standardize_columns,
)
from .errors import ConfigError, FeasibilityError

LOSSES = ("squared", "logistic")


@dataclass(frozen=True)
class KnapsackInstance:
    """A 0-1 knapsack problem: integer weights, non-negative values."""

    weights: np.ndarray
    values: np.ndarray
    capacity: int

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.int64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        if self.weights.ndim != 1 or self.values.ndim != 1:
            raise ValueError("weights and values must be 1-D")
        if self.weights.shape != self.values.shape:
            raise ValueError("weights and values must have equal length")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative integers")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("values must be finite and non-negative")
        if int(self.capacity) < 0:
            raise ValueError("capacity must be non-negative")
        object.__setattr__(self, "capacity", int(self.capacity))

    def solve(self):
        return knapsack(self.weights, self.values, self.capacity)


def knapsack(weights, values, capacity):
    """Exact 0-1 knapsack by dynamic programming with last-to-first backtracking.

    Parameters
    ----------
    weights : array-like of int, >= 0
        Item weights.  Zero-weight items are always affordable.
    values : array-like of float, >= 0
        Item values.
    capacity : int, >= 0
        Weight budget.

    Returns
    -------
    selected : ndarray of bool
        Indicator of the chosen items.  Ties are resolved deterministically:
        the backtracking selects an item only where the table value changed,
        so among identical items the earliest index wins.
    """
    inst = KnapsackInstance(np.asarray(weights), np.asarray(values), capacity)
    w, v, cap = inst.weights, inst.values, inst.capacity
    n = w.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)

    # shrink the table: capacity beyond the total weight is never used, and a
    # common divisor of all positive weights rescales the problem exactly
    cap = min(cap, int(w.sum()))
    positive = w[w > 0]
    if positive.size:
        g = int(np.gcd.reduce(positive))
        if g > 1:
            w = w // g
            cap = cap // g

    rows = np.zeros((n + 1, cap + 1))
    for j in range(1, n + 1):
        wj = int(w[j - 1])
        prev = rows[j - 1]
        cur = prev.copy()
        if wj <= cap:
            np.maximum(cur[wj:], prev[: cap + 1 - wj] + v[j - 1], out=cur[wj:])
        rows[j] = cur

    selected = np.zeros(n, dtype=bool)
    remaining = rows[n, cap]
    wpos = cap
    for j in range(n, 0, -1):
        if remaining <= 0:
            break
        if remaining != rows[j - 1, wpos]:
            selected[j - 1] = True
            wpos -= int(w[j - 1])
            remaining = rows[j - 1, wpos]
    return selected


def soft_threshold(a, lam):
    """Elementwise sign(a) * max(|a| - lam, 0)."""
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.maximum(np.abs(a) - lam, 0.0)


def _group_layout(groups):
    groups = np.asarray(groups)
    if groups.ndim != 1:
        raise ValueError("groups must be a 1-D array of per-column group ids")
    unique_ids, inverse = np.unique(groups, return_inverse=True)
    return unique_ids, inverse


def _price_vector(unique_ids, prices):
    """Resolve per-group prices from a mapping or a dense array indexed by id."""
    if prices is None:
        return np.zeros(unique_ids.shape[0])
    if hasattr(prices, "get"):
        try:
            out = np.array([float(prices[g]) for g in unique_ids])
        except KeyError as exc:
            raise ConfigError(f"no price for group {exc.args[0]}") from exc
    else:
        arr = np.asarray(prices, dtype=float)
        if arr.shape[0] == unique_ids.shape[0] and not np.array_equal(
            unique_ids, np.arange(unique_ids.shape[0])
        ):
            out = arr.copy()
        else:
            try:
                out = arr[unique_ids]
            except IndexError as exc:
                raise ConfigError("price array does not cover all group ids") from exc
    if np.any(~np.isfinite(out)) or np.any(out < 0):
        raise ValueError("prices must be finite and non-negative")
    return out


def integer_weights(price_vector, budget, resolution):
    """Scale prices and budget to the integer grid used by the knapsack."""
    if resolution < 1 or int(resolution) != resolution:
        raise ValueError(f"resolution must be a positive integer, got {resolution}")
    weights = np.rint(np.asarray(price_vector, dtype=float) * resolution).astype(np.int64)
    capacity = int(math.floor(budget * resolution + 1e-12))
    return weights, capacity


def prox_knapsack(a, lam, groups, prices, budget, resolution=100):
    """Budget-constrained proximal operator of the group-priced L1 penalty.

    Solves  min over theta with affordable support of
    0.5 * ||theta - a||^2 + lam * ||theta||_1, where a support is affordable
    when the prices of its groups sum to at most ``budget``.

    The closed form keeps the soft-thresholded coefficients of the groups a
    knapsack selects; each group's knapsack value is the objective decrease
    0.5 * sum_m max(|a_m| - lam, 0)^2 it contributes.

    Returns
    -------
    theta : ndarray
        Thresholded coefficients, zero outside selected groups.
    selected_ids : ndarray
        Sorted ids of the groups that were kept.
    """
    a = check_vector(a, name="a")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    if not (budget >= 0):
        raise ValueError(f"budget must be >= 0, got {budget}")
    unique_ids, inverse = _group_layout(groups)
    if inverse.shape[0] != a.shape[0]:
        raise ValueError("groups must assign an id to every entry of a")
    shrunk = soft_threshold(a, lam)
    gains = np.bincount(
        inverse, weights=shrunk**2 / 2.0, minlength=unique_ids.shape[0]
    )
    price_vec = _price_vector(unique_ids, prices)
    if math.isinf(budget):
        keep = gains > 0
    else:
        weights, capacity = integer_weights(price_vec, budget, resolution)
        keep = knapsack(weights, gains, capacity)
    theta = shrunk * keep[inverse]
    return theta, unique_ids[keep]


def group_values(a, lam, groups):
    """Per-group knapsack values 0.5 * sum_m max(|a_m| - lam, 0)^2, sorted by id."""
    a = check_vector(a, name="a")
    unique_ids, inverse = _group_layout(groups)
    shrunk = soft_threshold(a, lam)
    return unique_ids, np.bincount(
        inverse, weights=shrunk**2 / 2.0, minlength=unique_ids.shape[0]
    )


def step_constant(Z, loss="squared"):
    """Majorizing curvature constant for the proximal step.

    squared:  eigmax(Z'Z) / T + 0.1
    logistic: eigmax(Z'Z) / 4 + 0.1   (the logistic Hessian is bounded by Z'Z/4)
    """
    Z = check_array_2d(Z, name="Z")
    T, p = Z.shape
    if loss not in LOSSES:
        raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")
    if T == 0 or p == 0:
        return 0.1
    gram = Z.T @ Z if p <= T else Z @ Z.T
    eigmax = max(float(np.linalg.eigvalsh(gram)[-1]), 0.0)
    if loss == "squared":
        return eigmax / T + 0.1
    return eigmax / 4.0 + 0.1


def loss_value(theta, Z, y, loss="squared", intercept=0.0):
    """squared: ||y - Z theta - intercept||^2 / (2T); logistic: sum log(1+exp(-y f))."""
    f = Z @ theta + intercept
    if loss == "squared":
        r = y - f
        return float(r @ r) / (2.0 * Z.shape[0])
    if loss == "logistic":
        return float(np.logaddexp(0.0, -y * f).sum())
    raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")


def gradient_step_vector(theta, Z, y, C, loss="squared", intercept=0.0):
    """The gradient point a = theta - (1/C) * grad L(theta).

    squared:  theta + Z'(y - Z theta - intercept) / (T C)
    logistic: theta + Z'(y * sigma(-y f)) / C  with f = Z theta + intercept
    """
    Z = check_array_2d(Z, name="Z")
    theta = check_vector(theta, name="theta", n=Z.shape[1])
    y = check_vector(y, name="y", n=Z.shape[0])
    if not C > 0:
        raise ValueError(f"C must be > 0, got {C}")
    f = Z @ theta + intercept
    if loss == "squared":
        return theta + Z.T @ (y - f) / (Z.shape[0] * C)
    if loss == "logistic":
        labels = np.unique(y)
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("logistic loss requires labels in {-1, +1}")
        return theta + Z.T @ (y * expit(-y * f)) / C
    raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")


@dataclass
class SolverConfig:
    """Knobs of the budget-constrained solver.

    lam : L1 penalty level (thresholding happens at lam itself, so the fitted
        point minimizes L + C*lam*||theta||_1 with C the step constant).
    budget : total price the fit may spend on feature groups; inf disables
        the knapsack stage.
    tol : stop when the objective decreases by at most tol in one iteration.
    max_iter : iteration cap; hitting it flags the result as not converged.
    resolution : prices are rounded to 1/resolution before the knapsack.
    loss : "squared" or "logistic".
    """

    lam: float = 1.0
    budget: float = math.inf
    tol: float = 1e-8
    max_iter: int = 500
    resolution: int = 100
    loss: str = "squared"

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if not (self.budget >= 0):
            raise ConfigError(f"budget must be >= 0, got {self.budget}")
        if not self.tol > 0:
            raise ConfigError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.resolution < 1 or int(self.resolution) != self.resolution:
            raise ConfigError(f"resolution must be a positive integer, got {self.resolution}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")


@dataclass(frozen=True)
class CoefficientSet:
    """Fitted coefficients plus everything needed to predict from raw columns.

    values live in the standardized column space; predictions apply
    (x - column_mean) / column_scale first.  Immutable once returned.
    """

    values: np.ndarray
    group_ids: np.ndarray
    intercept: float
    column_mean: np.ndarray
    column_scale: np.ndarray
    loss: str = "squared"

    def __post_init__(self):
        for name in ("values", "group_ids", "column_mean", "column_scale"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (
            self.values.shape
            == self.group_ids.shape
            == self.column_mean.shape
            == self.column_scale.shape
        ):
            raise ValueError("per-column fields must share one shape")

    @property
    def nnz(self):
        return int(np.count_nonzero(self.values))

    def used_groups(self):
        """Sorted ids of groups with at least one nonzero coefficient."""
        return np.unique(self.group_ids[self.values != 0])

    def cost(self, prices):
        """Total price of the used groups."""
        used = self.used_groups()
        price_vec = _price_vector(used, prices)
        return float(price_vec.sum())

    def linear_predictor(self, X):
        X = check_array_2d(X, name="X")
        if X.shape[1] != self.values.shape[0]:
            raise ValueError(
                f"X has {X.shape[1]} columns, coefficients expect {self.values.shape[0]}"
            )
        Z = (X - self.column_mean) / self.column_scale
        return Z @ self.values + self.intercept

    def predict(self, X, clip=None):
        """Forecasts from raw design rows; logistic sets produce probabilities."""
        f = self.linear_predictor(X)
        if self.loss == "logistic":
            return expit(f)
        if clip is not None:
            lo, hi = clip
            f = np.clip(f, lo, hi)
        return f


@dataclass
class SolveTrace:
    """Per-iteration diagnostics; index 0 is the starting point."""

    objective: np.ndarray
    loss: np.ndarray
    cost: np.ndarray

    def __len__(self):
        return self.objective.shape[0]


@dataclass
class SolveResult:
    coefficients: CoefficientSet
    trace: SolveTrace
    converged: bool
    n_iter: int
    cost: float
    selected_ids: np.ndarray
    C: float


def _dominant_columns(Z, inverse, unique_ids, price_vec):
    """Mask dropping priced groups whose columns duplicate a cheaper group's.

    Proximal updates treat bit-identical column blocks symmetrically forever,
    which would charge the buyer for the same data twice.  Among priced groups
    with identical standardized content only the cheapest (ties: lowest group
    id) stays selectable; free groups are never dropped.
    """
    keep = np.ones(Z.shape[1], dtype=bool)
    clusters = {}
    for pos, gid in enumerate(unique_ids):
        if price_vec[pos] <= 0:
            continue
        cols = np.flatnonzero(inverse == pos)
        key = Z[:, cols].tobytes()
        clusters.setdefault(key, []).append((price_vec[pos], int(gid), cols))
    for members in clusters.values():
        members.sort(key=lambda m: (m[0], m[1]))
        for _, _, cols in members[1:]:
            keep[cols] = False
    return keep


def dominant_live_mask(X, groups=None, prices=None, standardize=True):
    """Columns eligible under a finite budget, duplicates of cheaper groups off.

    Matches the reduction fit_budget_constrained applies internally; callers
    precomputing a shared step constant should restrict to these columns.
    """
    X = check_array_2d(X, name="X")
    p = X.shape[1]
    if groups is None:
        groups = np.arange(p)
    groups = np.asarray(groups)
    unique_ids, inverse = _group_layout(groups)
    price_vec = _price_vector(unique_ids, prices)
    Z = standardize_columns(X)[0] if standardize else X
    return _dominant_columns(Z, inverse, unique_ids, price_vec)


def fit_budget_constrained(X, y, groups=None, prices=None, config=None, theta0=None,
                           C=None, standardize=True):
    """Fit the budget-constrained LASSO by proximal gradient + knapsack steps.

    With a finite budget, redundant paid content is bought at most once: a
    priced group whose standardized columns are bit-identical to a cheaper
    (or equal-price, lower-id) priced group is excluded up front.

    Parameters
    ----------
    X : (T, p) array
        Design columns (typically a spline expansion).
    y : (T,) array
        Target; {-1, +1} labels for the logistic loss.
    groups : (p,) int array, optional
        Group id per column.  Default: every column its own group.
    prices : mapping or array, optional
        Price per group id.  Default: all zero (budget never binds).
    config : SolverConfig, optional
    theta0 : (p,) array, optional
        Starting point in the standardized column space; must be affordable.
    C : float, optional
        Precomputed step constant (reusable across lam / budget for one X).
    standardize : bool
        Z-score columns before fitting (the returned CoefficientSet keeps the
        transformation either way, with identity scaling when disabled).

    Returns
    -------
    SolveResult
        The trace's objective column L + C*lam*||theta||_1 is non-increasing.
    """
    config = config or SolverConfig()
    X = check_array_2d(X, name="X")
    y = check_vector(y, name="y")
    check_same_rows(X, y)
    if X.shape[0] == 0:
        raise ValueError("cannot fit on an empty design")
    T, p = X.shape
    if groups is None:
        groups = np.arange(p)
    groups = np.asarray(groups)
    if groups.shape[0] != p:
        raise ValueError("groups must assign an id to every column")
    unique_ids, inverse = _group_layout(groups)
    price_vec = _price_vector(unique_ids, prices)

    if standardize:
        Z, mean, scale = standardize_columns(X)
    else:
        Z, mean, scale = X, np.zeros(p), np.ones(p)

    if config.loss == "squared":
        intercept = float(y.mean())
        y_work = y - intercept
    else:
        labels = np.unique(y)
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("logistic loss requires labels in {-1, +1}")
        intercept = 0.0
        y_work = y

    if math.isinf(config.budget):
        weights, capacity = None, None
        live = None
    else:
        weights, capacity = integer_weights(price_vec, config.budget, config.resolution)
        live = _dominant_columns(Z, inverse, unique_ids, price_vec)
        if live.all():
            live = None

    if C is None:
        # the default step constant ignores dropped duplicate columns, so the
        # effective penalty C*lam does not grow when data is replicated
        C = step_constant(Z if live is None else Z[:, live], loss=config.loss)
    if not C > 0:
        raise ValueError(f"step constant must be > 0, got {C}")

    if theta0 is None:
        theta = np.zeros(p)
    else:
        theta = check_vector(theta0, name="theta0", n=p).copy()
        start_used = np.unique(groups[theta != 0])
        start_cost = float(_price_vector(start_used, prices).sum())
        slack = start_used.shape[0] * 0.5 / config.resolution + 1e-12
        if start_cost > config.budget + slack:
            raise FeasibilityError(
                f"starting point costs {start_cost:.6g}, budget is {config.budget:.6g}"
            )
    if live is not None:
        theta[~live] = 0.0

    def realized_cost(th):
        used = np.unique(inverse[th != 0])
        return float(price_vec[used].sum()) if used.size else 0.0

    pen = C * config.lam
    obj_hist = [loss_value(theta, Z, y_work, config.loss) + pen * np.abs(theta).sum()]
    loss_hist = [obj_hist[0] - pen * np.abs(theta).sum()]
    cost_hist = [realized_cost(theta)]
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        a = gradient_step_vector(theta, Z, y_work, C, loss=config.loss)
        if live is not None:
            a = np.where(live, a, 0.0)
        shrunk = soft_threshold(a, config.lam)
        if weights is None:
            keep_cols = np.abs(a) > config.lam
            theta = np.where(keep_cols, shrunk, 0.0)
        else:
            gains = np.bincount(
                inverse, weights=shrunk**2 / 2.0, minlength=unique_ids.shape[0]
            )
            keep = knapsack(weights, gains, capacity)
            theta = shrunk * keep[inverse]
        L = loss_value(theta, Z, y_work, config.loss)
        obj = L + pen * np.abs(theta).sum()
        obj_hist.append(obj)
        loss_hist.append(L)
        cost_hist.append(realized_cost(theta))
        if abs(obj_hist[-2] - obj_hist[-1]) <= config.tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"budget-constrained solver hit max_iter={config.max_iter} "
            f"without meeting tol={config.tol}",
            RuntimeWarning,
            stacklevel=2,
        )

    coef = CoefficientSet(
        values=theta,
        group_ids=groups.copy(),
        intercept=intercept,
        column_mean=mean,
        column_scale=scale,
        loss=config.loss,
    )
    trace = SolveTrace(
        objective=np.array(obj_hist),
        loss=np.array(loss_hist),
        cost=np.array(cost_hist),
    )
    return SolveResult(
        coefficients=coef,
        trace=trace,
        converged=converged,
        n_iter=n_iter,
        cost=cost_hist[-1],
        selected_ids=coef.used_groups(),
        C=float(C),
    )


def predict(coefficients, X, clip=None):
    """Forecasts from a CoefficientSet on raw design rows."""
    return coefficients.predict(X, clip=clip)


class BudgetConstrainedLasso(RegressorMixin, BaseEstimator):
    """Group-priced LASSO regressor with a hard spending budget.

    Each column belongs to a group with a price; a fit may only use groups
    whose prices sum to at most ``budget``.  Fitting alternates proximal
    gradient steps with an exact knapsack over groups.

    Parameters
    ----------
    lam : float, L1 penalty level.
    budget : float, spending cap; inf means unconstrained.
    groups : array-like of int per column, or None for one group per column.
    prices : mapping or array of per-group prices, or None for all-zero.
    tol, max_iter, resolution, loss : see SolverConfig.
    standardize : z-score columns before fitting.
    clip : optional (lo, hi) applied to squared-loss predictions.
    warm_start : reuse the previous fit's coefficients as the starting point.

    Attributes
    ----------
    coef_ : coefficients in the original column scale.
    intercept_ : float.
    coefficients_ : CoefficientSet in the standardized space.
    used_groups_, cost_, n_iter_, converged_, trace_, C_
    """

    def __init__(self, lam=1.0, budget=math.inf, groups=None, prices=None,
                 tol=1e-8, max_iter=500, resolution=100, loss="squared",
                 standardize=True, clip=None, warm_start=False):
        self.lam = lam
        self.budget = budget
        self.groups = groups
        self.prices = prices
        self.tol = tol
        self.max_iter = max_iter
        self.resolution = resolution
        self.loss = loss
        self.standardize = standardize
        self.clip = clip
        self.warm_start = warm_start

    def _config(self):
        return SolverConfig(
            lam=self.lam,
            budget=self.budget,
            tol=self.tol,
            max_iter=self.max_iter,
            resolution=self.resolution,
            loss=self.loss,
        )

    def fit(self, X, y, theta0=None):
        X = check_array_2d(X, name="X")
        y = check_vector(y, name="y", n=X.shape[0])
        if theta0 is None and self.warm_start and hasattr(self, "coefficients_"):
            if self.coefficients_.values.shape[0] == X.shape[1]:
                theta0 = np.asarray(self.coefficients_.values)
        result = fit_budget_constrained(
            X, y,
            groups=self.groups,
            prices=self.prices,
            config=self._config(),
            theta0=theta0,
            standardize=self.standardize,
        )
        coef = result.coefficients
        self.coefficients_ = coef
        self.coef_ = np.asarray(coef.values) / np.asarray(coef.column_scale)
        self.intercept_ = coef.intercept - float(
            (np.asarray(coef.column_mean) / np.asarray(coef.column_scale)) @ coef.values
        )
        self.used_groups_ = result.selected_ids
        self.cost_ = result.cost
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged
        self.trace_ = result.trace
        self.C_ = result.C
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coefficients_")
        return self.coefficients_.predict(X, clip=self.clip)
