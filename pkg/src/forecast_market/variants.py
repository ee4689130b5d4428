"""Alternative budget formulations: coefficient-weighted spending and
product-term models with per-feature purchase costs."""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_array_2d, check_same_rows, check_vector, standardize_columns
from .errors import ConfigError
from .solver import CoefficientSet, _group_layout, _price_vector, soft_threshold

MAX_ENUMERATED_FEATURES = 20


def solve_weighted_lasso(Z, y, col_weights, tol=1e-12, max_iter=20000, C=None):
    """Proximal gradient for min ||y - Z theta||^2 / (2T) + sum_m w_m |theta_m|.

    Textbook step scaling: thresholds at w/C with C just above the Lipschitz
    constant, so the iterates minimize the stated objective (unlike the
    budget solver's paper-scaled thresholding).
    """
    Z = check_array_2d(Z, name="Z")
    y = check_vector(y, name="y", n=Z.shape[0])
    w = np.asarray(col_weights, dtype=float)
    if w.shape != (Z.shape[1],):
        raise ValueError("col_weights must give one weight per column")
    if np.any(w < 0) or np.any(~np.isfinite(w)):
        raise ValueError("col_weights must be finite and non-negative")
    T, p = Z.shape
    if C is None:
        gram = Z.T @ Z if p <= T else Z @ Z.T
        C = float(np.linalg.eigvalsh(gram)[-1]) / T + 0.1 if min(T, p) else 0.1
    theta = np.zeros(p)
    prev_obj = np.inf
    for _ in range(max_iter):
        resid = y - Z @ theta
        a = theta + Z.T @ resid / (T * C)
        theta = np.sign(a) * np.maximum(np.abs(a) - w / C, 0.0)
        resid = y - Z @ theta
        obj = float(resid @ resid) / (2 * T) + float(w @ np.abs(theta))
        if abs(prev_obj - obj) <= tol:
            break
        prev_obj = obj
    return theta


@dataclass
class CoefficientWeightedResult:
    coefficients: CoefficientSet
    spend: float
    multiplier: float
    converged: bool


def fit_coefficient_weighted(X, y, groups=None, prices=None, lam=1.0,
                             budget=math.inf, tol=1e-8, standardize=True):
    """LASSO with spending proportional to coefficient magnitudes.

    Solves min ||y - Z theta||^2/(2T) + lam ||theta||_1 subject to
    sum_g s_g * sum_m |theta_{g,m}| <= budget, by bisecting the constraint
    multiplier nu folded into a per-column threshold lam + nu * s_g.

    The returned point is always feasible; `spend` reports the left side of
    the constraint and lands within max(tol, 1e-8*budget) of the budget
    whenever the constraint binds.
    """
    X = check_array_2d(X, name="X")
    y = check_vector(y, name="y")
    check_same_rows(X, y)
    if lam < 0:
        raise ConfigError(f"lam must be >= 0, got {lam}")
    if not (budget >= 0):
        raise ConfigError(f"budget must be >= 0, got {budget}")
    T, p = X.shape
    if groups is None:
        groups = np.arange(p)
    groups = np.asarray(groups)
    unique_ids, inverse = _group_layout(groups)
    price_vec = _price_vector(unique_ids, prices)
    col_price = price_vec[inverse]

    if standardize:
        Z, mean, scale = standardize_columns(X)
    else:
        Z, mean, scale = X, np.zeros(p), np.ones(p)
    intercept = float(y.mean())
    y_c = y - intercept

    gram = Z.T @ Z if p <= T else Z @ Z.T
    C = float(np.linalg.eigvalsh(gram)[-1]) / T + 0.1 if min(T, p) else 0.1

    def spend_of(theta):
        return float(col_price @ np.abs(theta))

    def solve_at(nu):
        return solve_weighted_lasso(Z, y_c, lam + nu * col_price, C=C)

    def pack(theta, nu, converged=True):
        coef = CoefficientSet(
            values=theta, group_ids=groups.copy(), intercept=intercept,
            column_mean=mean, column_scale=scale, loss="squared",
        )
        return CoefficientWeightedResult(coef, spend_of(theta), nu, converged)

    if budget == 0:
        # priced columns are forced to zero; free columns keep a plain fit
        free = col_price == 0
        theta = np.zeros(p)
        if np.any(free):
            theta[free] = solve_weighted_lasso(Z[:, free], y_c, np.full(int(free.sum()), lam), C=C)
        return pack(theta, math.inf)

    theta = solve_at(0.0)
    if spend_of(theta) <= budget + 1e-12:
        return pack(theta, 0.0)

    slack = max(tol, 1e-8 * budget)
    lo, hi = 0.0, 1.0
    theta_hi = solve_at(hi)
    n_doublings = 0
    while spend_of(theta_hi) > budget and n_doublings < 60:
        lo, hi = hi, hi * 4
        theta_hi = solve_at(hi)
        n_doublings += 1
    best = theta_hi
    best_nu = hi
    for _ in range(200):
        mid = (lo + hi) / 2
        theta_mid = solve_at(mid)
        s = spend_of(theta_mid)
        if s <= budget:
            best, best_nu, hi = theta_mid, mid, mid
            if s >= budget - slack:
                break
        else:
            lo = mid
        if hi - lo <= 1e-14 * max(hi, 1.0):
            break
    return pack(best, best_nu, converged=spend_of(best) <= budget + 1e-12)


@dataclass
class MixedEffectsResult:
    """OLS fit over the product terms an affordable feature set unlocks."""

    coefficients: np.ndarray
    intercept: float
    used_features: tuple
    cost: float
    train_loss: float
    n_candidates: int

    def predict(self, A):
        A = check_array_2d(A, name="A")
        return self.intercept + A @ self.coefficients


def fit_mixed_effects(A, y, term_features, feature_prices, budget):
    """Best least-squares fit over affordable subsets of priced features.

    Parameters
    ----------
    A : (T, K) array
        Precomputed model terms (powers, products of raw features).
    y : (T,) array
    term_features : sequence of iterables
        For each term, the ids of the features it is built from.  A term is
        available only when every one of its features is bought.
    feature_prices : mapping feature id -> price
        Each bought feature is paid for once, no matter how many terms use it.
    budget : float

    Enumerates feature subsets exactly (at most 20 priced features), fits OLS
    with an always-free intercept on each distinct available-term set, and
    returns the minimum-training-loss model; ties prefer the cheaper subset.
    """
    A = check_array_2d(A, name="A")
    y = check_vector(y, name="y", n=A.shape[0])
    if not (budget >= 0):
        raise ConfigError(f"budget must be >= 0, got {budget}")
    features = sorted(feature_prices)
    n = len(features)
    if n > MAX_ENUMERATED_FEATURES:
        raise ConfigError(
            f"exact enumeration supports at most {MAX_ENUMERATED_FEATURES} "
            f"priced features, got {n}"
        )
    term_sets = [frozenset(t) for t in term_features]
    if len(term_sets) != A.shape[1]:
        raise ValueError("term_features must describe every column of A")
    known = set(features)
    for k, ts in enumerate(term_sets):
        if not ts:
            raise ValueError(f"term {k} uses no features")
        missing = ts - known
        if missing:
            raise ConfigError(f"term {k} uses unpriced features {sorted(missing)}")
    prices = np.array([float(feature_prices[f]) for f in features])
    if np.any(prices < 0) or np.any(~np.isfinite(prices)):
        raise ValueError("feature prices must be finite and non-negative")
    n_terms = len(term_sets)
    if n_terms > 62:
        raise ConfigError(f"at most 62 terms supported, got {n_terms}")

    # enumerate all 2^n feature subsets as bitmasks with their total prices
    costs = np.zeros(1)
    masks = np.zeros(1, dtype=np.int64)
    for i in range(n):
        costs = np.concatenate([costs, costs + prices[i]])
        masks = np.concatenate([masks, masks | (1 << i)])
    feasible = costs <= budget + 1e-12
    fmasks, fcosts = masks[feasible], costs[feasible]

    # a term is available when the subset covers all its features; subsets
    # unlocking the same term set fit the same model, keep only the cheapest
    index_of = {f: i for i, f in enumerate(features)}
    tmasks = np.array(
        [sum(1 << index_of[f] for f in ts) for ts in term_sets], dtype=np.int64
    )
    avail_bits = (fmasks[:, None] & tmasks[None, :]) == tmasks[None, :]
    signatures = avail_bits @ (np.int64(1) << np.arange(n_terms, dtype=np.int64))
    by_cost = np.lexsort((fmasks, fcosts))
    _, first = np.unique(signatures[by_cost], return_index=True)
    candidates = by_cost[first]
    n_candidates = candidates.shape[0]

    T = A.shape[0]
    ones = np.ones((T, 1))

    def fit_terms(mask):
        cols = [k for k in range(n_terms) if mask & tmasks[k] == tmasks[k]]
        X = np.concatenate([ones, A[:, cols]], axis=1) if cols else ones
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        r = y - X @ beta
        return cols, beta, float(r @ r) / T

    best = None
    for idx in candidates:
        mask, cost = int(fmasks[idx]), float(fcosts[idx])
        cols, beta, loss = fit_terms(mask)
        used = tuple(features[i] for i in range(n) if mask >> i & 1)
        cand = (loss, cost, used, cols, beta)
        if best is None or cand[:3] < best[:3]:
            best = cand

    loss, cost, used, cols, beta = best
    coef = np.zeros(A.shape[1])
    coef[cols] = beta[1:]
    # only charge features actually needed by terms that carry weight
    carrying = frozenset().union(*[term_sets[k] for k in cols if coef[k] != 0]) if cols else frozenset()
    charged = tuple(sorted(carrying))
    charged_cost = float(sum(feature_prices[f] for f in charged))
    return MixedEffectsResult(
        coefficients=coef,
        intercept=float(beta[0]),
        used_features=charged,
        cost=charged_cost,
        train_loss=loss,
        n_candidates=n_candidates,
    )
