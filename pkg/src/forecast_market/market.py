"""Forecast market sessions: gains, bid-gain tables, pricing, and settlement.

A session runs the closed phase for each buyer: fit a local model, build one
bid-gain table per task (or per horizon when the task is treated as
non-stationary), choose the price the buyer's value function supports, collect
seller revenues from the groups the chosen model actually uses, and deliver
forecasts over the trailing delivery window.
"""

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np
from joblib import Parallel, delayed

from ._validation import check_array_2d, check_vector, standardize_columns
from .dataset import HorizonTable, snapshot_table
from .errors import (
    BoundsError,
    ConfigError,
    EstimationError,
)
from .solver import (
    SolverConfig,
    dominant_live_mask,
    fit_budget_constrained,
    step_constant,
)
from .splines import FeatureMeta, SplineGroupExpander, expand_design, partial_correlation_mask
from .variants import solve_weighted_lasso

__all__ = [
    "ValueFunction",
    "gain",
    "BidGainTable",
    "PriceDecision",
    "set_price",
    "revenues",
    "SessionConfig",
    "SettlementReport",
    "build_bgt",
    "run_session",
    "LrmResult",
    "lrm_benchmark",
]


# ---------------------------------------------------------------------------
# value functions


class ValueFunction:
    """Maximum price a buyer will pay as a function of forecast gain (in %).

    Kinds: ``constant(c)``, ``linear(slope)``, ``rational(num, pole, offset)``
    evaluating num/(pole - g) + offset below the pole (and +inf at or above
    it, where willingness to pay is unbounded), and ``tabulated`` with linear
    interpolation between (gain, bid) points, clamped at the ends.
    """

    def __init__(self, kind, **params):
        if kind not in ("constant", "linear", "rational", "tabulated"):
            raise ConfigError(f"unknown value-function kind {kind!r}")
        self.kind = kind
        self.params = dict(params)
        if kind == "constant":
            if float(params["value"]) < 0:
                raise ConfigError("constant value function must be >= 0")
        elif kind == "linear":
            if float(params["slope"]) < 0:
                raise ConfigError("linear value function needs slope >= 0")
        elif kind == "rational":
            if not float(params["num"]) > 0:
                raise ConfigError("rational value function needs num > 0")
            if not float(params["pole"]) > 0:
                raise ConfigError("rational value function needs pole > 0")
        else:
            pts = sorted((float(g), float(b)) for g, b in params["points"])
            if not pts:
                raise ConfigError("tabulated value function needs points")
            gains = [g for g, _ in pts]
            if len(set(gains)) != len(gains):
                raise ConfigError("tabulated gains must be distinct")
            self.params["points"] = tuple(pts)

    @classmethod
    def constant(cls, value):
        return cls("constant", value=float(value))

    @classmethod
    def linear(cls, slope):
        return cls("linear", slope=float(slope))

    @classmethod
    def rational(cls, num, pole, offset=0.0):
        return cls("rational", num=float(num), pole=float(pole), offset=float(offset))

    @classmethod
    def tabulated(cls, points):
        return cls("tabulated", points=tuple(points))

    _NAMED = {
        "vf1": ("constant", {"value": 100.0}),
        "vf2": ("constant", {"value": 10.0}),
        "vf3": ("linear", {"slope": 1.0}),
        "vf4": ("rational", {"num": 40.0, "pole": 30.0, "offset": -1.1}),
    }

    @classmethod
    def named(cls, name):
        """One of the four canonical profiles: vf1=100, vf2=10, vf3(g)=g,
        vf4(g)=40/(30-g)-1.1."""
        try:
            kind, params = cls._NAMED[name.lower()]
        except KeyError:
            raise ConfigError(f"unknown value function name {name!r}") from None
        return cls(kind, **params)

    @classmethod
    def parse(cls, spec):
        """Build from a name string or a {'kind': ..., ...} mapping."""
        if isinstance(spec, cls):
            return spec
        if isinstance(spec, str):
            return cls.named(spec)
        if isinstance(spec, Mapping):
            data = dict(spec)
            kind = data.pop("kind", None)
            if kind is None:
                raise ConfigError("value-function mapping needs a 'kind' key")
            if kind == "tabulated" and "points" in data:
                data["points"] = tuple((p[0], p[1]) for p in data["points"])
            return cls(kind, **data)
        raise ConfigError(f"cannot parse value function from {type(spec).__name__}")

    def to_config(self):
        if self.kind == "tabulated":
            return {"kind": "tabulated", "points": [list(p) for p in self.params["points"]]}
        return {"kind": self.kind, **self.params}

    def __call__(self, g):
        g = float(g)
        if self.kind == "constant":
            return self.params["value"]
        if self.kind == "linear":
            return self.params["slope"] * g
        if self.kind == "rational":
            num, pole, offset = (
                self.params["num"],
                self.params["pole"],
                self.params["offset"],
            )
            if g >= pole:
                return math.inf
            return num / (pole - g) + offset
        pts = self.params["points"]
        xs = np.array([p[0] for p in pts])
        ys = np.array([p[1] for p in pts])
        return float(np.interp(g, xs, ys))

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"ValueFunction.{self.kind}({inner})"


def gain(local_loss, market_loss):
    """Percentage loss improvement, clamped at zero.

    Returns 100 * (local_loss - market_loss)_+ / local_loss.
    """
    local_loss = float(local_loss)
    market_loss = float(market_loss)
    if not local_loss > 0:
        raise BoundsError(f"local loss must be > 0, got {local_loss}")
    if market_loss < 0:
        raise BoundsError(f"market loss must be >= 0, got {market_loss}")
    return 100.0 * max(local_loss - market_loss, 0.0) / local_loss


def _safe_gain(local_loss, market_loss):
    # a perfect local model leaves no room for improvement
    if not local_loss > 0:
        return 0.0
    return gain(local_loss, market_loss)


# ---------------------------------------------------------------------------
# bid-gain tables and pricing


@dataclass(frozen=True)
class BidGainTable:
    """Estimated gain and fitted model per grid bid, for one task or horizon."""

    bids: np.ndarray
    gains: np.ndarray
    models: tuple
    horizon: int = 0  # 0 = whole task

    def __post_init__(self):
        bids = np.asarray(self.bids, dtype=float)
        gains = np.asarray(self.gains, dtype=float)
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "models", tuple(self.models))
        if bids.ndim != 1 or bids.shape != gains.shape:
            raise ConfigError("bids and gains must be matching vectors")
        if bids.size == 0:
            raise ConfigError("bid grid must be non-empty")
        if bids.size > 1 and not np.all(np.diff(bids) > 0):
            raise ConfigError("bids must be strictly increasing")
        if not np.all(np.isfinite(gains)) or np.any(gains < 0):
            raise BoundsError("gains must be finite and >= 0")
        if self.models and len(self.models) != bids.size:
            raise ConfigError("one model per bid expected")

    def as_rows(self):
        """(bid, gain) pairs for tabular export."""
        return [(float(b), float(g)) for b, g in zip(self.bids, self.gains)]


@dataclass(frozen=True)
class PriceDecision:
    """Outcome of pricing one table: chosen bid, its gain, and feasibility."""

    price: float
    gain: float
    index: int = -1
    sale: bool = False


def set_price(table, vf):
    """Choose the forecast price a value function supports.

    Feasible bids satisfy b <= vf(gain(b)); among them the cheapest bid
    achieving the maximal gain wins.  An empty feasible set is a no-sale
    (price 0).
    """
    limits = np.array([vf(g) for g in table.gains], dtype=float)
    feasible = table.bids <= limits
    if not feasible.any():
        return PriceDecision(price=0.0, gain=0.0, index=-1, sale=False)
    best = table.gains[feasible].max()
    idx = int(np.flatnonzero(feasible & (table.gains == best))[0])
    return PriceDecision(
        price=float(table.bids[idx]), gain=float(best), index=idx, sale=True
    )


def revenues(coefficients, design, buyer=None):
    """Per-seller revenue: the posted price of every group the fit uses.

    A group is used when any of its coefficients is nonzero.  Every owner in
    the design (except the buyer) appears in the result, zero when unused.
    """
    used = {int(g) for g in coefficients.used_groups()}
    out = {}
    for info in design.groups:
        if buyer is not None and info.owner == buyer:
            continue
        out.setdefault(info.owner, 0.0)
        if info.group_id in used:
            out[info.owner] += info.price
    return out


# ---------------------------------------------------------------------------
# session configuration


_ESTIMATORS = ("auto", "validation-split", "k-similar")
_STATIONARITY = ("stationary", "nonstationary", "heuristic")


@dataclass(frozen=True)
class SessionConfig:
    """Everything a market session needs beyond the data frame.

    ``prices`` may be a scalar (uniform seller price), a mapping from owner
    id to a scalar or {feature name: price}, or a mapping keyed by
    (owner, feature name).  Lagged target features are named
    ``target_lag<offset>``.  A buyer's own columns are always free.
    """

    value_functions: object
    prices: object = 0.0
    bid_min: float = 0.0
    bid_step: float = 1.0
    bid_max: float = None
    estimator: str = "auto"
    k: int = 10
    stationarity: str = "heuristic"
    schedule: object = None
    degree: int = 3
    knots: int = 5
    lam: float = 0.1
    alpha: float = 0.05
    validation_fraction: float = 0.25
    delivery_fraction: float = 0.2
    tol: float = 1e-8
    max_iter: int = 500
    resolution: int = 100
    buyers: tuple = None
    jobs: int = 1

    def __post_init__(self):
        if self.estimator not in _ESTIMATORS:
            raise ConfigError(f"estimator must be one of {_ESTIMATORS}")
        if self.stationarity not in _STATIONARITY:
            raise ConfigError(f"stationarity must be one of {_STATIONARITY}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.bid_step > 0:
            raise ConfigError(f"bid step must be > 0, got {self.bid_step}")
        if self.bid_min < 0:
            raise ConfigError(f"bids must be >= 0, got bid_min={self.bid_min}")
        if self.bid_max is not None and self.bid_max < self.bid_min:
            raise ConfigError("bid grid is empty (bid_max < bid_min)")
        for name in ("validation_fraction", "delivery_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.buyers is not None:
            object.__setattr__(self, "buyers", tuple(self.buyers))

    def value_function_for(self, buyer):
        vfs = self.value_functions
        # a mapping without a 'kind' key assigns value functions per buyer id;
        # anything else (name, spec mapping, instance) applies to every buyer
        if isinstance(vfs, Mapping) and "kind" not in vfs:
            if buyer not in vfs:
                raise ConfigError(f"buyer {buyer} has no value function")
            return ValueFunction.parse(vfs[buyer])
        return ValueFunction.parse(vfs)

    def price_for(self, owner, name):
        return resolve_price(self.prices, owner, name)


def resolve_price(prices, owner, name):
    """Price of one feature under a scalar, per-agent, or per-feature quote."""
    if isinstance(prices, (int, float)):
        return float(prices)
    if isinstance(prices, Mapping):
        if (owner, name) in prices:
            return float(prices[(owner, name)])
        if owner in prices:
            v = prices[owner]
            if isinstance(v, Mapping):
                if name in v:
                    return float(v[name])
                raise ConfigError(
                    f"agent {owner} has no price for feature {name!r}"
                )
            return float(v)
    raise ConfigError(f"no price for feature {name!r} of agent {owner}")


# ---------------------------------------------------------------------------
# task preparation


def _common_lagged_table(frame, schedule):
    """One full-resolution design usable at every horizon 1..H.

    Only the last horizon's lag offsets appear, which are available at every
    shorter horizon too, so a single model per bid can serve all horizons.
    """
    H = schedule.horizons
    offsets = tuple(schedule.offsets[H - 1])
    max_off = max(offsets, default=0)
    ts = frame.timestamps
    rows = np.arange(max_off, len(ts))
    if rows.size == 0:
        raise BoundsError("lag offsets leave no complete rows")
    targeted = sorted(a.agent_id for a in frame.agents if a.has_target)
    blocks, metas = [], []
    for a in frame.agents:
        X = frame.exogenous.get(a.agent_id)
        if X is not None and X.shape[1]:
            blocks.append(X[rows])
            metas.extend(
                FeatureMeta(owner=a.agent_id, name=name, kind="exog")
                for name in a.feature_names
            )
    for aid in targeted:
        y = frame.targets[aid]
        for o in offsets:
            blocks.append(y[rows - o][:, None])
            metas.append(FeatureMeta(owner=aid, name=f"target_lag{o}", kind="lag"))
    features = (
        np.concatenate(blocks, axis=1) if blocks else np.zeros((rows.size, 0))
    )
    return HorizonTable(
        horizon=H,
        launch_times=ts[rows],
        target_times=ts[rows],
        features=features,
        feature_meta=metas,
        targets={aid: frame.targets[aid][rows] for aid in targeted},
    )


def _looks_stationary(y):
    # halves of the training window must agree on mean and variance within 10%
    half = y.shape[0] // 2
    a, b = y[:half], y[half:]

    def close(u, v):
        return abs(u - v) <= 0.1 * max(abs(u), abs(v), 1e-12)

    return close(float(a.mean()), float(b.mean())) and close(
        float(a.var()), float(b.var())
    )


def _rmse(pred, actual):
    d = np.asarray(pred, dtype=float) - np.asarray(actual, dtype=float)
    return float(np.sqrt(np.mean(d * d)))


@dataclass(frozen=True)
class _MeanModel:
    """Fallback local model for a buyer with no usable own columns."""

    value: float

    def predict(self, X, clip=None):
        out = np.full(np.asarray(X).shape[0], self.value)
        if clip is not None:
            out = np.clip(out, clip[0], clip[1])
        return out


@dataclass
class _TaskContext:
    """Everything the closed phase derives for one buyer before pricing."""

    buyer: int
    stationary: bool
    estimator: str
    table: object
    design: object
    matrix: np.ndarray  # active columns, all rows
    col_gids: np.ndarray
    group_prices: dict
    own_pos: np.ndarray  # positions of the buyer's columns within matrix
    y: np.ndarray
    fit_rows: np.ndarray
    val_rows: np.ndarray
    window_rows: np.ndarray
    clip: tuple
    C: float
    local: object
    local_val_loss: float
    bids: np.ndarray
    models: tuple
    horizons: int

    def local_predict(self, rows):
        return self.local.predict(self.matrix[rows][:, self.own_pos], clip=self.clip)


def _prepare_task(frame, buyer, config):
    if buyer not in frame.targets:
        raise ConfigError(f"agent {buyer} has no target to forecast")
    y_full = frame.targets[buyer]
    n_total = y_full.shape[0]
    window_n = max(1, int(round(config.delivery_fraction * n_total)))
    train_n = n_total - window_n
    if train_n < 10:
        raise BoundsError(
            f"buyer {buyer}: {train_n} training rows after the delivery window"
        )
    if np.ptp(y_full[:train_n]) == 0:
        raise EstimationError(
            f"buyer {buyer}: target is constant over the training window"
        )

    if config.stationarity == "stationary":
        stationary = True
    elif config.stationarity == "nonstationary":
        stationary = False
    else:
        stationary = _looks_stationary(y_full[:train_n])
    if not stationary and config.schedule is None:
        stationary = True  # no lag schedule, so per-horizon tables cannot exist
    estimator = config.estimator
    if estimator == "auto":
        estimator = "validation-split" if stationary else "k-similar"

    if stationary:
        table = snapshot_table(frame)
        horizons = 1
    else:
        table = _common_lagged_table(frame, config.schedule)
        horizons = config.schedule.horizons

    n = table.n_rows
    y = table.targets[buyer]
    window_n = max(1, int(round(config.delivery_fraction * n)))
    train_n = n - window_n
    window_rows = np.arange(train_n, n)
    val_n = max(1, int(round(config.validation_fraction * train_n)))
    fit_n = train_n - val_n
    if fit_n < 2:
        raise EstimationError(
            f"buyer {buyer}: validation split leaves {fit_n} fitting rows"
        )
    fit_rows = np.arange(fit_n)
    val_rows = np.arange(fit_n, train_n)

    metas = [
        replace(
            m,
            price=0.0 if m.owner == buyer else config.price_for(m.owner, m.name),
        )
        for m in table.feature_meta
    ]
    expander = SplineGroupExpander(degree=config.degree, n_knots=config.knots)
    expander.fit(table.features[fit_rows])
    design = expand_design(table.features, metas, expander)

    active = design.active_columns()
    own = np.intersect1d(design.columns_of_owner(buyer), active)
    candidates = np.setdiff1d(active, own)
    keep, _ = partial_correlation_mask(
        design.matrix[:train_n],
        y[:train_n],
        config.alpha,
        control_columns=own,
        candidate_columns=candidates,
    )
    design = design.deactivate_columns(candidates[~keep[candidates]])

    matrix, col_gids, group_prices, active_cols = design.solver_view()
    if matrix.shape[1] == 0:
        raise EstimationError(f"buyer {buyer}: no usable design columns")
    clip = (0.0, 1.0) if frame.normalized else None
    # one step constant serves every bid; duplicates a cheaper seller already
    # covers are excluded so replicated data cannot inflate the penalty
    live = dominant_live_mask(matrix[fit_rows], col_gids, group_prices)
    Z_fit, _, _ = standardize_columns(matrix[fit_rows])
    C = step_constant(Z_fit[:, live])

    def fit_at(budget, theta0=None):
        cfg = SolverConfig(
            lam=config.lam,
            budget=budget,
            tol=config.tol,
            max_iter=config.max_iter,
            resolution=config.resolution,
        )
        return fit_budget_constrained(
            matrix[fit_rows],
            y[fit_rows],
            groups=col_gids,
            prices=group_prices,
            config=cfg,
            theta0=theta0,
            C=C,
        )

    # the local baseline uses the buyer's own columns only, whatever sellers
    # charge; it anchors every gain in the tables
    own_pos = np.flatnonzero(np.isin(active_cols, own))
    if own_pos.size:
        local_cfg = SolverConfig(
            lam=config.lam,
            budget=math.inf,
            tol=config.tol,
            max_iter=config.max_iter,
            resolution=config.resolution,
        )
        local = fit_budget_constrained(
            matrix[fit_rows][:, own_pos],
            y[fit_rows],
            groups=col_gids[own_pos],
            config=local_cfg,
        ).coefficients
    else:
        local = _MeanModel(value=float(y[fit_rows].mean()))
    local_val_loss = _rmse(
        local.predict(matrix[val_rows][:, own_pos], clip=clip), y[val_rows]
    )

    if config.bid_max is None:
        total = sum(
            g.price for g in design.active_groups() if g.price > 0
        )
        bid_max = max(total, config.bid_min)
    else:
        bid_max = config.bid_max
    n_bids = int(math.floor((bid_max - config.bid_min) / config.bid_step + 1e-9)) + 1
    bids = config.bid_min + config.bid_step * np.arange(n_bids)

    models = []
    theta = None
    for b in bids:
        res = fit_at(float(b), theta0=theta)
        theta = res.coefficients.values
        models.append(res.coefficients)

    return _TaskContext(
        buyer=buyer,
        stationary=stationary,
        estimator=estimator,
        table=table,
        design=design,
        matrix=matrix,
        col_gids=col_gids,
        group_prices=group_prices,
        own_pos=own_pos,
        y=y,
        fit_rows=fit_rows,
        val_rows=val_rows,
        window_rows=window_rows,
        clip=clip,
        C=C,
        local=local,
        local_val_loss=local_val_loss,
        bids=bids,
        models=tuple(models),
        horizons=horizons,
    )


def _validation_gains(ctx):
    rows = ctx.val_rows
    if rows.size == 0:
        raise EstimationError("empty validation set")
    actual = ctx.y[rows]
    gains = [
        _safe_gain(
            ctx.local_val_loss,
            _rmse(m.predict(ctx.matrix[rows], clip=ctx.clip), actual),
        )
        for m in ctx.models
    ]
    return np.array(gains)


def _similar_rows(ctx, query_row, k):
    pool = ctx.val_rows
    if pool.size == 0:
        raise EstimationError("empty validation set for similarity search")
    _, mean, scale = standardize_columns(ctx.matrix[ctx.fit_rows])
    Zp = (ctx.matrix[pool] - mean) / scale
    zq = (ctx.matrix[query_row] - mean) / scale
    d = np.sqrt(((Zp - zq) ** 2).sum(axis=1))
    order = np.argsort(d, kind="stable")
    return pool[order[: min(k, pool.size)]]


def _similar_gains(ctx, query_row, k):
    rows = _similar_rows(ctx, query_row, k)
    actual = ctx.y[rows]
    local_loss = _rmse(ctx.local_predict(rows), actual)
    gains = [
        _safe_gain(
            local_loss,
            _rmse(m.predict(ctx.matrix[rows], clip=ctx.clip), actual),
        )
        for m in ctx.models
    ]
    return np.array(gains)


def _build_tables(ctx, config):
    if ctx.stationary or ctx.horizons == 1:
        if ctx.estimator == "k-similar":
            gains = _similar_gains(ctx, int(ctx.window_rows[0]), config.k)
        else:
            gains = _validation_gains(ctx)
        return [BidGainTable(ctx.bids, gains, ctx.models, horizon=0)]
    tables = []
    for h in range(1, ctx.horizons + 1):
        if ctx.estimator == "k-similar":
            pos = min(h - 1, ctx.window_rows.size - 1)
            gains = _similar_gains(ctx, int(ctx.window_rows[pos]), config.k)
        else:
            gains = _validation_gains(ctx)
        tables.append(BidGainTable(ctx.bids, gains, ctx.models, horizon=h))
    return tables


def build_bgt(frame, buyer, config):
    """Bid-gain tables for one buyer: a single whole-task table under the
    stationary branch, one per horizon otherwise."""
    ctx = _prepare_task(frame, buyer, config)
    return _build_tables(ctx, config)


# ---------------------------------------------------------------------------
# settlement


@dataclass
class SettlementReport:
    """Settled outcome of one buyer's task."""

    buyer: int
    payment: float
    revenues: dict
    chosen_bids: tuple
    gains: tuple
    sale: tuple
    market_used: bool
    stationary: bool
    estimator: str
    forecasts: np.ndarray
    local_forecasts: np.ndarray
    target: np.ndarray
    target_times: object
    horizon_tags: np.ndarray
    observed_gain: float
    per_horizon: tuple
    tables: tuple

    def balance_gap(self):
        """payment minus the sum of revenues; zero by construction."""
        return self.payment - sum(self.revenues.values())


def _settle_task(frame, buyer, config):
    ctx = _prepare_task(frame, buyer, config)
    tables = _build_tables(ctx, config)
    vf = config.value_function_for(buyer)
    decisions = [set_price(t, vf) for t in tables]

    # every seller owning data in the task appears, zero until groups are used
    rev = {}
    for info in ctx.design.groups:
        if info.owner != buyer:
            rev.setdefault(info.owner, 0.0)
    per_horizon = []
    chosen_models = []
    for table, dec in zip(tables, decisions):
        model = table.models[dec.index] if dec.sale else None
        paid = 0.0
        if dec.sale and dec.price > 0:
            part = revenues(model, ctx.design, buyer=buyer)
            for owner, amount in part.items():
                rev[owner] = rev.get(owner, 0.0) + amount
            paid = sum(part.values())
        chosen_models.append(model)
        per_horizon.append(
            {
                "horizon": table.horizon,
                "bid": dec.price,
                "gain": dec.gain,
                "sale": dec.sale,
                "payment": paid,
            }
        )
    payment = sum(rev.values())

    window = ctx.window_rows
    local_forecasts = ctx.local_predict(window)
    forecasts = local_forecasts.copy()
    H = len(tables)
    tags = (np.arange(window.size) % H) + 1 if not ctx.stationary and H > 1 else np.ones(window.size, dtype=int)
    market_used = payment > 0
    if market_used:
        for i, (dec, model) in enumerate(zip(decisions, chosen_models)):
            if model is None or not (dec.sale and per_horizon[i]["payment"] > 0):
                continue
            mask = tags == (i + 1) if H > 1 else np.ones(window.size, dtype=bool)
            rows = window[mask]
            forecasts[mask] = model.predict(ctx.matrix[rows], clip=ctx.clip)

    actual = ctx.y[window]
    observed = _safe_gain(_rmse(local_forecasts, actual), _rmse(forecasts, actual))

    return SettlementReport(
        buyer=buyer,
        payment=payment,
        revenues=rev,
        chosen_bids=tuple(d.price for d in decisions),
        gains=tuple(d.gain for d in decisions),
        sale=tuple(d.sale for d in decisions),
        market_used=market_used,
        stationary=ctx.stationary,
        estimator=ctx.estimator,
        forecasts=forecasts,
        local_forecasts=local_forecasts,
        target=actual,
        target_times=ctx.table.target_times[window],
        horizon_tags=tags,
        observed_gain=observed,
        per_horizon=tuple(per_horizon) if not ctx.stationary else (),
        tables=tuple(tables),
    )


def run_session(frame, config):
    """Run the closed phase for every buyer and return settled reports.

    Buyers default to all agents with a target; each must have a value
    function.  Tasks are independent and run in parallel when jobs != 1.
    """
    if config.buyers is not None:
        buyers = list(config.buyers)
        for b in buyers:
            if b not in frame.targets:
                raise ConfigError(f"buyer {b} has no target in the frame")
    else:
        buyers = sorted(frame.targets.keys())
    if not buyers:
        raise ConfigError("session has no buyers")
    for b in buyers:
        config.value_function_for(b)  # fail early with a clear message

    if config.jobs == 1 or len(buyers) == 1:
        reports = [_settle_task(frame, b, config) for b in buyers]
    else:
        reports = Parallel(n_jobs=config.jobs)(
            delayed(_settle_task)(frame, b, config) for b in buyers
        )
    for r in reports:
        if r.balance_gap() != 0.0:
            raise EstimationError(
                f"buyer {r.buyer}: payment does not match total revenue"
            )
    return reports


# ---------------------------------------------------------------------------
# weighted-L1 benchmark market


@dataclass(frozen=True)
class LrmResult:
    """Outcome of the reservation-weighted LASSO benchmark."""

    coefficients: np.ndarray
    intercept: float
    payment: float
    revenues: dict

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return X @ self.coefficients + self.intercept


def lrm_benchmark(X, y, owners, reservations, buyer, lam=1.0, tol=1e-10,
                  max_iter=20000):
    """Benchmark market built on a reservation-weighted LASSO.

    Solves min (1/T)||y - Xb||^2 + lam * sum_j u_j |b_j| with the buyer's own
    columns unpenalized and unpaid.  Each seller earns sum_k |u_k b_k| over
    its columns; the payment is the total over sellers.  Exact duplicate
    columns with equal reservation have their weight consolidated onto the
    first column, so redundant data is paid for at most once.
    """
    X = check_array_2d(X, name="X")
    y = check_vector(y, name="y", n=X.shape[0])
    p = X.shape[1]
    owners = np.asarray(owners)
    if owners.shape[0] != p:
        raise ConfigError("owners must label every column")
    u = check_vector(reservations, name="reservations", n=p)
    if np.any(u < 0):
        raise BoundsError("reservations must be >= 0")
    u = np.where(owners == buyer, 0.0, u)

    mean = X.mean(axis=0) if p else np.zeros(0)
    Xc = X - mean
    y_mean = float(y.mean())

    weights = lam * u / 2.0  # (1/T)||.||^2 scaled to the (1/(2T)) convention
    beta = solve_weighted_lasso(Xc, y - y_mean, weights, tol=tol, max_iter=max_iter)

    # symmetric solutions on duplicate columns collapse onto the first copy
    seen = {}
    for j in range(p):
        key = (Xc[:, j].tobytes(), float(weights[j]))
        if key in seen:
            beta[seen[key]] += beta[j]
            beta[j] = 0.0
        else:
            seen[key] = j

    rev = {}
    for j in range(p):
        owner = owners[j]
        if owner == buyer:
            continue
        rev.setdefault(owner, 0.0)
        rev[owner] += abs(u[j] * beta[j])
    payment = sum(rev.values())
    intercept = y_mean - float(mean @ beta)
    return LrmResult(
        coefficients=beta, intercept=intercept, payment=payment, revenues=rev
    )
