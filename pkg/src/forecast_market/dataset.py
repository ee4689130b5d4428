"""Market data handling: aligned multi-agent frames, synthetic generators,
lagged per-horizon design tables, and chronological split policies."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ._validation import check_vector
from .errors import BoundsError, ConfigError, IntegrityError, SchemaError
from .splines import FeatureMeta

EPOCH = pd.Timestamp("2013-01-01 00:00")


@dataclass(frozen=True)
class AgentSchema:
    """One market participant: its feature columns and normalization capacity."""

    agent_id: int
    feature_names: tuple = ()
    capacity: float = 1.0
    has_target: bool = True

    def __post_init__(self):
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if len(set(self.feature_names)) != len(self.feature_names):
            raise SchemaError(f"agent {self.agent_id} repeats feature names")
        if not self.capacity > 0:
            raise SchemaError(
                f"agent {self.agent_id} capacity must be > 0, got {self.capacity}"
            )

    @property
    def n_features(self):
        return len(self.feature_names)


@dataclass
class MarketFrame:
    """Hourly-aligned targets and exogenous features for every agent.

    targets maps agent id to its series; exogenous maps agent id to a
    (T, n_features) block.  All series share the timestamp index.  When
    ``normalized`` is set, targets were divided by capacity and must lie
    in [0, 1].
    """

    timestamps: pd.DatetimeIndex
    agents: tuple
    targets: dict
    exogenous: dict
    normalized: bool = False

    def __post_init__(self):
        self.agents = tuple(self.agents)
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise SchemaError("agent ids must be unique")
        T = len(self.timestamps)
        if T == 0:
            raise IntegrityError("frame has no rows")
        if self.timestamps.has_duplicates:
            raise IntegrityError("duplicate timestamps")
        if not self.timestamps.is_monotonic_increasing:
            raise IntegrityError("timestamps must be sorted")
        by_id = {a.agent_id: a for a in self.agents}
        for aid, y in self.targets.items():
            if aid not in by_id:
                raise SchemaError(f"target for unknown agent {aid}")
            y = check_vector(y, name=f"target[{aid}]", n=T)
            self.targets[aid] = y
            if self.normalized and (y.min() < 0 or y.max() > 1):
                raise BoundsError(
                    f"normalized target of agent {aid} leaves [0, 1]"
                )
        for aid, X in self.exogenous.items():
            schema = by_id.get(aid)
            if schema is None:
                raise SchemaError(f"features for unknown agent {aid}")
            X = np.asarray(X, dtype=float)
            if X.shape != (T, schema.n_features):
                raise SchemaError(
                    f"agent {aid} features must be (T, {schema.n_features}), got {X.shape}"
                )
            if X.size and not np.all(np.isfinite(X)):
                raise IntegrityError(f"agent {aid} features contain non-finite values")
            self.exogenous[aid] = X
        for a in self.agents:
            if a.has_target and a.agent_id not in self.targets:
                raise SchemaError(f"agent {a.agent_id} declares a target but has none")

    @property
    def n_rows(self):
        return len(self.timestamps)

    def agent(self, agent_id):
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(f"no agent {agent_id}")


@dataclass(frozen=True)
class LagSchedule:
    """Which target lags feed each forecast horizon.

    offsets[h-1] lists, for horizon h, the lag distances in hours behind the
    target time; an offset o uses the value at (launch + h - o).  Offsets must
    be >= h so only values up to the launch are read.
    """

    offsets: tuple

    def __post_init__(self):
        norm = tuple(tuple(int(o) for o in row) for row in self.offsets)
        object.__setattr__(self, "offsets", norm)
        for h, row in enumerate(norm, start=1):
            for o in row:
                if o < h:
                    raise ConfigError(
                        f"horizon {h} lag offset {o} would read past the launch"
                    )
            if len(set(row)) != len(row):
                raise ConfigError(f"horizon {h} repeats lag offsets")

    @property
    def horizons(self):
        return len(self.offsets)

    @property
    def max_offset(self):
        return max((max(row) for row in self.offsets if row), default=0)

    @classmethod
    def day_ahead(cls, horizons, max_lag=6):
        """Lags {h..max_lag} hours behind the target, shrinking with horizon.

        The first horizon sees max_lag lagged values ending at the launch
        hour; each further horizon loses the newest one; horizons beyond
        max_lag carry no lags.
        """
        return cls(
            tuple(
                tuple(range(h, max_lag + 1)) if h <= max_lag else ()
                for h in range(1, horizons + 1)
            )
        )

    @classmethod
    def none(cls, horizons):
        return cls(tuple(() for _ in range(horizons)))


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator layout for the single-buyer synthetic market.

    Feature ids are 1-based.  The buyer owns ``buyer_features``; every other
    feature belongs to a one-feature seller whose agent id is the feature id.
    ``redundant`` lists (source, copy) pairs copied verbatim.  The target is
    built from the ``active`` features with coefficients drawn uniformly from
    [0.5, 2.0]: linear link y = X beta + eps, exp link y = exp(0.05 X beta) + eps.
    """

    n_features: int = 100
    buyer_features: tuple = tuple(range(1, 11))
    active: tuple = (3, 7, 12, 21, 31, 37, 48, 51, 63, 90)
    redundant: tuple = ((3, 73), (37, 74))
    link: str = "linear"
    noise_sd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "buyer_features", tuple(self.buyer_features))
        object.__setattr__(self, "active", tuple(self.active))
        object.__setattr__(self, "redundant", tuple(tuple(p) for p in self.redundant))
        if self.n_features < 1:
            raise ConfigError("n_features must be >= 1")
        if not self.active:
            raise ConfigError("active feature set must be non-empty")
        all_ids = set(range(1, self.n_features + 1))
        for name, ids in (
            ("buyer_features", self.buyer_features),
            ("active", self.active),
        ):
            if not set(ids) <= all_ids:
                raise ConfigError(f"{name} contains ids outside 1..{self.n_features}")
        for src, copy in self.redundant:
            if not {src, copy} <= all_ids:
                raise ConfigError("redundant pair outside feature range")
            if copy in self.active:
                raise ConfigError("a redundant copy cannot itself be active")
        if self.link not in ("linear", "exp"):
            raise ConfigError(f"link must be 'linear' or 'exp', got {self.link!r}")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")


def synthesize(spec, T, seed=0):
    """Draw a synthetic MarketFrame and its generating truth.

    Returns (frame, truth) where truth records the coefficients, active set,
    redundant pairs and link.  Deterministic in (spec, T, seed).
    """
    if T < 1:
        raise ConfigError("T must be >= 1")
    if T < 2 * spec.n_features:
        import warnings

        warnings.warn(
            f"T={T} is small for {spec.n_features} features; fits may be unstable",
            UserWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    X = rng.normal(size=(T, spec.n_features))
    for src, copy in spec.redundant:
        X[:, copy - 1] = X[:, src - 1]
    beta = {fid: float(rng.uniform(0.5, 2.0)) for fid in spec.active}
    signal = sum(beta[fid] * X[:, fid - 1] for fid in spec.active)
    eps = rng.normal(size=T) * spec.noise_sd
    if spec.link == "linear":
        y = signal + eps
    else:
        y = np.exp(0.05 * signal) + eps

    buyer = AgentSchema(
        agent_id=0,
        feature_names=tuple(f"x{fid}" for fid in spec.buyer_features),
        has_target=True,
    )
    agents = [buyer]
    exogenous = {0: X[:, [fid - 1 for fid in spec.buyer_features]]}
    targets = {0: y}
    for fid in range(1, spec.n_features + 1):
        if fid in spec.buyer_features:
            continue
        agents.append(
            AgentSchema(agent_id=fid, feature_names=(f"x{fid}",), has_target=False)
        )
        exogenous[fid] = X[:, [fid - 1]]

    frame = MarketFrame(
        timestamps=pd.date_range(EPOCH, periods=T, freq="h"),
        agents=tuple(agents),
        targets=targets,
        exogenous=exogenous,
        normalized=False,
    )
    truth = {
        "beta": beta,
        "active": spec.active,
        "redundant": spec.redundant,
        "link": spec.link,
        "noise_sd": spec.noise_sd,
        "seed": seed,
    }
    return frame, truth


def synthesize_zones(n_zones=10, T=3000, seed=0, ar=0.97, delay_step=1,
                     exog_noise=1.0, target_noise=0.35):
    """Correlated multi-zone frame shaped like hourly wind-power data.

    A shared latent AR(1) process drives every zone with a zone-specific
    delay, so other zones' recent targets carry predictive information a
    zone's own features lack.  Each zone gets 4 exogenous channels (noisy
    reads of its current driver) and a normalized target in [0, 1].
    """
    if n_zones < 1 or T < 10:
        raise ConfigError("need n_zones >= 1 and T >= 10")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    burn = 200
    base = burn + n_zones * delay_step
    total = base + T
    latent = np.empty(total)
    latent[0] = rng.normal()
    innov = rng.normal(size=total) * np.sqrt(1 - ar**2)
    for t in range(1, total):
        latent[t] = ar * latent[t - 1] + innov[t]

    channel_names = ("u10", "v10", "u100", "v100")
    agents, targets, exogenous = [], {}, {}
    for z in range(n_zones):
        # zone z runs z*delay_step hours behind the shared driver, so the
        # recent targets of lower-id zones are informative lags for it
        delay = z * delay_step
        driver = latent[base - delay : base - delay + T]
        noise = rng.normal(size=T)
        y = 1.0 / (1.0 + np.exp(-(1.2 * driver + target_noise * noise)))
        X = np.column_stack(
            [
                driver * w + exog_noise * rng.normal(size=T)
                for w in (0.9, 0.7, 0.5, 0.3)
            ]
        )
        agents.append(
            AgentSchema(agent_id=z, feature_names=channel_names, has_target=True)
        )
        targets[z] = y
        exogenous[z] = X
    frame = MarketFrame(
        timestamps=pd.date_range(EPOCH, periods=T, freq="h"),
        agents=tuple(agents),
        targets=targets,
        exogenous=exogenous,
        normalized=True,
    )
    return frame


def load_csv(path, schemas=None):
    """Read an hourly multi-zone CSV into a normalized MarketFrame.

    Expects columns (zone_id, timestamp, target, <feature columns...>).
    Checks per-zone: no duplicate or missing hours after alignment, no
    missing values, targets within [0, capacity].  Targets are divided by
    the zone's capacity.
    """
    df = pd.read_csv(path)
    for col in ("zone_id", "timestamp", "target"):
        if col not in df.columns:
            raise SchemaError(f"missing required column {col!r}")
    feature_cols = [c for c in df.columns if c not in ("zone_id", "timestamp", "target")]
    df["timestamp"] = pd.to_datetime(df["timestamp"])

    zone_ids = sorted(df["zone_id"].unique())
    if schemas is None:
        schemas = [
            AgentSchema(agent_id=int(z), feature_names=tuple(feature_cols))
            for z in zone_ids
        ]
    by_id = {s.agent_id: s for s in schemas}
    if set(zone_ids) - set(by_id):
        raise SchemaError(f"zones {sorted(set(zone_ids) - set(by_id))} lack a schema")

    frames = {}
    for z in zone_ids:
        sub = df[df["zone_id"] == z].sort_values("timestamp")
        if sub["timestamp"].duplicated().any():
            raise IntegrityError(f"zone {z} has duplicate timestamps")
        schema = by_id[int(z)]
        for name in schema.feature_names:
            if name not in sub.columns:
                raise SchemaError(f"zone {z} is missing feature column {name!r}")
        cols = ["target", *schema.feature_names]
        if sub[cols].isna().any().any():
            raise IntegrityError(f"zone {z} has missing values")
        frames[int(z)] = sub.set_index("timestamp")

    common = None
    for z, sub in frames.items():
        idx = sub.index
        common = idx if common is None else common.intersection(idx)
    if common is None or len(common) == 0:
        raise IntegrityError("zones share no timestamps")
    common = common.sort_values()
    if len(common) > 1:
        gaps = np.diff(common.to_numpy())
        if not np.all(gaps == np.timedelta64(1, "h")):
            raise IntegrityError("aligned timestamps are not gap-free hourly")

    agents, targets, exogenous = [], {}, {}
    for z in zone_ids:
        schema = by_id[int(z)]
        sub = frames[int(z)].loc[common]
        y = sub["target"].to_numpy(dtype=float)
        if y.min() < 0 or y.max() > schema.capacity:
            raise BoundsError(
                f"zone {z} target leaves [0, {schema.capacity}]"
            )
        agents.append(schema)
        targets[int(z)] = y / schema.capacity
        exogenous[int(z)] = sub[list(schema.feature_names)].to_numpy(dtype=float)
    return MarketFrame(
        timestamps=pd.DatetimeIndex(common),
        agents=tuple(agents),
        targets=targets,
        exogenous=exogenous,
        normalized=True,
    )


@dataclass
class HorizonTable:
    """Design rows for one forecast horizon.

    Each row is a launch: features hold every agent's exogenous values at the
    target time plus scheduled target lags; ``targets`` holds each
    target-owning agent's value at the target time.
    """

    horizon: int
    launch_times: pd.DatetimeIndex
    target_times: pd.DatetimeIndex
    features: np.ndarray
    feature_meta: list
    targets: dict
    dropped_rows: int = 0

    @property
    def n_rows(self):
        return self.features.shape[0]

    def columns_of_owner(self, owner):
        return np.array(
            [k for k, m in enumerate(self.feature_meta) if m.owner == owner],
            dtype=int,
        )

    def signature(self):
        """Hashable identity of the feature layout (owner, name, kind) tuples."""
        return tuple((m.owner, m.name, m.kind) for m in self.feature_meta)


def build_lagged(frame, schedule, launch_hour=0):
    """Per-horizon design tables for day-ahead style forecasting.

    Launches happen at ``launch_hour``; horizon h targets (launch + h).
    Rows whose target or lag times fall outside the frame are dropped and
    counted.  Raises BoundsError when a horizon has no valid rows.
    """
    H = schedule.horizons
    if H < 1:
        raise ConfigError("schedule must cover at least one horizon")
    ts = frame.timestamps
    T = len(ts)
    launch_idx = np.nonzero(ts.hour == launch_hour)[0]
    if launch_idx.size == 0:
        raise BoundsError(f"no launches at hour {launch_hour}")
    targeted = sorted(a.agent_id for a in frame.agents if a.has_target)

    tables = {}
    for h in range(1, H + 1):
        offsets = schedule.offsets[h - 1]
        max_off = max(offsets, default=0)
        ok = launch_idx + h < T
        if offsets:
            ok &= launch_idx + h - max_off >= 0
        rows = launch_idx[ok]
        dropped = int(launch_idx.size - rows.size)
        if rows.size == 0:
            raise BoundsError(
                f"horizon {h} leaves no complete rows (frame too short)"
            )
        tgt_rows = rows + h
        blocks, metas = [], []
        for a in frame.agents:
            X = frame.exogenous.get(a.agent_id)
            if X is not None and X.shape[1]:
                blocks.append(X[tgt_rows])
                metas.extend(
                    FeatureMeta(owner=a.agent_id, name=name, kind="exog")
                    for name in a.feature_names
                )
        for aid in targeted:
            y = frame.targets[aid]
            for o in offsets:
                blocks.append(y[tgt_rows - o][:, None])
                metas.append(
                    FeatureMeta(owner=aid, name=f"target_lag{o}", kind="lag")
                )
        features = np.concatenate(blocks, axis=1) if blocks else np.zeros((rows.size, 0))
        tables[h] = HorizonTable(
            horizon=h,
            launch_times=ts[rows],
            target_times=ts[tgt_rows],
            features=features,
            feature_meta=metas,
            targets={aid: frame.targets[aid][tgt_rows] for aid in targeted},
            dropped_rows=dropped,
        )
    return tables


def snapshot_table(frame):
    """A horizon-0 table relating same-time features to targets (no lags)."""
    blocks, metas = [], []
    for a in frame.agents:
        X = frame.exogenous.get(a.agent_id)
        if X is not None and X.shape[1]:
            blocks.append(X)
            metas.extend(
                FeatureMeta(owner=a.agent_id, name=name, kind="exog")
                for name in a.feature_names
            )
    features = np.concatenate(blocks, axis=1) if blocks else np.zeros((frame.n_rows, 0))
    return HorizonTable(
        horizon=0,
        launch_times=frame.timestamps,
        target_times=frame.timestamps,
        features=features,
        feature_meta=metas,
        targets={aid: y.copy() for aid, y in frame.targets.items()},
        dropped_rows=0,
    )


@dataclass(frozen=True)
class HoldoutSplit:
    """One chronological split: the trailing fraction validates."""

    fraction: float = 0.25

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ConfigError(
                f"holdout fraction must lie in (0, 1), got {self.fraction}"
            )

    def split(self, timestamps):
        T = len(timestamps)
        n_val = int(round(self.fraction * T))
        n_val = min(max(n_val, 1), T - 1)
        idx = np.arange(T)
        return [(idx[: T - n_val], idx[T - n_val :])]


@dataclass(frozen=True)
class SlidingWindowSplit:
    """Calendar-month sliding window: train on a span, validate on the next."""

    train_months: int = 12
    test_months: int = 1

    def __post_init__(self):
        if self.train_months < 1 or self.test_months < 1:
            raise ConfigError("window lengths must be >= 1 month")

    def split(self, timestamps):
        ts = pd.DatetimeIndex(timestamps)
        periods = ts.to_period("M")
        months = periods.unique().sort_values()
        n = len(months)
        span = self.train_months + self.test_months
        if n < span:
            raise BoundsError(
                f"{n} months available, window needs {span}"
            )
        folds = []
        for start in range(0, n - span + 1):
            train_m = months[start : start + self.train_months]
            test_m = months[start + self.train_months : start + span]
            train_idx = np.nonzero(periods.isin(train_m))[0]
            test_idx = np.nonzero(periods.isin(test_m))[0]
            folds.append((train_idx, test_idx))
        return folds


@dataclass(frozen=True)
class ContiguousKFold:
    """k contiguous blocks; each validates once against the rest."""

    k: int = 12

    def __post_init__(self):
        if self.k < 2:
            raise ConfigError(f"k must be >= 2, got {self.k}")

    def split(self, timestamps):
        T = len(timestamps)
        if self.k > T:
            raise BoundsError(f"k={self.k} exceeds {T} rows")
        blocks = np.array_split(np.arange(T), self.k)
        folds = []
        for b in blocks:
            val = b
            train = np.setdiff1d(np.arange(T), val)
            folds.append((train, val))
        return folds


def split(timestamps, policy):
    """Apply a split policy, returning [(train_indices, val_indices), ...]."""
    folds = policy.split(timestamps)
    for train, val in folds:
        if len(train) == 0 or len(val) == 0:
            raise BoundsError("a fold is empty")
        if np.intersect1d(train, val).size:
            raise IntegrityError("train and validation indices overlap")
    return folds
