"""Ready-to-run market scenarios: calibrated synthetic generators paired
with session configurations, plus helpers that build configuration objects
from plain mappings (the parsed form of a YAML config file)."""

from dataclasses import dataclass, replace

import numpy as np

from .dataset import LagSchedule, SyntheticSpec, synthesize, synthesize_zones
from .errors import ConfigError
from .market import SessionConfig, ValueFunction

# The two-budget single-buyer scenarios share one seller-pricing scheme:
# every one-feature seller asks 10.0 except feature 37's seller at 11.0.
# Feature 74 duplicates feature 37, so the cheaper replica should win.
BASIC_PRICE = 10.0
BASIC_PREMIUM_FEATURE = 37
BASIC_PREMIUM_PRICE = 11.0

# With the premium replica priced out, these sellers carry the signal.
BASIC_RELEVANT_SELLERS = frozenset({12, 21, 31, 48, 51, 63, 74, 90})


def basic_prices(n_features=100, buyer_features=tuple(range(1, 11))):
    """Per-seller price map for the single-buyer synthetic scenarios."""
    owned = set(buyer_features)
    prices = {
        fid: BASIC_PRICE for fid in range(1, n_features + 1) if fid not in owned
    }
    if BASIC_PREMIUM_FEATURE in prices:
        prices[BASIC_PREMIUM_FEATURE] = BASIC_PREMIUM_PRICE
    return prices


@dataclass(frozen=True)
class Preset:
    """A named scenario: data frame, generating truth, and session config."""

    name: str
    frame: object
    truth: object
    config: SessionConfig
    notes: str = ""


def _basic_config(budget, link):
    lam = 0.04 if link == "linear" else 0.004
    return SessionConfig(
        value_functions=ValueFunction.constant(budget),
        prices=basic_prices(),
        stationarity="stationary",
        degree=2,
        knots=3,
        lam=lam,
        alpha=0.05,
        bid_step=1.0,
        tol=1e-9,
        max_iter=2000,
    )


def _basic_preset(name, budget, link, seed, T):
    noise = 0.1 if link == "linear" else 0.01
    spec = SyntheticSpec(link=link, noise_sd=noise)
    frame, truth = synthesize(spec, T or 800, seed=seed)
    notes = (
        f"single buyer owning features 1-10, 90 one-feature sellers at "
        f"{BASIC_PRICE} (feature {BASIC_PREMIUM_FEATURE} at "
        f"{BASIC_PREMIUM_PRICE}), constant budget {budget}"
    )
    return Preset(name, frame, truth, _basic_config(budget, link), notes)


def _advanced_preset(name, seed, T, n_features=500, sparsity=0.25):
    if not 0 < sparsity <= 1:
        raise ConfigError(f"sparsity must be in (0, 1], got {sparsity}")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 7)))
    n_active = max(1, round(sparsity * n_features))
    active = tuple(
        sorted(int(i) for i in rng.choice(n_features, size=n_active, replace=False) + 1)
    )
    spec = SyntheticSpec(
        n_features=n_features,
        buyer_features=tuple(range(1, 11)),
        active=active,
        redundant=(),
        link="linear",
        noise_sd=1.0,
    )
    frame, truth = synthesize(spec, T or 2 * n_features + 200, seed=seed)
    config = SessionConfig(
        value_functions=ValueFunction.constant(100.0),
        prices=BASIC_PRICE,
        stationarity="stationary",
        degree=2,
        knots=3,
        lam=0.04,
        alpha=0.05,
        bid_step=1.0,
        tol=1e-8,
        max_iter=1000,
    )
    notes = f"{n_features} features, {n_active} active ({sparsity:.0%} sparsity)"
    return Preset(name, frame, truth, config, notes)


def _wind_preset(name, seed, T):
    params = {
        "n_zones": 3,
        "T": T or 2880,
        "seed": seed,
        "ar": 0.85,
        "delay_step": 2,
        "exog_noise": 1.5,
        "target_noise": 0.2,
    }
    frame = synthesize_zones(**params)
    config = SessionConfig(
        value_functions=ValueFunction.named("vf3"),
        prices=1.0,
        stationarity="nonstationary",
        schedule=LagSchedule.day_ahead(2),
        degree=2,
        knots=3,
        lam=0.002,
        alpha=0.05,
        bid_step=1.0,
        k=10,
        tol=1e-8,
        max_iter=1500,
    )
    notes = (
        "three prosumer zones driven by one autoregressive weather signal "
        "hitting each zone two hours later than the last; day-ahead lag "
        "schedule, linear value function, unit prices"
    )
    return Preset(name, frame, {"generator": "zones", **params}, config, notes)


_BASIC_CASES = {
    "case1-linear": (50.0, "linear"),
    "case2-linear": (100.0, "linear"),
    "case1-exp": (50.0, "exp"),
    "case2-exp": (100.0, "exp"),
}

PRESET_NAMES = tuple(_BASIC_CASES) + ("advanced", "wind")


def make_preset(name, seed=0, T=None):
    """Build a named scenario deterministically from (name, seed, T).

    T=None keeps each scenario's calibrated default length.
    """
    if name in _BASIC_CASES:
        budget, link = _BASIC_CASES[name]
        return _basic_preset(name, budget, link, seed, T)
    if name == "advanced":
        return _advanced_preset(name, seed, T)
    if name == "wind":
        return _wind_preset(name, seed, T)
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


# ---------------------------------------------------------------------------
# mapping -> configuration objects (for parsed YAML config files)


def _parse_value_function(spec):
    if isinstance(spec, bool):
        raise ConfigError(f"cannot interpret value function spec {spec!r}")
    if isinstance(spec, (int, float)):
        return ValueFunction.constant(float(spec))
    try:
        return ValueFunction.parse(spec)
    except KeyError as exc:
        raise ConfigError(f"value function spec is missing {exc}") from None


def _coerce_agent_keys(mapping, what):
    out = {}
    for key, value in mapping.items():
        try:
            out[int(key)] = value
        except (TypeError, ValueError):
            raise ConfigError(f"{what} key {key!r} is not an agent id") from None
    return out


def _parse_prices(spec):
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, dict):
        # keys may be agent ids or (owner, feature) pairs encoded "id:name"
        out = {}
        for key, value in spec.items():
            if isinstance(key, str) and ":" in key:
                owner, name = key.split(":", 1)
                try:
                    out[(int(owner), name)] = float(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"bad price entry {key!r}") from None
            else:
                try:
                    owner = int(key)
                except (TypeError, ValueError):
                    raise ConfigError(f"price key {key!r} is not an agent id") from None
                if isinstance(value, dict):
                    out[owner] = {str(n): float(p) for n, p in value.items()}
                else:
                    out[owner] = float(value)
        return out
    raise ConfigError(f"cannot interpret prices {spec!r}")


def _parse_schedule(spec):
    if spec is None or isinstance(spec, LagSchedule):
        return spec
    if isinstance(spec, dict):
        horizons = spec.get("horizons")
        if horizons is None:
            raise ConfigError("schedule mapping needs a 'horizons' entry")
        max_lag = spec.get("max_lag", 6)
        return LagSchedule.day_ahead(int(horizons), max_lag=int(max_lag))
    raise ConfigError(f"cannot interpret schedule {spec!r}")


def session_config_from_mapping(mapping):
    """Build a SessionConfig from a plain (YAML-parsed) mapping."""
    if not isinstance(mapping, dict):
        raise ConfigError("session config must be a mapping")
    data = dict(mapping)
    if "value_functions" not in data:
        raise ConfigError("session config needs 'value_functions'")
    vf = data.pop("value_functions")
    if isinstance(vf, dict) and "kind" not in vf:
        vf = {
            agent: _parse_value_function(s)
            for agent, s in _coerce_agent_keys(vf, "value function").items()
        }
    else:
        vf = _parse_value_function(vf)
    kwargs = {"value_functions": vf}
    if "prices" in data:
        kwargs["prices"] = _parse_prices(data.pop("prices"))
    if "schedule" in data:
        kwargs["schedule"] = _parse_schedule(data.pop("schedule"))
    if "buyers" in data:
        buyers = data.pop("buyers")
        if buyers is not None:
            try:
                buyers = tuple(int(b) for b in buyers)
            except (TypeError, ValueError):
                raise ConfigError(f"buyers must be agent ids, got {buyers!r}") from None
        kwargs["buyers"] = buyers
    allowed = {
        "bid_min", "bid_step", "bid_max", "estimator", "k", "stationarity",
        "degree", "knots", "lam", "alpha", "validation_fraction",
        "delivery_fraction", "tol", "max_iter", "resolution", "jobs",
    }
    for key in list(data):
        if key not in allowed:
            raise ConfigError(f"unknown session config key {key!r}")
        kwargs[key] = data.pop(key)
    return SessionConfig(**kwargs)


def preset_with_config(preset, overrides):
    """Return the preset with config fields replaced from a mapping."""
    if not overrides:
        return preset
    merged = session_config_from_mapping(
        {**_config_mapping(preset.config), **overrides}
    )
    return replace(preset, config=merged)


def _config_mapping(config):
    return {
        "value_functions": config.value_functions,
        "prices": config.prices,
        "bid_min": config.bid_min,
        "bid_step": config.bid_step,
        "bid_max": config.bid_max,
        "estimator": config.estimator,
        "k": config.k,
        "stationarity": config.stationarity,
        "schedule": config.schedule,
        "degree": config.degree,
        "knots": config.knots,
        "lam": config.lam,
        "alpha": config.alpha,
        "validation_fraction": config.validation_fraction,
        "delivery_fraction": config.delivery_fraction,
        "tol": config.tol,
        "max_iter": config.max_iter,
        "resolution": config.resolution,
        "buyers": config.buyers,
        "jobs": config.jobs,
    }
