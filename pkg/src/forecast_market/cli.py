"""Command-line front end: dataset synthesis, market sessions, hyperparameter
search, and benchmark tables.  Every run leaves a manifest recording the
seed, timing, and a checksum per artifact, so identical invocations can be
verified byte for byte."""

import dataclasses
import hashlib
import json
import os
import re
import sys
import time
import warnings
from dataclasses import dataclass, field, replace

import click
import numpy as np
import pandas as pd
import yaml

from .benchmarks import compare, load_external_forecasts
from .dataset import AgentSchema, ContiguousKFold, MarketFrame, load_csv, snapshot_table
from .errors import ConfigError, IntegrityError, MarketError, SchemaError
from .market import _common_lagged_table, resolve_price, run_session
from .presets import (
    PRESET_NAMES,
    make_preset,
    preset_with_config,
    session_config_from_mapping,
)
from .tuning import TuningGrid, tune

JOBS_ENV = "FORECAST_MARKET_JOBS"
MANIFEST_NAME = "manifest.json"


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _jsonable(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, pd.Timestamp):
        return value.isoformat()
    raise TypeError(f"not JSON-serializable: {type(value).__name__}")


@dataclass
class RunManifest:
    """Reproducibility record written next to every command's artifacts."""

    command: str
    config_path: object
    seed: int
    out_dir: str
    jobs: int
    started: str
    elapsed_seconds: float = 0.0
    details: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def write(self):
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, MANIFEST_NAME)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(
                dataclasses.asdict(self),
                handle,
                indent=2,
                sort_keys=True,
                default=_jsonable,
            )
            handle.write("\n")


class _Run:
    """Collects artifacts and finishes with a checksummed manifest."""

    def __init__(self, command, config_path, seed, out_dir, jobs):
        self._t0 = time.perf_counter()
        self.out_dir = out_dir
        self.manifest = RunManifest(
            command=command,
            config_path=config_path,
            seed=seed,
            out_dir=os.path.abspath(out_dir),
            jobs=jobs,
            started=pd.Timestamp.now().isoformat(timespec="seconds"),
        )

    def emit_json(self, name, payload):
        self._emit(name, lambda path: _write_json(path, payload))

    def emit_csv(self, name, frame):
        self._emit(name, lambda path: frame.to_csv(path, index=False))

    def _emit(self, name, writer):
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, name)
        writer(path)
        self.manifest.artifacts[name] = _sha256(path)

    def finish(self, caught):
        self.manifest.warnings = sorted({str(w.message) for w in caught})
        self.manifest.elapsed_seconds = round(time.perf_counter() - self._t0, 3)
        self.manifest.write()


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True, default=_jsonable)
        handle.write("\n")


def _load_config(path):
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as handle:
        data = yaml.safe_load(handle)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return data


def _resolve_jobs(flag, cfg):
    env = os.environ.get(JOBS_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{JOBS_ENV}={env!r} is not an integer") from None
    if flag is not None:
        return flag
    return int(cfg.get("jobs", 1))


def _resolve_seed(flag, cfg):
    if flag is not None:
        return flag
    return int(cfg.get("seed", 0))


_WIDE_COLUMN = re.compile(r"^a(\d+)_(.+)$")


def _frame_from_wide(df):
    """Rebuild a frame from the one-row-per-timestamp layout synth writes:
    a timestamp column plus a{id}_target / a{id}_{feature} agent columns."""
    parsed = []
    for col in df.columns:
        if col == "timestamp":
            continue
        match = _WIDE_COLUMN.match(col)
        if match is None:
            raise SchemaError(
                f"column {col!r} is neither 'timestamp' nor 'a<id>_<name>'"
            )
        parsed.append((int(match.group(1)), match.group(2), col))
    if not parsed:
        raise SchemaError("wide dataset has no agent columns")
    if "timestamp" not in df.columns:
        raise SchemaError("missing required column 'timestamp'")
    df = df.assign(timestamp=pd.to_datetime(df["timestamp"]))
    df = df.sort_values("timestamp")
    value_cols = [col for _, _, col in parsed]
    if df[value_cols].isna().any().any():
        raise IntegrityError("wide dataset has missing values")
    agents, targets, exogenous = [], {}, {}
    for aid in sorted({aid for aid, _, _ in parsed}):
        names = tuple(s for a, s, _ in parsed if a == aid and s != "target")
        cols = [c for a, s, c in parsed if a == aid and s != "target"]
        has_target = any(a == aid and s == "target" for a, s, _ in parsed)
        if has_target:
            targets[aid] = df[f"a{aid}_target"].to_numpy(dtype=float)
        agents.append(
            AgentSchema(agent_id=aid, feature_names=names, has_target=has_target)
        )
        exogenous[aid] = df[cols].to_numpy(dtype=float)
    return MarketFrame(
        timestamps=pd.DatetimeIndex(df["timestamp"]),
        agents=tuple(agents),
        targets=targets,
        exogenous=exogenous,
    )


def _read_dataset(path):
    """Load either supported CSV layout, chosen by the header row: long
    normalized (zone_id, timestamp, target, ...) or wide agent columns."""
    header = pd.read_csv(path, nrows=0).columns
    if "zone_id" in header:
        return load_csv(path)
    return _frame_from_wide(pd.read_csv(path))


def _load_task(cfg, preset_name, seed):
    """Frame plus session config from a preset or an ingested CSV dataset."""
    name = preset_name or cfg.get("preset")
    overrides = cfg.get("session") or {}
    if name is not None:
        preset = make_preset(name, seed=seed, T=cfg.get("T"))
        preset = preset_with_config(preset, overrides)
        return preset.frame, preset.config, name
    dataset = cfg.get("dataset")
    if dataset is None:
        raise ConfigError("give --preset or a config with 'preset' or 'dataset'")
    if not os.path.exists(dataset):
        raise FileNotFoundError(f"dataset file not found: {dataset}")
    frame = _read_dataset(dataset)
    if not overrides:
        raise ConfigError("a CSV dataset needs a 'session' config section")
    return frame, session_config_from_mapping(overrides), os.path.basename(dataset)


def _grid_from_mapping(mapping):
    if not mapping:
        return None
    data = dict(mapping)
    kwargs = {}
    for key in ("degrees", "knot_counts", "lambdas"):
        if key in data:
            kwargs[key] = tuple(data.pop(key))
    if "alpha" in data:
        kwargs["alpha"] = float(data.pop("alpha"))
    if "folds" in data:
        kwargs["cv"] = ContiguousKFold(int(data.pop("folds")))
    if data:
        raise ConfigError(f"unknown tuning keys {sorted(data)}")
    return TuningGrid(**kwargs)


def _build_table(frame, config):
    if config.schedule is not None:
        return _common_lagged_table(frame, config.schedule)
    return snapshot_table(frame)


def _truncate_table(table, fraction):
    """Drop the trailing delivery window so tuning never sees it."""
    n = table.features.shape[0]
    keep = n - max(1, int(round(fraction * n)))
    if keep < 2:
        raise ConfigError("delivery window leaves too few rows for tuning")
    return dataclasses.replace(
        table,
        launch_times=table.launch_times[:keep],
        target_times=table.target_times[:keep],
        features=table.features[:keep],
        targets={a: y[:keep] for a, y in table.targets.items()},
    )


def _total_price(table, buyer, prices):
    total = 0.0
    for meta in table.feature_meta:
        if meta.owner != buyer:
            total += resolve_price(prices, meta.owner, meta.name)
    return total


def _report_payload(report):
    return {
        "buyer": report.buyer,
        "payment": report.payment,
        "revenues": {str(k): v for k, v in sorted(report.revenues.items())},
        "chosen_bids": list(report.chosen_bids),
        "gains": list(report.gains),
        "sale": list(report.sale),
        "market_used": report.market_used,
        "stationary": report.stationary,
        "estimator": report.estimator,
        "observed_gain": report.observed_gain,
        "per_horizon": [dict(h) for h in report.per_horizon],
    }


def _emit_session_artifacts(run, reports):
    run.emit_json("reports.json", [_report_payload(r) for r in reports])

    rows = []
    for r in reports:
        rows.append(
            {
                "buyer": r.buyer,
                "payment": r.payment,
                "estimated_gain": float(np.mean(r.gains)) if r.gains else 0.0,
                "observed_gain": r.observed_gain,
                "market_used": r.market_used,
                "stationary": r.stationary,
                "estimator": r.estimator,
                "sellers_paid": sum(1 for v in r.revenues.values() if v > 0),
            }
        )
    run.emit_csv("reports.csv", pd.DataFrame(rows))

    rev = [
        {"buyer": r.buyer, "seller": seller, "revenue": amount}
        for r in reports
        for seller, amount in sorted(r.revenues.items())
    ]
    run.emit_csv("revenues.csv", pd.DataFrame(rev))

    fc = []
    for r in reports:
        for ts, tag, market, local, actual in zip(
            r.target_times, r.horizon_tags, r.forecasts, r.local_forecasts, r.target
        ):
            fc.append(
                {
                    "zone": r.buyer,
                    "timestamp": pd.Timestamp(ts).isoformat(),
                    "horizon": int(tag),
                    "forecast": float(market),
                    "local": float(local),
                    "target": float(actual),
                }
            )
    run.emit_csv("forecasts.csv", pd.DataFrame(fc))

    # plot data: estimated gain against bid, one series per table
    bgt = [
        {
            "buyer": r.buyer,
            "horizon": table.horizon,
            "bid": bid,
            "gain": gain_value,
        }
        for r in reports
        for table in r.tables
        for bid, gain_value in table.as_rows()
    ]
    run.emit_csv("bgt.csv", pd.DataFrame(bgt))

    # plot data: cumulative estimated vs observed gain across buyers
    series, cum_est, cum_obs = [], 0.0, 0.0
    for r in reports:
        est = float(np.mean(r.gains)) if r.gains else 0.0
        cum_est += est
        cum_obs += r.observed_gain
        series.append(
            {
                "buyer": r.buyer,
                "estimated_gain": est,
                "observed_gain": r.observed_gain,
                "cumulative_estimated": cum_est,
                "cumulative_observed": cum_obs,
            }
        )
    run.emit_csv("gain_series.csv", pd.DataFrame(series))


def _guarded(body):
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            body(caught)
    except (MarketError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


def _common_options(f):
    for option in (
        click.option("--config", "config_path", default=None,
                     type=click.Path(exists=True, dir_okay=False),
                     help="YAML configuration file."),
        click.option("--seed", type=int, default=None,
                     help="Manifest seed; overrides the config value."),
        click.option("--out", "out_dir", default="market-out",
                     type=click.Path(file_okay=False), show_default=True,
                     help="Directory receiving artifacts and the manifest."),
        click.option("--preset", "preset_name", default=None,
                     help=f"Scenario name, one of {', '.join(PRESET_NAMES)}."),
        click.option("--jobs", type=int, default=None,
                     help=f"Parallel workers; ${JOBS_ENV} overrides."),
    ):
        f = option(f)
    return f


@click.group()
def main():
    """Collaborative forecasting market tools."""


@main.command()
@_common_options
def synth(config_path, seed, out_dir, preset_name, jobs):
    """Write a synthetic dataset and its generating truth."""

    def body(caught):
        cfg = _load_config(config_path)
        seed_v = _resolve_seed(seed, cfg)
        jobs_v = _resolve_jobs(jobs, cfg)
        name = preset_name or cfg.get("preset")
        if name is None:
            raise ConfigError("synth needs --preset or a config 'preset' entry")
        preset = make_preset(name, seed=seed_v, T=cfg.get("T"))

        run = _Run("synth", config_path, seed_v, out_dir, jobs_v)
        run.manifest.details = {"preset": name, "notes": preset.notes}

        frame = preset.frame
        data = {"timestamp": [t.isoformat() for t in frame.timestamps]}
        for agent in frame.agents:
            if agent.has_target:
                data[f"a{agent.agent_id}_target"] = frame.targets[agent.agent_id]
            X = frame.exogenous.get(agent.agent_id)
            for k, feature in enumerate(agent.feature_names):
                data[f"a{agent.agent_id}_{feature}"] = X[:, k]
        run.emit_csv("dataset.csv", pd.DataFrame(data))

        truth = preset.truth if preset.truth is not None else {}
        if "beta" in truth:
            truth = {**truth, "beta": {str(k): v for k, v in truth["beta"].items()}}
        run.emit_json("truth.json", truth)
        run.finish(caught)

    _guarded(body)


@main.command("run-session")
@_common_options
@click.option("--re-estimate", "re_estimate", is_flag=True, default=False,
              help="Re-run the hyperparameter search before fitting.")
def run_session_cmd(config_path, seed, out_dir, preset_name, jobs, re_estimate):
    """Run the closed market phase and write settlement artifacts."""

    def body(caught):
        cfg = _load_config(config_path)
        seed_v = _resolve_seed(seed, cfg)
        jobs_v = _resolve_jobs(jobs, cfg)
        frame, config, name = _load_task(cfg, preset_name, seed_v)
        config = replace(config, jobs=jobs_v)

        run = _Run("run-session", config_path, seed_v, out_dir, jobs_v)
        run.manifest.details = {"source": name, "re_estimate": re_estimate}

        if re_estimate:
            grid = _grid_from_mapping(cfg.get("tuning")) or TuningGrid(
                degrees=(1, 2, 3),
                knot_counts=(3, 5, 8),
                lambdas=tuple(np.logspace(-3, 0, 4)),
                cv=ContiguousKFold(4),
            )
            table = _truncate_table(
                _build_table(frame, config), config.delivery_fraction
            )
            buyers = config.buyers or sorted(frame.targets)
            tuned, reports = {}, []
            for buyer in buyers:
                result = tune(
                    table,
                    buyer,
                    bid=_total_price(table, buyer, config.prices),
                    grid=grid,
                    prices=config.prices,
                    tol=config.tol,
                    max_iter=config.max_iter,
                    resolution=config.resolution,
                    jobs=jobs_v,
                )
                tuned[buyer] = result
                tuned_config = replace(
                    config,
                    degree=result.degree,
                    knots=result.knots,
                    lam=result.lam,
                    buyers=(buyer,),
                )
                reports.extend(run_session(frame, tuned_config))
            run.emit_json(
                "hyperparameters.json",
                {
                    str(b): {
                        "degree": r.degree,
                        "knots": r.knots,
                        "lam": r.lam,
                        "loss": r.loss,
                        "bid": r.bid,
                    }
                    for b, r in tuned.items()
                },
            )
        else:
            reports = run_session(frame, config)

        _emit_session_artifacts(run, reports)
        run.finish(caught)

    _guarded(body)


@main.command("tune")
@_common_options
def tune_cmd(config_path, seed, out_dir, preset_name, jobs):
    """Grid-search spline degree, knot count, and penalty for one buyer."""

    def body(caught):
        cfg = _load_config(config_path)
        seed_v = _resolve_seed(seed, cfg)
        jobs_v = _resolve_jobs(jobs, cfg)
        frame, config, name = _load_task(cfg, preset_name, seed_v)
        table = _build_table(frame, config)

        tcfg = cfg.get("tune") or {}
        buyer = int(tcfg.get("buyer", sorted(frame.targets)[0]))
        bid = tcfg.get("bid")
        bid = float(bid) if bid is not None else _total_price(table, buyer, config.prices)
        grid = _grid_from_mapping(cfg.get("tuning"))

        run = _Run("tune", config_path, seed_v, out_dir, jobs_v)
        run.manifest.details = {"source": name, "buyer": buyer, "bid": bid}

        result = tune(
            table,
            buyer,
            bid,
            grid=grid,
            prices=config.prices,
            tol=config.tol,
            max_iter=config.max_iter,
            resolution=config.resolution,
            jobs=jobs_v,
        )
        losses = result.to_frame()
        run.emit_csv("losses.csv", losses)
        summary = (
            losses.groupby(["D", "K", "lambda"], as_index=False)["loss"]
            .agg(total_loss="sum", mean_loss="mean")
            .sort_values(["D", "K", "lambda"], ignore_index=True)
        )
        run.emit_csv("table.csv", summary)
        run.emit_json(
            "chosen.json",
            {
                "buyer": buyer,
                "bid": result.bid,
                "degree": result.degree,
                "knots": result.knots,
                "lam": result.lam,
                "loss": result.loss,
            },
        )
        run.finish(caught)

    _guarded(body)


@main.command("benchmark")
@_common_options
def benchmark_cmd(config_path, seed, out_dir, preset_name, jobs):
    """Compare market forecasts against local models, per zone and horizon."""

    def body(caught):
        cfg = _load_config(config_path)
        seed_v = _resolve_seed(seed, cfg)
        jobs_v = _resolve_jobs(jobs, cfg)
        frame, config, name = _load_task(cfg, preset_name, seed_v)
        config = replace(config, jobs=jobs_v)

        bcfg = cfg.get("benchmark") or {}
        forecasts_path = bcfg.get("forecasts")
        external = None
        if forecasts_path is not None:
            if not os.path.exists(forecasts_path):
                raise FileNotFoundError(
                    f"forecast file not found: {forecasts_path}"
                )
            external = load_external_forecasts(forecasts_path)

        run = _Run("benchmark", config_path, seed_v, out_dir, jobs_v)
        run.manifest.details = {
            "source": name,
            "external_forecasts": forecasts_path,
        }

        reports = run_session(frame, config)
        table = compare(reports) if external is None else compare(reports, external)
        run.emit_csv("comparison.csv", table)
        by_zone = table.groupby("zone")["improvement"].mean()
        run.emit_json(
            "summary.json",
            {
                "per_zone_improvement": {str(z): v for z, v in by_zone.items()},
                "mean_improvement": float(by_zone.mean()),
            },
        )
        run.finish(caught)

    _guarded(body)


if __name__ == "__main__":
    main()
