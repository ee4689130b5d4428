"""Hyperparameter search: grid handling, selection rule, loss-table contract."""

import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

import forecast_market.tuning as tuning
from forecast_market.dataset import (
    AgentSchema,
    ContiguousKFold,
    HoldoutSplit,
    MarketFrame,
    snapshot_table,
)
from forecast_market.errors import ConfigError, TuningError
from forecast_market.tuning import TuningGrid, TuningResult, tune, tune_bids


def _frame(seed=0, T=120, n_sellers=3, noise=0.0, uniform=False):
    """One buyer (agent 0) plus single-feature sellers, linear target.

    Uniform features keep validation rows inside the training hull, so a
    noiseless linear target has a genuine zero loss floor.
    """
    rng = np.random.default_rng(seed)
    draw = (
        (lambda n: rng.uniform(-1.0, 1.0, size=(n, 1)))
        if uniform
        else (lambda n: rng.normal(size=(n, 1)))
    )
    own = draw(T)
    agents = [AgentSchema(agent_id=0, feature_names=("own0",), has_target=True)]
    exog = {0: own}
    y = 0.8 * own[:, 0]
    coefs = (1.5, 1.0, 0.7)
    for j in range(1, n_sellers + 1):
        x = draw(T)
        agents.append(AgentSchema(agent_id=j, feature_names=("x",), has_target=False))
        exog[j] = x
        y = y + coefs[(j - 1) % len(coefs)] * x[:, 0]
    if noise:
        y = y + noise * rng.normal(size=T)
    return MarketFrame(
        timestamps=pd.date_range("2013-01-01", periods=T, freq="h"),
        agents=tuple(agents),
        targets={0: y},
        exogenous=exog,
    )


def _grid(**kw):
    base = dict(
        degrees=(1,),
        knot_counts=(3,),
        lambdas=(1e-4,),
        alpha=0.05,
        cv=ContiguousKFold(3),
    )
    base.update(kw)
    return TuningGrid(**base)


class TestTuningGrid:
    def test_default_axes(self):
        """Defaults span degrees 1..7, knots 3..30, 10 log-spaced penalties."""
        grid = TuningGrid()
        assert grid.degrees == tuple(range(1, 8))
        assert grid.knot_counts == tuple(range(3, 31))
        assert len(grid.lambdas) == 10
        assert grid.lambdas[0] == pytest.approx(1e-3)
        assert grid.lambdas[-1] == pytest.approx(100.0)
        ratios = np.diff(np.log(grid.lambdas))
        assert_allclose(ratios, ratios[0], rtol=1e-9)
        assert grid.n_combinations == 7 * 28 * 10

    def test_axes_deduplicated_and_sorted(self):
        """Duplicate grid values collapse so no combination runs twice."""
        grid = TuningGrid(
            degrees=(3, 1, 3), knot_counts=(5, 5, 4), lambdas=(0.1, 0.1, 1.0)
        )
        assert grid.degrees == (1, 3)
        assert grid.knot_counts == (4, 5)
        assert grid.lambdas == (0.1, 1.0)

    def test_invalid_axes_rejected(self):
        with pytest.raises(ConfigError):
            TuningGrid(degrees=())
        with pytest.raises(ConfigError):
            TuningGrid(degrees=(0,))
        with pytest.raises(ConfigError):
            TuningGrid(knot_counts=(1,))
        with pytest.raises(ConfigError):
            TuningGrid(lambdas=(-0.5,))
        with pytest.raises(ConfigError):
            TuningGrid(alpha=0.0)


class TestTune:
    def test_singleton_grid_returns_that_triple(self):
        """A one-triple grid returns the triple; the table covers it alone."""
        table = snapshot_table(_frame())
        grid = _grid(degrees=(2,), knot_counts=(4,), lambdas=(0.05,))
        res = tune(table, 0, 30.0, grid=grid, prices=10.0, max_iter=3000)
        assert (res.degree, res.knots, res.lam) == (2, 4, 0.05)
        combos = {(d, k, lam) for d, k, lam, _, _ in res.rows}
        assert combos == {(2, 4, 0.05)}
        assert len(res.rows) == 3  # one row per fold

    def test_noiseless_linear_target_reaches_zero_floor(self):
        """With degree 1 available, a noiseless linear target tunes to a CV
        loss within 1% of the zero floor.  The filter stays open (alpha=1) so
        no basis column of a relevant feature is amputated."""
        frame = _frame(noise=0.0, uniform=True)
        table = snapshot_table(frame)
        grid = _grid(degrees=(1, 2), lambdas=(1e-4, 0.05), alpha=1.0)
        res = tune(table, 0, math.inf, grid=grid, prices=1.0,
                   tol=1e-9, max_iter=60000)
        scale = float(np.std(table.targets[0]))
        n_folds = len({fold for _, _, _, fold, _ in res.rows})
        assert res.loss / n_folds < 0.01 * scale

    def test_ties_break_toward_simplest_model(self):
        """Full-shrinkage penalties give identical intercept-only losses, so
        the tie goes to the smallest degree, smallest knots, largest lam."""
        table = snapshot_table(_frame(noise=0.0))
        grid = _grid(
            degrees=(1, 2), knot_counts=(3, 5), lambdas=(50.0, 100.0)
        )
        res = tune(table, 0, 30.0, grid=grid, prices=10.0, max_iter=3000)
        totals = res.totals()
        assert len(set(totals.values())) == 1  # every triple tied
        assert (res.degree, res.knots, res.lam) == (1, 3, 100.0)

    def test_returned_loss_is_table_minimum(self):
        """The winning triple's accumulated loss equals the table's minimum."""
        table = snapshot_table(_frame(seed=2, noise=0.2))
        grid = _grid(degrees=(1, 2), lambdas=(0.01, 0.5))
        res = tune(table, 0, 20.0, grid=grid, prices=10.0, max_iter=3000)
        totals = res.totals()
        finite = {k: v for k, v in totals.items() if math.isfinite(v)}
        best_key = min(finite, key=finite.get)
        assert res.loss == pytest.approx(min(finite.values()))
        assert finite[(res.degree, res.knots, res.lam)] == res.loss
        assert finite[best_key] == res.loss

    def test_deterministic_given_inputs(self):
        """Two identical searches produce bit-identical loss tables."""
        table = snapshot_table(_frame(seed=3, noise=0.1))
        grid = _grid(degrees=(1, 2), lambdas=(0.01, 0.2))
        a = tune(table, 0, 25.0, grid=grid, prices=10.0, max_iter=3000)
        b = tune(table, 0, 25.0, grid=grid, prices=10.0, max_iter=3000)
        assert a.rows == b.rows
        assert (a.degree, a.knots, a.lam, a.loss) == (b.degree, b.knots, b.lam, b.loss)

    def test_transformer_and_filter_run_once_per_cell(self, monkeypatch):
        """The spline transformer and the correlation filter are fitted once
        per (degree, knots, fold) and reused across every penalty."""
        calls = {"st": 0, "fs": 0}
        real_expander = tuning.SplineGroupExpander
        real_mask = tuning.partial_correlation_mask

        class CountingExpander(real_expander):
            def fit(self, X):
                calls["st"] += 1
                return super().fit(X)

        def counting_mask(*args, **kw):
            calls["fs"] += 1
            return real_mask(*args, **kw)

        monkeypatch.setattr(tuning, "SplineGroupExpander", CountingExpander)
        monkeypatch.setattr(tuning, "partial_correlation_mask", counting_mask)
        table = snapshot_table(_frame(noise=0.1))
        grid = _grid(degrees=(1, 2), knot_counts=(3, 4), lambdas=(0.01, 0.1, 1.0))
        tune(table, 0, 20.0, grid=grid, prices=10.0, max_iter=3000)
        n_cells = 2 * 2 * 3  # degrees x knots x folds, penalties excluded
        assert calls["st"] == n_cells
        assert calls["fs"] == n_cells

    def test_budget_constraint_binds(self):
        """A zero bid locks out every priced group, so the tuned loss can
        only improve when the bid admits seller data."""
        table = snapshot_table(_frame(noise=0.05))
        grid = _grid(lambdas=(0.01,))
        locked = tune(table, 0, 0.0, grid=grid, prices=10.0, max_iter=3000)
        open_ = tune(table, 0, math.inf, grid=grid, prices=10.0, max_iter=3000)
        assert open_.loss < locked.loss

    def test_every_fold_degenerate_raises(self):
        """A constant target defeats the filter in every fold."""
        frame = _frame()
        frame.targets[0][:] = 1.0
        table = snapshot_table(frame)
        with pytest.raises(TuningError):
            tune(table, 0, 10.0, grid=_grid(), prices=10.0)

    def test_unknown_buyer_rejected(self):
        table = snapshot_table(_frame())
        with pytest.raises(ConfigError):
            tune(table, 9, 10.0, grid=_grid(), prices=10.0)

    def test_single_fold_policy_rejected(self):
        """The accumulated-loss contract needs at least two folds."""
        table = snapshot_table(_frame())
        grid = _grid(cv=HoldoutSplit(0.25))
        with pytest.raises(ConfigError):
            tune(table, 0, 10.0, grid=grid, prices=10.0)

    def test_negative_bid_rejected(self):
        table = snapshot_table(_frame())
        with pytest.raises(ConfigError):
            tune(table, 0, -5.0, grid=_grid(), prices=10.0)

    def test_csv_roundtrip(self, tmp_path):
        """The loss table lands on disk with the documented columns."""
        table = snapshot_table(_frame(noise=0.1))
        res = tune(table, 0, 15.0, grid=_grid(lambdas=(0.01, 0.1)), prices=10.0, max_iter=3000)
        path = tmp_path / "cv.csv"
        res.to_csv(path)
        back = pd.read_csv(path)
        assert list(back.columns) == ["D", "K", "lambda", "fold", "loss"]
        assert len(back) == len(res.rows)
        assert_allclose(back["loss"].to_numpy(), [r[4] for r in res.rows])

    def test_parallel_matches_serial(self):
        """jobs=2 reduces into the same table as the serial loop."""
        table = snapshot_table(_frame(seed=4, noise=0.1, T=90))
        grid = _grid(degrees=(1, 2), lambdas=(0.01, 0.1))
        serial = tune(table, 0, 20.0, grid=grid, prices=10.0, jobs=1, max_iter=3000)
        parallel = tune(table, 0, 20.0, grid=grid, prices=10.0, jobs=2, max_iter=3000)
        assert serial.rows == parallel.rows
        assert (serial.degree, serial.knots, serial.lam) == (
            parallel.degree,
            parallel.knots,
            parallel.lam,
        )


class TestTuneBids:
    def test_per_bid_results_align_with_input(self):
        table = snapshot_table(_frame(noise=0.1))
        grid = _grid(lambdas=(0.01, 0.1))
        out = tune_bids(table, 0, [0.0, 30.0], grid=grid, prices=10.0, max_iter=3000)
        assert [r.bid for r in out] == [0.0, 30.0]
        assert all(isinstance(r, TuningResult) for r in out)

    def test_shared_mode_tunes_once_at_largest_bid(self, monkeypatch):
        """The shared flag reuses the least-constrained search for all bids."""
        calls = {"st": 0}
        real_expander = tuning.SplineGroupExpander

        class CountingExpander(real_expander):
            def fit(self, X):
                calls["st"] += 1
                return super().fit(X)

        monkeypatch.setattr(tuning, "SplineGroupExpander", CountingExpander)
        table = snapshot_table(_frame(noise=0.1))
        grid = _grid(lambdas=(0.01, 0.1))
        ref = tune(table, 0, 30.0, grid=grid, prices=10.0, max_iter=3000)
        per_cell = calls["st"]
        calls["st"] = 0
        out = tune_bids(
            table, 0, [0.0, 10.0, 30.0], grid=grid, prices=10.0, shared=True,
            max_iter=3000
        )
        assert calls["st"] == per_cell  # one search, not three
        for r, b in zip(out, [0.0, 10.0, 30.0]):
            assert r.bid == b
            assert (r.degree, r.knots, r.lam) == (ref.degree, ref.knots, ref.lam)
            assert r.rows == ref.rows

    def test_empty_bids_rejected(self):
        table = snapshot_table(_frame())
        with pytest.raises(ConfigError):
            tune_bids(table, 0, [], grid=_grid(), prices=10.0)
