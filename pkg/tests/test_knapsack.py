"""Exact 0-1 knapsack: oracle agreement, tie-breaking, scaling paths."""

import numpy as np
import pytest

from forecast_market.solver import KnapsackInstance, knapsack

from _oracles import knapsack_brute


class TestKnapsackBasics:
    def test_empty_instance(self):
        """No items selects nothing."""
        assert knapsack([], [], 10).shape == (0,)

    def test_single_item_fits(self):
        assert knapsack([3], [1.0], 3).tolist() == [True]

    def test_single_item_too_heavy(self):
        """An item heavier than the capacity is never selected."""
        assert knapsack([5], [10.0], 4).tolist() == [False]

    def test_zero_capacity_zero_price_group(self):
        """With capacity 0 only zero-weight items remain selectable."""
        sel = knapsack([0, 1, 0], [1.0, 5.0, 2.0], 0)
        assert sel.tolist() == [True, False, True]

    def test_zero_value_items_not_bought(self):
        """Items contributing no value are left out even when affordable."""
        sel = knapsack([1, 1], [0.0, 3.0], 10)
        assert sel.tolist() == [False, True]

    def test_classic_tradeoff(self):
        """Two light items beat one heavy item of smaller total value."""
        sel = knapsack([6, 5, 5], [10.0, 6.0, 6.0], 10)
        assert sel.tolist() == [False, True, True]

    def test_market_sized_instance(self):
        """Five of six 10-weight items plus none of the 11s at capacity 50.

        Mirrors the pricing layout of the bundled case presets: values force
        the five most valuable groups in, the budget excludes the sixth.
        """
        weights = [10, 10, 10, 10, 10, 11, 10]
        values = [9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0]
        sel = knapsack(weights, values, 50)
        assert sel.tolist() == [True, True, True, True, True, False, False]

    def test_duplicate_items_prefer_earlier_index(self):
        """Among identical items the earliest index is selected."""
        sel = knapsack([4, 4, 4], [2.5, 2.5, 2.5], 8)
        assert sel.tolist() == [True, True, False]
        sel = knapsack([4, 4], [2.5, 2.5], 4)
        assert sel.tolist() == [True, False]

    def test_gcd_rescaling_is_exact(self):
        """Common weight divisors shrink the table without changing the answer."""
        weights = np.array([1000, 1100, 1000, 500])
        values = np.array([3.0, 7.0, 2.0, 1.0])
        sel = knapsack(weights, values, 2500)
        assert knapsack_brute(weights, values, 2500) == pytest.approx(
            values[sel].sum()
        )
        assert weights[sel].sum() <= 2500

    def test_capacity_beyond_total_weight(self):
        """Capacity larger than the total weight admits every valuable item."""
        sel = knapsack([2, 3], [1.0, 1.0], 10**9)
        assert sel.tolist() == [True, True]


class TestKnapsackValidation:
    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            knapsack([-1], [1.0], 5)

    def test_negative_value_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            knapsack([1], [-1.0], 5)

    def test_negative_capacity_rejected(self):
        with pytest.raises(ValueError, match="capacity"):
            knapsack([1], [1.0], -1)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="equal length"):
            knapsack([1, 2], [1.0], 5)

    def test_instance_dataclass_solves(self):
        inst = KnapsackInstance(np.array([2, 2]), np.array([1.0, 2.0]), 2)
        assert inst.solve().tolist() == [False, True]


class TestKnapsackAgainstBruteForce:
    def test_random_instances_match_oracle_value(self):
        """DP value equals exhaustive enumeration on random instances."""
        rng = np.random.default_rng(7)
        for _ in range(300):
            n = int(rng.integers(1, 15))
            weights = rng.integers(0, 12, size=n)
            values = np.round(rng.uniform(0, 5, size=n), 6)
            capacity = int(rng.integers(0, 30))
            sel = knapsack(weights, values, capacity)
            assert weights[sel].sum() <= capacity
            np.testing.assert_allclose(
                values[sel].sum(),
                knapsack_brute(weights, values, capacity),
                rtol=0,
                atol=1e-9,
            )

    def test_all_zero_weights(self):
        """Zero-weight items with value are always taken, any capacity."""
        sel = knapsack([0, 0, 0], [1.0, 0.0, 2.0], 0)
        assert sel.tolist() == [True, False, True]
