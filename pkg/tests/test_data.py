import numpy as np
import pytest
from hypothesis import given, strategies as st

from clover import Dataset, RngStream, empirical_quantile, load_csv, save_csv, split_indices
from oracles import quantile_oracle


class TestEmpiricalQuantile:
    def test_first_rank_reaching_half(self):
        assert empirical_quantile(range(1, 11), 0.5) == 5

    def test_singleton(self):
        assert empirical_quantile([3], 0.9) == 3

    def test_unsorted_multiset(self):
        # sort-and-scan over {1,2,4,7,9}: 4/5 of the mass sits at or below 7
        assert empirical_quantile([2, 7, 4, 9, 1], 0.8) == 7

    def test_empty_sample(self):
        with pytest.raises(ValueError, match="empty sample"):
            empirical_quantile([], 0.5)

    @pytest.mark.parametrize("phi", [0.0, -0.2, 1.5])
    def test_invalid_level(self, phi):
        with pytest.raises(ValueError, match="invalid level"):
            empirical_quantile([1.0, 2.0], phi)

    def test_level_one_is_max(self):
        g = RngStream(1).generator()
        for _ in range(20):
            v = g.standard_normal(g.integers(1, 50))
            assert empirical_quantile(v, 1.0) == v.max()

    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60),
        st.floats(0.01, 1.0),
        st.floats(0.01, 1.0),
    )
    def test_monotone_in_level_and_member(self, values, a, b):
        lo, hi = min(a, b), max(a, b)
        q_lo = empirical_quantile(values, lo)
        q_hi = empirical_quantile(values, hi)
        assert q_lo <= q_hi
        assert q_lo in values and q_hi in values

    def test_matches_sort_and_scan_oracle(self):
        g = RngStream(7).generator()
        for _ in range(1000):
            n = int(g.integers(1, 201))
            values = g.standard_normal(n) * 10
            if g.integers(0, 2):  # throw in ties
                values = np.round(values)
            phi = float(g.uniform(1e-6, 1.0))
            assert empirical_quantile(values, phi) == quantile_oracle(values, phi)


class TestSplitIndices:
    def test_exact_division(self):
        split, test = split_indices(10, (0.4, 0.4, 0.2), rng=RngStream(0))
        assert (len(split.train), len(split.cal), len(test)) == (4, 4, 2)
        assert np.array_equal(split.part, split.cal)
        assert np.array_equal(split.cut, split.cal)

    def test_remainder_goes_to_train(self):
        # floor oracle: cal = floor(0.4*5) = 2, test = floor(0.2*5) = 1
        split, test = split_indices(5, (0.4, 0.4, 0.2), rng=RngStream(1))
        assert (len(split.cal), len(test)) == (2, 1)
        assert len(split.train) == 5 - 2 - 1

    def test_deterministic(self):
        a = split_indices(100, rng=RngStream(3, 5))
        b = split_indices(100, rng=RngStream(3, 5))
        for x, y in zip((*a[0].__dict__.values(), a[1]), (*b[0].__dict__.values(), b[1])):
            assert np.array_equal(x, y)

    def test_partitions_range_exactly(self):
        g = RngStream(9).generator()
        for _ in range(25):
            n = int(g.integers(3, 400))
            split, test = split_indices(n, rng=RngStream(int(g.integers(0, 1 << 32))))
            combined = np.concatenate([split.train, split.cal, test])
            assert np.array_equal(np.sort(combined), np.arange(n))

    def test_inner_split_partitions_cal(self):
        split, _ = split_indices(100, inner_split=True, inner_fraction=0.5, rng=RngStream(4))
        assert len(split.part) + len(split.cut) == len(split.cal)
        assert np.array_equal(np.sort(np.concatenate([split.part, split.cut])), split.cal)
        assert not np.intersect1d(split.part, split.cut).size

    def test_bad_fractions(self):
        with pytest.raises(ValueError, match="sum to 1"):
            split_indices(10, (0.5, 0.4, 0.2), rng=RngStream(0))
        with pytest.raises(ValueError, match="positive"):
            split_indices(10, (1.0, 0.0, 0.0), rng=RngStream(0))
        with pytest.raises(ValueError):
            split_indices(2, rng=RngStream(0))


class TestDataset:
    def test_row_mismatch(self):
        with pytest.raises(ValueError, match="row mismatch"):
            Dataset(np.zeros((3, 2)), np.zeros(4))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(np.array([[1.0], [np.nan]]), np.zeros(2))

    def test_default_names(self):
        ds = Dataset(np.zeros((2, 3)), np.zeros(2))
        assert ds.feature_names == ("x0", "x1", "x2")
        assert (ds.n, ds.d) == (2, 3)


class TestCsv:
    def test_basic_load(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
        ds = load_csv(path)
        assert (ds.n, ds.d) == (3, 2)
        assert ds.feature_names == ("a", "b")
        assert ds.target_name == "y"
        assert np.array_equal(ds.targets, [3, 6, 9])

    def test_named_target_column(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,b,y\n1,2,3\n")
        ds = load_csv(path, target="a")
        assert ds.feature_names == ("b", "y")
        assert ds.targets[0] == 1

    def test_nan_cell_names_location(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n1,2\nNaN,4\n")
        with pytest.raises(ValueError, match=r"line 3, column 'a'"):
            load_csv(path)

    def test_unparseable_cell_names_location(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n1,2\n3,oops\n")
        with pytest.raises(ValueError, match=r"line 3, column 'y'"):
            load_csv(path)

    def test_missing_target(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("a,y\n1,2\n")
        with pytest.raises(ValueError, match="missing target column"):
            load_csv(path, target="z")

    def test_round_trip_identity(self, tmp_path):
        g = RngStream(11).generator()
        ds = Dataset(g.standard_normal((20, 4)) * 1e3, g.standard_normal(20))
        path = tmp_path / "rt.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert np.array_equal(back.features, ds.features)
        assert np.array_equal(back.targets, ds.targets)


class TestRngStream:
    def test_same_pair_same_draws(self):
        a = RngStream(5, 9).generator().standard_normal(8)
        b = RngStream(5, 9).generator().standard_normal(8)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(5, 9).generator().standard_normal(8)
        b = RngStream(5, 10).generator().standard_normal(8)
        assert not np.array_equal(a, b)

    def test_children_distinct_and_reproducible(self):
        root = RngStream(5)
        ids = {root.child(k).stream for k in range(1000)}
        assert len(ids) == 1000
        assert root.child(3) == root.child(3)
