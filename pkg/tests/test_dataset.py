import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from transferhub.dataset import (
    DatasetError,
    SplitSpec,
    limit_training,
    load_csv,
    make_folds,
    normalize_power,
    split_test_days,
    write_csv,
)


def write_text(tmp_path, text, name="park.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_two_rows(self, tmp_path):
        path = write_text(tmp_path, "timestamp,power,wind_speed\n"
                                    "2020-01-01T00:00:00Z,10,3.5\n"
                                    "2020-01-01T00:15:00Z,20,4.0\n")
        ds = load_csv(path)
        assert len(ds) == 2
        assert ds.step_seconds == 900
        assert ds.samples_per_day == 96
        np.testing.assert_array_equal(ds.power, [10.0, 20.0])
        np.testing.assert_array_equal(ds.features[:, 0], [3.5, 4.0])
        assert ds.feature_names == ("wind_speed",)
        assert not ds.normalized

    def test_non_monotonic(self, tmp_path):
        path = write_text(tmp_path, "timestamp,power,x\n"
                                    "2020-01-01T00:15:00Z,1,1\n"
                                    "2020-01-01T00:00:00Z,1,1\n")
        with pytest.raises(DatasetError, match="non-monotonic"):
            load_csv(path)

    def test_missing_power(self, tmp_path):
        path = write_text(tmp_path, "timestamp,x\n2020-01-01T00:00:00Z,1\n")
        with pytest.raises(DatasetError, match="missing column: power"):
            load_csv(path)

    def test_irregular_step(self, tmp_path):
        path = write_text(tmp_path, "timestamp,power,x\n"
                                    "2020-01-01T00:00:00Z,1,1\n"
                                    "2020-01-01T00:15:00Z,1,1\n"
                                    "2020-01-01T00:45:00Z,1,1\n")
        with pytest.raises(DatasetError, match="row 4: irregular"):
            load_csv(path)

    def test_nan_rejected_with_row(self, tmp_path):
        path = write_text(tmp_path, "timestamp,power,x\n"
                                    "2020-01-01T00:00:00Z,1,1\n"
                                    "2020-01-01T00:15:00Z,1,nan\n")
        with pytest.raises(DatasetError, match="row 3"):
            load_csv(path)

    def test_unparseable_cell(self, tmp_path):
        path = write_text(tmp_path, "timestamp,power,x\n2020-01-01T00:00:00Z,abc,1\n")
        with pytest.raises(DatasetError, match="row 2: unparseable"):
            load_csv(path)

    def test_round_trip(self, tmp_path):
        ds = make_dataset(n_days=3, samples_per_day=24, seed=3)
        write_csv(ds, tmp_path / "a.csv")
        back = load_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back.timestamps, ds.timestamps)
        np.testing.assert_allclose(back.features, ds.features, rtol=1e-12)
        np.testing.assert_allclose(back.power, ds.power, rtol=1e-12)
        assert back.samples_per_day == 24

    def test_day_gaps_allowed_when_requested(self, tmp_path):
        ds = make_dataset(n_days=6, samples_per_day=4)
        sub = ds.select_days([0, 2, 5])
        write_csv(sub, tmp_path / "gaps.csv")
        with pytest.raises(DatasetError, match="irregular"):
            load_csv(tmp_path / "gaps.csv")
        back = load_csv(tmp_path / "gaps.csv", allow_day_gaps=True)
        assert back.n_days == 3


class TestNormalize:
    def test_divides(self):
        ds = make_dataset(n_days=1, samples_per_day=3)
        ds = ds.__class__(**{**ds.__dict__, "power": np.array([0.0, 500.0, 1000.0])})
        out = normalize_power(ds, 1000.0)
        np.testing.assert_allclose(out.power, [0.0, 0.5, 1.0])
        assert out.nominal_power == 1000.0 and out.normalized

    def test_unit_nominal_is_identity(self):
        ds = make_dataset()
        np.testing.assert_array_equal(normalize_power(ds, 1.0).power, ds.power)

    def test_zero_nominal(self):
        with pytest.raises(DatasetError):
            normalize_power(make_dataset(), 0.0)


class TestSplits:
    def test_counts(self):
        train, test = split_test_days(make_dataset(n_days=8), 0.25, seed=7)
        assert (train.n_days, test.n_days) == (6, 2)

    def test_deterministic(self):
        ds = make_dataset(n_days=20)
        a = split_test_days(ds, 0.25, 5)[1]
        b = split_test_days(ds, 0.25, 5)[1]
        np.testing.assert_array_equal(a.timestamps, b.timestamps)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
    def test_bad_fraction(self, fraction):
        with pytest.raises(DatasetError):
            split_test_days(make_dataset(), fraction, 0)

    def test_too_few_days(self):
        with pytest.raises(DatasetError):
            split_test_days(make_dataset(n_days=3), 0.25, 0)

    @settings(max_examples=40, deadline=None)
    @given(n_days=st.integers(10, 60), seed=st.integers(0, 2**63 - 1), fraction=st.floats(0.1, 0.6))
    def test_partition_property(self, n_days, seed, fraction):
        ds = make_dataset(n_days=n_days, samples_per_day=2)
        train, test = split_test_days(ds, fraction, seed)
        a = set(train.day_origins.tolist())
        b = set(test.day_origins.tolist())
        assert a.isdisjoint(b)
        assert a | b == set(ds.day_origins.tolist())
        assert len(b) == round(fraction * n_days)


class TestLimitTraining:
    def test_summer_window(self):
        ds = make_dataset(n_days=100, samples_per_day=4, start="2021-06-01")
        out = limit_training(ds, SplitSpec("summer", 7))
        assert len(out) == 7 * 4
        months = out.timestamps.astype("datetime64[M]").astype(int) % 12 + 1
        assert set(months) <= {6, 7, 8}
        # the most recent summer days
        assert out.day_origins[-1] == np.datetime64("2021-08-31")

    def test_exact_boundary(self):
        ds = make_dataset(n_days=30, samples_per_day=2, start="2021-06-01")
        assert limit_training(ds, SplitSpec("summer", 30)).n_days == 30

    def test_not_enough_days(self):
        ds = make_dataset(n_days=30, samples_per_day=2, start="2021-06-01")
        with pytest.raises(DatasetError, match="30 days available"):
            limit_training(ds, SplitSpec("summer", 90))

    def test_grid_enforced(self):
        with pytest.raises(DatasetError):
            SplitSpec("summer", 8)
        assert SplitSpec("summer", 8, allow_off_grid=True).train_days == 8

    @settings(max_examples=25, deadline=None)
    @given(days=st.sampled_from([7, 14, 30, 60, 90]))
    def test_length(self, days):
        ds = make_dataset(n_days=200, samples_per_day=3, start="2021-01-01")
        assert len(limit_training(ds, SplitSpec("spring", days))) == days * 3


class TestFolds:
    def test_five_parks(self):
        hub = [make_dataset(park_id=str(i)) for i in range(5)]
        folds = make_folds(hub, 5)
        assert all(len(f.targets) == 1 and len(f.sources) == 4 for f in folds)

    def test_each_park_target_once(self):
        hub = [make_dataset(park_id=str(i)) for i in range(10)]
        targets = sorted(t for f in make_folds(hub, 5) for t in f.targets)
        assert targets == list(range(10))
        for f in make_folds(hub, 5):
            assert set(f.sources).isdisjoint(f.targets)

    def test_hub_too_small(self):
        with pytest.raises(DatasetError):
            make_folds([make_dataset() for _ in range(3)], 5)


def test_horizon_indices_are_permutation_per_day():
    ds = make_dataset(n_days=3, samples_per_day=5)
    h = ds.horizon.reshape(3, 5)
    for row in h:
        assert sorted(row) == [1, 2, 3, 4, 5]
