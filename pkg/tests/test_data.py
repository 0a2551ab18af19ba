import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from transde.data import (SynthConfig, TimeSeriesDataset, apply_normalizer, fit_normalizer,
                          load_csv, load_dataset, load_raw, save_csv, save_raw, sliding_windows,
                          synthesize, synthesize_pair, window_origins)
from transde.errors import DataError


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadCsv:
    def test_direct_parse(self, tmp_path):
        ds = load_csv(write(tmp_path, "a.csv", "a,b\n1,2\n3,4\n5,6\n"))
        np.testing.assert_array_equal(ds.values, [[1, 2], [3, 4], [5, 6]])
        assert (ds.T, ds.d) == (3, 2)
        assert ds.labels is None

    def test_label_column(self, tmp_path):
        ds = load_csv(write(tmp_path, "a.csv", "a,b,label\n1,2,0\n3,4,0\n5,6,0\n"), has_labels=True)
        np.testing.assert_array_equal(ds.labels, [0, 0, 0])
        assert ds.d == 2

    def test_non_numeric_cell(self, tmp_path):
        with pytest.raises(DataError, match="non-numeric cell at row 2, col 1"):
            load_csv(write(tmp_path, "a.csv", "a,b\n1,2\nx,4\n"))

    def test_ragged_row(self, tmp_path):
        with pytest.raises(DataError, match="ragged row"):
            load_csv(write(tmp_path, "a.csv", "a,b\n1,2\n3\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing file"):
            load_csv(tmp_path / "nope.csv")

    def test_label_outside_binary(self, tmp_path):
        with pytest.raises(DataError, match="label outside"):
            load_csv(write(tmp_path, "a.csv", "a,label\n1,0\n2,2\n"), has_labels=True)

    def test_nan_rejected(self, tmp_path):
        with pytest.raises(DataError, match="NaN"):
            load_csv(write(tmp_path, "a.csv", "a\n1\nnan\n"))

    def test_dot_decimal(self, tmp_path):
        ds = load_csv(write(tmp_path, "a.csv", "a\n1.5\n-2.25e1\n"))
        np.testing.assert_array_equal(ds.values[:, 0], [1.5, -22.5])

    def test_label_length_checked(self):
        with pytest.raises(DataError, match="labels length"):
            TimeSeriesDataset(np.zeros((3, 1)), labels=np.zeros(2))


class TestLoadRaw:
    def test_direct_decode(self, tmp_path):
        path = tmp_path / "x.f32"
        path.write_bytes(struct.pack("<2f", 1.0, 2.0))
        ds = load_raw(path, {"T": 1, "d": 2})
        np.testing.assert_array_equal(ds.values, [[1.0, 2.0]])

    def test_size_mismatch(self, tmp_path):
        path = tmp_path / "x.f32"
        path.write_bytes(struct.pack("<2f", 1.0, 2.0))
        with pytest.raises(DataError, match="size mismatch"):
            load_raw(path, {"T": 2, "d": 2})

    def test_empty_series(self, tmp_path):
        path = tmp_path / "x.f32"
        path.write_bytes(b"")
        with pytest.raises(DataError, match="empty series"):
            load_raw(path, {"T": 0, "d": 2})

    def test_unreadable_sidecar(self, tmp_path):
        path = tmp_path / "x.f32"
        path.write_bytes(struct.pack("<2f", 1.0, 2.0))
        (tmp_path / "x.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(DataError, match="unreadable sidecar"):
            load_raw(path)

    def test_row_major_with_labels(self, tmp_path):
        values = np.arange(6, dtype=np.float32).reshape(3, 2)
        path = tmp_path / "x.f32"
        path.write_bytes(values.astype("<f4").tobytes())
        (tmp_path / "lab.txt").write_text("0\n1\n0\n", encoding="utf-8")
        (tmp_path / "x.json").write_text(json.dumps({"T": 3, "d": 2, "labels": "lab.txt"}), encoding="utf-8")
        ds = load_raw(path)
        np.testing.assert_array_equal(ds.values, values)
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])

    def test_save_roundtrip(self, tmp_path):
        ds = TimeSeriesDataset(np.array([[0.5, -1.0], [2.0, 3.25]]), labels=np.array([0, 1]))
        save_raw(ds, tmp_path / "y.f32")
        back = load_dataset(tmp_path / "y.f32")
        np.testing.assert_array_equal(back.values, ds.values)
        np.testing.assert_array_equal(back.labels, ds.labels)


def test_csv_roundtrip_bitwise(tmp_path, rng):
    ds = TimeSeriesDataset(rng.normal(size=(20, 3)), labels=rng.integers(0, 2, 20))
    save_csv(ds, tmp_path / "r.csv")
    back = load_dataset(tmp_path / "r.csv")
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.labels, ds.labels)


class TestNormalizer:
    def test_constant_column_floored(self):
        stats = fit_normalizer(TimeSeriesDataset(np.ones((3, 1))))
        assert stats.mean[0] == 1.0
        assert stats.std[0] == 1e-8

    def test_two_points(self):
        stats = fit_normalizer(TimeSeriesDataset(np.array([[0.0], [2.0]])))
        assert (stats.mean[0], stats.std[0]) == (1.0, 1.0)

    def test_population_std(self):
        stats = fit_normalizer(TimeSeriesDataset(np.array([[1.0], [2.0], [3.0], [4.0]])))
        x = [1.0, 2.0, 3.0, 4.0]
        mu = sum(x) / 4
        sigma = (sum((v - mu) ** 2 for v in x) / 4) ** 0.5
        assert stats.mean[0] == pytest.approx(2.5)
        assert stats.std[0] == pytest.approx(sigma, rel=1e-12)
        assert stats.std[0] == pytest.approx(1.118034, abs=1e-6)

    def test_needs_two_rows(self):
        with pytest.raises(DataError):
            fit_normalizer(TimeSeriesDataset(np.ones((1, 2))))

    def test_apply(self):
        stats = fit_normalizer(TimeSeriesDataset(np.array([[0.0], [2.0]])))
        out = apply_normalizer(TimeSeriesDataset(np.array([[0.0], [2.0]])), stats)
        np.testing.assert_array_equal(out.values, [[-1.0], [1.0]])

    def test_constant_column_maps_to_zero(self):
        ds = TimeSeriesDataset(np.full((4, 1), 3.0))
        np.testing.assert_array_equal(apply_normalizer(ds, fit_normalizer(ds)).values, 0.0)

    def test_test_labels_pass_through(self):
        train = TimeSeriesDataset(np.array([[0.0], [2.0]]))
        test = TimeSeriesDataset(np.array([[1.0], [5.0], [2.0]]), labels=np.array([0, 1, 0]), split="test")
        out = apply_normalizer(test, fit_normalizer(train))
        np.testing.assert_array_equal(out.labels, [0, 1, 0])
        assert out.split == "test"

    def test_dimension_mismatch(self):
        stats = fit_normalizer(TimeSeriesDataset(np.zeros((2, 2)) + [[0, 0], [1, 1]]))
        with pytest.raises(DataError, match="dimension mismatch"):
            apply_normalizer(TimeSeriesDataset(np.zeros((2, 3))), stats)

    @given(hnp.arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 4)),
                      elements=st.floats(-1e3, 1e3)))
    def test_roundtrip(self, values):
        ds = TimeSeriesDataset(values)
        stats = fit_normalizer(ds)
        back = stats.inverse(apply_normalizer(ds, stats).values)
        np.testing.assert_allclose(back, values, rtol=1e-6, atol=1e-6 * (1 + np.abs(values).max()))


class TestWindows:
    def test_exact_division(self):
        batch = sliding_windows(TimeSeriesDataset(np.arange(6.0)[:, None]), 3, 3)
        np.testing.assert_array_equal(batch.origin_indices, [0, 3])

    def test_tail_window(self):
        ds = TimeSeriesDataset(np.arange(7.0)[:, None])
        assert list(sliding_windows(ds, 3, 3).origin_indices) == [0, 3]
        tail = sliding_windows(ds, 3, 3, cover_tail=True)
        assert list(tail.origin_indices) == [0, 3, 4]
        np.testing.assert_array_equal(tail.windows[2, :, 0], [4, 5, 6])

    def test_single_window(self):
        batch = sliding_windows(TimeSeriesDataset(np.arange(3.0)[:, None]), 3, 1)
        assert list(batch.origin_indices) == [0]

    def test_default_stride_is_window(self):
        assert sliding_windows(TimeSeriesDataset(np.zeros((10, 1))), 5).stride == 5

    def test_window_longer_than_series(self):
        with pytest.raises(DataError):
            sliding_windows(TimeSeriesDataset(np.zeros((3, 1))), 4)

    @given(st.integers(1, 60), st.integers(1, 60), st.integers(1, 10))
    def test_count_and_contiguity(self, T, W, stride):
        if W > T:
            return
        values = np.arange(T, dtype=np.float64)[:, None]
        batch = sliding_windows(TimeSeriesDataset(values), W, stride)
        assert len(batch.origin_indices) == (T - W) // stride + 1
        assert np.all(np.diff(batch.origin_indices) == stride)
        for o, w in zip(batch.origin_indices, batch.windows):
            np.testing.assert_array_equal(w[:, 0], values[o:o + W, 0])

    @given(st.integers(1, 80), st.integers(1, 80))
    def test_full_coverage(self, T, W):
        if W > T:
            return
        for stride in (1, W):
            covered = np.zeros(T, dtype=bool)
            for o in window_origins(T, W, stride, cover_tail=True):
                covered[o:o + W] = True
            assert covered.all()


class TestSynthesize:
    def test_deterministic(self):
        a = synthesize(SynthConfig(T=500, seed=7))
        b = synthesize(SynthConfig(T=500, seed=7))
        np.testing.assert_array_equal(a.values, b.values)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.anomalies == b.anomalies

    def test_no_kinds_no_labels(self):
        ds = synthesize(SynthConfig(T=500, kinds=()))
        assert ds.labels.sum() == 0

    def test_rate_within_bounds(self):
        for seed in range(5):
            ds = synthesize(SynthConfig(seed=seed))
            assert 0.01 <= ds.labels.mean() <= 0.15

    def test_events_match_labels(self):
        ds = synthesize(SynthConfig(seed=3))
        rebuilt = np.zeros(ds.T, dtype=np.int64)
        for e in ds.anomalies:
            rebuilt[e["start"]:e["end"]] = 1
        np.testing.assert_array_equal(rebuilt, ds.labels)

    def test_spike_deviates_from_local_mean(self):
        ds = synthesize(SynthConfig(seed=5, kinds=("spike",)))
        sigma = 0.1
        for e in ds.anomalies:
            t, v = e["start"], e["var"]
            assert ds.labels[t] == 1
            assert abs(e["amplitude"]) >= 5 * sigma
            local = np.r_[ds.values[t - 5:t, v], ds.values[t + 1:t + 6, v]].mean()
            assert abs(ds.values[t, v] - local) >= 5 * sigma
            assert np.sign(ds.values[t, v] - local) == np.sign(e["amplitude"])

    def test_pair_shares_shape_not_noise(self):
        train, test = synthesize_pair(SynthConfig(T=400, seed=2))
        assert train.labels.sum() == 0 and test.labels.sum() > 0
        assert train.split == "train" and test.split == "test"
        assert not np.array_equal(train.values, test.values)

    @pytest.mark.parametrize("kw", [dict(T=100), dict(d=0), dict(kinds=("nope",)), dict(anomaly_rate=0.5)])
    def test_invalid(self, kw):
        with pytest.raises(DataError):
            synthesize(SynthConfig(**kw))
