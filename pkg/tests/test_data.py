"""CSV ingestion, window enumeration, splits, and the synthetic generator."""

import os
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from adamixt.data import (RawDataset, SplitSpec, ett_hourly_split,
                          ett_minute_split, gather_batch, load_csv,
                          make_windows, save_csv, split_origins,
                          synth_multiperiodic, window_count)
from adamixt.errors import ConfigError, DataError


def write_csv(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


TOY = "date,a,b\n2020-01-01,1.0,4.0\n2020-01-02,2.0,5.0\n2020-01-03,3.0,6.0\n"


class TestLoadCsv:
    def test_toy_shape(self, tmp_path):
        ds = load_csv(write_csv(tmp_path / "toy.csv", TOY))
        assert ds.values.shape == (3, 2)
        assert ds.column_names == ["a", "b"]
        npt.assert_array_equal(ds.values[:, 0], [1.0, 2.0, 3.0])

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_csv(tmp_path / "nope.csv")

    def test_malformed_row_strict_names_line(self, tmp_path):
        bad = TOY + "2020-01-04,oops,7.0\n"
        with pytest.raises(DataError, match="line 5"):
            load_csv(write_csv(tmp_path / "bad.csv", bad))

    def test_ragged_row_strict_names_line(self, tmp_path):
        bad = TOY + "2020-01-04,7.0\n"
        with pytest.raises(DataError, match="line 5"):
            load_csv(write_csv(tmp_path / "ragged.csv", bad))

    def test_lenient_drops_and_counts(self, tmp_path):
        bad = TOY + "2020-01-04,oops,7.0\n2020-01-05,8.0,9.0\n"
        ds = load_csv(write_csv(tmp_path / "bad.csv", bad), strict=False)
        assert ds.values.shape == (4, 2)
        assert ds.dropped_rows == 1

    def test_save_load_round_trip(self, tmp_path):
        ds = synth_multiperiodic(120, [12.0], [1.0], noise_std=0.2, seed=5, channels=3)
        path = tmp_path / "round.csv"
        save_csv(ds, path)
        back = load_csv(path)
        npt.assert_array_equal(back.values, ds.values)
        assert back.column_names == ds.column_names

    def test_etth1_statistics_if_present(self):
        path = os.environ.get("ADAMIXT_ETTH1", "data/ETTh1.csv")
        if not Path(path).exists():
            pytest.skip("ETTh1.csv not supplied")
        ds = load_csv(path)
        assert ds.channels == 7
        assert ds.length == 17420


class TestSplits:
    def test_ratio_resolution(self):
        spec = SplitSpec(ratios=(0.7, 0.1, 0.2))
        train, val, test = spec.resolve(100)
        assert train == (0, 70) and val == (70, 80) and test == (80, 100)

    def test_splits_contiguous_disjoint_ordered(self):
        for spec in (SplitSpec(), ett_hourly_split(), ett_minute_split()):
            total = 60000
            train, val, test = spec.resolve(total)
            assert train[1] == val[0] and val[1] == test[0]
            assert train[0] < val[0] < test[0]

    def test_ett_hourly_borders(self):
        train, val, test = ett_hourly_split().resolve(17420)
        assert train == (0, 8640) and val == (8640, 11520) and test == (11520, 14400)

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            SplitSpec(ratios=(0.5, 0.5, 0.5)).resolve(100)

    def test_border_overrun(self):
        spec = SplitSpec(mode="ett_border", borders=((0, 10), (10, 20), (20, 200)))
        with pytest.raises(ConfigError):
            spec.resolve(100)

    def test_no_global_scaler_exists(self):
        # normalization is per-instance; the dataset object carries no fitted
        # statistics that could leak across splits
        ds = synth_multiperiodic(200, [10.0], [1.0], seed=0)
        assert not any("mean" in a or "std" in a or "scaler" in a for a in vars(ds))


class TestMakeWindows:
    def test_enumeration_example(self):
        ds = RawDataset("t", np.arange(10.0).reshape(-1, 1), ["x"])
        spec = SplitSpec(mode="ett_border", borders=((0, 10), (10, 10), (10, 10)))
        # only the train split is nonempty here, so enumerate directly
        origins = split_origins((0, 10), 4, 2, 1)
        npt.assert_array_equal(origins, [0, 1, 2, 3, 4])

    def test_exact_fit_single_window(self):
        origins = split_origins((0, 6), 4, 2, 1)
        npt.assert_array_equal(origins, [0])

    def test_channel_independence_triples_count(self):
        ds = synth_multiperiodic(100, [10.0], [1.0], seed=1, channels=3)
        spec = SplitSpec(ratios=(0.6, 0.2, 0.2))
        train, _, _ = make_windows(ds, spec, 8, 4, 1)
        windows = list(train)
        single = window_count(60, 8, 4, 1)
        assert len(windows) == 3 * single
        channels = {w.channel for w in windows}
        assert channels == {0, 1, 2}

    def test_window_contents(self):
        ds = RawDataset("t", np.arange(40.0).reshape(-1, 1), ["x"])
        spec = SplitSpec(ratios=(0.5, 0.25, 0.25))
        train, val, test = make_windows(ds, spec, 4, 2, 1)
        first = next(iter(train))
        npt.assert_array_equal(first.input, [0, 1, 2, 3])
        npt.assert_array_equal(first.target, [4, 5])
        assert first.origin == 0

    def test_empty_split_raises(self):
        ds = synth_multiperiodic(100, [10.0], [1.0], seed=2)
        with pytest.raises(DataError, match="val split"):
            make_windows(ds, SplitSpec(ratios=(0.9, 0.05, 0.05)), 8, 4)

    def test_count_formula_vs_enumeration_200_random(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            length = int(rng.integers(1, 300))
            lookback = int(rng.integers(1, 40))
            horizon = int(rng.integers(1, 20))
            stride = int(rng.integers(1, 8))
            enumerated = sum(
                1 for origin in range(0, max(0, length))
                if origin % stride == 0 and origin + lookback + horizon <= length
            )
            assert window_count(length, lookback, horizon, stride) == enumerated

    def test_no_leakage_windows_stay_inside_their_split(self):
        ds = synth_multiperiodic(300, [10.0], [1.0], seed=4, channels=2)
        spec = SplitSpec(ratios=(0.6, 0.2, 0.2))
        ranges = spec.resolve(ds.length)
        streams = make_windows(ds, spec, 16, 8, 1)
        for (start, end), stream in zip(ranges, streams):
            for w in stream:
                assert w.origin >= start
                assert w.origin + 16 + 8 <= end

    def test_streams_are_lazy_iterators(self):
        ds = synth_multiperiodic(100, [10.0], [1.0], seed=6)
        streams = make_windows(ds, SplitSpec(ratios=(0.6, 0.2, 0.2)), 8, 4)
        for stream in streams:
            assert iter(stream) is stream       # generator, not a list
            assert not isinstance(stream, (list, tuple))

    def test_gather_batch_matches_stream(self):
        ds = synth_multiperiodic(200, [10.0], [1.0], seed=5, channels=2)
        spec = SplitSpec(ratios=(0.6, 0.2, 0.2))
        train, _, _ = make_windows(ds, spec, 8, 4, 1)
        windows = list(train)
        channels = np.array([w.channel for w in windows])
        origins = np.array([w.origin for w in windows])
        inputs, targets = gather_batch(ds, channels, origins, 8, 4)
        for i, w in enumerate(windows):
            npt.assert_array_equal(inputs[i], w.input)
            npt.assert_array_equal(targets[i], w.target)


class TestSynthetic:
    def test_pure_sine(self):
        ds = synth_multiperiodic(100, [20.0], [1.0], trend_slope=0.0, noise_std=0.0, seed=0)
        t = np.arange(100)
        npt.assert_allclose(ds.values[:, 0], np.sin(2 * np.pi * t / 20.0), atol=1e-12)

    def test_same_seed_identical(self):
        a = synth_multiperiodic(200, [24.0, 7.0], [1.0, 0.5], noise_std=0.3, seed=9)
        b = synth_multiperiodic(200, [24.0, 7.0], [1.0, 0.5], noise_std=0.3, seed=9)
        npt.assert_array_equal(a.values, b.values)

    def test_different_seed_differs(self):
        a = synth_multiperiodic(200, [24.0], [1.0], noise_std=0.3, seed=1)
        b = synth_multiperiodic(200, [24.0], [1.0], noise_std=0.3, seed=2)
        assert not np.array_equal(a.values, b.values)

    def test_dft_peaks_at_configured_periods(self):
        # independent spectral check via the FFT
        length = 1680  # common multiple of 24 and 168
        ds = synth_multiperiodic(length, [24.0, 168.0], [1.0, 1.0], noise_std=0.0, seed=0)
        spectrum = np.abs(np.fft.rfft(ds.values[:, 0]))
        spectrum[0] = 0.0
        top_two = set(np.argsort(spectrum)[-2:])
        assert top_two == {length // 24, length // 168}

    def test_trend(self):
        ds = synth_multiperiodic(100, [10.0], [0.0], trend_slope=0.5, noise_std=0.0, seed=0)
        npt.assert_allclose(ds.values[:, 0], 0.5 * np.arange(100), atol=1e-12)

    def test_validation(self):
        with pytest.raises(ConfigError):
            synth_multiperiodic(100, [], [], seed=0)
        with pytest.raises(ConfigError):
            synth_multiperiodic(100, [60.0], [1.0], seed=0)
        with pytest.raises(ConfigError):
            synth_multiperiodic(100, [10.0], [1.0, 2.0], seed=0)

    def test_refuses_short_dataset(self):
        ds = synth_multiperiodic(100, [10.0], [1.0], seed=0)
        with pytest.raises(DataError, match="timesteps"):
            ds.ensure_fits(60, 40)
