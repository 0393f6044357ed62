"""Dataset ingestion, synthetic series generation, and sliding-window sampling.

Datasets are a [T x M] value matrix with a throwaway leading timestamp
column on disk. Forecasting samples are channel-independent: every channel
contributes its own look-back/target windows over the same origins.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError

# TSLib-style fixed month borders for the ETT family (30-day months).
ETT_HOURLY_STEPS_PER_MONTH = 30 * 24
ETT_MINUTE_STEPS_PER_MONTH = 30 * 24 * 4


@dataclass
class RawDataset:
    """An ingested multivariate series: values[T, M] with column names."""

    name: str
    values: np.ndarray
    column_names: list[str]
    frequency: str = "unknown"
    dropped_rows: int = 0

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])

    def ensure_fits(self, lookback: int, horizon: int) -> None:
        """Refuse datasets too short for even one (lookback, horizon) window."""
        if self.length <= lookback + horizon:
            raise DataError(
                f"dataset {self.name!r} has {self.length} timesteps; needs more than "
                f"lookback+horizon = {lookback + horizon}"
            )


@dataclass
class SplitSpec:
    """Contiguous, disjoint train/val/test ranges, by ratio or explicit borders."""

    mode: str = "ratio"
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    borders: tuple[tuple[int, int], ...] = ()

    def resolve(self, total: int) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
        """Concrete (start, end) index pairs for train, val, test."""
        if self.mode == "ratio":
            if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
                raise ConfigError(f"split ratios must be three nonnegative reals, got {self.ratios}")
            if abs(sum(self.ratios) - 1.0) > 1e-9:
                raise ConfigError(f"split ratios must sum to 1, got {self.ratios}")
            n_train = int(total * self.ratios[0])
            n_val = int(total * self.ratios[1])
            return ((0, n_train), (n_train, n_train + n_val), (n_train + n_val, total))
        if self.mode == "ett_border":
            if len(self.borders) != 3:
                raise ConfigError("ett_border mode needs exactly three (start, end) pairs")
            prev_end = 0
            for start, end in self.borders:
                if start != prev_end or end < start:
                    raise ConfigError(f"split borders must be contiguous and ordered, got {self.borders}")
                prev_end = end
            if self.borders[2][1] > total:
                raise ConfigError(
                    f"split borders extend to {self.borders[2][1]} but dataset has {total} rows"
                )
            return tuple(self.borders)  # type: ignore[return-value]
        raise ConfigError(f"unknown split mode {self.mode!r}")


def ett_hourly_split() -> SplitSpec:
    """12/4/4-month borders for the hourly ETT datasets."""
    m = ETT_HOURLY_STEPS_PER_MONTH
    return SplitSpec(mode="ett_border", borders=((0, 12 * m), (12 * m, 16 * m), (16 * m, 20 * m)))


def ett_minute_split() -> SplitSpec:
    """12/4/4-month borders for the 15-minute ETT datasets."""
    m = ETT_MINUTE_STEPS_PER_MONTH
    return SplitSpec(mode="ett_border", borders=((0, 12 * m), (12 * m, 16 * m), (16 * m, 20 * m)))


@dataclass
class SeriesWindow:
    """One channel-independent sample: a look-back slice and its target slice."""

    channel: int
    input: np.ndarray
    target: np.ndarray
    origin: int


def load_csv(path: str | Path, name: str | None = None, frequency: str = "unknown",
             strict: bool = True) -> RawDataset:
    """Read a dataset CSV: one header row, first column a timestamp (ignored),
    remaining columns numeric.

    Strict mode raises on the first malformed row; lenient mode drops such
    rows and records how many were dropped.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    rows: list[list[float]] = []
    dropped = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"dataset file {path} is empty") from None
        if len(header) < 2:
            raise DataError(f"dataset file {path} needs a timestamp column plus data columns")
        width = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                if strict:
                    raise DataError(f"{path}: ragged row at line {line_no} "
                                    f"({len(row)} cells, expected {width})")
                dropped += 1
                continue
            try:
                rows.append([float(cell) for cell in row[1:]])
            except ValueError:
                if strict:
                    raise DataError(f"{path}: non-numeric cell at line {line_no}") from None
                dropped += 1
    if not rows:
        raise DataError(f"{path}: no usable data rows")
    values = np.asarray(rows, dtype=np.float64)
    return RawDataset(
        name=name or path.stem,
        values=values,
        column_names=list(header[1:]),
        frequency=frequency,
        dropped_rows=dropped,
    )


def save_csv(dataset: RawDataset, path: str | Path) -> None:
    """Write a dataset in the same shape the reader accepts (round-trippable)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + dataset.column_names)
        for t in range(dataset.length):
            writer.writerow([str(t)] + [repr(float(v)) for v in dataset.values[t]])


def window_count(split_length: int, lookback: int, horizon: int, stride: int = 1) -> int:
    """Closed-form number of window origins per channel in one split."""
    usable = split_length - lookback - horizon
    if usable < 0:
        return 0
    return usable // stride + 1


def split_origins(split_range: tuple[int, int], lookback: int, horizon: int,
                  stride: int = 1) -> np.ndarray:
    """Every valid window origin inside the split (input and target both inside)."""
    start, end = split_range
    count = window_count(end - start, lookback, horizon, stride)
    return start + stride * np.arange(count, dtype=np.int64)


def make_windows(dataset: RawDataset, split: SplitSpec, lookback: int, horizon: int,
                 stride: int = 1) -> tuple[Iterator[SeriesWindow], ...]:
    """Per-split lazy streams of SeriesWindow over every channel and origin.

    Raises when any split is too short for a single window, so training never
    starts with a silently empty val or test set.
    """
    if lookback < 1 or horizon < 1:
        raise ConfigError(f"lookback and horizon must be >= 1, got L={lookback}, K={horizon}")
    ranges = split.resolve(dataset.length)
    names = ("train", "val", "test")
    all_origins = []
    for split_name, split_range in zip(names, ranges):
        origins = split_origins(split_range, lookback, horizon, stride)
        if origins.size == 0:
            raise DataError(
                f"{split_name} split {split_range} of dataset {dataset.name!r} is too short "
                f"for any (L={lookback}, K={horizon}) window"
            )
        all_origins.append(origins)

    def stream(origins: np.ndarray) -> Iterator[SeriesWindow]:
        for channel in range(dataset.channels):
            column = dataset.values[:, channel]
            for origin in origins:
                o = int(origin)
                yield SeriesWindow(
                    channel=channel,
                    input=column[o:o + lookback].copy(),
                    target=column[o + lookback:o + lookback + horizon].copy(),
                    origin=o,
                )

    return tuple(stream(origins) for origins in all_origins)


def gather_batch(dataset: RawDataset, channels: np.ndarray, origins: np.ndarray,
                 lookback: int, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized window assembly: inputs [B, L] and targets [B, K]."""
    t_idx = origins[:, None] + np.arange(lookback + horizon)[None, :]
    block = dataset.values[t_idx, channels[:, None]]
    return block[:, :lookback], block[:, lookback:]


def synth_multiperiodic(length: int, periods: list[float], amplitudes: list[float],
                        trend_slope: float = 0.0, noise_std: float = 0.0,
                        seed: int = 0, channels: int = 1,
                        name: str = "synthetic") -> RawDataset:
    """Deterministic sum-of-sines series with optional trend and Gaussian noise.

    Channel 0 is the plain sum of sines; later channels get a fixed per-channel
    phase offset so multivariate datasets are not degenerate copies.
    """
    if not periods:
        raise ConfigError("synthetic generator needs at least one period")
    if len(amplitudes) != len(periods):
        raise ConfigError(
            f"got {len(amplitudes)} amplitudes for {len(periods)} periods"
        )
    if length <= 2 * max(periods):
        raise ConfigError(
            f"synthetic length {length} must exceed twice the longest period {max(periods)}"
        )
    rng = np.random.default_rng(seed)
    t = np.arange(length, dtype=np.float64)
    values = np.zeros((length, channels), dtype=np.float64)
    for c in range(channels):
        phase = 2.0 * math.pi * 0.37 * c
        wave = np.zeros(length, dtype=np.float64)
        for period, amp in zip(periods, amplitudes):
            wave += amp * np.sin(2.0 * math.pi * t / period + phase)
        values[:, c] = wave + trend_slope * t
    if noise_std > 0:
        values += rng.normal(0.0, noise_std, size=values.shape)
    columns = [f"ch{c}" for c in range(channels)]
    return RawDataset(name=name, values=values, column_names=columns, frequency="synthetic")
