"""Forecast quality metrics and latency statistics."""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def metric_mse_mae(preds: np.ndarray, targets: np.ndarray) -> tuple[float, float]:
    """Mean squared and mean absolute error over all elements."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.size == 0:
        raise ContractError("metrics need at least one element")
    if preds.shape != targets.shape:
        raise ContractError(
            f"prediction shape {preds.shape} does not match target shape {targets.shape}"
        )
    err = preds - targets
    return float((err * err).mean()), float(np.abs(err).mean())


def per_step_mse_mae(preds: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """MSE/MAE resolved per horizon step: [W, K] inputs -> two [K] arrays."""
    if preds.size == 0 or preds.shape != targets.shape:
        raise ContractError(
            f"per-step metrics need matching nonempty [W, K] arrays, got "
            f"{preds.shape} vs {targets.shape}"
        )
    err = preds - targets
    return (err * err).mean(axis=0), np.abs(err).mean(axis=0)


def latency_stats(per_window_seconds: list[float]) -> dict[str, float]:
    """Mean / p50 / p95 per-window latency plus throughput, from timed rounds."""
    if not per_window_seconds:
        raise ContractError("latency stats need at least one timed round")
    arr = np.asarray(per_window_seconds, dtype=np.float64)
    mean = float(arr.mean())
    return {
        "mean_ms": mean * 1e3,
        "p50_ms": float(np.percentile(arr, 50)) * 1e3,
        "p95_ms": float(np.percentile(arr, 95)) * 1e3,
        "windows_per_s": 1.0 / mean if mean > 0 else float("inf"),
    }
