"""Per-window instance normalization and multi-scale patch extraction.

Normalization is population z-scoring with an eps-floored divisor whose
statistics are kept so predictions can be mapped back exactly. Patching
slices the normalized window into overlapping (or touching) segments at
several scales; each scale pads the end with repeats of the final value so
the patch-count formula floor((L - P_j)/S_j) + 2 always holds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

DEFAULT_NORM_EPS = 1e-5


@dataclass
class NormStats:
    """Mean and (pre-floor) population std of one window; arrays when batched."""

    mean: float | np.ndarray
    std: float | np.ndarray
    eps: float = DEFAULT_NORM_EPS


def instance_normalize(x: np.ndarray, eps: float = DEFAULT_NORM_EPS) -> tuple[np.ndarray, NormStats]:
    """Z-score one window with divisor std + eps; constant windows map to zeros."""
    x = np.asarray(x, dtype=np.float64)
    mean = float(x.mean())
    std = float(x.std())
    return (x - mean) / (std + eps), NormStats(mean=mean, std=std, eps=eps)


def denormalize(y: np.ndarray, stats: NormStats) -> np.ndarray:
    """Undo instance normalization: y * (std + eps) + mean."""
    return np.asarray(y) * (stats.std + stats.eps) + stats.mean


def normalize_batch(x: np.ndarray, eps: float = DEFAULT_NORM_EPS) -> tuple[np.ndarray, NormStats]:
    """Row-wise instance normalization of a [B, L] batch; stats are [B, 1] arrays."""
    mean = x.mean(axis=-1, keepdims=True)
    std = x.std(axis=-1, keepdims=True)
    return (x - mean) / (std + eps), NormStats(mean=mean, std=std, eps=eps)


def _scaled(base: int, factor: float) -> int:
    # round-half-up keeps 0.5-style factors deterministic across platforms
    return max(1, int(math.floor(base * factor + 0.5)))


@dataclass
class PatchSpec:
    """Base patch length and stride plus one scale factor per expert."""

    patch_len: int
    stride: int
    scale_factors: list[float] = field(default_factory=lambda: [1.0])

    def __post_init__(self) -> None:
        if self.patch_len < 1 or self.stride < 1:
            raise ConfigError(
                f"patch length and stride must be >= 1, got P={self.patch_len}, S={self.stride}"
            )
        if not self.scale_factors:
            raise ConfigError("at least one scale factor is required")
        for j, f in enumerate(self.scale_factors):
            if f <= 0:
                raise ConfigError(f"scale factor {j} must be positive, got {f}")
            if abs(self.patch_len * f - round(self.patch_len * f)) > 1e-9:
                log.warning("scale %d: patch length %s*%s rounds to %d",
                            j, self.patch_len, f, _scaled(self.patch_len, f))

    @property
    def num_scales(self) -> int:
        return len(self.scale_factors)

    def scaled_patch_len(self, j: int) -> int:
        return _scaled(self.patch_len, self.scale_factors[j])

    def scaled_stride(self, j: int) -> int:
        return _scaled(self.stride, self.scale_factors[j])

    def patch_count(self, j: int, lookback: int) -> int:
        p, s = self.scaled_patch_len(j), self.scaled_stride(j)
        if p > lookback:
            raise ConfigError(
                f"scale {j}: patch length {p} exceeds look-back window {lookback}"
            )
        return (lookback - p) // s + 2

    def geometry(self, lookback: int) -> list[tuple[int, int, int]]:
        """(P_j, S_j, N_j) per scale, validating every scale against L."""
        return [
            (self.scaled_patch_len(j), self.scaled_stride(j), self.patch_count(j, lookback))
            for j in range(self.num_scales)
        ]


@dataclass
class PatchSet:
    """Per-scale patch matrices [P_j x N_j] for one window, plus their geometry."""

    scales: list[np.ndarray]
    geometry: list[tuple[int, int, int]]


def extract_patch_matrix(x: np.ndarray, patch_len: int, stride: int) -> np.ndarray:
    """Patch matrices for [..., L]: pad the end with `stride` repeats of the final
    value, then take columns [k*S, k*S + P) for k = 0 .. N-1. Output [..., P, N]."""
    x = np.asarray(x)
    lookback = x.shape[-1]
    if patch_len > lookback:
        raise ConfigError(f"patch length {patch_len} exceeds look-back window {lookback}")
    n = (lookback - patch_len) // stride + 2
    pad = np.repeat(x[..., -1:], stride, axis=-1)
    padded = np.concatenate([x, pad], axis=-1)
    idx = np.arange(patch_len)[:, None] + stride * np.arange(n)[None, :]
    return padded[..., idx]


def extract_patches(x_norm: np.ndarray, spec: PatchSpec) -> PatchSet:
    """All per-scale patch matrices for one normalized window of length L."""
    x_norm = np.asarray(x_norm, dtype=np.float64)
    lookback = x_norm.shape[-1]
    geometry = spec.geometry(lookback)
    scales = [
        extract_patch_matrix(x_norm, p, s) for (p, s, _) in geometry
    ]
    return PatchSet(scales=scales, geometry=geometry)
