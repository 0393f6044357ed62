"""Instance-normalization round trips and patch-extraction oracles."""

import numpy as np
import numpy.testing as npt
import pytest

from adamixt.errors import ConfigError
from adamixt.preprocess import (NormStats, PatchSpec, denormalize,
                                extract_patch_matrix, extract_patches,
                                instance_normalize, normalize_batch)


def sliding_patch_oracle(x, patch_len, stride):
    """Brute force: pad with `stride` repeats of the last value, then slide."""
    padded = list(x) + [x[-1]] * stride
    cols = []
    k = 0
    while k * stride + patch_len <= len(padded):
        cols.append(padded[k * stride:k * stride + patch_len])
        k += 1
    return np.array(cols).T


class TestInstanceNormalize:
    def test_constant_window(self):
        out, stats = instance_normalize(np.array([5.0, 5.0, 5.0, 5.0]))
        npt.assert_array_equal(out, np.zeros(4))
        assert stats.mean == 5.0 and stats.std == 0.0

    def test_three_point_example_population_std(self):
        x = np.array([1.0, 2.0, 3.0])
        out, stats = instance_normalize(x)
        # direct-formula oracle
        mean = sum(x) / 3
        std = (sum((v - mean) ** 2 for v in x) / 3) ** 0.5
        npt.assert_allclose(out, (x - mean) / (std + 1e-5), atol=1e-15)
        npt.assert_allclose(out, [-1.2247, 0.0, 1.2247], atol=2e-4)
        assert abs(stats.std - std) < 1e-15

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(rng.normal() * 10, abs(rng.normal()) + 0.01, size=64)
            out, stats = instance_normalize(x)
            npt.assert_allclose(denormalize(out, stats), x, atol=1e-9)

    def test_round_trip_constant(self):
        x = np.full(16, -3.25)
        out, stats = instance_normalize(x)
        npt.assert_allclose(denormalize(out, stats), x, atol=1e-12)

    def test_output_moments(self):
        rng = np.random.default_rng(1)
        x = rng.normal(4.0, 3.0, size=128)
        out, _ = instance_normalize(x)
        assert abs(out.mean()) < 1e-9
        # divisor is std + eps, so the output std sits at std/(std+eps)
        assert abs(out.std() - 1.0) < 1e-4

    def test_shift_invariance_exact(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=48)
        base, _ = instance_normalize(x)
        for b in (5.0, -7.0, 123.0):
            shifted, _ = instance_normalize(x + b)
            npt.assert_allclose(shifted, base, atol=1e-9)

    def test_scale_invariance_within_eps_effect(self):
        # the eps-floored divisor (std + eps) bounds scale invariance at the
        # eps scale, not machine precision: |delta| <= |x_norm| * eps / std
        rng = np.random.default_rng(2)
        x = rng.normal(size=48)
        base, _ = instance_normalize(x)
        for a, b in ((2.0, 5.0), (0.3, -7.0), (11.0, 0.0)):
            scaled, _ = instance_normalize(a * x + b)
            npt.assert_allclose(scaled, base, atol=1e-4)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 32))
        batch_out, stats = normalize_batch(x)
        for i in range(5):
            single, s = instance_normalize(x[i])
            npt.assert_allclose(batch_out[i], single, atol=1e-12)
            assert abs(stats.mean[i, 0] - s.mean) < 1e-12
            assert abs(stats.std[i, 0] - s.std) < 1e-12


class TestDenormalize:
    def test_zero_vector_gives_mean(self):
        stats = NormStats(mean=4.5, std=2.0)
        npt.assert_allclose(denormalize(np.zeros(6), stats), np.full(6, 4.5), atol=1e-15)

    def test_identity_stats(self):
        stats = NormStats(mean=0.0, std=1.0, eps=0.0)
        y = np.array([1.0, -2.0, 0.5])
        npt.assert_allclose(denormalize(y, stats), y, atol=1e-12)

    def test_inverse_pair(self):
        x = np.linspace(-4, 9, 40)
        out, stats = instance_normalize(x)
        npt.assert_allclose(denormalize(out, stats), x, atol=1e-9)


class TestExtractPatches:
    def test_formula_arithmetic_base_case(self):
        spec = PatchSpec(16, 8, [1.0])
        ps = extract_patches(np.arange(96.0), spec)
        assert ps.geometry == [(16, 8, 12)]
        assert ps.scales[0].shape == (16, 12)

    def test_enumeration_example(self):
        x = np.arange(10.0)
        spec = PatchSpec(4, 2, [1.0])
        ps = extract_patches(x, spec)
        p, s, n = ps.geometry[0]
        assert (p, s, n) == (4, 2, 5)
        # padded length 12; patch 4 covers indices 8..11, of which 10, 11
        # hold the repeated final value x[9]
        npt.assert_array_equal(ps.scales[0][:, 4], [8.0, 9.0, 9.0, 9.0])
        npt.assert_array_equal(ps.scales[0], sliding_patch_oracle(x, 4, 2))

    def test_two_scale_geometry(self):
        spec = PatchSpec(8, 4, [1.0, 2.0])
        ps = extract_patches(np.zeros(96), spec)
        assert ps.geometry == [(8, 4, 24), (16, 8, 12)]

    def test_patch_larger_than_window_names_scale(self):
        spec = PatchSpec(8, 4, [1.0, 2.0])
        with pytest.raises(ConfigError, match="scale 1"):
            extract_patches(np.zeros(12), spec)

    def test_values_are_copies(self):
        x = np.arange(12.0)
        ps = extract_patches(x, PatchSpec(4, 2, [1.0]))
        ps.scales[0][0, 0] = 999.0
        assert x[0] == 0.0

    def test_count_formula_vs_enumeration_500_random_tuples(self):
        rng = np.random.default_rng(4)
        checked = 0
        while checked < 500:
            lookback = int(rng.integers(4, 200))
            patch_len = int(rng.integers(1, 40))
            stride = int(rng.integers(1, 24))
            factor = float(rng.choice([0.25, 0.5, 1.0, 1.5, 2.0, 3.0]))
            spec = PatchSpec(patch_len, stride, [factor])
            p, s = spec.scaled_patch_len(0), spec.scaled_stride(0)
            if p > lookback:
                continue
            x = rng.normal(size=lookback)
            ps = extract_patches(x, spec)
            oracle = sliding_patch_oracle(x, p, s)
            assert ps.geometry[0][2] == oracle.shape[1] == (lookback - p) // s + 2
            npt.assert_array_equal(ps.scales[0], oracle)
            checked += 1

    def test_batched_matches_single(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(6, 48))
        batched = extract_patch_matrix(x, 8, 4)
        for i in range(6):
            npt.assert_array_equal(batched[i], sliding_patch_oracle(x[i], 8, 4))

    def test_coverage_union_spans_window(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            lookback = int(rng.integers(8, 150))
            patch_len = int(rng.integers(2, 30))
            stride = int(rng.integers(1, patch_len + 1))   # S <= P: gap-free
            if patch_len > lookback:
                continue
            n = (lookback - patch_len) // stride + 2
            covered = np.zeros(lookback, dtype=bool)
            for k in range(n):
                covered[k * stride:min(lookback, k * stride + patch_len)] = True
            assert covered.all()

    def test_fractional_factor_rounds_with_warning(self, caplog):
        import logging
        with caplog.at_level(logging.WARNING, logger="adamixt.preprocess"):
            spec = PatchSpec(5, 3, [0.5])
        assert spec.scaled_patch_len(0) == 3          # round(2.5) half-up
        assert spec.scaled_stride(0) == 2
        assert any("rounds" in record.message for record in caplog.records)

    def test_minimum_scaled_sizes(self):
        spec = PatchSpec(2, 1, [0.25])
        assert spec.scaled_patch_len(0) == 1
        assert spec.scaled_stride(0) == 1
