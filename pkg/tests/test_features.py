"""Feature pipeline: downsampling, scaling, encodings, intensity counts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fitadapt as fa
from fitadapt.features import (
    FeatureScale,
    IntensityThresholds,
    accel_to_mets,
    classify_intensity,
    derive_enmo,
    encode_month,
)


class TestDownsample:
    def test_ratio_15_maps_9000_to_600(self):
        out = fa.downsample(np.arange(9000, dtype=float), 15)
        assert out.shape == (600,)

    def test_single_block_mean(self):
        np.testing.assert_array_equal(fa.downsample([2.0, 4.0, 6.0], 3), [4.0])

    def test_indivisible_length_rejected(self):
        with pytest.raises(ValueError):
            fa.downsample(np.zeros(14), 15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            fa.downsample(np.array([]), 3)

    def test_tensor_path_matches_vector_path(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 30, 2))
        out = fa.downsample(x, 5)
        np.testing.assert_allclose(out[2, :, 1], fa.downsample(x[2, :, 1], 5))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([1, 2, 3, 5, 6]))
    def test_block_means_preserve_overall_mean(self, seed, ratio):
        rng = np.random.default_rng(seed)
        series = rng.normal(size=30)  # 30 is divisible by every sampled ratio
        down = fa.downsample(series, ratio)
        assert down.mean() == pytest.approx(series.mean(), rel=1e-12)


class TestMinMaxScale:
    def _one_column_set(self, column):
        column = np.asarray(column, dtype=float)
        n = column.size
        return fa.SampleSet(
            np.tile(np.linspace(0, 1, 6), (n, 1))[:, :, None],
            column[:, None],
            np.full(n, 30.0),
            np.zeros(n),
            "gold",
            False,
            ("accel",),
            ("age",),
        )

    def test_affine_map(self):
        scaled = fa.minmax_scale(self._one_column_set([2.0, 4.0, 6.0]))
        np.testing.assert_allclose(scaled.M[:, 0], [0.0, 0.5, 1.0], atol=1e-12)

    def test_constant_column_maps_to_zeros(self):
        scaled = fa.minmax_scale(self._one_column_set([5.0, 5.0, 5.0]))
        np.testing.assert_array_equal(scaled.M[:, 0], [0.0, 0.0, 0.0])

    def test_outputs_in_unit_interval(self, tiny_source_proc):
        assert tiny_source_proc.X.min() >= 0.0 and tiny_source_proc.X.max() <= 1.0
        assert tiny_source_proc.M.min() >= 0.0 and tiny_source_proc.M.max() <= 1.0

    def test_idempotent_on_scaled_data(self):
        scaled = fa.minmax_scale(self._one_column_set([2.0, 4.0, 6.0]))
        # Rebuild an unprocessed set with identical values and rescale.
        again = fa.minmax_scale(
            fa.SampleSet(
                scaled.X, scaled.M, scaled.y, scaled.domain, "gold", False, ("accel",), ("age",)
            )
        )
        np.testing.assert_allclose(again.X, scaled.X, atol=1e-7)
        np.testing.assert_allclose(again.M, scaled.M, atol=1e-12)

    def test_fitted_scale_reused_on_heldout_data(self):
        fitted = fa.minmax_scale(self._one_column_set([0.0, 10.0]))
        held = fa.minmax_scale(self._one_column_set([5.0, 20.0]), scale=fitted.meta_scale)
        np.testing.assert_allclose(held.M[:, 0], [0.5, 2.0])  # may exceed [0,1]

    def test_empty_set_rejected(self):
        empty = self._one_column_set([1.0]).subset(np.array([], dtype=int))
        with pytest.raises(ValueError):
            fa.minmax_scale(empty)


class TestEncodeMonth:
    def test_march_is_quarter_turn(self):
        sin_v, cos_v = encode_month(3)
        assert abs(sin_v - 1.0) < 1e-12 and abs(cos_v) < 1e-12

    def test_december_is_full_cycle(self):
        sin_v, cos_v = encode_month(12)
        assert abs(sin_v) < 1e-12 and abs(cos_v - 1.0) < 1e-12

    def test_out_of_range_rejected(self):
        for bad in (0, 13, -1):
            with pytest.raises(ValueError):
                encode_month(bad)

    def test_unit_circle_identity(self):
        for month in range(1, 13):
            s, c = encode_month(month)
            assert abs(s * s + c * c - 1.0) < 1e-12


class TestIntensity:
    def test_met_conversion(self):
        assert accel_to_mets(71.0) == 1.0
        assert accel_to_mets(0.0) == 0.0
        assert accel_to_mets(213.0) == 3.0

    def test_negative_movement_rejected(self):
        with pytest.raises(ValueError):
            accel_to_mets(-1.0)

    def test_counts_against_default_thresholds(self):
        assert classify_intensity([0.5, 2.0, 5.0], IntensityThresholds()) == (1, 2, 1)

    def test_empty_series(self):
        assert classify_intensity([], IntensityThresholds()) == (0, 0, 0)

    def test_vigorous_boundary_inclusive(self):
        assert classify_intensity([4.15], IntensityThresholds()) == (0, 1, 1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_vigorous_never_exceeds_mvpa(self, seed):
        rng = np.random.default_rng(seed)
        mets = rng.uniform(0, 8, size=rng.integers(0, 40))
        sed, mvpa, vig = classify_intensity(mets, IntensityThresholds())
        assert vig <= mvpa
        assert sed + mvpa == mets.size  # default cutoffs partition at 1 MET

    def test_threshold_ordering_enforced(self):
        with pytest.raises(ValueError):
            IntensityThresholds(2.0, 1.0, 4.0)


class TestDeriveEnmo:
    def test_zero_gives_offset(self):
        assert derive_enmo(0.0) == 0.057

    def test_unit_case(self):
        assert derive_enmo(0.0060321) == pytest.approx(1.057, abs=1e-12)

    def test_linearity(self):
        assert derive_enmo(0.0120642) == pytest.approx(2.057, abs=1e-12)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            derive_enmo(-0.001)


class TestAssembleFeatures:
    def test_default_shapes_at_full_length(self):
        spec = fa.source_cohort_spec(series_length_raw=9000)
        raw = fa.generate_cohort(spec, 2, seed=1)
        proc = fa.assemble_features(raw)
        assert proc.X.shape == (2, 600, 4)
        assert proc.M.shape == (2, 11)
        assert proc.processed

    def test_deterministic(self, tiny_source_raw):
        a = fa.assemble_features(tiny_source_raw)
        b = fa.assemble_features(tiny_source_raw)
        assert a.equals(b)

    def test_constant_channel_zeroed(self):
        # Constant movement for one sample: its scaled channels collapse to 0.
        X = np.ones((2, 30, 3), dtype=np.float32) * 40.0
        X[1] += np.linspace(0, 10, 30)[:, None]
        M = np.column_stack(
            [[45.0, 50.0], [1, 0], [1.7, 1.6], [70, 60], [60, 62], [30, 35], [3, 4], [6, 7]]
        )
        raw = fa.SampleSet(
            X, M, np.array([40.0, 35.0]), np.zeros(2), "gold", False,
            ("accel", "hr", "hrv"),
            ("age", "sex", "height", "weight", "rhr", "mvpa", "vpa", "month"),
        )
        proc = fa.assemble_features(raw, fa.FeatureLayout(downsample_ratio=5))
        np.testing.assert_array_equal(proc.X[0], 0.0)
        assert proc.X[1].max() > 0

    def test_indivisible_length_rejected(self, tiny_source_raw):
        with pytest.raises(ValueError):
            fa.assemble_features(tiny_source_raw, fa.FeatureLayout(downsample_ratio=7))

    def test_already_processed_rejected(self, tiny_source_proc):
        with pytest.raises(ValueError):
            fa.assemble_features(tiny_source_proc)

    def test_custom_layout_subsets_and_orders(self, tiny_source_raw):
        layout = fa.FeatureLayout(
            ts_channels=("hr", "accel"), meta_fields=("rhr", "age"), downsample_ratio=15
        )
        proc = fa.assemble_features(tiny_source_raw, layout)
        assert proc.X.shape[2] == 2 and proc.M.shape[1] == 2
        assert proc.ts_names == ("hr", "accel") and proc.meta_names == ("rhr", "age")

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            fa.FeatureLayout(meta_fields=("age", "shoe_size")).validate()

    def test_heldout_scaling_reuses_training_scale(self, tiny_target_raw):
        train = fa.assemble_features(tiny_target_raw.subset(np.arange(40)))
        test = fa.assemble_features(
            tiny_target_raw.subset(np.arange(40, 60)), scale=train.meta_scale
        )
        assert isinstance(train.meta_scale, FeatureScale)
        assert test.meta_scale is train.meta_scale
        # Same raw row processed through either path gets identical features.
        again = fa.assemble_features(tiny_target_raw.subset(np.arange(40, 60)), scale=train.meta_scale)
        assert test.equals(again)

    def test_enmo_channel_consistent_with_formula(self, tiny_source_raw):
        proc = fa.assemble_features(tiny_source_raw)
        down_accel = fa.downsample(np.maximum(tiny_source_raw.ts_channel("accel"), 0.0)[:, :, None], 15)[:, :, 0]
        enmo = derive_enmo(down_accel)
        lo = enmo.min(axis=1, keepdims=True)
        hi = enmo.max(axis=1, keepdims=True)
        expected = (enmo - lo) / np.where(hi - lo == 0, 1.0, hi - lo)
        np.testing.assert_allclose(proc.ts_channel("enmo"), expected, atol=1e-5)
