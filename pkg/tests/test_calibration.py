import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from telearm import calibration as C
from telearm.calibration import (
    AxisRegression,
    CalibrationModel,
    FitError,
    PairedSamples,
    ParameterError,
    apply,
    fit_axis,
    fit_calibration,
    identity_calibration,
    mad,
    mape,
)

from oracles import half_normal_mean


class TestFitAxis:
    def test_exact_affine_data_recovered(self):
        tracker = np.linspace(-1, 1, 50)
        reference = 2.0 * tracker + 1.0
        reg = fit_axis(tracker, reference)
        assert reg.scale == pytest.approx(2.0, abs=1e-12)
        assert reg.offset == pytest.approx(1.0, abs=1e-12)
        assert reg.r_squared == pytest.approx(1.0, abs=1e-12)

    def test_identity_data(self):
        tracker = np.linspace(0, 1, 20)
        reg = fit_axis(tracker, tracker)
        assert reg.scale == pytest.approx(1.0, abs=1e-12)
        assert reg.offset == pytest.approx(0.0, abs=1e-12)

    def test_noisy_linear_recovery_within_tolerance(self):
        rng = np.random.default_rng(17)
        tracker = rng.uniform(-0.5, 0.5, 500)
        reference = 1.1 * tracker + rng.normal(0, 0.005, 500)
        reg = fit_axis(tracker, reference)
        # closed-form OLS on the same draw is the oracle
        t_c = tracker - tracker.mean()
        expected_scale = float(t_c @ (reference - reference.mean()) / (t_c @ t_c))
        assert reg.scale == pytest.approx(expected_scale, abs=1e-12)
        assert abs(reg.scale - 1.1) < 0.02

    def test_zero_variance_tracker_rejected(self):
        with pytest.raises(FitError):
            fit_axis(np.full(10, 0.3), np.linspace(0, 1, 10))

    def test_residuals_orthogonal_to_tracker(self):
        rng = np.random.default_rng(5)
        tracker = rng.uniform(-1, 1, 200)
        reference = 0.8 * tracker - 0.1 + rng.normal(0, 0.01, 200)
        reg = fit_axis(tracker, reference)
        residuals = reference - (reg.scale * tracker + reg.offset)
        dot = abs(float(residuals @ tracker))
        norm = float(np.linalg.norm(residuals) * np.linalg.norm(tracker))
        assert dot / norm < 1e-9


class TestApply:
    def test_identity_model_is_noop(self):
        p = np.array([0.1, -0.2, 0.3])
        assert np.array_equal(apply(identity_calibration(), p), p)

    def test_uniform_scale_two(self):
        reg = AxisRegression(scale=2.0, offset=0.0, r_squared=1.0)
        model = CalibrationModel(x=reg, y=reg, z=reg)
        assert np.allclose(apply(model, np.ones(3)), [2.0, 2.0, 2.0])

    def test_fitted_model_inverts_distortion_on_held_out_point(self):
        rng = np.random.default_rng(3)
        true_scale = np.array([1.2, 0.8, 1.05])
        true_offset = np.array([0.01, -0.02, 0.005])
        reference = rng.uniform(-0.5, 0.5, (40, 3))
        tracker = (reference - true_offset) / true_scale
        model = fit_calibration(PairedSamples(tracker=tracker, reference=reference))
        held_out_ref = np.array([0.123, -0.321, 0.231])
        held_out_tracker = (held_out_ref - true_offset) / true_scale
        assert np.max(np.abs(apply(model, held_out_tracker) - held_out_ref)) < 1e-12

    def test_apply_batch(self):
        model = identity_calibration()
        pts = np.arange(12, dtype=float).reshape(4, 3)
        assert np.array_equal(apply(model, pts), pts)


class TestMad:
    def test_symmetric_pair(self):
        assert mad([0.01, -0.01]) == pytest.approx(0.01)

    def test_zeros(self):
        assert mad(np.zeros(5)) == 0.0

    def test_gaussian_errors_match_half_normal_mean(self):
        rng = np.random.default_rng(11)
        errors = rng.normal(0, 0.01, 10_000)
        expected = half_normal_mean(0.01)
        assert abs(mad(errors) - expected) / expected < 0.05

    def test_empty_rejected(self):
        with pytest.raises(ParameterError):
            mad([])

    @given(st.floats(min_value=-100, max_value=100, allow_nan=False))
    @settings(max_examples=50, deadline=None)
    def test_scale_equivariance(self, c):
        errors = np.array([0.01, -0.02, 0.005, 0.0, -0.013])
        assert mad(c * errors) == pytest.approx(abs(c) * mad(errors), rel=1e-12, abs=1e-15)


class TestMape:
    def test_perfect_prediction_zero(self):
        ref = np.array([0.1, 0.2, 0.3])
        result = mape(ref, ref)
        assert result.percent == 0.0
        assert result.excluded == 0

    def test_ten_percent_over(self):
        ref = np.array([0.1, 0.2, 0.4])
        result = mape(1.1 * ref, ref)
        assert result.percent == pytest.approx(10.0)

    def test_near_zero_reference_excluded_and_counted(self):
        predicted = np.array([0.11, 0.22, 5.0])
        reference = np.array([0.1, 0.2, 1e-9])
        result = mape(predicted, reference)
        assert result.excluded == 1
        # hand computation over the two kept samples: (10% + 10%) / 2
        assert result.percent == pytest.approx(10.0)

    def test_all_excluded_is_error(self):
        with pytest.raises(ParameterError):
            mape(np.ones(3), np.full(3, 1e-9))


class TestPairedIO:
    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(23)
        tracker = rng.uniform(-1, 1, (30, 3))
        reference = rng.uniform(-1, 1, (30, 3))
        path = tmp_path / "pairs.csv"
        with open(path, "w") as f:
            f.write("tx,ty,tz,rx,ry,rz\n")
            for t, r in zip(tracker, reference):
                f.write(",".join(repr(float(v)) for v in (*t, *r)) + "\n")
        samples = C.load_paired_csv(path)
        assert np.array_equal(samples.tracker, tracker)
        assert np.array_equal(samples.reference, reference)

    def test_model_file_roundtrip(self, tmp_path):
        rng = np.random.default_rng(29)
        reference = rng.uniform(-0.5, 0.5, (50, 3))
        tracker = (reference - np.array([0.01, 0.0, -0.02])) / np.array([1.1, 0.95, 1.02])
        model = fit_calibration(PairedSamples(tracker=tracker, reference=reference))
        path = tmp_path / "cal.json"
        C.save_calibration(model, path)
        loaded = C.load_calibration(path)
        assert loaded == model

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ParameterError):
            C.load_paired_csv(path)

    def test_too_few_samples_rejected(self):
        with pytest.raises(ParameterError):
            PairedSamples(tracker=np.zeros((1, 3)), reference=np.zeros((1, 3)))
