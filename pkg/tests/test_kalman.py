"""Tests for the constant-velocity Kalman smoothing of optical points."""

import numpy as np

from mocap_geom.core import ReflectorId
from mocap_geom.kalman import (KalmanParams, ReflectorTracker, init_state,
                               kalman_step)
from mocap_geom.spatial import OpticalFrame, OpticalPoint

DT = 1.0 / 30.0


def _point(pos, frame=0, conf=0.9, idx=1):
    return OpticalPoint(ReflectorId(idx), np.asarray(pos, dtype=float), conf, frame)


class TestKalmanStep:
    def test_first_measurement_initializes_at_measurement(self):
        state, smoothed = kalman_step(None, _point([1.0, 2.0, 3.0]), DT)
        np.testing.assert_allclose(state.position, [1, 2, 3])
        np.testing.assert_allclose(state.velocity, [0, 0, 0])
        np.testing.assert_allclose(smoothed.position, [1, 2, 3])

    def test_covariance_stays_spd(self):
        rng = np.random.default_rng(2)
        state = None
        for f in range(200):
            meas = _point(rng.normal(scale=0.01, size=3) + [0, 0, 1], frame=f)
            state, _ = kalman_step(state, meas, DT)
            np.linalg.cholesky(state.covariance)  # raises if not SPD

    def test_noise_variance_is_reduced(self):
        # Stationary point with sigma = 1 cm noise: smoothed output variance
        # must come out below the measurement variance (Monte Carlo oracle).
        rng = np.random.default_rng(7)
        truth = np.array([0.5, -0.2, 1.1])
        meas_all = []
        smooth_all = []
        for trial in range(20):
            state = None
            for f in range(100):
                m = truth + rng.normal(scale=0.01, size=3)
                state, smoothed = kalman_step(state, _point(m, frame=f), DT)
                if f >= 30:  # past the transient
                    meas_all.append(m - truth)
                    smooth_all.append(smoothed.position - truth)
        var_meas = np.var(np.array(meas_all))
        var_smooth = np.var(np.array(smooth_all))
        assert var_smooth < var_meas

    def test_tracks_exact_constant_velocity_within_1mm_after_transient(self):
        state = None
        vel = np.array([0.3, -0.1, 0.05])
        for f in range(60):
            pos = np.array([0.0, 0.0, 1.0]) + vel * f * DT
            state, smoothed = kalman_step(state, _point(pos, frame=f), DT)
            if f >= 20:
                assert np.linalg.norm(smoothed.position - pos) <= 1e-3

    def test_predict_only_coasts(self):
        state, _ = kalman_step(None, _point([0, 0, 1.0]), DT)
        state, _ = kalman_step(state, _point([0.01, 0, 1.0], frame=1), DT)
        coasted, smoothed = kalman_step(state, None, DT)
        assert smoothed is None
        np.testing.assert_allclose(
            coasted.position, state.position + DT * state.velocity, atol=1e-12)

    def test_init_state_params(self):
        s = init_state(np.array([1.0, 1.0, 1.0]), KalmanParams())
        np.linalg.cholesky(s.covariance)


class TestReflectorTracker:
    def test_per_reflector_tracks_are_independent(self):
        tracker = ReflectorTracker(DT)
        frame = OpticalFrame(frame=0)
        frame.add(_point([0, 0, 1], idx=1))
        frame.add(_point([1, 1, 1], idx=2))
        out = tracker.step(frame)
        assert set(out.points) == {1, 2}

    def test_missing_reflector_omitted_from_output(self):
        tracker = ReflectorTracker(DT)
        f0 = OpticalFrame(frame=0)
        f0.add(_point([0, 0, 1], idx=1))
        tracker.step(f0)
        f1 = OpticalFrame(frame=1)  # reflector 1 dropped out
        out = tracker.step(f1)
        assert out.points == {}
        assert 1 in tracker.states  # track coasts

    def test_smoothing_reduces_jitter_in_stream(self):
        rng = np.random.default_rng(9)
        tracker = ReflectorTracker(DT)
        raw_dev = []
        smooth_dev = []
        for f in range(120):
            truth = np.array([0.0, 0.0, 1.0])
            noisy = truth + rng.normal(scale=0.01, size=3)
            frame = OpticalFrame(frame=f)
            frame.add(_point(noisy, frame=f))
            out = tracker.step(frame)
            if f >= 30:
                raw_dev.append(np.linalg.norm(noisy - truth))
                smooth_dev.append(np.linalg.norm(out.points[1].position - truth))
        assert np.mean(smooth_dev) < np.mean(raw_dev)
