import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acoustrap.core import TimingConfig, Vec3
from acoustrap.errors import ConfigurationError
from acoustrap.prediction import TrackSample, confirm_track, predict_position

TIMING = TimingConfig()  # 60 ms processing + 90 ms transfer

mm = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)
speed = st.floats(min_value=-30.0, max_value=30.0, allow_nan=False)


def linear_track(p0: Vec3, v: Vec3, times) -> list[TrackSample]:
    return [TrackSample(p0 + v * t, t) for t in times]


class TestPredictPosition:
    def test_latency_fixture(self):
        samples = [
            TrackSample(Vec3(0.0, 0.0, 0.0), 0.0),
            TrackSample(Vec3(1.0, 0.0, 0.0), 0.1),
            TrackSample(Vec3(2.0, 0.0, 0.0), 0.2),
        ]
        result = predict_position(samples, TIMING)
        assert result.horizon == pytest.approx(0.15, abs=1e-12)
        assert result.velocity.distance_to(Vec3(10.0, 0.0, 0.0)) < 1e-12
        assert result.predicted.distance_to(Vec3(3.5, 0.0, 0.0)) < 1e-12

    @given(mm, mm, mm, speed, speed, speed)
    @settings(max_examples=200)
    def test_exact_on_uniform_motion(self, x, y, z, vx, vy, vz):
        p0, v = Vec3(x, y, z), Vec3(vx, vy, vz)
        times = [0.0, 1 / 15.0, 2 / 15.0]
        result = predict_position(linear_track(p0, v, times), TIMING)
        truth = p0 + v * (times[-1] + TIMING.horizon)
        scale = 1.0 + p0.norm() + v.norm()
        assert result.predicted.distance_to(truth) < 1e-9 * scale

    def test_velocity_uses_outer_samples_only(self):
        # a bent middle sample must not influence the estimate
        samples = [
            TrackSample(Vec3(0.0, 0.0, 0.0), 0.0),
            TrackSample(Vec3(1.0, 0.2, 0.0), 0.1),
            TrackSample(Vec3(2.0, 0.0, 0.0), 0.2),
        ]
        result = predict_position(samples, TIMING)
        assert result.velocity.distance_to(Vec3(10.0, 0.0, 0.0)) < 1e-12

    def test_sample_count_enforced(self):
        short = linear_track(Vec3(0, 0, 0), Vec3(0, 0, -10), [0.0, 0.1])
        with pytest.raises(ConfigurationError):
            predict_position(short, TIMING)

    def test_monotonic_timestamps_enforced(self):
        bad = [
            TrackSample(Vec3(0.0, 0.0, 0.0), 0.0),
            TrackSample(Vec3(1.0, 0.0, 0.0), 0.2),
            TrackSample(Vec3(2.0, 0.0, 0.0), 0.2),
        ]
        with pytest.raises(ConfigurationError):
            predict_position(bad, TIMING)


class TestConfirmTrack:
    def test_accepts_straight_line(self):
        track = linear_track(Vec3(25, 25, 50), Vec3(0, 0, -10), [0.0, 1 / 15, 2 / 15])
        assert confirm_track(track)

    def test_rejects_bent_track(self):
        samples = [
            TrackSample(Vec3(25.0, 25.0, 50.0), 0.0),
            TrackSample(Vec3(25.0, 26.0, 49.5), 0.1),
            TrackSample(Vec3(25.0, 25.0, 49.0), 0.2),
        ]
        assert not confirm_track(samples, tol=0.3)

    def test_tolerance_boundary(self):
        def bent(dy):
            return [
                TrackSample(Vec3(0.0, 0.0, 0.0), 0.0),
                TrackSample(Vec3(0.0, dy, 0.5), 0.1),
                TrackSample(Vec3(0.0, 0.0, 1.0), 0.2),
            ]

        assert confirm_track(bent(0.29), tol=0.3)
        assert not confirm_track(bent(0.31), tol=0.3)

    @given(mm, mm, mm, speed, speed, speed)
    @settings(max_examples=100)
    def test_uniform_motion_always_confirms(self, x, y, z, vx, vy, vz):
        track = linear_track(Vec3(x, y, z), Vec3(vx, vy, vz), [0.0, 0.85 / 15, 2 / 15])
        assert confirm_track(track)

    def test_irregular_sampling_still_linear(self):
        track = linear_track(Vec3(1, 2, 3), Vec3(4, -5, 6), [0.0, 0.03, 0.2])
        assert confirm_track(track)
