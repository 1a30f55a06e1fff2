"""Uniform linear motion prediction over the actuation delay.

Three consecutive localizations confirm a track; the velocity estimate
uses only the first and last of them, and the prediction extrapolates
from the last sample over the image-processing plus phase-transfer
latency.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import TimingConfig, Vec3
from .errors import ConfigurationError


@dataclass(frozen=True)
class TrackSample:
    """One localized particle position (mm) and its capture time (s)."""

    world: Vec3
    t: float


@dataclass(frozen=True)
class PredictionResult:
    predicted: Vec3
    velocity: Vec3  # mm/s
    horizon: float  # s


def _ordered_triple(samples: Sequence[TrackSample]) -> tuple[TrackSample, TrackSample, TrackSample]:
    samples = tuple(samples)
    if len(samples) != 3:
        raise ConfigurationError(f"exactly 3 track samples required, got {len(samples)}")
    s1, s2, s3 = samples
    if not (s1.t < s2.t < s3.t):
        raise ConfigurationError(
            f"track timestamps must be strictly increasing, got {s1.t}, {s2.t}, {s3.t}"
        )
    return s1, s2, s3


def confirm_track(samples: Sequence[TrackSample], tol: float = 0.3) -> bool:
    """True when the middle sample lies within ``tol`` mm of the line
    interpolated between the outer two at its timestamp."""
    s1, s2, s3 = _ordered_triple(samples)
    if tol <= 0:
        raise ConfigurationError(f"consistency tolerance must be > 0, got {tol}")
    alpha = (s2.t - s1.t) / (s3.t - s1.t)
    expected = s1.world + alpha * (s3.world - s1.world)
    return (s2.world - expected).norm() <= tol


def predict_position(samples: Sequence[TrackSample], timing: TimingConfig) -> PredictionResult:
    """Extrapolate the last sample by the actuation delay.

    velocity = (C3 - C1) / (t3 - t1); predicted = C3 + velocity * horizon.
    The middle sample only gates confirmation and does not influence the
    estimate.
    """
    s1, _, s3 = _ordered_triple(samples)
    dt = s3.t - s1.t
    velocity = (s3.world - s1.world) * (1.0 / dt)
    horizon = timing.horizon
    predicted = s3.world + velocity * horizon
    return PredictionResult(predicted, velocity, horizon)
