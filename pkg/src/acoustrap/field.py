"""Acoustic pressure field evaluation and trap quality metrics.

The field is a superposition of simple point sources: element i driven
with phase phi_i contributes ``A / d_i * exp(j * (phi_i - k * d_i))`` at
distance ``d_i``. No attenuation and no boundary reflections are modeled;
the tank walls only bound where evaluation is allowed. An optional
square-piston far-field directivity factor per element can be switched on
through the field configuration.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import (
    TWO_PI,
    Contrast,
    MediumConfig,
    ParticleState,
    TransducerArray,
    Vec3,
    WorkspaceConfig,
    wavelength,
)
from .errors import ConfigurationError, GeometryError, SingularityError
from .hologram import (
    MIN_SOURCE_DISTANCE,
    FocusTrap,
    OctahedralTrap,
    PhaseHologram,
    TrapSpec,
    octahedron_vertexes,
)

# Evaluation chunk: keeps the (chunk, elements) temporaries near 40 MB for
# the default 2500-element aperture.
_CHUNK = 1024

# Monopole (f1) and dipole (f2) scattering coefficients for the two
# contrast classes in water: rigid polymer bead vs compressible silicone
# bead. Representative textbook values; only signs and rough magnitudes
# matter for trap topology.
CONTRAST_COEFFS = {
    Contrast.POSITIVE: (0.61, 0.032),
    Contrast.NEGATIVE: (-1.19, 0.019),
}


def _drive_vector(array: TransducerArray, hologram: PhaseHologram) -> np.ndarray:
    if hologram.shape != (array.rows, array.cols):
        raise ConfigurationError(
            f"hologram shape {hologram.shape} does not match array {array.rows}x{array.cols}"
        )
    return array.emission_amplitude * np.exp(1j * hologram.phases.reshape(-1))


def pressure_at_points(
    array: TransducerArray,
    hologram: PhaseHologram,
    points: np.ndarray,
    medium: MediumConfig,
    *,
    directivity: bool = False,
    active_mask: np.ndarray | None = None,
) -> np.ndarray:
    """Complex pressure at each row of ``points`` (N, 3), array units.

    ``active_mask`` silences elements (flat boolean vector, row-major);
    it exists for superposition checks and diagnostics.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ConfigurationError(f"points must be (N, 3), got shape {pts.shape}")
    centers = array.element_centers()
    drive = _drive_vector(array, hologram)
    if active_mask is not None:
        mask = np.asarray(active_mask, dtype=bool).reshape(-1)
        if mask.size != array.element_count:
            raise ConfigurationError(
                f"active_mask length {mask.size} does not match {array.element_count} elements"
            )
        centers = centers[mask]
        drive = drive[mask]
    k = TWO_PI / wavelength(medium, array)
    lam = wavelength(medium, array)

    out = np.empty(pts.shape[0], dtype=complex)
    for start in range(0, pts.shape[0], _CHUNK):
        chunk = pts[start : start + _CHUNK]
        d = cdist(chunk, centers)
        if np.any(d < MIN_SOURCE_DISTANCE):
            raise SingularityError("field point coincides with an element center")
        terms = drive * np.exp(-1j * k * d) / d
        if directivity:
            terms = terms * _piston_factor(chunk, centers, d, array.pitch, lam)
        out[start : start + chunk.shape[0]] = terms.sum(axis=1)
    return out


def _piston_factor(
    points: np.ndarray, centers: np.ndarray, d: np.ndarray, side: float, lam: float
) -> np.ndarray:
    """Far-field directivity of a square piston of the given side length."""
    dx = points[:, 0][:, None] - centers[:, 0][None, :]
    dy = points[:, 1][:, None] - centers[:, 1][None, :]
    # np.sinc(x) = sin(pi x) / (pi x); the argument is side * sin(theta) / lambda
    return np.sinc(side * dx / (lam * d)) * np.sinc(side * dy / (lam * d))


def pressure_at(
    array: TransducerArray,
    hologram: PhaseHologram,
    point: Vec3,
    medium: MediumConfig,
    *,
    directivity: bool = False,
) -> complex:
    """Complex pressure at a single point."""
    value = pressure_at_points(
        array, hologram, point.as_array()[None, :], medium, directivity=directivity
    )
    return complex(value[0])


# Slice plane names map to (horizontal axis, vertical axis, fixed axis).
_PLANE_AXES = {"xoy": (0, 1, 2), "xoz": (0, 2, 1), "yoz": (1, 2, 0)}


@dataclass(frozen=True)
class PlaneSpec:
    """Axis-aligned slice plane: the named pair varies, ``offset`` fixes
    the remaining coordinate (z for xoy, y for xoz, x for yoz)."""

    plane: str
    offset: float

    def __post_init__(self) -> None:
        if self.plane not in _PLANE_AXES:
            raise ConfigurationError(
                f"plane must be one of {sorted(_PLANE_AXES)}, got {self.plane!r}"
            )

    @property
    def axes(self) -> tuple[int, int, int]:
        return _PLANE_AXES[self.plane]


@dataclass(frozen=True)
class FieldSlice:
    """Complex pressure sampled on a regular grid in one plane.

    ``values[ia, ib]`` corresponds to first-axis coordinate
    ``origin[0] + ia * spacing`` and second-axis ``origin[1] + ib * spacing``.
    """

    plane: PlaneSpec
    origin: tuple[float, float]
    spacing: float
    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.values)
        if arr.ndim != 2:
            raise ConfigurationError(f"slice values must be 2-D, got shape {arr.shape}")
        if self.spacing <= 0:
            raise ConfigurationError(f"slice spacing must be > 0, got {self.spacing}")

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def axis_coords(self) -> tuple[np.ndarray, np.ndarray]:
        n1, n2 = self.values.shape
        a = self.origin[0] + self.spacing * np.arange(n1)
        b = self.origin[1] + self.spacing * np.arange(n2)
        return a, b

    def world_point(self, ia: int, ib: int) -> Vec3:
        ax_a, ax_b, ax_fixed = self.plane.axes
        coords = [0.0, 0.0, 0.0]
        coords[ax_a] = self.origin[0] + ia * self.spacing
        coords[ax_b] = self.origin[1] + ib * self.spacing
        coords[ax_fixed] = self.plane.offset
        return Vec3(*coords)


def field_slice(
    array: TransducerArray,
    hologram: PhaseHologram,
    plane: PlaneSpec,
    bounds: tuple[tuple[float, float], tuple[float, float]],
    resolution: float,
    medium: MediumConfig,
    *,
    directivity: bool = False,
    workspace: WorkspaceConfig | None = None,
) -> FieldSlice:
    """Sample the field over a rectangular window of a slice plane.

    ``bounds`` are ((a_min, a_max), (b_min, b_max)) along the plane's two
    free axes. Both ends are included when the span divides evenly.
    """
    (a_min, a_max), (b_min, b_max) = bounds
    if resolution <= 0:
        raise ConfigurationError(f"resolution must be > 0, got {resolution}")
    if not (a_max > a_min and b_max > b_min):
        raise ConfigurationError(
            f"degenerate slice bounds ({a_min}, {a_max}) x ({b_min}, {b_max})"
        )
    lam = wavelength(medium, array)
    if resolution > lam / 4:
        warnings.warn(
            f"slice resolution {resolution:.4g} mm is coarser than a quarter wavelength"
            f" ({lam / 4:.4g} mm); structure will alias",
            stacklevel=2,
        )
    a = np.arange(a_min, a_max + resolution / 2, resolution)
    b = np.arange(b_min, b_max + resolution / 2, resolution)
    ax_a, ax_b, ax_fixed = plane.axes
    grid = np.zeros((a.size, b.size, 3))
    grid[..., ax_a] = a[:, None]
    grid[..., ax_b] = b[None, :]
    grid[..., ax_fixed] = plane.offset
    pts = grid.reshape(-1, 3)
    if workspace is not None and not workspace.tank_contains_points(pts):
        raise GeometryError("slice grid extends outside the tank bounds")
    values = pressure_at_points(array, hologram, pts, medium, directivity=directivity)
    return FieldSlice(plane, (float(a_min), float(b_min)), float(resolution), values.reshape(a.size, b.size))


@dataclass(frozen=True)
class TrapQuality:
    """Figures of merit for a synthesized trap.

    Octahedral traps report the center/vertex magnitudes and their ratio;
    focus traps report the peak and half-maximum widths of the lateral and
    axial line scans. Unused entries are None.
    """

    center_magnitude: float | None = None
    vertex_magnitudes: tuple[float, ...] | None = None
    contrast_ratio: float | None = None
    focal_peak: float | None = None
    lateral_fwhm: float | None = None
    axial_fwhm: float | None = None


def _fwhm(coords: np.ndarray, mags: np.ndarray) -> float:
    """Width of the half-maximum region around the global peak.

    Crossings are linearly interpolated; if the profile never drops below
    half maximum on one side, the scan edge bounds the width.
    """
    peak_idx = int(np.argmax(mags))
    half = mags[peak_idx] / 2.0
    left = coords[0]
    for i in range(peak_idx, 0, -1):
        if mags[i - 1] < half:
            frac = (mags[i] - half) / (mags[i] - mags[i - 1])
            left = coords[i] - frac * (coords[i] - coords[i - 1])
            break
    right = coords[-1]
    for i in range(peak_idx, mags.size - 1):
        if mags[i + 1] < half:
            frac = (mags[i] - half) / (mags[i] - mags[i + 1])
            right = coords[i] + frac * (coords[i + 1] - coords[i])
            break
    return float(right - left)


def trap_quality(
    array: TransducerArray,
    hologram: PhaseHologram,
    trap: TrapSpec,
    medium: MediumConfig,
    *,
    directivity: bool = False,
) -> TrapQuality:
    """Probe the field a hologram produces at the trap's working points."""
    lam = wavelength(medium, array)
    if isinstance(trap, OctahedralTrap):
        pts = [trap.center.as_array()] + [
            v.as_array() for v in octahedron_vertexes(trap.center, trap.diameter)
        ]
        mags = np.abs(
            pressure_at_points(array, hologram, np.array(pts), medium, directivity=directivity)
        )
        center = float(mags[0])
        vertex = tuple(float(m) for m in mags[1:])
        return TrapQuality(
            center_magnitude=center,
            vertex_magnitudes=vertex,
            contrast_ratio=center / float(np.mean(mags[1:])),
        )
    if isinstance(trap, FocusTrap):
        step = lam / 20.0
        f = trap.point.as_array()
        lateral = np.arange(-2.0, 2.0 + step / 2, step)
        axial = np.arange(-6.0, 6.0 + step / 2, step)
        lat_pts = f + np.stack([lateral, np.zeros_like(lateral), np.zeros_like(lateral)], axis=1)
        ax_pts = f + np.stack([np.zeros_like(axial), np.zeros_like(axial), axial], axis=1)
        ax_pts = ax_pts[ax_pts[:, 2] > 0]
        lat_mags = np.abs(pressure_at_points(array, hologram, lat_pts, medium, directivity=directivity))
        ax_mags = np.abs(pressure_at_points(array, hologram, ax_pts, medium, directivity=directivity))
        return TrapQuality(
            focal_peak=float(max(lat_mags.max(), ax_mags.max())),
            lateral_fwhm=_fwhm(lateral, lat_mags),
            axial_fwhm=_fwhm(ax_pts[:, 2] - f[2], ax_mags),
        )
    raise ConfigurationError(f"unsupported trap type {trap!r}")


def gorkov_potential_at_points(
    array: TransducerArray,
    hologram: PhaseHologram,
    points: np.ndarray,
    medium: MediumConfig,
    particle: ParticleState,
    *,
    directivity: bool = False,
    workspace: WorkspaceConfig | None = None,
) -> np.ndarray:
    """Small-sphere acoustic potential at each point, arbitrary units.

    Time-averaged second-order potential for a sphere much smaller than
    the wavelength: a monopole term from the mean square pressure minus a
    dipole term from the mean square velocity, with contrast-dependent
    coefficients. Gradients come from central differences at lambda/50.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ConfigurationError(f"points must be (N, 3), got shape {pts.shape}")
    lam = wavelength(medium, array)
    radius_mm = particle.diameter_um / 1000.0 / 2.0
    if particle.diameter_um / 1000.0 > lam / 2:
        warnings.warn(
            f"particle diameter {particle.diameter_um:.0f} um exceeds half a wavelength;"
            " the small-sphere potential is only indicative",
            stacklevel=2,
        )
    h = lam / 50.0
    offsets = np.array(
        [
            [0.0, 0.0, 0.0],
            [h, 0.0, 0.0],
            [-h, 0.0, 0.0],
            [0.0, h, 0.0],
            [0.0, -h, 0.0],
            [0.0, 0.0, h],
            [0.0, 0.0, -h],
        ]
    )
    stencil = (pts[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    if workspace is not None and not workspace.tank_contains_points(stencil):
        raise GeometryError("gradient stencil extends outside the tank bounds")
    p = pressure_at_points(array, hologram, stencil, medium, directivity=directivity)
    p = p.reshape(pts.shape[0], 7)
    grad = np.stack(
        [
            (p[:, 1] - p[:, 2]) / (2 * h),
            (p[:, 3] - p[:, 4]) / (2 * h),
            (p[:, 5] - p[:, 6]) / (2 * h),
        ],
        axis=1,
    )  # complex dp/dx_k, per mm

    f1, f2 = CONTRAST_COEFFS[particle.contrast]
    volume = 4.0 / 3.0 * math.pi * radius_mm**3
    c_mm = medium.sound_speed * 1e3  # mm/s
    omega = TWO_PI * array.frequency
    mean_p_sq = 0.5 * np.abs(p[:, 0]) ** 2
    mean_v_sq = 0.5 * np.sum(np.abs(grad) ** 2, axis=1) / (medium.density * omega) ** 2
    potential = volume / 4.0 * (
        f1 * mean_p_sq / (medium.density * c_mm**2)
        - 1.5 * f2 * medium.density * mean_v_sq
    )
    return potential


def gorkov_potential(
    array: TransducerArray,
    hologram: PhaseHologram,
    point: Vec3,
    medium: MediumConfig,
    particle: ParticleState,
    *,
    directivity: bool = False,
    workspace: WorkspaceConfig | None = None,
) -> float:
    """Scalar form of ``gorkov_potential_at_points``."""
    value = gorkov_potential_at_points(
        array,
        hologram,
        point.as_array()[None, :],
        medium,
        particle,
        directivity=directivity,
        workspace=workspace,
    )
    return float(value[0])
