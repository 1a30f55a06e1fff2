"""Virtual binocular microscope: affine cameras, frame rendering, and
feature extraction.

Each camera is an affine orthographic projection around a reference pose:
pixel = rows_of_j @ (world - ref_world) + ref_pixel, with the Jacobian
rows in pixel per micrometer. Rendering draws the particle as an
anti-aliased dark disc over the configured background and adds seeded
Gaussian sensor noise.

Extraction follows the bench pipeline: background subtraction, adaptive
binarization against a local mean, a sliding-window search for the
densest foreground patch, morphological closing, border following around
the largest blob, and a seeded five-point RANSAC ellipse fit refined on
its inliers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .config import Background
from .core import ParticleState, Vec3
from .errors import ConfigurationError

_CLOSE_STRUCTURE = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class CameraModel:
    """One affine camera of the binocular pair.

    Parameters
    ----------
    rows_of_j : np.ndarray
        (2, 3) pixel-per-micrometer sensitivity of (u, v) to world motion.
    ref_pixel : np.ndarray
        Pixel (u, v) where ``ref_world`` projects.
    ref_world : Vec3
        World anchor of the projection, mm.
    image_size : tuple
        (width, height) of rendered frames.
    """

    rows_of_j: np.ndarray
    ref_pixel: np.ndarray
    ref_world: Vec3
    image_size: tuple[int, int]
    noise_sigma: float = 0.0
    background: Background = Background()
    particle_level: float = 40.0
    name: str = "camera"

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows_of_j, dtype=float)
        refp = np.asarray(self.ref_pixel, dtype=float)
        if rows.shape != (2, 3):
            raise ConfigurationError(f"camera rows_of_j must be (2, 3), got {rows.shape}")
        if refp.shape != (2,):
            raise ConfigurationError(f"camera ref_pixel must be (2,), got {refp.shape}")
        if not (np.all(np.isfinite(rows)) and np.all(np.isfinite(refp))):
            raise ConfigurationError("camera parameters must be finite")
        w, h = self.image_size
        if w < 8 or h < 8:
            raise ConfigurationError(f"camera image_size must be at least 8x8, got {w}x{h}")
        if self.noise_sigma < 0:
            raise ConfigurationError(f"camera noise_sigma must be >= 0, got {self.noise_sigma}")
        if not (0.0 <= self.particle_level <= 255.0):
            raise ConfigurationError(
                f"camera particle_level must be within [0, 255], got {self.particle_level}"
            )
        rows = rows.copy()
        rows.flags.writeable = False
        refp = refp.copy()
        refp.flags.writeable = False
        object.__setattr__(self, "rows_of_j", rows)
        object.__setattr__(self, "ref_pixel", refp)

    @property
    def pixel_scale(self) -> float:
        """Pixels per micrometer of in-plane motion (mean over both rows)."""
        return float(np.mean(np.max(np.abs(self.rows_of_j), axis=1)))


def project(camera: CameraModel, world: Vec3) -> tuple[float, float]:
    """Project a world point (mm) to pixel coordinates (u, v)."""
    delta_um = (world - camera.ref_world).as_array() * 1e3
    uv = camera.rows_of_j @ delta_um + camera.ref_pixel
    return float(uv[0]), float(uv[1])


@dataclass(frozen=True)
class ImageFrame:
    """A rendered 8-bit grayscale frame with its capture timestamp."""

    pixels: np.ndarray
    timestamp: float
    clipped: bool = False

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels)
        if arr.ndim != 2 or arr.dtype != np.uint8:
            raise ConfigurationError(
                f"frame pixels must be a 2-D uint8 array, got {arr.dtype} {arr.shape}"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)


@dataclass(frozen=True)
class FeatureObservation:
    """Sub-pixel particle observation from one camera.

    ``major_px``/``minor_px`` are the full ellipse axis lengths. When
    ``valid`` is False the coordinates are NaN and ``reason`` names the
    stage that gave up.
    """

    u: float
    v: float
    major_px: float
    minor_px: float
    valid: bool
    reason: str | None = None


def _invalid(reason: str) -> FeatureObservation:
    nan = float("nan")
    return FeatureObservation(nan, nan, nan, nan, False, reason)


def background_image(camera: CameraModel) -> np.ndarray:
    """Noise-free background for the camera, float gray levels (h, w)."""
    w, h = camera.image_size
    bg = camera.background
    if bg.kind == "flat":
        return np.full((h, w), bg.level, dtype=float)
    u = np.arange(w, dtype=float) / max(w - 1, 1)
    v = np.arange(h, dtype=float) / max(h - 1, 1)
    return bg.level + bg.du * u[None, :] + bg.dv * v[:, None] + np.zeros((h, w))


def render_frame(
    camera: CameraModel, particle: ParticleState, t: float, seed: int
) -> ImageFrame:
    """Render the particle as an anti-aliased dark disc at time ``t``.

    The disc radius is the particle diameter scaled by the camera's
    pixel scale; a disc crossing the image border is rendered partially
    and the frame is flagged ``clipped``.
    """
    u0, v0 = project(camera, particle.position)
    radius = particle.diameter_um * camera.pixel_scale / 2.0
    img = background_image(camera)
    h, w = img.shape

    clipped = not (radius <= u0 <= w - 1 - radius and radius <= v0 <= h - 1 - radius)
    c0 = max(int(math.floor(u0 - radius)) - 2, 0)
    c1 = min(int(math.ceil(u0 + radius)) + 3, w)
    r0 = max(int(math.floor(v0 - radius)) - 2, 0)
    r1 = min(int(math.ceil(v0 + radius)) + 3, h)
    if c1 > c0 and r1 > r0:
        uu = np.arange(c0, c1, dtype=float)[None, :]
        vv = np.arange(r0, r1, dtype=float)[:, None]
        dist = np.hypot(uu - u0, vv - v0)
        coverage = np.clip(radius - dist + 0.5, 0.0, 1.0)
        patch = img[r0:r1, c0:c1]
        img[r0:r1, c0:c1] = patch * (1.0 - coverage) + camera.particle_level * coverage

    if camera.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img = img + rng.normal(0.0, camera.noise_sigma, img.shape)
    pixels = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return ImageFrame(pixels, t, clipped)


@dataclass(frozen=True)
class ExtractionParams:
    """Knobs of the feature extraction pipeline."""

    binarize_offset: float = 10.0
    min_foreground_fraction: float = 0.3
    ransac_iterations: int = 200
    ransac_inlier_band_px: float = 1.5
    ransac_early_exit_fraction: float = 0.9
    min_contour_px: int = 10

    @classmethod
    def from_vision(cls, cfg) -> "ExtractionParams":
        return cls(
            binarize_offset=cfg.binarize_offset,
            min_foreground_fraction=cfg.min_foreground_fraction,
            ransac_iterations=cfg.ransac_iterations,
            ransac_inlier_band_px=cfg.ransac_inlier_band_px,
            ransac_early_exit_fraction=cfg.ransac_early_exit_fraction,
            min_contour_px=cfg.min_contour_px,
        )


def _odd(n: int) -> int:
    n = max(int(n), 3)
    return n if n % 2 == 1 else n + 1


def _binarize(diff: np.ndarray, expected_diameter_px: float, offset: float) -> np.ndarray:
    window = _odd(round(2.0 * expected_diameter_px))
    local_mean = ndimage.uniform_filter(diff, size=window, mode="nearest")
    return diff > local_mean + offset


def _best_window(
    fg: np.ndarray, expected_diameter_px: float, min_fraction: float
) -> tuple[int, int, int] | None:
    """Densest sliding window; None when no window clears the pixel-count
    floor (min_fraction of the expected disc area)."""
    h, w = fg.shape
    size = min(max(int(round(1.5 * expected_diameter_px)), 3), h, w)
    stride = max(int(round(expected_diameter_px / 2.0)), 1)
    # summed-area table with a zero border
    sat = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(fg, axis=0), axis=1, out=sat[1:, 1:])
    rows = list(range(0, h - size + 1, stride))
    cols = list(range(0, w - size + 1, stride))
    if rows[-1] != h - size:
        rows.append(h - size)
    if cols[-1] != w - size:
        cols.append(w - size)
    ri = np.array(rows)[:, None]
    ci = np.array(cols)[None, :]
    counts = (
        sat[ri + size, ci + size] - sat[ri, ci + size] - sat[ri + size, ci] + sat[ri, ci]
    )
    best = np.unravel_index(int(np.argmax(counts)), counts.shape)
    min_count = min_fraction * math.pi * (expected_diameter_px / 2.0) ** 2
    if counts[best] < max(min_count, 1.0):
        return None
    return rows[best[0]], cols[best[1]], size


# Moore neighborhood in clockwise order starting due north.
def _neighbors_cw(r: int, c: int) -> list[tuple[int, int]]:
    return [
        (r - 1, c), (r - 1, c + 1), (r, c + 1), (r + 1, c + 1),
        (r + 1, c), (r + 1, c - 1), (r, c - 1), (r - 1, c - 1),
    ]


def _trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Outer boundary of the foreground as ordered (row, col) pixels.

    Moore-neighbor border following started at the topmost-leftmost
    pixel; stops when the start is re-entered from the starting backtrack.
    """
    padded = np.pad(mask, 1, constant_values=False)
    fg = np.argwhere(padded)
    if fg.size == 0:
        return np.empty((0, 2), dtype=int)
    start = (int(fg[0][0]), int(fg[0][1]))
    start_back = (start[0], start[1] - 1)  # scan order guarantees west is empty
    contour = [start]
    p, back = start, start_back
    guard = 4 * int(mask.sum()) + 16
    for _ in range(guard):
        nbrs = _neighbors_cw(*p)
        i0 = nbrs.index(back)
        nxt = None
        for k in range(1, 9):
            cand = nbrs[(i0 + k) % 8]
            if padded[cand]:
                nxt = cand
                back = nbrs[(i0 + k - 1) % 8]
                break
        if nxt is None:
            break  # single isolated pixel
        if nxt == start and back == start_back:
            break
        contour.append(nxt)
        p = nxt
    return np.array(contour, dtype=int) - 1  # undo padding offset


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = pts.mean(axis=0)
    spread = np.mean(np.linalg.norm(pts - mu, axis=1))
    s = math.sqrt(2.0) / max(spread, 1e-9)
    T = np.array([[s, 0.0, -s * mu[0]], [0.0, s, -s * mu[1]], [0.0, 0.0, 1.0]])
    return (pts - mu) * s, T


def _conic_from_points(pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    design = np.stack([x * x, x * y, y * y, x, y, np.ones_like(x)], axis=1)
    _, _, vt = np.linalg.svd(design)
    return vt[-1]


def _is_ellipse(theta: np.ndarray) -> bool:
    a, b, c = theta[0], theta[1], theta[2]
    return 4.0 * a * c - b * b > 1e-12


def _conic_matrix(theta: np.ndarray) -> np.ndarray:
    a, b, c, d, e, f = theta
    return np.array([[a, b / 2, d / 2], [b / 2, c, e / 2], [d / 2, e / 2, f]])


def _sampson_distance(conic: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    val = (
        conic[0, 0] * x * x
        + 2 * conic[0, 1] * x * y
        + conic[1, 1] * y * y
        + 2 * conic[0, 2] * x
        + 2 * conic[1, 2] * y
        + conic[2, 2]
    )
    gx = 2 * (conic[0, 0] * x + conic[0, 1] * y + conic[0, 2])
    gy = 2 * (conic[0, 1] * x + conic[1, 1] * y + conic[1, 2])
    return np.abs(val) / np.maximum(np.hypot(gx, gy), 1e-12)


def _center_axes(conic: np.ndarray) -> tuple[np.ndarray, tuple[float, float]] | None:
    m = conic[:2, :2]
    try:
        center = np.linalg.solve(m, -conic[:2, 2])
    except np.linalg.LinAlgError:
        return None
    shifted_const = float(conic[2, 2] + conic[0, 2] * center[0] + conic[1, 2] * center[1])
    evals = np.linalg.eigvalsh(m)
    ratios = -shifted_const / evals
    if np.any(~np.isfinite(ratios)) or np.any(ratios <= 0):
        return None
    semi = np.sqrt(ratios)
    return center, (float(semi.max() * 2), float(semi.min() * 2))


def _fit_ellipse_ransac(
    pts: np.ndarray, rng: np.random.Generator, params: ExtractionParams
) -> tuple[np.ndarray, tuple[float, float]] | None:
    n = pts.shape[0]
    if n < 5:
        return None
    pts_n, T = _normalize_points(pts)
    band = params.ransac_inlier_band_px
    best_count, best_conic, best_mask = 0, None, None
    for _ in range(params.ransac_iterations):
        idx = rng.choice(n, size=5, replace=False)
        theta = _conic_from_points(pts_n[idx])
        if not _is_ellipse(theta):
            continue
        conic = T.T @ _conic_matrix(theta) @ T
        dist = _sampson_distance(conic, pts)
        mask = dist <= band
        count = int(mask.sum())
        if count > best_count:
            best_count, best_conic, best_mask = count, conic, mask
        if best_count >= params.ransac_early_exit_fraction * n:
            break
    if best_conic is None or best_count < 5:
        return None
    theta = _conic_from_points(pts_n[best_mask])
    if _is_ellipse(theta):
        refined = T.T @ _conic_matrix(theta) @ T
        result = _center_axes(refined)
        if result is not None:
            return result
    return _center_axes(best_conic)


def extract_feature(
    frame: ImageFrame,
    background,
    expected_diameter_px: float,
    seed: int,
    params: ExtractionParams | None = None,
) -> FeatureObservation:
    """Locate the particle in a frame against a known background.

    ``background`` may be an ImageFrame or a raw gray-level array of the
    same shape. Returns an invalid observation (never raises) when any
    stage fails to find a usable candidate.
    """
    if params is None:
        params = ExtractionParams()
    if expected_diameter_px <= 3:
        raise ConfigurationError(
            f"expected_diameter_px must exceed 3, got {expected_diameter_px}"
        )
    img = frame.pixels.astype(np.int16)
    bg = background.pixels if isinstance(background, ImageFrame) else np.asarray(background)
    bg = np.rint(bg).astype(np.int16)
    if bg.shape != img.shape:
        raise ConfigurationError(
            f"background shape {bg.shape} does not match frame {img.shape}"
        )
    diff = np.abs(img - bg).astype(float)
    fg = _binarize(diff, expected_diameter_px, params.binarize_offset)

    window = _best_window(fg, expected_diameter_px, params.min_foreground_fraction)
    if window is None:
        return _invalid("no_candidate_window")
    r0, c0, size = window
    h, w = fg.shape
    half = int(round(1.5 * expected_diameter_px))
    rc, cc = r0 + size // 2, c0 + size // 2
    cr0, cr1 = max(rc - half, 0), min(rc + half + 1, h)
    cc0, cc1 = max(cc - half, 0), min(cc + half + 1, w)
    sub = ndimage.binary_closing(fg[cr0:cr1, cc0:cc1], structure=_CLOSE_STRUCTURE)

    labels, count = ndimage.label(sub, structure=_CLOSE_STRUCTURE)
    if count == 0:
        return _invalid("empty_after_morphology")
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, count + 1))
    blob = labels == (int(np.argmax(sizes)) + 1)

    contour = _trace_boundary(blob)
    if contour.shape[0] < params.min_contour_px:
        return _invalid("contour_too_short")
    pts = contour[:, ::-1].astype(float)
    pts[:, 0] += cc0
    pts[:, 1] += cr0

    rng = np.random.default_rng(seed)
    fit = _fit_ellipse_ransac(pts, rng, params)
    if fit is None:
        return _invalid("ellipse_fit_failed")
    center, (major, minor) = fit
    u, v = float(center[0]), float(center[1])
    if not (0 <= u < w and 0 <= v < h and math.isfinite(u) and math.isfinite(v)):
        return _invalid("center_out_of_bounds")
    return FeatureObservation(u, v, major, minor, True, None)
