"""Aperture functions, Fraunhofer PSF simulation and first-order optics.

Lengths are in meters throughout. The simulated PSF is the squared modulus
of the 2-D DFT of the aperture mask; every constant or phase prefactor of the
far-field expression cancels once the kernel is normalised to unit sum.

A raw simulated PSF sampled on an ``N x N`` grid whose aperture spans
``fill_fraction * N`` cells has a bin spacing of ``fill_fraction * lambda*f/D``
in the focal plane, i.e. its Q value measured in bins is ``1/fill_fraction``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import interpolate, optimize, special

from . import _cubic
from .errors import (
    DegenerateApertureError,
    DegenerateKernelError,
    InvalidConfigError,
    ResolutionError,
    ValidationError,
)

DEFAULT_WAVELENGTH = 550e-9
AIRY_FIRST_ZERO_FACTOR = 2.44
# first positive root of J1, in units of the argument pi*D*r/(lambda*f)
J1_FIRST_ZERO = float(special.jn_zeros(1, 1)[0])

DEFAULT_GRID = 1024
DEFAULT_FILL = 0.25
DEFAULT_KERNEL_SIZE = 63

CIRCULAR = "circular"
CASSEGRAIN = "cassegrain"
_BOUNDARY_TOL = 1e-12


@dataclass(frozen=True)
class OpticalConfig:
    focal_length: float
    aperture_diameter: float
    pixel_pitch: float
    altitude: float = 1.0
    wavelength: float = DEFAULT_WAVELENGTH

    def __post_init__(self):
        for name in ("focal_length", "aperture_diameter", "pixel_pitch", "altitude", "wavelength"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise InvalidConfigError(f"{name} must be a finite positive length, got {value!r}")
        q = self.wavelength * self.focal_length / (self.aperture_diameter * self.pixel_pitch)
        if not (math.isfinite(q) and q > 0):
            raise InvalidConfigError(f"derived Q value is not finite and positive ({q!r})")


def gsd(config: OpticalConfig) -> float:
    """Ground sample distance in m/pixel for a flat scene at ``config.altitude``."""
    return config.pixel_pitch * config.altitude / config.focal_length


def q_value(config: OpticalConfig) -> float:
    return config.wavelength * config.focal_length / (config.aperture_diameter * config.pixel_pitch)


def airy_first_zero(config: OpticalConfig) -> float:
    """Diameter of the first dark ring of the Airy pattern at the focal plane (m)."""
    return AIRY_FIRST_ZERO_FACTOR * config.wavelength * config.focal_length / config.aperture_diameter


def analytic_circular_psf(config: OpticalConfig, radius):
    """Airy intensity ``|2 J1(x)/x|^2`` with ``x = pi D r / (lambda f)``, 1 at r = 0.

    ``radius`` may be a scalar or an array of focal-plane radii in meters.
    """
    r = np.asarray(radius, dtype=np.float64)
    if np.any(r < 0):
        raise ValidationError("radius must be non-negative")
    x = np.pi * config.aperture_diameter * r / (config.wavelength * config.focal_length)
    out = airy_intensity(x)
    return float(out) if out.ndim == 0 else out


def airy_intensity(x):
    """``|2 J1(x)/x|^2`` evaluated elementwise, with the x = 0 limit set to 1."""
    x = np.asarray(x, dtype=np.float64)
    safe = np.where(x == 0, 1.0, x)
    amp = np.where(x == 0, 1.0, 2.0 * special.j1(safe) / safe)
    return amp * amp


@dataclass(frozen=True)
class ApertureSpec:
    kind: str = CIRCULAR
    diameter: float = 0.1
    obscuration_ratio: float = 0.3
    spider_count: int = 4
    spider_width_ratio: float = 0.02

    def __post_init__(self):
        if self.kind not in (CIRCULAR, CASSEGRAIN):
            raise InvalidConfigError(f"unknown aperture kind {self.kind!r}")
        if not (math.isfinite(self.diameter) and self.diameter > 0):
            raise InvalidConfigError("aperture diameter must be positive")
        if self.kind == CASSEGRAIN:
            if not 0 < self.obscuration_ratio < 1:
                raise InvalidConfigError("obscuration_ratio must lie in (0, 1)")
            if self.spider_count < 0:
                raise InvalidConfigError("spider_count must be >= 0")
            if self.spider_count > 0 and not self.spider_width_ratio > 0:
                raise InvalidConfigError("spider_width_ratio must be > 0 when spiders are present")

    @property
    def name(self) -> str:
        return self.kind

    @classmethod
    def circular(cls, diameter=0.1):
        return cls(kind=CIRCULAR, diameter=diameter)

    @classmethod
    def cassegrain(cls, diameter=0.1, obscuration_ratio=0.3, spider_count=4, spider_width_ratio=0.02):
        return cls(CASSEGRAIN, diameter, obscuration_ratio, spider_count, spider_width_ratio)


@dataclass(frozen=True, eq=False)
class ApertureMask:
    values: np.ndarray
    meters_per_cell: float
    diameter: float

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValidationError("aperture mask must be a square 2-D grid")
        if not np.all(np.isin(v, (0.0, 0.5, 1.0))):
            raise ValidationError("aperture transmission must be 0, 0.5 or 1")
        v.setflags(write=False)

    @property
    def grid_size(self) -> int:
        return self.values.shape[0]

    @property
    def fill_fraction(self) -> float:
        return self.diameter / (self.meters_per_cell * self.grid_size)


@dataclass(frozen=True, eq=False)
class PSFKernel:
    """Unit-sum discrete PSF.

    ``q`` is the Q value measured in this kernel's own pixels, so the Airy
    first-zero diameter of a circular aperture spans ``2.44 * q`` pixels.
    """

    weights: np.ndarray
    pixel_pitch_at_plane: float
    q: float

    def __post_init__(self):
        w = self.weights
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValidationError(f"PSF kernel must be square with odd side, got {w.shape}")
        if np.any(w < 0):
            raise ValidationError("PSF kernel has negative weights")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValidationError("PSF kernel must sum to 1")
        w.setflags(write=False)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def center(self) -> int:
        return self.weights.shape[0] // 2


def _cell_coordinates(n):
    c = np.arange(n, dtype=np.float64) - n // 2
    return np.meshgrid(c, c, indexing="xy")


def build_aperture(spec: ApertureSpec, grid_size: int = DEFAULT_GRID,
                   fill_fraction: float = DEFAULT_FILL) -> ApertureMask:
    """Rasterise an aperture onto a square grid centred on cell ``grid_size // 2``.

    The aperture diameter covers ``fill_fraction`` of the grid side; the rest
    is zero padding, which sets the PSF sampling density. Cells whose centre
    lies exactly on the rim get transmission 0.5.
    """
    if grid_size < 32:
        raise ResolutionError(f"grid_size must be >= 32, got {grid_size}")
    if not 0 < fill_fraction <= 1:
        raise ValidationError(f"fill_fraction must be in (0, 1], got {fill_fraction}")

    d_cells = fill_fraction * grid_size
    radius = d_cells / 2.0
    x, y = _cell_coordinates(grid_size)
    r = np.hypot(x, y)
    values = np.where(r < radius - _BOUNDARY_TOL, 1.0, 0.0)
    values[np.abs(r - radius) <= _BOUNDARY_TOL] = 0.5

    if spec.kind == CASSEGRAIN:
        if spec.obscuration_ratio * d_cells < 2:
            raise ResolutionError(
                f"central obscuration spans {spec.obscuration_ratio * d_cells:.2f} cells; "
                "increase grid_size or fill_fraction"
            )
        values[r <= spec.obscuration_ratio * radius] = 0.0
        half_width = spec.spider_width_ratio * d_cells / 2.0
        for k in range(spec.spider_count):
            theta = 2.0 * np.pi * k / spec.spider_count
            # rounding keeps axis-aligned vanes exactly symmetric on the lattice
            c, s = round(math.cos(theta), 12), round(math.sin(theta), 12)
            along = x * c + y * s
            across = -x * s + y * c
            values[(along > 0) & (np.abs(across) < half_width)] = 0.0

    if values.sum() <= 0:
        raise DegenerateApertureError("aperture mask has no open cells")
    return ApertureMask(values, spec.diameter / d_cells, spec.diameter)


def simulate_psf(mask: ApertureMask, wavelength: float = DEFAULT_WAVELENGTH,
                 focal_length: float = 1.0) -> PSFKernel:
    """Far-field PSF of ``mask`` via FFT, zero frequency centred, unit sum.

    For an even grid the Nyquist row and column (index 0 after the shift)
    are dropped so the kernel has an odd side with the DC bin at its centre.
    ``wavelength`` and ``focal_length`` only set the pixel-pitch metadata.
    """
    values = mask.values
    if not np.any(values > 0):
        raise DegenerateApertureError("cannot simulate the PSF of an all-zero aperture")
    field = np.fft.fft2(values)
    intensity = np.fft.fftshift(field.real ** 2 + field.imag ** 2)
    n = values.shape[0]
    if n % 2 == 0:
        intensity = intensity[1:, 1:]
    intensity = intensity / intensity.sum()
    pitch = wavelength * focal_length / (n * mask.meters_per_cell)
    q = n * mask.meters_per_cell / mask.diameter
    return PSFKernel(intensity, pitch, q)


@lru_cache(maxsize=64)
def kernel_for_condition(spec: ApertureSpec, q: float, kernel_size: int = DEFAULT_KERNEL_SIZE, *,
                         grid_size: int = DEFAULT_GRID, fill_fraction: float = DEFAULT_FILL,
                         wavelength: float = DEFAULT_WAVELENGTH,
                         focal_length: float = 1.0) -> PSFKernel:
    """PSF kernel whose pixels have Q value ``q``.

    The raw simulated PSF (Q = 1/fill_fraction per bin) is point-sampled with
    Catmull-Rom interpolation at a spacing of ``(1/fill_fraction)/q`` bins,
    truncated to ``kernel_size``, clamped non-negative and renormalised.
    ``q`` may not exceed ``1/fill_fraction`` (0 < q <= 4 at the default fill).
    """
    q = float(q)
    q_max = 1.0 / fill_fraction
    if not (0 < q <= q_max * (1 + 1e-12)):
        raise InvalidConfigError(f"q must lie in (0, {q_max:g}] for fill_fraction {fill_fraction:g}")
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValidationError(f"kernel_size must be odd and >= 3, got {kernel_size}")

    raw = simulate_psf(build_aperture(spec, grid_size, fill_fraction), wavelength, focal_length)
    n = raw.size
    c = raw.center
    step = raw.q / q
    if step >= c:
        raise DegenerateKernelError(
            f"q={q:g} puts neighbouring kernel pixels outside the simulated PSF field; "
            "kernel would collapse below 3x3 support"
        )
    half = kernel_size // 2
    pos = c + step * np.arange(-half, half + 1, dtype=np.float64)
    idx, w, ref = _cubic.axis_weights(n, pos)
    sampled = _cubic.apply_axis(raw.weights, 1, idx, w, ref)
    sampled = _cubic.apply_axis(sampled, 0, idx, w, ref)
    # beyond the simulated field the PSF is taken as zero, not edge-clamped
    outside = (pos < 0) | (pos > n - 1)
    sampled[outside, :] = 0.0
    sampled[:, outside] = 0.0
    sampled = np.clip(sampled, 0.0, None)
    total = sampled.sum()
    if total <= 0:
        raise DegenerateKernelError("resampled PSF kernel has no energy")
    sampled = sampled / total
    pitch = wavelength * focal_length / (spec.diameter * q)
    return PSFKernel(sampled, pitch, q)


def airy_diameter_from_scale(scale):
    """First-zero diameter for an Airy profile ``I(r) = airy_intensity(pi r / scale)``."""
    return 2.0 * J1_FIRST_ZERO / np.pi * scale


def _disc_offsets(radius, n=128):
    """Sunflower-pattern points spread uniformly over a disc."""
    k = np.arange(n)
    r = radius * np.sqrt((k + 0.5) / n)
    theta = k * np.pi * (3.0 - np.sqrt(5.0))
    return r * np.cos(theta), r * np.sin(theta)


def _airy_profile(rho, scale, offsets):
    """Airy intensity at radii ``rho``, averaged over a source disc when ``offsets`` is given.

    The disc-averaged profile is radially symmetric, so it is tabulated along
    one axis and spline-interpolated instead of being evaluated per pixel.
    """
    if offsets is None:
        return airy_intensity(np.pi * rho / scale)
    ox, oy = offsets
    grid = np.linspace(0.0, float(rho.max()) + 1e-9, 256)
    table = airy_intensity(np.pi * np.hypot(grid[:, None] - ox, oy) / scale).mean(axis=1)
    return interpolate.CubicSpline(grid, table)(rho)


def _airy_residual(blocks, scale, offsets=None):
    """Residuals of the best linear ``A * profile + B`` per block at one scale.

    Each block is ``(rho, values)``: pixel distances from the source centre
    and the measured pixel values. Amplitude and background enter linearly,
    so they are solved exactly.
    """
    rho = np.concatenate([r for r, _ in blocks])
    prof_all = _airy_profile(rho, scale, offsets)
    out, start = [], 0
    for r, vals in blocks:
        profile = prof_all[start:start + len(r)]
        start += len(r)
        design = np.column_stack([profile, np.ones_like(profile)])
        coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
        out.append(design @ coef - vals)
    return np.concatenate(out)


def _seed_scales(cost, n_best=3):
    """Lowest local minima of ``cost`` on a dense log grid of Airy scales.

    Sparse sampling of a small blob makes the cost surface multimodal with
    narrow basins, so a single coarse seed can land in the wrong one.
    """
    scales = np.geomspace(0.1, 50.0, 400)
    c = np.array([cost(sc) for sc in scales])
    interior = np.flatnonzero((c[1:-1] <= c[:-2]) & (c[1:-1] <= c[2:])) + 1
    candidates = np.concatenate([interior, [int(np.argmin(c))]])
    order = sorted(set(candidates.tolist()), key=lambda i: c[i])
    return [float(scales[i]) for i in order[:n_best]]


def _best_fit(fun, seeds, make_x0, bounds, x_scale):
    best = None
    for s0 in seeds:
        fit = optimize.least_squares(fun, make_x0(s0), bounds=bounds, x_scale=x_scale(s0), **_FIT_TOL)
        if best is None or fit.cost < best.cost:
            best = fit
    return best


_FIT_TOL = dict(ftol=1e-14, xtol=1e-12, gtol=1e-14)


def _offsets(source_radius):
    if source_radius < 0:
        raise ValidationError("source_radius must be non-negative")
    return _disc_offsets(source_radius) if source_radius > 0 else None


def fit_first_zero_diameter(values, center=None, window=None, source_radius=0.0):
    """Measure the first dark-ring diameter (in pixels) of a point-sampled Airy blob.

    At Q <= 1 the ring lies between pixel centres, so the minimum cannot be
    read off the samples directly. Instead an Airy profile
    ``A * |2 J1(pi r / s)/(pi r / s)|^2 + B`` is least-squares fitted to the
    pixels around the peak and the first minimum of the fitted profile is
    returned. ``center`` is ``(x, y)`` in array index units; it is fitted
    when omitted. A non-zero ``source_radius`` (pixels) models the blob as an
    Airy pattern spread over a uniform disc, e.g. the image of a small
    bright object.
    """
    img = np.asarray(values, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError("expected a 2-D array")
    offsets = _offsets(source_radius)
    peak = np.unravel_index(np.argmax(img), img.shape)
    if window is None:
        window = min(15, min(img.shape) // 2)
    y0 = max(peak[0] - window, 0)
    y1 = min(peak[0] + window + 1, img.shape[0])
    x0 = max(peak[1] - window, 0)
    x1 = min(peak[1] + window + 1, img.shape[1])
    vals = img[y0:y1, x0:x1].ravel()
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    yy, xx = yy.ravel(), xx.ravel()

    def residual(scale, cx, cy):
        return _airy_residual([(np.hypot(xx - cx, yy - cy), vals)], scale, offsets)

    if center is None:
        # the peak pixel can be half a pixel off; seed from a half-pixel lattice around it
        starts = []
        for dy in (-0.5, 0.0, 0.5):
            for dx in (-0.5, 0.0, 0.5):
                c = (peak[1] + dx, peak[0] + dy)
                cost = lambda sc, c=c: np.sum(residual(sc, *c) ** 2)
                starts += [(cost(sc), sc, c) for sc in _seed_scales(cost)]
        starts.sort(key=lambda t: t[0])
        best = None
        for _, s0, c in starts[:3]:
            fit = optimize.least_squares(
                lambda p: residual(p[0], p[1], p[2]), [s0, c[0], c[1]],
                bounds=([0.05, peak[1] - 2.0, peak[0] - 2.0], [60.0, peak[1] + 2.0, peak[0] + 2.0]),
                x_scale=[s0, 1.0, 1.0], **_FIT_TOL,
            )
            if best is None or fit.cost < best.cost:
                best = fit
        return float(airy_diameter_from_scale(best.x[0]))
    c0 = (float(center[0]), float(center[1]))
    seeds = _seed_scales(lambda sc: np.sum(residual(sc, *c0) ** 2))
    fit = _best_fit(lambda p: residual(p[0], *c0), seeds, lambda s0: [s0], ([0.05], [60.0]), lambda s0: [s0])
    return float(airy_diameter_from_scale(fit.x[0]))


def fit_first_zero_diameter_stacked(image, centers, source_radius=0.0, window=6):
    """First dark-ring diameter shared by several blobs with known centres.

    ``centers`` are ``(x, y)`` in array index units. Each blob keeps its own
    amplitude and background; the ring scale is common. Blobs at different
    sub-pixel phases sample the profile at different radii, which pins the
    ring down even when no single blob resolves it (a blob centred on a
    pixel corner at Q ~ 1 has no samples between r = 0.7 and 1.6 px).
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValidationError("expected a 2-D array")
    if not len(centers):
        raise ValidationError("need at least one centre")
    offsets = _offsets(source_radius)
    blocks = []
    for cx, cy in centers:
        x0, y0 = max(int(round(cx)) - window, 0), max(int(round(cy)) - window, 0)
        x1 = min(int(round(cx)) + window + 1, img.shape[1])
        y1 = min(int(round(cy)) + window + 1, img.shape[0])
        if x1 - x0 < 3 or y1 - y0 < 3:
            raise ValidationError(f"centre ({cx}, {cy}) lies outside the image")
        yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        blocks.append((np.hypot(xx - cx, yy - cy).ravel(), img[y0:y1, x0:x1].ravel()))
    seeds = _seed_scales(lambda sc: np.sum(_airy_residual(blocks, sc, offsets) ** 2))
    fit = _best_fit(lambda p: _airy_residual(blocks, p[0], offsets), seeds, lambda s0: [s0], ([0.05], [60.0]),
                    lambda s0: [s0])
    return float(airy_diameter_from_scale(fit.x[0]))


def write_kernel_text(kernel: PSFKernel, path) -> None:
    """Row-major plain-text matrix, one row per line."""
    np.savetxt(Path(path), kernel.weights, fmt="%.17g", delimiter=" ")


def read_kernel_text(path) -> np.ndarray:
    return np.loadtxt(Path(path), ndmin=2)


def write_kernel_preview(kernel: PSFKernel, path) -> None:
    """16-bit grayscale PNG scaled so the peak maps to 65535."""
    from PIL import Image

    w = kernel.weights
    scaled = np.round(w / w.max() * 65535.0).astype(np.uint16)
    Image.fromarray(scaled).save(Path(path))
