"""Bicubic resampling, clamp-to-edge convolution and the blur-then-decimate model."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import signal

from . import _cubic
from .errors import ImageTooSmallError, KernelSizeError, NotDegradationError, ValidationError
from .optics import (
    AIRY_FIRST_ZERO_FACTOR,
    DEFAULT_FILL,
    DEFAULT_KERNEL_SIZE,
    DEFAULT_WAVELENGTH,
    ApertureSpec,
    PSFKernel,
    kernel_for_condition,
)

MIN_OUTPUT_SIZE = 8
# kernel support is this many first-zero diameters
SUPPORT_RINGS = 4
_DIRECT_MAX_KERNEL = 11


@dataclass(frozen=True, eq=False)
class Image:
    """Float image in [0, 1] stored as (height, width, channels)."""

    pixels: np.ndarray
    gsd: Optional[float] = None

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValidationError(f"image must be HxW, HxWx1 or HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError("image must have at least one pixel")
        if not np.all(np.isfinite(px)):
            raise ValidationError("image samples must be finite")
        if px.min() < 0 or px.max() > 1:
            raise ValidationError("image samples must lie in [0, 1]")
        if self.gsd is not None and not (math.isfinite(self.gsd) and self.gsd > 0):
            raise ValidationError("gsd must be positive when present")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass(frozen=True)
class DegradeSpec:
    source_gsd: float
    target_gsd: float
    q: float
    aperture: ApertureSpec = ApertureSpec()
    wavelength: float = DEFAULT_WAVELENGTH
    intermediate_kernel_size: int = DEFAULT_KERNEL_SIZE

    def __post_init__(self):
        if not (self.source_gsd > 0 and self.target_gsd > 0):
            raise ValidationError("GSD values must be positive")
        if not self.target_gsd > self.source_gsd:
            raise NotDegradationError("target GSD must exceed source GSD")
        if not 0 < self.q <= 4:
            raise ValidationError(f"q must lie in (0, 4], got {self.q}")
        k = self.intermediate_kernel_size
        if k < 3 or k % 2 == 0:
            raise ValidationError("intermediate_kernel_size must be odd and >= 3")

    @property
    def phi(self) -> float:
        return self.target_gsd / self.source_gsd


def resample_array(arr, out_width, out_height, a=_cubic.CATMULL_ROM_A):
    """Catmull-Rom resample of an (H, W[, C]) array without clipping."""
    arr = np.asarray(arr, dtype=np.float64)
    h, w = arr.shape[:2]
    if (out_width, out_height) != (w, h):
        idx, wts, ref = _cubic.axis_weights(w, _cubic.half_pixel_positions(w, out_width), a)
        arr = _cubic.apply_axis(arr, 1, idx, wts, ref)
        idx, wts, ref = _cubic.axis_weights(h, _cubic.half_pixel_positions(h, out_height), a)
        arr = _cubic.apply_axis(arr, 0, idx, wts, ref)
    return arr


def bicubic_resample(image: Image, out_width: int, out_height: int, a: float = _cubic.CATMULL_ROM_A) -> Image:
    """Resample to ``out_width x out_height`` with a 4x4 cubic-convolution kernel.

    Pixel centres sit at half-integer positions ("pixel is area"), borders
    are clamped to the edge and the result is clipped to [0, 1]. GSD
    metadata is rescaled by the width ratio.
    """
    if out_width < 1 or out_height < 1:
        raise ValidationError("output dimensions must be >= 1")
    out = np.clip(resample_array(image.pixels, out_width, out_height, a), 0.0, 1.0)
    gsd = None if image.gsd is None else image.gsd * image.width / out_width
    return Image(out, gsd)


def convolve_array(arr, weights, method="auto"):
    """Convolve each channel of an (H, W[, C]) array, clamp-to-edge, same size.

    ``method="direct"`` accumulates shifted copies of the edge-padded image;
    ``"fft"`` does the same sum through scipy's FFT convolution on the padded
    image. ``"auto"`` picks direct for kernels up to 11x11.
    """
    arr = np.asarray(arr, dtype=np.float64)
    k = np.asarray(weights, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] % 2 == 0:
        raise KernelSizeError("kernel must be square with odd side")
    h, w = arr.shape[:2]
    if k.shape[0] > min(h, w):
        raise KernelSizeError(f"{k.shape[0]}x{k.shape[0]} kernel does not fit a {w}x{h} image")
    if method == "auto":
        method = "direct" if k.shape[0] <= _DIRECT_MAX_KERNEL else "fft"
    if method not in ("direct", "fft"):
        raise ValidationError(f"unknown convolution method {method!r}")

    squeeze = arr.ndim == 2
    planes = arr[:, :, None] if squeeze else arr
    out = np.empty_like(planes)
    half = k.shape[0] // 2
    for ch in range(planes.shape[2]):
        padded = np.pad(planes[:, :, ch], half, mode="edge")
        if method == "fft":
            out[:, :, ch] = signal.fftconvolve(padded, k, mode="valid")
        else:
            out[:, :, ch] = _direct(padded, k, h, w)
    return out[:, :, 0] if squeeze else out


def _direct(padded, k, h, w):
    flipped = k[::-1, ::-1]
    n = k.shape[0]
    acc = np.zeros((h, w))
    for i in range(n):
        for j in range(n):
            if flipped[i, j] != 0:
                acc += flipped[i, j] * padded[i:i + h, j:j + w]
    return acc


def convolve(image: Image, kernel: PSFKernel, method: str = "auto") -> Image:
    out = convolve_array(image.pixels, kernel.weights, method)
    return Image(np.clip(out, 0.0, 1.0), image.gsd)


@dataclass(frozen=True)
class DegradePlan:
    intermediate_width: int
    intermediate_height: int
    intermediate_q: float
    kernel_size: int
    output_width: int
    output_height: int


def kernel_support(q_pixels: float) -> int:
    """Odd kernel side covering ``SUPPORT_RINGS`` Airy first-zero diameters."""
    side = math.ceil(SUPPORT_RINGS * AIRY_FIRST_ZERO_FACTOR * q_pixels - 1e-9)
    return side if side % 2 else side + 1


def plan_degradation(width: int, height: int, spec: DegradeSpec) -> DegradePlan:
    phi = spec.phi
    out_w = int(round(width / phi))
    out_h = int(round(height / phi))
    if min(out_w, out_h) < MIN_OUTPUT_SIZE:
        raise ImageTooSmallError(
            f"degraded image would be {out_w}x{out_h}; minimum is {MIN_OUTPUT_SIZE} px"
        )

    def q_at(w_i):
        # Q measured in intermediate pixels
        return spec.q * spec.target_gsd / (spec.source_gsd * width / w_i)

    limit = spec.intermediate_kernel_size
    w_i = min(width, int(math.floor(width * limit / (SUPPORT_RINGS * AIRY_FIRST_ZERO_FACTOR * spec.q * phi))))
    while w_i > out_w and kernel_support(q_at(w_i)) > limit:
        w_i -= 1
    w_i = max(w_i, out_w)
    h_i = height if w_i == width else max(1, int(round(height * w_i / width)))
    ksize = min(limit, _largest_odd(min(w_i, h_i)))
    return DegradePlan(w_i, h_i, q_at(w_i), ksize, out_w, out_h)


def _largest_odd(n):
    return n if n % 2 else n - 1


def degrade(image: Image, spec: DegradeSpec, source_gsd: Optional[float] = None) -> Image:
    """Simulate a coarser sensor: PSF blur at an intermediate scale, then decimate.

    1. bicubic-resample to the intermediate size where the PSF kernel's
       4-ring support fits ``spec.intermediate_kernel_size``;
    2. convolve with the aperture PSF at that scale;
    3. bicubic-resample to ``round(w/phi) x round(h/phi)``.
    """
    src = source_gsd if source_gsd is not None else image.gsd
    if src is None:
        src = spec.source_gsd
    if not math.isclose(src, spec.source_gsd, rel_tol=1e-9):
        raise ValidationError(f"image GSD {src} does not match spec source GSD {spec.source_gsd}")

    plan = plan_degradation(image.width, image.height, spec)
    work = image
    if (plan.intermediate_width, plan.intermediate_height) != (image.width, image.height):
        work = bicubic_resample(work, plan.intermediate_width, plan.intermediate_height)
    fill = min(DEFAULT_FILL, 1.0 / plan.intermediate_q)
    kernel = kernel_for_condition(spec.aperture, plan.intermediate_q, plan.kernel_size,
                                  fill_fraction=fill, wavelength=spec.wavelength)
    work = convolve(work, kernel)
    out = bicubic_resample(work, plan.output_width, plan.output_height)
    return replace(out, gsd=spec.target_gsd)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json") if path.suffix == "" else path.with_suffix(".meta.json")


def read_image(path, gsd: Optional[float] = None) -> Image:
    """Load an 8-bit PNG; GSD comes from ``<stem>.meta.json`` unless given."""
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if gsd is None:
        meta = sidecar_path(path)
        if meta.exists():
            gsd = float(json.loads(meta.read_text())["gsd_m_per_px"])
    return Image(arr, gsd)


def write_image(image: Image, path) -> None:
    from PIL import Image as PILImage

    data = np.round(image.pixels * 255.0).astype(np.uint8)
    PILImage.fromarray(data[:, :, 0] if image.channels == 1 else data).save(path)
    if image.gsd is not None:
        sidecar_path(path).write_text(json.dumps({"gsd_m_per_px": image.gsd}))
