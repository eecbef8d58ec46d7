"""Separable cubic-convolution sampling shared by the resampler and PSF sizing."""

import numpy as np

CATMULL_ROM_A = -0.5


def cubic_kernel(t, a=CATMULL_ROM_A):
    """Keys cubic convolution kernel; ``a=-0.5`` is Catmull-Rom."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def axis_weights(n_src, positions, a=CATMULL_ROM_A):
    """Four-tap indices and weights for sampling an axis of length ``n_src``.

    ``positions`` are source coordinates with pixel centers on integers.
    Out-of-range taps are clamped to the edge. Also returns the nearest
    source index, used as the reference value in :func:`apply_axis`.
    """
    pos = np.asarray(positions, dtype=np.float64)
    base = np.floor(pos).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]
    weights = cubic_kernel(pos[:, None] - taps, a)
    idx = np.clip(taps, 0, n_src - 1)
    ref = np.clip(np.floor(pos + 0.5).astype(np.int64), 0, n_src - 1)
    return idx, weights, ref


def apply_axis(arr, axis, idx, weights, ref):
    """Resample ``arr`` along ``axis`` with precomputed taps.

    Evaluated as ``ref + sum(w * (v - ref))`` so constant rows come back
    bit-exact; algebraically identical to ``sum(w * v)`` since the weights
    sum to one.
    """
    moved = np.moveaxis(arr, axis, -1)
    vals = moved[..., idx]
    base = moved[..., ref]
    out = base + ((vals - base[..., None]) * weights).sum(axis=-1)
    return np.moveaxis(out, -1, axis)


def half_pixel_positions(n_src, n_out):
    scale = n_src / n_out
    return (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
