"""Satellite-style spatial degradation of aerial imagery and detection scoring."""

from .optics import (
    ApertureMask,
    ApertureSpec,
    OpticalConfig,
    PSFKernel,
    airy_first_zero,
    analytic_circular_psf,
    build_aperture,
    gsd,
    kernel_for_condition,
    q_value,
    simulate_psf,
)
from .resample import DegradeSpec, Image, bicubic_resample, convolve, degrade

__version__ = "0.1.0"
