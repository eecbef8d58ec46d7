import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def natural_image(rng, height, width, channels=1, mean=0.5, std=0.12):
    """Random image with a 1/f amplitude spectrum, clipped to [0, 1]."""
    planes = []
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    f = np.hypot(fx, fy)
    f[0, 0] = 1.0
    for _ in range(channels):
        spectrum = np.fft.fft2(rng.standard_normal((height, width))) / f
        spectrum[0, 0] = 0.0
        field = np.fft.ifft2(spectrum).real
        field = (field - field.mean()) / field.std()
        planes.append(np.clip(mean + std * field, 0.0, 1.0))
    return np.stack(planes, axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
