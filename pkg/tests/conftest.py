import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mvbev.geometry import BevGrid, CameraCalibration, look_at

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def overhead_camera(height=5.0, f=100.0, cx=0.0, cy=0.0, w=64, h=64):
    """Camera above the origin looking straight down; image x follows world +X."""
    return CameraCalibration(f, f, cx, cy, np.diag([1.0, -1.0, -1.0]), np.array([0.0, 0.0, height]), w, h)


@pytest.fixture
def small_grid():
    return BevGrid(0.0, 0.0, 0.1, 12, 16)


@pytest.fixture
def oblique_camera():
    return look_at((-4.0, 0.8, 3.0), (0.6, 0.8, 0.0), 60.0, 60.0, 31.5, 23.5, 64, 48)


def pytest_terminal_summary(terminalreporter):
    from criteria import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        status, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
