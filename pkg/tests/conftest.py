import numpy as np
import pytest

from patchmvs import _backend
from patchmvs.geometry import CameraIntrinsics, DepthRange
from patchmvs.synthetic import render_scene, textured_plane_scene

BACKENDS = ["python"] + (["cython"] if _backend.compiled_kernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel implementation."""
    monkeypatch.setattr(_backend, "kernels", _backend.get_kernels(request.param))
    return request.param


@pytest.fixture(scope="session")
def small_cam():
    return CameraIntrinsics(96.0, 96.0, 48.0, 36.0, 96, 72)


@pytest.fixture(scope="session")
def depth_range():
    return DepthRange(2.0, 20.0)


@pytest.fixture(scope="session")
def plane_views(small_cam):
    """Five rendered views of a textured slanted plane at 6 m."""
    return render_scene(textured_plane_scene(), small_cam)


@pytest.fixture(scope="session")
def fronto_views(small_cam):
    return render_scene(textured_plane_scene(tilt_deg=0.0), small_cam)


@pytest.fixture
def rs():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split("-")[1])):
        terminalreporter.write_line(ACCEPTANCE[key])
