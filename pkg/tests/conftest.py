import numpy as np
import pytest

from mvlabel.geometry import CameraFrame, DepthMap, pinhole_intrinsic
from mvlabel.synth import generate_scene, separated_config


def identity_frame(fid=0, width=640, height=480, intrinsic=None, extrinsic=None):
    return CameraFrame(fid, np.eye(4) if intrinsic is None else intrinsic,
                       np.eye(4) if extrinsic is None else extrinsic, width, height)


def flat_depth(width, height, value):
    return DepthMap(np.full((height, width), float(value)))


@pytest.fixture
def pinhole_frame():
    """100 px focal, principal point (50, 50), 100x100 image, identity pose."""
    return CameraFrame(0, pinhole_intrinsic(100, 100, 50, 50), np.eye(4), 100, 100)


@pytest.fixture(scope="session")
def clean_scene():
    return generate_scene(separated_config(3, n_objects=4, n_cameras=8, noise=0.0))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(separated_config(11, n_objects=4, n_cameras=16, noise=0.3))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
