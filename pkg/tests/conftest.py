import numpy as np
import pytest

from innergeo.geometry import CameraModel


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng, width=80, height=60):
    return CameraModel(
        fx=rng.uniform(40, 120), fy=rng.uniform(40, 120),
        cx=rng.uniform(0.3, 0.7) * width, cy=rng.uniform(0.3, 0.7) * height,
        rotation=random_rotation(rng), translation=rng.normal(size=3),
        width=width, height=height,
    )


def forward_camera(width=80, height=60, f=60.0):
    """Looks down world +x from 1.5 m up."""
    return CameraModel.looking_at([0, 0, 1.5], [10, 0, 1.5], f, f, width, height)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
