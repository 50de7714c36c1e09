import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from ambigraph.geometry import CameraIntrinsics  # noqa: E402
from ambigraph.harness import SceneConfig, generate_scene  # noqa: E402

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def K():
    return CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


@pytest.fixture(scope="session")
def noiseless_scene():
    """Six markers, twenty images, exact corners."""
    return generate_scene(SceneConfig(n_markers=6, n_images=20, noise_px=0.0, seed=3))


@pytest.fixture(scope="session")
def noisy_scene():
    return generate_scene(SceneConfig(n_markers=8, n_images=24, noise_px=2.0, seed=5))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
