import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from biascorrect.geometry import Pose, se3_exp

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_pose(rng, rot_scale=1.0, trans_scale=1.0) -> Pose:
    return se3_exp(np.concatenate([rng.normal(0, rot_scale, 3), rng.normal(0, trans_scale, 3)]))


def points_in_view(rng, pose, n, depth=(2.0, 8.0), spread=0.8):
    """World points that project inside a +-spread normalized window of ``pose``."""
    uv = rng.uniform(-spread, spread, (n, 2))
    z = rng.uniform(*depth, n)
    Xc = np.column_stack([uv * z[:, None], z])
    return Xc @ pose.rotation.T + pose.translation


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; the lines are printed in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        lines.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
