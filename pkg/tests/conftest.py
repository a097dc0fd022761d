import numpy as np
import pytest

from echosim.correlation import ncc_matrix
from echosim.data_model import Mesh

# pass/fail lines collected by the acceptance tests; echoed in the terminal
# summary so they survive pytest's output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def rect_mesh(x0, x1, z0, z1, frames=2, l=2, r=2):
    """Axis-aligned rectangular mesh covering [x0,x1] x [z0,z1]."""
    xs = np.linspace(x0, x1, l)
    zs = np.linspace(z0, z1, r)
    pts = np.stack(np.meshgrid(xs, zs, indexing="ij"), axis=-1)
    return Mesh(points=np.broadcast_to(pts, (frames, l, r, 2)).copy())


@pytest.fixture(scope="session")
def noise_max_ncc_oracle():
    """Max-of-NCC distribution for independent uniform-noise windows.

    Monte Carlo oracle: 1000 trials of a 25x25 reference against an
    independent 49x49 search region (search halfwidth 12).
    """
    rng = np.random.default_rng(1234)
    samples = np.empty(1000)
    for k in range(1000):
        ref = rng.random((25, 25))
        region = rng.random((49, 49))
        samples[k] = ncc_matrix(ref, region).max()
    return samples
