import numpy as np
import pytest

from widepose import backend
from widepose.geometry import Pose


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # compile the numba kernels once so timed tests measure steady-state work
    backend.warmup()


def random_pose(rng, depth_range=(3.0, 9.0)) -> Pose:
    q = rng.normal(size=4)
    t = np.array([rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                  rng.uniform(*depth_range)])
    return Pose(q, t)
