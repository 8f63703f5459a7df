import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from egodance.skeleton import load_topology

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def topo():
    return load_topology()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_rotations(rng, shape):
    """Uniform-ish random rotation matrices via QR, float64."""
    A = rng.standard_normal(tuple(shape) + (3, 3))
    Q, R = np.linalg.qr(A)
    Q = Q * np.sign(np.diagonal(R, axis1=-2, axis2=-1))[..., None, :]
    det = np.linalg.det(Q)
    Q[..., :, 0] *= det[..., None]
    return torch.from_numpy(Q)
