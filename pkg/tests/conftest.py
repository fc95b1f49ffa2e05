import numpy as np
import pytest

from sphereflow.flow import SurfaceImage
from sphereflow.harmonics import eval_scalar_harmonics
from sphereflow.pipeline import rotate_z
from sphereflow.trimesh import build_icosphere


@pytest.fixture(scope="session")
def mesh2():
    return build_icosphere(2)


@pytest.fixture(scope="session")
def mesh3():
    return build_icosphere(3)


@pytest.fixture(scope="session")
def mesh4():
    return build_icosphere(4)


@pytest.fixture(scope="session")
def mesh5():
    return build_icosphere(5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_directions(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def texture_coeffs(seed=0, n_max=8):
    """Band-limited texture with a gentle spectral decay, no mean."""
    rng = np.random.default_rng(seed)
    deg = np.repeat(np.arange(n_max + 1), 2 * np.arange(n_max + 1) + 1)
    c = rng.normal(size=deg.size) / np.sqrt(1.0 + deg)
    c[0] = 0.0
    return c


def rotation_pair(mesh, omega, seed=0, n_max=8):
    """f0 = texture, f1 = texture rotated by omega about x3."""
    c = texture_coeffs(seed, n_max)
    f0 = SurfaceImage(mesh, c @ eval_scalar_harmonics(n_max, mesh.nodes), 0)
    f1 = SurfaceImage(mesh, c @ eval_scalar_harmonics(n_max, rotate_z(mesh.nodes, -omega)), 1)
    return f0, f1


def sphere_quadrature(n_theta=40, n_phi=80):
    """Gauss-Legendre x trapezoid rule on the sphere, exact for low degrees."""
    z, w = np.polynomial.legendre.leggauss(n_theta)
    phi = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    zz, pp = np.meshgrid(z, phi, indexing="ij")
    r = np.sqrt(1 - zz**2)
    x = np.stack([r * np.cos(pp), r * np.sin(pp), zz], axis=-1).reshape(-1, 3)
    weights = np.outer(w, np.full(n_phi, 2 * np.pi / n_phi)).ravel()
    return x, weights
