import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphereflow.geometry import PositivityError, RadialSurface
from sphereflow.harmonics import ScalarBasis
from sphereflow.surface_fit import (
    DEFAULT_S,
    FitConfig,
    FitError,
    SamplePoints,
    assemble_fit,
    fit_residual,
    fit_surface,
    penalty_weights,
    seminorm,
)

from conftest import random_directions

SQ4PI = np.sqrt(4 * np.pi)


def samples_from(surf, dirs, noise=0.0, seed=0):
    rho = surf.eval(dirs)[0]
    if noise:
        rho = rho + noise * np.random.default_rng(seed).normal(size=rho.size)
    return SamplePoints(rho[:, None] * dirs)


@pytest.fixture(scope="module")
def truth():
    return RadialSurface.from_terms({(0, 1): SQ4PI, (2, 1): 0.2}, n_max=5)


@pytest.fixture(scope="module")
def noisy(truth):
    dirs = random_directions(np.random.default_rng(1), 200)
    return samples_from(truth, dirs, noise=0.02, seed=2)


class TestConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert (cfg.n_max, cfg.beta, cfg.tol, cfg.max_iter) == (30, 1e-4, 1e-2, 100)
        assert cfg.s > 3 and cfg.s - 3 <= 2 * np.finfo(float).eps

    def test_invalid(self):
        with pytest.raises(ValueError):
            FitConfig(beta=0)

    def test_penalty_zero_power(self):
        assert penalty_weights([0.0, 2.0], DEFAULT_S)[0] == 0
        assert penalty_weights([0.0], 0.0)[0] == 0

    def test_samples_validate(self):
        with pytest.raises(ValueError):
            SamplePoints([[0.0, 0.0, 0.0]])
        with pytest.raises(ValueError):
            SamplePoints([[np.nan, 1.0, 0.0]])


class TestAssemble:
    def test_single_sample(self):
        s = assemble_fit(SamplePoints([[0.0, 0.0, 3.0]]), FitConfig(n_max=0))
        assert s.L[0, 0] == pytest.approx(1 / (4 * np.pi), rel=1e-14)
        assert s.c[0] == pytest.approx(3 / SQ4PI, rel=1e-14)
        assert s.M[0] == 0

    def test_structure(self, noisy):
        s = assemble_fit(noisy, FitConfig(n_max=4))
        assert np.array_equal(s.L, s.L.T)
        assert np.linalg.eigvalsh(s.L)[0] > -1e-10
        assert np.all(s.M >= 0) and s.M[0] == 0
        assert np.allclose(s.M, ScalarBasis(4).eigenvalues ** DEFAULT_S)

    def test_degenerate_direction(self):
        with pytest.raises(ValueError):
            assemble_fit(SamplePoints([[0, 0, 1.0], [0, 0, 2.0], [0, 0, 5.0]]), FitConfig(n_max=2))

    def test_empty(self):
        with pytest.raises(ValueError):
            assemble_fit(SamplePoints(np.zeros((0, 3))), FitConfig(n_max=2))

    def test_basis_mismatch(self, noisy):
        with pytest.raises(ValueError):
            assemble_fit(noisy, FitConfig(n_max=3), ScalarBasis(2))


class TestFit:
    @pytest.mark.parametrize("n_max", [0, 3])
    def test_exact_sphere(self, rng, n_max):
        pts = SamplePoints(2.5 * random_directions(rng, 80))
        surf = fit_surface(pts, FitConfig(n_max=n_max, beta=1e-3, tol=1e-12, max_iter=500))
        assert np.allclose(surf.eval(random_directions(rng, 50))[0], 2.5, atol=1e-9)

    def test_embryo_scale_sphere(self, rng, mesh3):
        pts = SamplePoints(300 * random_directions(rng, 400))
        surf = fit_surface(pts, FitConfig(n_max=6, tol=1e-14, max_iter=500), mesh=mesh3)
        assert np.max(np.abs(surf.nodal_values(mesh3) - 300)) <= 1e-6

    def test_recover_coefficients(self, rng, truth):
        pts = samples_from(truth, random_directions(rng, 500))
        surf = fit_surface(pts, FitConfig(n_max=5, beta=1e-9, tol=1e-12, max_iter=500))
        assert np.max(np.abs(surf.coeffs - truth.coeffs)) <= 1e-3

    def test_upper_hemisphere(self, rng, truth, mesh4):
        d = random_directions(rng, 600)
        d = d[d[:, 2] > 0.05]
        surf = fit_surface(samples_from(truth, d), FitConfig(n_max=8, beta=1e-4, tol=1e-10, max_iter=500), mesh=mesh4)
        rho = surf.nodal_values(mesh4)
        assert np.all(rho > 0)
        # bounded southern cap: within a factor of the data range
        south = rho[mesh4.nodes[:, 2] < -0.5]
        assert south.max() < 3 * truth.nodal_values(mesh4).max()
        assert south.min() > 0.1

    def test_positivity_failure(self, mesh3):
        pts = SamplePoints(np.array([[0, 0, 1.0], [1.0, 0, 0], [0, -1e-3, 0], [0, 0, -1e-3]]))
        with pytest.raises(PositivityError):
            fit_surface(pts, FitConfig(n_max=2, beta=1e-12, tol=1e-12, max_iter=500), mesh=mesh3)

    def test_non_convergence(self, noisy):
        with pytest.raises(FitError):
            fit_surface(noisy, FitConfig(n_max=6, beta=1e-9, tol=1e-14, max_iter=2))

    def test_report_and_metadata(self, noisy):
        surf, rep = fit_surface(noisy, FitConfig(n_max=3, tol=1e-8), time=4.0, centre=[1, 2, 3], return_report=True)
        assert rep.converged and surf.time == 4.0 and np.array_equal(surf.centre, [1, 2, 3])

    def test_beta_floor_converges(self, noisy):
        fit_surface(noisy, FitConfig(n_max=5, beta=1e-9, tol=1e-10, max_iter=1000))

    def test_beta_sweep_seminorm(self, noisy):
        cfg = dict(n_max=5, tol=1e-12, max_iter=2000)
        betas = 10.0 ** np.arange(-9, 0)
        semis = [seminorm(fit_surface(noisy, FitConfig(beta=b, **cfg))) for b in betas]
        assert np.all(np.diff(semis) <= 1e-9 * max(semis))

    def test_residual_non_increasing(self, noisy):
        cfg = dict(n_max=5, tol=1e-12, max_iter=2000)
        betas = 10.0 ** np.arange(0, -10, -1)
        res = [fit_residual(fit_surface(noisy, FitConfig(beta=b, **cfg)), noisy) for b in betas]
        assert np.all(np.diff(res) <= 1e-12 * max(res))

    @settings(max_examples=15, deadline=None)
    @given(st.permutations(range(40)))
    def test_permutation_invariance(self, perm):
        dirs = random_directions(np.random.default_rng(8), 40)
        pts = samples_from(RadialSurface.from_terms({(0, 1): SQ4PI, (3, 2): 0.1}), dirs, 0.01)
        shuffled = SamplePoints(pts.points[list(perm)])
        cfg = FitConfig(n_max=3, tol=1e-10)
        assert np.array_equal(fit_surface(pts, cfg).coeffs, fit_surface(shuffled, cfg).coeffs)


class TestSeminorm:
    def test_constant(self):
        assert seminorm(RadialSurface.constant(7.0, n_max=4)) == 0

    def test_single(self):
        surf = RadialSurface.from_terms({(2, 3): 1.0})
        assert seminorm(surf, 3.0) == pytest.approx(216.0)
        assert seminorm(surf) == pytest.approx(6.0**DEFAULT_S)

    def test_parseval(self, mesh5):
        rng = np.random.default_rng(4)
        c = rng.normal(size=36) * 0.3
        c[0] = 2 * SQ4PI
        surf = RadialSurface(c)
        quad = np.dot(mesh5.areas, surf.eval(mesh5.centroids(project=True))[0] ** 2)
        assert quad == pytest.approx(np.sum(c**2), rel=0.01)


class TestSamplesIO:
    def test_round_trip(self, tmp_path, rng):
        pts = SamplePoints(rng.normal(size=(12, 3)))
        pts.write_csv(tmp_path / "pts.csv")
        assert (tmp_path / "pts.csv").read_text().startswith("x,y,z\n")
        assert np.array_equal(SamplePoints.read_csv(tmp_path / "pts.csv").points, pts.points)

    def test_headerless(self, tmp_path):
        (tmp_path / "p.csv").write_text("1,2,3\n4,5,6\n")
        assert SamplePoints.read_csv(tmp_path / "p.csv").points.shape == (2, 3)

    def test_sorted_order(self, rng):
        pts = SamplePoints(rng.normal(size=(30, 3))).sorted().points
        keys = [tuple(p) for p in pts]
        assert keys == sorted(keys)
