"""Regularised least-squares fit of a radial function to scattered points.

Minimises sum_i (rho(x_i/|x_i|) - |x_i|)^2 + beta |rho|_{H^s}^2 over the
span of scalar harmonics, i.e. solves (L + beta M) c = r with
L = Y Y^T, M = diag(lambda^s) and r = Y |x|.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RadialSurface
from .harmonics import ScalarBasis
from .linsolve import LinearSystem, SolveReport, solve
from .trimesh import TriMesh

# 3 + eps rounds back to 3.0; the next double above 3 keeps s > 3
DEFAULT_S = float(np.nextafter(3.0, np.inf))


@dataclass(frozen=True)
class FitConfig:
    n_max: int = 30
    beta: float = 1e-4
    s: float = DEFAULT_S
    tol: float = 1e-2
    max_iter: int = 100
    method: str = "gmres"

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.n_max < 0:
            raise ValueError("n_max must be non-negative")


class SamplePoints:
    """Surface samples in R^3 minus the origin, stored in lexicographic order."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("sample coordinates must be finite")
        if np.any(np.linalg.norm(pts, axis=1) == 0):
            raise ValueError("samples must not contain the origin")
        self.points = pts

    def __len__(self):
        return len(self.points)

    @property
    def radii(self) -> np.ndarray:
        return np.linalg.norm(self.points, axis=1)

    @property
    def directions(self) -> np.ndarray:
        return self.points / self.radii[:, None]

    def sorted(self) -> "SamplePoints":
        order = np.lexsort(self.points.T[::-1])
        return SamplePoints(self.points[order])

    def shifted(self, offset) -> "SamplePoints":
        return SamplePoints(self.points - np.asarray(offset, dtype=float))

    @classmethod
    def read_csv(cls, path) -> "SamplePoints":
        with open(path) as fh:
            first = fh.readline()
        skip = 0 if _is_number(first.split(",")[0]) else 1
        data = np.loadtxt(path, delimiter=",", ndmin=2, comments="#", skiprows=skip)
        if data.size and not np.all(np.isfinite(data)):
            raise ValueError(f"{path}: non-numeric sample values")
        return cls(data)

    def write_csv(self, path) -> None:
        np.savetxt(path, self.points, delimiter=",", header="x,y,z", comments="", fmt="%.17g")


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


@dataclass(frozen=True, eq=False)
class FitSystem:
    L: np.ndarray
    M: np.ndarray  # diagonal entries lambda_p^s
    c: np.ndarray
    basis: ScalarBasis

    def linear_system(self, beta: float) -> LinearSystem:
        return LinearSystem(self.L + beta * np.diag(self.M), self.c, list(self.basis.indices))


def penalty_weights(eigenvalues, s: float) -> np.ndarray:
    """lambda^s with 0^s = 0."""
    lam = np.asarray(eigenvalues, dtype=float)
    out = np.zeros_like(lam)
    pos = lam > 0
    out[pos] = lam[pos] ** s
    return out


def assemble_fit(samples: SamplePoints, config: FitConfig, basis: ScalarBasis | None = None) -> FitSystem:
    if basis is None:
        basis = ScalarBasis(config.n_max)
    if basis.n_max != config.n_max:
        raise ValueError("basis degree does not match config")
    if len(samples) == 0:
        raise ValueError("at least one sample is required")
    samples = samples.sorted()
    dirs = samples.directions
    if len(dirs) > 1 and np.all(np.abs(dirs - dirs[0]).max(axis=1) < 1e-14):
        raise ValueError("all samples lie along a single direction")
    y = basis.evaluate(dirs)
    return FitSystem(y @ y.T, penalty_weights(basis.eigenvalues, config.s), y @ samples.radii, basis)


class FitError(RuntimeError):
    pass


def fit_surface(samples: SamplePoints, config: FitConfig, basis: ScalarBasis | None = None,
                mesh: TriMesh | None = None, time: float = 0.0, centre=None,
                return_report: bool = False):
    """Fit rho; positivity is verified on ``mesh`` when given."""
    system = assemble_fit(samples, config, basis)
    report: SolveReport = solve(system.linear_system(config.beta), config.tol,
                                config.max_iter, config.method)
    if not report.converged:
        raise FitError(f"surface fit did not converge: residual {report.residual:.3g} "
                       f"after {report.iterations} iterations")
    surf = RadialSurface(report.solution, time=time, centre=centre)
    if mesh is not None:
        surf.check_positive_on(mesh)
    return (surf, report) if return_report else surf


def seminorm(surf: RadialSurface, s: float = DEFAULT_S) -> float:
    """Squared H^s seminorm sum_p lambda_p^s c_p^2."""
    return float(penalty_weights(surf.basis.eigenvalues, s) @ surf.coeffs**2)


def fit_residual(surf: RadialSurface, samples: SamplePoints) -> float:
    rho = surf.eval(samples.directions, check=False)[0]
    return float(np.sum((rho - samples.radii) ** 2))
