"""Galerkin optical flow on a radial surface, assembled on the sphere.

Energy per pair of frames (f0, f1) with surface rho:

    E(v) = int (d_t f + grad f . v)^2 w dS + alpha int |nabla v|^2 w dS,

with w the area element ratio of the surface over the sphere. Each
integral is a one-point centroid rule over the mesh faces. The unknowns
are coefficients over interpolated tangential vector harmonics, giving
(A + alpha D) v = b.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import LocalGeometry, RadialSurface, covariant_operator, local_geometry, pushforward
from .harmonics import VectorBasis, enumerate_basis
from .linsolve import LinearSystem, SolveReport, solve
from .trimesh import (
    CENTROID,
    MeshFunction,
    TriMesh,
    interpolate,
    read_mesh_function_values,
    surface_gradient,
    write_mesh_function,
)

# keeps the per-chunk basis tables near 32M doubles
CHUNK_ENTRIES = 32_000_000


@dataclass(frozen=True, eq=False)
class SurfaceImage(MeshFunction):
    """Nodal intensities of one frame on the P2 mesh."""

    frame: int = 0

    def __post_init__(self):
        super().__post_init__()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image values must be finite")

    def same_mesh(self, other: "SurfaceImage") -> bool:
        return self.mesh is other.mesh or (
            self.mesh.n_nodes == other.mesh.n_nodes
            and np.array_equal(self.mesh.faces, other.mesh.faces)
            and np.allclose(self.mesh.vertices, other.mesh.vertices)
        )


def time_derivative(f0: SurfaceImage, f1: SurfaceImage) -> SurfaceImage:
    """Forward difference f1 - f0 (unit time step)."""
    if not f0.same_mesh(f1):
        raise ValueError("frames live on different meshes")
    return SurfaceImage(f0.mesh, f1.values - f0.values, f0.frame)


@dataclass(frozen=True)
class FlowConfig:
    n_max: int = 50
    alpha: float = 0.1
    tol: float = 1e-2
    max_iter: int = 1000
    method: str = "gmres"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")


@dataclass(frozen=True, eq=False)
class FlowSystem:
    A: np.ndarray
    D: np.ndarray
    b: np.ndarray
    c0: float  # int (d_t f)^2 w, the constant of the energy
    n_max: int

    @property
    def indices(self):
        return enumerate_basis(self.n_max, "vector")

    def linear_system(self, alpha: float) -> LinearSystem:
        return LinearSystem(self.A + alpha * self.D, self.b, self.indices)

    def energy(self, v, alpha: float) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ (self.A + alpha * self.D) @ v - 2 * self.b @ v + self.c0)


def _chunks(n_faces: int, n_basis: int):
    step = max(1, CHUNK_ENTRIES // (8 * n_basis))
    for start in range(0, n_faces, step):
        yield np.arange(start, min(start + step, n_faces))


@dataclass
class _FaceData:
    """Per-face quantities shared by assembly and energy evaluation."""

    geom: LocalGeometry
    qw: np.ndarray  # |T| * w
    grad_f: np.ndarray
    ft: np.ndarray


def _face_data(surf, f0, ft, faces) -> _FaceData:
    mesh = f0.mesh
    geom = local_geometry(surf, mesh, CENTROID, faces)
    return _FaceData(
        geom,
        mesh.areas[faces] * geom.weight,
        surface_gradient(f0, faces, CENTROID),
        interpolate(ft, faces, CENTROID),
    )


def _basis_terms(basis: VectorBasis, data: _FaceData, faces):
    """Data projections g[p, f] = grad f . y_p and covariant derivatives (P, F, 4)."""
    u, du = basis.components(faces)
    dx = basis.mesh.gradient_matrices[faces]
    g = np.einsum("fak,fa,pfk->pf", dx, data.grad_f, u)
    x = np.concatenate([u, du.reshape(*du.shape[:2], 4)], axis=-1)
    d = np.einsum("fij,pfj->pfi", covariant_operator(data.geom), x)
    return g, d


def assemble_flow(surf: RadialSurface, f0: SurfaceImage, f1: SurfaceImage,
                  config: FlowConfig, basis: VectorBasis | None = None) -> FlowSystem:
    """Matrices A, D and rhs b over the vector basis of degree <= n_max."""
    mesh = f0.mesh
    if basis is None:
        basis = VectorBasis(config.n_max, mesh)
    if basis.mesh is not mesh or basis.n_max != config.n_max:
        raise ValueError("basis does not match mesh/config")
    surf.check_positive_on(mesh)
    ft = time_derivative(f0, f1)
    n = len(basis)
    a = np.zeros((n, n))
    dm = np.zeros((n, n))
    b = np.zeros(n)
    c0 = 0.0
    for faces in _chunks(mesh.n_faces, n):
        data = _face_data(surf, f0, ft, faces)
        g, d = _basis_terms(basis, data, faces)
        gw = g * data.qw
        a += gw @ g.T
        b -= gw @ data.ft
        dw = (d * data.qw[None, :, None]).reshape(n, -1)
        dm += dw @ d.reshape(n, -1).T
        c0 += float(data.qw @ data.ft**2)
    return FlowSystem(0.5 * (a + a.T), 0.5 * (dm + dm.T), b, c0, config.n_max)


def solve_flow(system: FlowSystem, config: FlowConfig) -> tuple[np.ndarray, SolveReport]:
    report = solve(system.linear_system(config.alpha), config.tol, config.max_iter, config.method)
    return report.solution, report


@dataclass(eq=False)
class FlowField:
    """Flow coefficients with centroid samples on the sphere and the surface."""

    coeffs: np.ndarray
    n_max: int
    mesh: TriMesh
    tilde: np.ndarray  # (F, 3) on the sphere mesh
    hat: np.ndarray  # (F, 3) pushed onto the surface
    alpha: float | None = None
    report: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "convention": "real-lex",
            "n_max": self.n_max,
            "alpha": self.alpha,
            "coeffs": np.asarray(self.coeffs).tolist(),
            "solver": self.report,
        }

    def save(self, path, csv_path=None) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))
        if csv_path is not None:
            self.write_csv(csv_path)

    def write_csv(self, path) -> None:
        c = self.mesh.centroids()
        table = np.column_stack([np.arange(self.mesh.n_faces), c, self.tilde, self.hat])
        header = "face_index,cx,cy,cz,vx,vy,vz,wx,wy,wz"
        fmt = ["%d"] + ["%.17g"] * 9
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt=fmt)


def load_flow_coefficients(path) -> tuple[np.ndarray, dict]:
    data = json.loads(Path(path).read_text())
    coeffs = np.array(data["coeffs"], dtype=float)
    if coeffs.size != 2 * ((data["n_max"] + 1) ** 2 - 1):
        raise ValueError("coefficient count does not match n_max")
    return coeffs, data


def evaluate_flow(coeffs, surf: RadialSurface, mesh: TriMesh, n_max: int | None = None,
                  basis: VectorBasis | None = None, **kw) -> FlowField:
    """Centroid samples of v~ = sum_p v_p y_p and its pushforward v^."""
    coeffs = np.asarray(coeffs, dtype=float)
    if n_max is None:
        n_max = int(round(np.sqrt(coeffs.size / 2 + 1))) - 1
    if basis is None:
        basis = VectorBasis(n_max, mesh)
    if coeffs.size != len(basis):
        raise ValueError(f"expected {len(basis)} coefficients, got {coeffs.size}")
    tilde = np.zeros((mesh.n_faces, 3))
    for faces in _chunks(mesh.n_faces, len(basis)):
        u, _ = basis.components(faces)
        tilde[faces] = np.einsum("fak,fk->fa", mesh.gradient_matrices[faces],
                                 np.einsum("p,pfk->fk", coeffs, u))
    hat = pushforward(surf, mesh.centroids(), tilde)
    return FlowField(coeffs, n_max, mesh, tilde, hat, **kw)


def flow_energy(surf: RadialSurface, f0: SurfaceImage, f1: SurfaceImage, coeffs,
                alpha: float, basis: VectorBasis | None = None) -> tuple[float, float]:
    """(data term, regulariser) of the energy; the sum is data + alpha * reg."""
    coeffs = np.asarray(coeffs, dtype=float)
    mesh = f0.mesh
    if basis is None:
        basis = VectorBasis(int(round(np.sqrt(coeffs.size / 2 + 1))) - 1, mesh)
    ft = time_derivative(f0, f1)
    data_term = reg = 0.0
    for faces in _chunks(mesh.n_faces, len(basis)):
        data = _face_data(surf, f0, ft, faces)
        g, d = _basis_terms(basis, data, faces)
        resid = data.ft + coeffs @ g
        dv = np.einsum("p,pfi->fi", coeffs, d)
        data_term += float(data.qw @ resid**2)
        reg += float(data.qw @ np.sum(dv**2, axis=1))
    return data_term, reg


def write_image(img: SurfaceImage, path) -> None:
    write_mesh_function(img, path)


def read_image(mesh: TriMesh, path, frame: int = 0) -> SurfaceImage:
    return SurfaceImage(mesh, read_mesh_function_values(path), frame)
