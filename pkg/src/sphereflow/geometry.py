"""Radial surfaces y = rho(x) x over the sphere and their moving-frame geometry.

A surface is stored as real-lex scalar harmonic coefficients of rho. Points
off the unit sphere (the planar mesh faces) use the radially constant
extension rho(x / |x|), whose ambient gradient is grad rho(x / |x|) / |x|.

Frame quantities are evaluated through a *chart*: any object with
``evaluate(xi) -> (x, dx)`` returning points (N, 3) and Jacobians (N, 3, 2).
:class:`FaceChart` maps the reference triangle onto mesh faces and
:class:`SphericalChart` is the colatitude/longitude chart of the unit sphere.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .harmonics import ScalarBasis, eval_scalar_harmonics
from .trimesh import CENTROID, TriMesh, write_off

CONVENTION = "real-lex"
FD_STEP = 1e-4


class PositivityError(ValueError):
    """The radial function is not strictly positive."""


class DegenerateFrameError(ValueError):
    """Coordinate tangent vectors are linearly dependent."""


@dataclass(frozen=True, eq=False)
class RadialSurface:
    """rho = sum_p coeffs[p] Y_p, optionally centred at ``centre`` in data space."""

    coeffs: np.ndarray
    time: float = 0.0
    centre: np.ndarray | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).ravel()
        n_max = int(round(np.sqrt(c.size))) - 1
        if c.size == 0 or (n_max + 1) ** 2 != c.size:
            raise ValueError(f"coefficient count {c.size} is not a square")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", c)
        if self.centre is not None:
            object.__setattr__(self, "centre", np.asarray(self.centre, dtype=float))

    @property
    def n_max(self) -> int:
        return int(round(np.sqrt(self.coeffs.size))) - 1

    @classmethod
    def constant(cls, radius: float, n_max: int = 0, **kw) -> "RadialSurface":
        c = np.zeros((n_max + 1) ** 2)
        c[0] = radius * np.sqrt(4.0 * np.pi)
        return cls(c, **kw)

    @classmethod
    def from_terms(cls, terms: dict, n_max: int | None = None, **kw) -> "RadialSurface":
        """Build from {(n, j): coefficient}."""
        top = max(n for n, _ in terms)
        n_max = top if n_max is None else n_max
        c = np.zeros((n_max + 1) ** 2)
        for (n, j), val in terms.items():
            c[n * n + j - 1] += val
        return cls(c, **kw)

    @cached_property
    def basis(self) -> ScalarBasis:
        return ScalarBasis(self.n_max)

    def eval(self, x, check: bool = True):
        """rho and its tangential gradient at unit directions ``x``."""
        xs = np.atleast_2d(np.asarray(x, dtype=float))
        xs = xs / np.linalg.norm(xs, axis=1, keepdims=True)
        vals, grads = eval_scalar_harmonics(self.n_max, xs, gradient=True)
        rho = self.coeffs @ vals
        grad = np.einsum("p,pna->na", self.coeffs, grads)
        if check:
            check_positive(rho, xs)
        if np.ndim(x) == 1:
            return float(rho[0]), grad[0]
        return rho, grad

    def eval_extended(self, x, check: bool = True):
        """Radially constant extension rho(x/|x|) and its ambient gradient."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x, axis=1)
        rho, grad = self.eval(x, check)
        return rho, grad / r[:, None]

    def nodal_values(self, mesh: TriMesh) -> np.ndarray:
        key = ("rho_nodal", id(mesh))
        if key not in self._cache:
            self._cache[key] = self.coeffs @ self.basis.nodal_table(mesh)
        return self._cache[key]

    def check_positive_on(self, mesh: TriMesh) -> None:
        """Guard evaluated at every node and face centroid of ``mesh``."""
        check_positive(self.nodal_values(mesh), mesh.nodes)
        pts = mesh.centroids(project=True)
        check_positive(self.eval(pts, check=False)[0], pts)

    def deformed_vertices(self, mesh: TriMesh) -> np.ndarray:
        rho = self.nodal_values(mesh)[: mesh.n_vertices]
        return rho[:, None] * mesh.vertices

    def export_off(self, mesh: TriMesh, path) -> None:
        write_off(self.deformed_vertices(mesh), path, faces=mesh.faces)

    def to_json(self) -> dict:
        out = {
            "convention": CONVENTION,
            "n_max": self.n_max,
            "coeffs": self.coeffs.tolist(),
            "time": self.time,
        }
        if self.centre is not None:
            out["centre"] = self.centre.tolist()
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def from_json(cls, data: dict) -> "RadialSurface":
        if data.get("convention", CONVENTION) != CONVENTION:
            raise ValueError(f"unsupported convention {data['convention']!r}")
        surf = cls(np.array(data["coeffs"], dtype=float), time=data.get("time", 0.0),
                   centre=data.get("centre"))
        if surf.n_max != data["n_max"]:
            raise ValueError("n_max does not match coefficient count")
        return surf

    @classmethod
    def load(cls, path) -> "RadialSurface":
        return cls.from_json(json.loads(Path(path).read_text()))


def check_positive(rho, x) -> None:
    rho = np.atleast_1d(rho)
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        bad = int(np.nanargmin(rho))
        raise PositivityError(
            f"radius not positive: {np.count_nonzero(~(rho > 0))} point(s), "
            f"minimum {rho[bad]:.6g} at direction {np.round(np.atleast_2d(x)[bad], 6).tolist()}"
        )


def eval_radius(surf: RadialSurface, x):
    return surf.eval(x)


def area_weight(surf: RadialSurface, x):
    """Surface element ratio dM/dS2 = rho sqrt(|grad rho|^2 + rho^2)."""
    rho, grad = surf.eval(x)
    g2 = np.sum(np.square(grad), axis=-1)
    return rho * np.sqrt(g2 + np.square(rho))


def pushforward(surf: RadialSurface, x, v):
    """Differential of x -> rho(x) x applied to tangent vector(s) v."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    rho, grad = surf.eval_extended(x)
    out = rho[:, None] * np.atleast_2d(v) + np.atleast_2d(x) * np.sum(grad * v, axis=-1)[..., None]
    return out[0] if x.ndim == 1 else out


def jacobian_squared(rho, drho, dx):
    """Expanded det(Dy^T Dy) for charts on the unit sphere (x . d_i x = 0)."""
    g11 = np.einsum("na,na->n", dx[..., 0], dx[..., 0])
    g22 = np.einsum("na,na->n", dx[..., 1], dx[..., 1])
    g12 = np.einsum("na,na->n", dx[..., 0], dx[..., 1])
    d1, d2 = drho[..., 0], drho[..., 1]
    return rho**2 * (
        d1**2 * g22 + d2**2 * g11 + rho**2 * g11 * g22 - 2 * d1 * d2 * g12 - rho**2 * g12**2
    )


# --------------------------------------------------------------------------
# charts


def _xi_array(xi, n):
    xi = np.asarray(xi, dtype=float)
    return np.broadcast_to(xi, (n, 2)) if xi.ndim == 1 else xi


@dataclass(frozen=True, eq=False)
class FaceChart:
    """Affine maps of the reference triangle onto mesh faces."""

    mesh: TriMesh
    faces: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "faces", np.atleast_1d(np.asarray(self.faces, dtype=int)))

    def __len__(self):
        return len(self.faces)

    def evaluate(self, xi):
        xi = _xi_array(xi, len(self.faces))
        dx = self.mesh.gradient_matrices[self.faces]
        x0 = self.mesh.vertices[self.mesh.faces[self.faces, 0]]
        return x0 + np.einsum("nak,nk->na", dx, xi), dx


@dataclass(frozen=True)
class SphericalChart:
    """(colatitude, longitude) -> unit sphere."""

    def evaluate(self, xi):
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        th, ph = xi[:, 0], xi[:, 1]
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        x = np.stack([st * cp, st * sp, ct], axis=1)
        d1 = np.stack([ct * cp, ct * sp, -st], axis=1)
        d2 = np.stack([-st * sp, st * cp, np.zeros_like(st)], axis=1)
        return x, np.stack([d1, d2], axis=2)


def _chart(chart_or_mesh, faces):
    if isinstance(chart_or_mesh, TriMesh):
        return FaceChart(chart_or_mesh, np.arange(chart_or_mesh.n_faces) if faces is None else faces)
    return chart_or_mesh


# --------------------------------------------------------------------------
# frames


def _coordinate_frame(surf, chart, xi):
    x, dx = chart.evaluate(xi)
    rho, grad = surf.eval_extended(x)
    drho = np.einsum("na,nak->nk", grad, dx)
    dy = drho[:, None, :] * x[:, :, None] + rho[:, None, None] * dx
    return dy, x, rho, drho


def coordinate_frame(surf: RadialSurface, chart, xi=CENTROID, faces=None):
    """Tangent vectors (d_1 y, d_2 y) as an array (N, 2, 3).

    ``chart`` is a chart object or a TriMesh (with optional ``faces``).
    """
    dy, *_ = _coordinate_frame(surf, _chart(chart, faces), xi)
    dy = np.swapaxes(dy, 1, 2)
    if np.any(np.linalg.norm(np.cross(dy[:, 0], dy[:, 1]), axis=1) < 1e-12):
        raise DegenerateFrameError("coordinate tangent vectors are linearly dependent")
    return dy


@dataclass(frozen=True, eq=False)
class OrthonormalFrame:
    """Gram-Schmidt frame e_i = alpha[i, j] d_j y (alpha lower triangular)."""

    dy: np.ndarray  # (N, 2, 3), rows d_1 y, d_2 y
    e: np.ndarray  # (N, 2, 3)
    alpha: np.ndarray  # (N, 2, 2)

    @property
    def normal(self) -> np.ndarray:
        return np.cross(self.e[:, 0], self.e[:, 1])

    @property
    def alpha_inv(self) -> np.ndarray:
        """d_l y = alpha_inv[l, k] e_k."""
        return np.linalg.inv(self.alpha)


def _gram_schmidt(dy):
    a, b = dy[:, 0], dy[:, 1]
    n1 = np.linalg.norm(a, axis=1)
    e1 = a / n1[:, None]
    c = np.sum(b * e1, axis=1)
    r = b - c[:, None] * e1
    n2 = np.linalg.norm(r, axis=1)
    if np.any(n2 < 1e-12 * n1):
        raise DegenerateFrameError("coordinate tangent vectors are linearly dependent")
    e2 = r / n2[:, None]
    alpha = np.zeros((len(a), 2, 2))
    alpha[:, 0, 0] = 1.0 / n1
    alpha[:, 1, 0] = -c / (n1 * n2)
    alpha[:, 1, 1] = 1.0 / n2
    return OrthonormalFrame(dy, np.stack([e1, e2], axis=1), alpha)


def orthonormal_frame(surf: RadialSurface, chart, xi=CENTROID, faces=None) -> OrthonormalFrame:
    return _gram_schmidt(coordinate_frame(surf, chart, xi, faces))


@dataclass(frozen=True, eq=False)
class LocalGeometry:
    """Everything the covariant derivative needs at a set of points.

    gamma[n, i, k, j] = e_j . d_{e_i} e_k; dalpha_inv[n, m] = d_m alpha_inv.
    """

    frame: OrthonormalFrame
    gamma: np.ndarray
    dalpha_inv: np.ndarray
    weight: np.ndarray

    @cached_property
    def alpha_inv(self) -> np.ndarray:
        return self.frame.alpha_inv


def local_geometry(surf: RadialSurface, chart, xi=CENTROID, faces=None, h: float = FD_STEP):
    chart = _chart(chart, faces)
    x, _ = chart.evaluate(xi)
    xi = _xi_array(xi, len(x))
    frame = orthonormal_frame(surf, chart, xi)
    de, dainv = [], []
    for m in range(2):
        step = np.zeros(2)
        step[m] = h
        fp = orthonormal_frame(surf, chart, xi + step)
        fm = orthonormal_frame(surf, chart, xi - step)
        de.append((fp.e - fm.e) / (2 * h))
        dainv.append((fp.alpha_inv - fm.alpha_inv) / (2 * h))
    de = np.stack(de, axis=1)  # (N, m, k, 3)
    # directional derivative along e_i = alpha[i, m] d_m
    de_i = np.einsum("nim,nmka->nika", frame.alpha, de)
    gamma = np.einsum("nika,nja->nikj", de_i, frame.e)
    xs = x / np.linalg.norm(x, axis=1, keepdims=True)
    return LocalGeometry(frame, gamma, np.stack(dainv, axis=1), area_weight(surf, xs))


def christoffel(surf: RadialSurface, chart, xi=CENTROID, faces=None, h: float = FD_STEP):
    """Connection coefficients gamma[n, i, k, j] of the orthonormal frame."""
    return local_geometry(surf, chart, xi, faces, h).gamma


def covariant_coeff_derivative(geom: LocalGeometry, u, du):
    """Frame components D[i, j] of the covariant derivative along e_i.

    ``u`` (..., N, 2) are components in the basis d_l y and ``du[..., l, k]``
    their xi_k-derivatives. Leading axes broadcast over several fields.
    """
    ainv, dainv = geom.alpha_inv, geom.dalpha_inv
    w = np.einsum("nlj,...nl->...nj", ainv, u)
    dw = np.einsum("nmlj,...nl->...nmj", dainv, u) + np.einsum("nlj,...nlm->...nmj", ainv, du)
    return np.einsum("nim,...nmj->...nij", geom.frame.alpha, dw) + np.einsum(
        "...nk,nikj->...nij", w, geom.gamma
    )


def covariant_operator(geom: LocalGeometry) -> np.ndarray:
    """Linear map (N, 4, 6) from (u1, u2, du11, du12, du21, du22) to D flattened."""
    n = geom.gamma.shape[0]
    unit = np.eye(6)
    u = np.broadcast_to(unit[:, None, :2], (6, n, 2))
    du = np.broadcast_to(unit[:, None, 2:].reshape(6, 1, 2, 2), (6, n, 2, 2))
    d = covariant_coeff_derivative(geom, u, du).reshape(6, n, 4)
    return np.transpose(d, (1, 2, 0))


def hs1_density(geom: LocalGeometry, u, du) -> np.ndarray:
    """Pointwise squared Frobenius norm of the covariant derivative."""
    d = covariant_coeff_derivative(geom, u, du)
    return np.sum(d * d, axis=(-2, -1))
