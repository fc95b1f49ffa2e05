"""Real fully normalised spherical harmonics and interpolated vector harmonics.

Convention ("real-lex"): degrees n = 0, 1, ...; within a degree the order
index j = 1 is the zonal function (m = 0), then j = 2m is the cosine and
j = 2m + 1 the sine function of order m. No Condon-Shortley phase. Every
function has unit L2 norm on the unit sphere.

Evaluation writes Y_nm = q_nm(x3) * Re/Im((x1 + i x2)^m), where q_nm is a
normalised derivative of the Legendre polynomial computed by the stable
three-term recurrence in n. The right-hand side is a polynomial in R^3 whose
restriction to the sphere is Y_nm, so the tangential gradient is the tangent
projection of its ambient gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .trimesh import CENTROID, SHAPE_HESSIANS, TriMesh, shape_gradients


class HarmonicIndex(NamedTuple):
    n: int
    j: int
    type_i: int | None = None

    @property
    def m(self) -> int:
        return self.j // 2

    def validate(self) -> "HarmonicIndex":
        if self.n < 0 or not 1 <= self.j <= 2 * self.n + 1:
            raise ValueError(f"invalid harmonic index {self}")
        if self.type_i is not None:
            if self.type_i not in (2, 3):
                raise ValueError(f"vector harmonic type must be 2 or 3, got {self.type_i}")
            if self.n < 1:
                raise ValueError("no tangential vector harmonics of degree zero")
        return self


def eigenvalue(n):
    """Laplace-Beltrami eigenvalue n(n+1)."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("degree must be non-negative")
    out = n * (n + 1)
    return int(out) if out.ndim == 0 else out


def flat_index(n: int, j: int) -> int:
    """Position of (n, j) in the lexicographic scalar ordering."""
    return n * n + j - 1


def enumerate_basis(n_max: int, kind: str = "scalar") -> list[HarmonicIndex]:
    """Deterministic ordering: scalar (n, j); vector (i, n, j) with i=2 first."""
    if kind == "scalar":
        if n_max < 0:
            raise ValueError("n_max must be >= 0")
        return [HarmonicIndex(n, j) for n in range(n_max + 1) for j in range(1, 2 * n + 2)]
    if kind == "vector":
        if n_max < 1:
            raise ValueError("vector basis requires n_max >= 1")
        return [
            HarmonicIndex(n, j, i)
            for i in (2, 3)
            for n in range(1, n_max + 1)
            for j in range(1, 2 * n + 2)
        ]
    raise ValueError(f"unknown basis kind {kind!r}")


def _legendre_factors(n_max, z, with_derivative):
    """Normalised q_nm(z) (and dq/dz) for all 0 <= m <= n <= n_max.

    Returns dicts keyed by m holding arrays of shape (n_max - m + 1, N).
    """
    q, dq = {}, {}
    seed = np.sqrt(1.0 / (4.0 * np.pi))
    for m in range(n_max + 1):
        if m > 0:
            seed *= np.sqrt((2 * m + 1) / (2 * m))
        qm = np.empty((n_max - m + 1, z.size))
        dqm = np.zeros_like(qm) if with_derivative else None
        qm[0] = seed * (np.sqrt(2.0) if m > 0 else 1.0)
        for n in range(m + 1, n_max + 1):
            a = np.sqrt((2 * n - 1) * (2 * n + 1) / ((n - m) * (n + m)))
            row = a * z * qm[n - m - 1]
            if with_derivative:
                drow = a * (qm[n - m - 1] + z * dqm[n - m - 1])
            if n - m >= 2:
                b = np.sqrt((2 * n + 1) * (n - 1 - m) * (n - 1 + m) / ((2 * n - 3) * (n - m) * (n + m)))
                row = row - b * qm[n - m - 2]
                if with_derivative:
                    drow = drow - b * dqm[n - m - 2]
            qm[n - m] = row
            if with_derivative:
                dqm[n - m] = drow
        q[m], dq[m] = qm, dqm
    return q, dq


def _normalise(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def eval_scalar_harmonics(n_max: int, x, gradient: bool = False):
    """All harmonics of degree <= n_max at unit points ``x`` (N, 3).

    Returns values of shape (P, N) with P = (n_max + 1)**2 and, if requested,
    tangential gradients of shape (P, N, 3).
    """
    x = _normalise(x)
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    q, dq = _legendre_factors(n_max, x3, gradient)
    npts = len(x)
    size = (n_max + 1) ** 2
    values = np.empty((size, npts))
    grads = np.empty((size, npts, 3)) if gradient else None

    c_prev, s_prev = np.zeros(npts), np.zeros(npts)
    c, s = np.ones(npts), np.zeros(npts)
    for m in range(n_max + 1):
        if m > 0:
            c_prev, s_prev = c, s
            c, s = c_prev * x1 - s_prev * x2, c_prev * x2 + s_prev * x1
        for n in range(m, n_max + 1):
            qn = q[m][n - m]
            if m == 0:
                rows = [(flat_index(n, 1), c, 0.0 * c, 0.0 * c)]
            else:
                rows = [
                    (flat_index(n, 2 * m), c, m * c_prev, -m * s_prev),
                    (flat_index(n, 2 * m + 1), s, m * s_prev, m * c_prev),
                ]
            for p, trig, dtrig1, dtrig2 in rows:
                values[p] = qn * trig
                if gradient:
                    g = np.stack([qn * dtrig1, qn * dtrig2, dq[m][n - m] * trig], axis=1)
                    grads[p] = g - np.sum(g * x, axis=1, keepdims=True) * x
    return (values, grads) if gradient else values


def eval_scalar_harmonic(idx: HarmonicIndex, x):
    """Single harmonic Y_nj at unit point(s) x (normalised defensively)."""
    idx = HarmonicIndex(idx[0], idx[1]).validate()
    vals = eval_scalar_harmonics(idx.n, x)[flat_index(idx.n, idx.j)]
    return float(vals[0]) if np.ndim(x) == 1 else vals


def eval_scalar_harmonic_gradient(idx: HarmonicIndex, x):
    idx = HarmonicIndex(idx[0], idx[1]).validate()
    _, g = eval_scalar_harmonics(idx.n, x, gradient=True)
    g = g[flat_index(idx.n, idx.j)]
    return g[0] if np.ndim(x) == 1 else g


@dataclass(frozen=True, eq=False)
class ScalarBasis:
    """Scalar harmonics of degree <= n_max in the real-lex ordering."""

    n_max: int

    @cached_property
    def indices(self) -> list[HarmonicIndex]:
        return enumerate_basis(self.n_max, "scalar")

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([idx.n for idx in self.indices])

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return eigenvalue(self.degrees).astype(float)

    def __len__(self):
        return (self.n_max + 1) ** 2

    def evaluate(self, x, gradient: bool = False):
        return eval_scalar_harmonics(self.n_max, x, gradient)

    def nodal_table(self, mesh: TriMesh) -> np.ndarray:
        """Values at all sphere-projected mesh nodes, (P, V+E)."""
        key = ("scalar_nodal", self.n_max)
        if key not in mesh._cache:
            mesh._cache[key] = self.evaluate(mesh.nodes)
        return mesh._cache[key]


# --------------------------------------------------------------------------
# interpolated tangential vector harmonics


@dataclass(frozen=True, eq=False)
class VectorBasisEntry:
    """Piecewise linear tangent field lambda^-1/2 grad Y_h (type 2) or its
    rotation grad Y_h x N (type 3) on every face of ``mesh``.

    The field is stored through the nodal scalar values on each face; values,
    coordinate components and their derivatives are derived on demand.
    """

    index: HarmonicIndex
    mesh: TriMesh
    nodal: np.ndarray  # (F, 6) scalar harmonic values at the face nodes

    @property
    def scale(self) -> float:
        return eigenvalue(self.index.n) ** -0.5

    def components(self, xi=CENTROID, faces=slice(None)):
        """Coordinate components u with field = u^l d_l x, and du[l, k] = d_k u^l."""
        return vector_components(
            self.mesh, self.nodal[faces][None], self.index.type_i, xi, faces,
            np.array([self.scale]),
        )

    def values(self, xi=CENTROID, faces=slice(None)) -> np.ndarray:
        u, _ = self.components(xi, faces)
        return np.einsum("fak,fk->fa", self.mesh.gradient_matrices[faces], u[0])


def vector_components(mesh, nodal, type_i, xi, faces, scale):
    """Components of interpolated vector harmonics on faces.

    Parameters
    ----------
    nodal : (P, F, 6) scalar values at face nodes
    type_i : 2 or 3
    scale : (P,) normalisation lambda_n^-1/2

    Returns
    -------
    u : (P, F, 2) coordinate components at ``xi``
    du : (P, F, 2, 2) with du[..., l, k] = d u^l / d xi_k (constant per face)
    """
    grad_xi = np.einsum("pfj,jk->pfk", nodal, shape_gradients(xi))
    hess = np.einsum("pfj,jkl->pfkl", nodal, SHAPE_HESSIANS)
    sc = scale[:, None, None]
    if type_i == 2:
        ginv = mesh.metric_inverse[faces]
        u = np.einsum("fkl,pfl->pfk", ginv, grad_xi)
        du = np.einsum("fkl,pflm->pfkm", ginv, hess)
    elif type_i == 3:
        inv2a = (1.0 / (2.0 * mesh.areas[faces]))[None, :, None]
        u = np.stack([grad_xi[..., 1], -grad_xi[..., 0]], axis=-1) * inv2a
        du = np.stack([hess[..., 1, :], -hess[..., 0, :]], axis=-2) * inv2a[..., None]
    else:
        raise ValueError(f"vector harmonic type must be 2 or 3, got {type_i}")
    return u * sc, du * sc[..., None]


def build_vector_harmonic(idx: HarmonicIndex, mesh: TriMesh) -> VectorBasisEntry:
    idx = HarmonicIndex(*idx).validate()
    if idx.type_i is None:
        raise ValueError("vector harmonic index requires type_i")
    table = ScalarBasis(idx.n).nodal_table(mesh)[flat_index(idx.n, idx.j)]
    return VectorBasisEntry(idx, mesh, table[mesh.face_nodes])


@dataclass(frozen=True, eq=False)
class VectorBasis:
    """All interpolated tangential vector harmonics with 1 <= n <= n_max.

    Scalar nodal values are evaluated once per mesh; per-face fields are
    produced in chunks by :meth:`components`.
    """

    n_max: int
    mesh: TriMesh

    @cached_property
    def indices(self) -> list[HarmonicIndex]:
        return enumerate_basis(self.n_max, "vector")

    def __len__(self):
        return 2 * ((self.n_max + 1) ** 2 - 1)

    @cached_property
    def _scalar_rows(self) -> np.ndarray:
        return np.array([flat_index(idx.n, idx.j) for idx in self.indices[: len(self) // 2]])

    @cached_property
    def _scales(self) -> np.ndarray:
        n = np.array([idx.n for idx in self.indices[: len(self) // 2]])
        return 1.0 / np.sqrt(eigenvalue(n))

    def entry(self, p: int) -> VectorBasisEntry:
        return build_vector_harmonic(self.indices[p], self.mesh)

    def components(self, faces=slice(None), xi=CENTROID):
        """Components (P, F, 2) and their derivatives (P, F, 2, 2) on ``faces``."""
        table = ScalarBasis(self.n_max).nodal_table(self.mesh)[self._scalar_rows]
        nodal = table[:, self.mesh.face_nodes[faces]]
        u2, du2 = vector_components(self.mesh, nodal, 2, xi, faces, self._scales)
        u3, du3 = vector_components(self.mesh, nodal, 3, xi, faces, self._scales)
        return np.concatenate([u2, u3]), np.concatenate([du2, du3])

    def values(self, faces=slice(None), xi=CENTROID) -> np.ndarray:
        """Field vectors (P, F, 3) on the face planes."""
        u, _ = self.components(faces, xi)
        return np.einsum("fak,pfk->pfa", self.mesh.gradient_matrices[faces], u)


def dump_basis_csv(basis: ScalarBasis, mesh: TriMesh, path) -> None:
    """Debug dump of (n, j, node_index, value)."""
    table = basis.nodal_table(mesh)
    with open(path, "w") as fh:
        fh.write("n,j,node_index,value\n")
        for p, idx in enumerate(basis.indices):
            for node, val in enumerate(table[p]):
                fh.write(f"{idx.n},{idx.j},{node},{val!r}\n")
