"""Polyhedral sphere approximation with piecewise quadratic nodal functions.

The mesh is a subdivided icosahedron inscribed in the unit sphere. Each face
``(i1, i2, i3)`` is parametrised over the reference triangle as

    x(xi) = v[i1] + xi1 * (v[i3] - v[i1]) + xi2 * (v[i2] - v[i1])

with faces oriented clockwise when viewed from outside, so that
``(v[i3] - v[i1]) x (v[i2] - v[i1])`` points outwards.

Global nodes are the vertices followed by the edge midpoints (edges sorted by
``(min, max)`` vertex index). Nodal data is sampled at the sphere-projected
node positions; the shape functions themselves live on the planar face.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_SUBDIVISION = 8
CENTROID = np.array([1.0 / 3.0, 1.0 / 3.0])

# local node order: v1, v2, v3, m(v1,v2), m(v2,v3), m(v3,v1)
LOCAL_NODES = np.array(
    [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 0.5], [0.5, 0.5], [0.5, 0.0]]
)


class MeshResourceError(RuntimeError):
    pass


class DegenerateFaceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Subdivided icosahedron.

    Attributes
    ----------
    vertices : (V, 3) array
        Unit vertex positions.
    faces : (F, 3) int array
        Vertex indices, clockwise seen from outside.
    edges : (E, 2) int array
        Unique edges as sorted pairs, lexicographically ordered.
    face_edges : (F, 3) int array
        Edge index of the local edges (v1v2, v2v3, v3v1).
    subdivision_level : int
    """

    vertices: np.ndarray
    faces: np.ndarray
    edges: np.ndarray
    face_edges: np.ndarray
    subdivision_level: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_nodes(self) -> int:
        return self.n_vertices + self.n_edges

    @property
    def edge_midpoint_index(self) -> np.ndarray:
        """Global node index of each edge midpoint."""
        return self.n_vertices + np.arange(self.n_edges)

    @property
    def nodes(self) -> np.ndarray:
        """Sphere-projected positions of all global nodes, shape (V+E, 3)."""
        if "nodes" not in self._cache:
            mid = self.vertices[self.edges].sum(axis=1)
            mid /= np.linalg.norm(mid, axis=1, keepdims=True)
            self._cache["nodes"] = np.vstack([self.vertices, mid])
        return self._cache["nodes"]

    @property
    def face_nodes(self) -> np.ndarray:
        """Global node indices of the 6 local nodes of each face, (F, 6)."""
        if "face_nodes" not in self._cache:
            self._cache["face_nodes"] = np.hstack(
                [self.faces, self.n_vertices + self.face_edges]
            )
        return self._cache["face_nodes"]

    @property
    def gradient_matrices(self) -> np.ndarray:
        """Constant face Jacobians Dx with columns (v3 - v1, v2 - v1), (F, 3, 2)."""
        if "dx" not in self._cache:
            v = self.vertices[self.faces]
            self._cache["dx"] = np.stack([v[:, 2] - v[:, 0], v[:, 1] - v[:, 0]], axis=2)
        return self._cache["dx"]

    @property
    def areas(self) -> np.ndarray:
        if "areas" not in self._cache:
            dx = self.gradient_matrices
            self._cache["areas"] = 0.5 * np.linalg.norm(
                np.cross(dx[:, :, 0], dx[:, :, 1]), axis=1
            )
        return self._cache["areas"]

    @property
    def normals(self) -> np.ndarray:
        """Outward unit face normals, (F, 3)."""
        if "normals" not in self._cache:
            dx = self.gradient_matrices
            n = np.cross(dx[:, :, 0], dx[:, :, 1])
            self._cache["normals"] = n / np.linalg.norm(n, axis=1, keepdims=True)
        return self._cache["normals"]

    @property
    def metric_inverse(self) -> np.ndarray:
        """(Dx^T Dx)^-1 per face, (F, 2, 2)."""
        if "ginv" not in self._cache:
            dx = self.gradient_matrices
            g = np.einsum("fai,faj->fij", dx, dx)
            det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] ** 2
            if np.any(det < 1e-14):
                bad = int(np.argmin(det))
                raise DegenerateFaceError(f"face {bad} has det(Dx^T Dx) = {det[bad]:.3e}")
            ginv = np.empty_like(g)
            ginv[:, 0, 0] = g[:, 1, 1] / det
            ginv[:, 1, 1] = g[:, 0, 0] / det
            ginv[:, 0, 1] = ginv[:, 1, 0] = -g[:, 0, 1] / det
            self._cache["ginv"] = ginv
        return self._cache["ginv"]

    def centroids(self, project: bool = False) -> np.ndarray:
        c = self.vertices[self.faces].mean(axis=1)
        if project:
            c /= np.linalg.norm(c, axis=1, keepdims=True)
        return c


@dataclass(frozen=True, eq=False)
class MeshFunction:
    """Scalar nodal values (vertices then edge midpoints) on a mesh."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.mesh.n_nodes,):
            raise ValueError(
                f"expected {self.mesh.n_nodes} nodal values, got shape {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, mesh: TriMesh, func) -> "MeshFunction":
        """Sample ``func`` (vectorised over (N, 3) unit points) at all nodes."""
        return cls(mesh, np.asarray(func(mesh.nodes), dtype=float))


# --------------------------------------------------------------------------
# construction


def _icosahedron():
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v, _orient_clockwise(v, f)


def _orient_clockwise(v, f):
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    outward = np.einsum("fi,fi->f", np.cross(c - a, b - a), a + b + c) > 0
    f = f.copy()
    f[~outward] = f[~outward][:, [0, 2, 1]]
    return f


def _edges(faces):
    """Unique sorted edges and the per-face edge indices (v1v2, v2v3, v3v1)."""
    pairs = np.stack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=1)
    pairs = np.sort(pairs.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    return edges, inverse.reshape(-1, 3)


def build_icosphere(k: int, max_level: int = MAX_SUBDIVISION) -> TriMesh:
    """Icosahedron refined ``k`` times by midpoint subdivision onto the sphere."""
    if k < 0:
        raise ValueError("subdivision level must be non-negative")
    if k > max_level:
        raise MeshResourceError(f"subdivision level {k} exceeds configured maximum {max_level}")
    v, f = _icosahedron()
    for _ in range(k):
        edges, fe = _edges(f)
        mid = v[edges].sum(axis=1)
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = len(v) + fe  # new vertex index of midpoints (v1v2, v2v3, v3v1)
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate(
            [
                np.stack([a, ab, ca], axis=1),
                np.stack([ab, b, bc], axis=1),
                np.stack([ca, bc, c], axis=1),
                np.stack([ab, bc, ca], axis=1),
            ]
        )
        v = np.vstack([v, mid])
    edges, fe = _edges(f)
    return TriMesh(v, f, edges, fe, k)


def subdivision_from_nodes(n_nodes: int) -> int:
    """Recover k from the global node count V + E = 40 * 4**k + 2."""
    k = 0
    while 40 * 4**k + 2 < n_nodes:
        k += 1
    if 40 * 4**k + 2 != n_nodes:
        raise ValueError(f"{n_nodes} nodes does not match any icosphere level")
    return k


# --------------------------------------------------------------------------
# shape functions


def shape_functions(xi) -> np.ndarray:
    """Quadratic Lagrange shape functions at ``xi`` (..., 2) -> (..., 6)."""
    xi = np.asarray(xi, dtype=float)
    s, t = xi[..., 0], xi[..., 1]
    l1, l2, l3 = 1.0 - s - t, t, s  # barycentric weights of v1, v2, v3
    return np.stack(
        [
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            l3 * (2 * l3 - 1),
            4 * l1 * l2,
            4 * l2 * l3,
            4 * l3 * l1,
        ],
        axis=-1,
    )


def shape_gradients(xi) -> np.ndarray:
    """Reference gradients d(phi_j)/d(xi_k) at ``xi`` (..., 2) -> (..., 6, 2)."""
    xi = np.asarray(xi, dtype=float)
    s, t = xi[..., 0], xi[..., 1]
    l1 = 1.0 - s - t
    zero = np.zeros_like(s)
    d_ds = np.stack([1 - 4 * l1, zero, 4 * s - 1, -4 * t, 4 * t, 4 * (l1 - s)], axis=-1)
    d_dt = np.stack([1 - 4 * l1, 4 * t - 1, zero, 4 * (l1 - t), 4 * s, -4 * s], axis=-1)
    return np.stack([d_ds, d_dt], axis=-1)


# constant second derivatives d2(phi_j)/d(xi_k)d(xi_l), (6, 2, 2)
SHAPE_HESSIANS = np.array(
    [
        [[4, 4], [4, 4]],
        [[0, 0], [0, 4]],
        [[4, 0], [0, 0]],
        [[0, -4], [-4, -8]],
        [[0, 4], [4, 0]],
        [[-8, -4], [-4, 0]],
    ],
    dtype=float,
)


# --------------------------------------------------------------------------
# evaluation


def _faces_arg(mesh, faces):
    if faces is None:
        return np.arange(mesh.n_faces)
    return np.asarray(faces)


def face_param(mesh: TriMesh, faces, xi) -> np.ndarray:
    """Point x_i(xi) on the planar face(s)."""
    faces = _faces_arg(mesh, faces)
    v = mesh.vertices[mesh.faces[faces]]
    xi = np.asarray(xi, dtype=float)
    return v[..., 0, :] + xi[..., :1] * (v[..., 2, :] - v[..., 0, :]) + xi[..., 1:2] * (
        v[..., 1, :] - v[..., 0, :]
    )


def interpolate(f: MeshFunction, faces=None, xi=CENTROID) -> np.ndarray:
    """Quadratic interpolant of nodal values at ``xi`` on the given face(s)."""
    faces = _faces_arg(f.mesh, faces)
    local = f.values[f.mesh.face_nodes[faces]]
    return np.sum(local * shape_functions(xi), axis=-1)


def reference_gradient(f: MeshFunction, faces=None, xi=CENTROID) -> np.ndarray:
    """Gradient of f o x_i with respect to xi, shape (..., 2)."""
    faces = _faces_arg(f.mesh, faces)
    local = f.values[f.mesh.face_nodes[faces]]
    return np.einsum("...j,...jk->...k", local, shape_gradients(xi))


def surface_gradient(f: MeshFunction, faces=None, xi=CENTROID) -> np.ndarray:
    """Dx (Dx^T Dx)^-1 grad_xi(f o x_i)(xi); lies in the face plane."""
    faces = _faces_arg(f.mesh, faces)
    mesh = f.mesh
    g = reference_gradient(f, faces, xi)
    u = np.einsum("...kl,...l->...k", mesh.metric_inverse[faces], g)
    return np.einsum("...ak,...k->...a", mesh.gradient_matrices[faces], u)


def integrate(mesh: TriMesh, integrand) -> float:
    """Centroid quadrature sum_i |T_i| f(x_i(1/3, 1/3)).

    ``integrand`` is a MeshFunction (interpolated at centroids), an array of
    per-face centroid values, or a callable of the sphere-projected centroids.
    """
    if isinstance(integrand, MeshFunction):
        values = interpolate(integrand)
    elif callable(integrand):
        values = np.asarray(integrand(mesh.centroids(project=True)), dtype=float)
    else:
        values = np.asarray(integrand, dtype=float)
    if values.shape[0] != mesh.n_faces:
        raise ValueError("integrand must provide one value per face")
    return float(np.tensordot(mesh.areas, values, axes=(0, 0)))


def locate(mesh: TriMesh, points) -> tuple[np.ndarray, np.ndarray]:
    """Face index and reference coordinates of the radial projection of points.

    Brute force over faces; intended for a handful of query points.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v1 = mesh.vertices[mesh.faces[:, 0]]
    dx = mesh.gradient_matrices
    n = mesh.normals
    faces = np.empty(len(points), dtype=int)
    xis = np.empty((len(points), 2))
    for idx, p in enumerate(points):
        d = p / np.linalg.norm(p)
        denom = n @ d
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.einsum("fi,fi->f", n, v1) / denom
        q = t[:, None] * d - v1
        xi = np.einsum("fkl,fl->fk", mesh.metric_inverse, np.einsum("fak,fa->fk", dx, q))
        slack = np.minimum(np.minimum(xi[:, 0], xi[:, 1]), 1 - xi.sum(axis=1))
        slack[~(denom > 0)] = -np.inf
        best = int(np.argmax(slack))
        faces[idx], xis[idx] = best, xi[best]
    return faces, xis


# --------------------------------------------------------------------------
# I/O


def write_off(mesh_or_vertices, path, faces=None) -> None:
    if isinstance(mesh_or_vertices, TriMesh):
        vertices, faces = mesh_or_vertices.vertices, mesh_or_vertices.faces
    else:
        vertices = np.asarray(mesh_or_vertices)
    lines = ["OFF", f"{len(vertices)} {len(faces)} 0"]
    lines += [" ".join(repr(float(c)) for c in v) for v in vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path) -> tuple[np.ndarray, np.ndarray]:
    tokens = [
        ln.split("#")[0].split() for ln in Path(path).read_text().splitlines()
    ]
    tokens = [t for t in tokens if t]
    if tokens[0][0] != "OFF":
        raise ValueError(f"{path} is not an OFF file")
    nv, nf = int(tokens[1][0]), int(tokens[1][1])
    vertices = np.array([[float(c) for c in t[:3]] for t in tokens[2 : 2 + nv]])
    faces = np.array([[int(c) for c in t[1:4]] for t in tokens[2 + nv : 2 + nv + nf]])
    return vertices, faces


def mesh_from_off(path) -> TriMesh:
    """Rebuild a TriMesh from an OFF file written by :func:`write_off`."""
    vertices, faces = read_off(path)
    edges, fe = _edges(faces)
    k = subdivision_from_nodes(len(vertices) + len(edges))
    return TriMesh(vertices, faces, edges, fe, k)


def write_mesh_function(f: MeshFunction, path) -> None:
    with open(path, "w") as fh:
        fh.write("node_index,value\n")
        for i, val in enumerate(f.values.tolist()):
            fh.write(f"{i},{val!r}\n")


def read_mesh_function_values(path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    order = np.argsort(data[:, 0], kind="stable")
    return data[order, 1]
