import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sphereflow.trimesh import (
    CENTROID,
    LOCAL_NODES,
    MAX_SUBDIVISION,
    MeshFunction,
    MeshResourceError,
    build_icosphere,
    face_param,
    integrate,
    interpolate,
    locate,
    mesh_from_off,
    read_mesh_function_values,
    reference_gradient,
    shape_functions,
    shape_gradients,
    subdivision_from_nodes,
    surface_gradient,
    write_mesh_function,
    write_off,
)

xi_points = st.tuples(st.floats(0, 1), st.floats(0, 1)).map(
    lambda p: (p[0], p[1] * (1 - p[0]))
)


class TestConstruction:
    def test_icosahedron_counts(self):
        m = build_icosphere(0)
        assert (m.n_vertices, m.n_faces, m.n_edges) == (12, 20, 30)

    @pytest.mark.parametrize("k", range(6))
    def test_invariants(self, k):
        m = build_icosphere(k)
        assert m.n_faces == 20 * 4**k
        assert np.max(np.abs(np.linalg.norm(m.vertices, axis=1) - 1)) <= 1e-12
        assert m.n_vertices - m.n_edges + m.n_faces == 2
        # every edge shared by exactly two faces
        counts = np.bincount(m.face_edges.ravel(), minlength=m.n_edges)
        assert np.all(counts == 2)

    def test_euler_k2_recurrence(self):
        m = build_icosphere(2)
        assert (m.n_vertices, m.n_edges, m.n_faces) == (162, 480, 320)

    def test_k7_face_count(self):
        assert 20 * 4**7 == 327680
        assert subdivision_from_nodes(40 * 4**7 + 2) == 7

    def test_resource_limit(self):
        with pytest.raises(MeshResourceError):
            build_icosphere(MAX_SUBDIVISION + 1)
        with pytest.raises(ValueError):
            build_icosphere(-1)

    def test_outward_normals(self, mesh2):
        c = mesh2.centroids()
        assert np.all(np.sum(mesh2.normals * c, axis=1) > 0)
        # clockwise from outside: (v3 - v1) x (v2 - v1) points outward
        v = mesh2.vertices[mesh2.faces]
        n = np.cross(v[:, 2] - v[:, 0], v[:, 1] - v[:, 0])
        assert np.all(np.sum(n * c, axis=1) > 0)

    def test_node_indexing(self, mesh2):
        e = mesh2.edges
        assert np.all(e[:, 0] < e[:, 1])
        assert np.all(np.diff(e[:, 0] * mesh2.n_vertices + e[:, 1]) > 0)
        assert mesh2.n_nodes == mesh2.n_vertices + mesh2.n_edges
        assert np.allclose(np.linalg.norm(mesh2.nodes, axis=1), 1)


class TestShapeFunctions:
    @given(xi_points)
    def test_partition_of_unity(self, xi):
        assert abs(shape_functions(np.array(xi)).sum() - 1) <= 1e-12

    def test_lagrange_delta(self):
        phi = shape_functions(LOCAL_NODES)
        assert np.allclose(phi, np.eye(6), atol=1e-12, rtol=0)

    @settings(max_examples=30)
    @given(xi_points)
    def test_gradient_matches_difference(self, xi):
        xi = np.array(xi)
        h = 1e-6
        fd = np.stack(
            [(shape_functions(xi + h * e) - shape_functions(xi - h * e)) / (2 * h) for e in np.eye(2)],
            axis=-1,
        )
        assert np.allclose(shape_gradients(xi), fd, atol=1e-6)


class TestEvaluation:
    def test_face_param(self, mesh2):
        v = mesh2.vertices[mesh2.faces[7]]
        assert np.allclose(face_param(mesh2, 7, [0.0, 0.0]), v[0])
        assert np.allclose(face_param(mesh2, 7, [1.0, 0.0]), v[2])
        assert np.allclose(face_param(mesh2, 7, CENTROID), v.mean(axis=0))

    def test_interpolate_constant(self, mesh2):
        f = MeshFunction(mesh2, np.full(mesh2.n_nodes, 3.5))
        assert np.allclose(interpolate(f, xi=[0.2, 0.3]), 3.5)

    def test_quadratic_reproduced(self, mesh2, rng):
        # nodal values of a quadratic in xi on one face reproduce it exactly
        q = lambda s, t: 1 + 2 * s - t + 0.5 * s * s + 3 * s * t - 2 * t * t  # noqa: E731
        face = 11
        values = np.zeros(mesh2.n_nodes)
        values[mesh2.face_nodes[face]] = q(LOCAL_NODES[:, 0], LOCAL_NODES[:, 1])
        f = MeshFunction(mesh2, values)
        for _ in range(5):
            s = rng.uniform(0, 1)
            t = rng.uniform(0, 1 - s)
            assert abs(interpolate(f, [face], [s, t])[0] - q(s, t)) < 1e-12

    def test_x3_centroid_error(self, mesh4):
        f = MeshFunction.from_function(mesh4, lambda x: x[:, 2])
        exact = mesh4.centroids(project=True)[:, 2]
        assert np.max(np.abs(interpolate(f) - exact)) < 1e-3

    def test_gradient_constant_zero(self, mesh2):
        f = MeshFunction(mesh2, np.ones(mesh2.n_nodes))
        assert np.allclose(surface_gradient(f), 0, atol=1e-12)

    def test_gradient_affine(self, mesh2):
        a = np.array([0.3, -1.2, 0.7])
        # linear data on the planar face nodes
        planar = np.vstack([mesh2.vertices, mesh2.vertices[mesh2.edges].mean(axis=1)])
        f = MeshFunction(mesh2, planar @ a)
        n = mesh2.normals
        expected = a - (n @ a)[:, None] * n
        assert np.allclose(surface_gradient(f, xi=[0.1, 0.6]), expected, atol=1e-12)

    def test_gradient_tangent(self, mesh3, rng):
        f = MeshFunction(mesh3, rng.normal(size=mesh3.n_nodes))
        g = surface_gradient(f, xi=[0.25, 0.25])
        assert np.max(np.abs(np.sum(g * mesh3.normals, axis=1))) <= 1e-12

    def test_gradient_is_interpolant_gradient(self, mesh2, rng):
        f = MeshFunction(mesh2, rng.normal(size=mesh2.n_nodes))
        xi = np.array([0.3, 0.2])
        h = 1e-6
        fd = np.stack(
            [(interpolate(f, xi=xi + h * e) - interpolate(f, xi=xi - h * e)) / (2 * h) for e in np.eye(2)],
            axis=-1,
        )
        assert np.allclose(reference_gradient(f, xi=xi), fd, atol=1e-6)


class TestQuadrature:
    def test_area(self, mesh5):
        assert abs(integrate(mesh5, lambda x: np.ones(len(x))) - 4 * np.pi) <= 0.01

    def test_odd_moment(self, mesh5):
        f = MeshFunction.from_function(mesh5, lambda x: x[:, 2])
        assert abs(integrate(mesh5, f)) <= 1e-10

    def test_second_moment(self, mesh5):
        f = MeshFunction.from_function(mesh5, lambda x: x[:, 2] ** 2)
        assert abs(integrate(mesh5, f) - 4 * np.pi / 3) <= 0.02

    def test_area_convergence(self):
        deficits = [4 * np.pi - build_icosphere(k).areas.sum() for k in range(2, 7)]
        assert np.all(np.diff(deficits) < 0)
        ratios = np.array(deficits[:-1]) / np.array(deficits[1:])
        assert np.all((ratios >= 3.6) & (ratios <= 4.4))


class TestIO:
    def test_off_round_trip(self, mesh2, tmp_path):
        write_off(mesh2, tmp_path / "m.off")
        m = mesh_from_off(tmp_path / "m.off")
        assert np.array_equal(m.faces, mesh2.faces)
        assert np.allclose(m.vertices, mesh2.vertices, atol=0)
        assert m.subdivision_level == 2

    def test_mesh_function_csv(self, mesh2, rng, tmp_path):
        f = MeshFunction(mesh2, rng.normal(size=mesh2.n_nodes))
        write_mesh_function(f, tmp_path / "f.csv")
        assert np.array_equal(read_mesh_function_values(tmp_path / "f.csv"), f.values)

    def test_wrong_length(self, mesh2):
        with pytest.raises(ValueError):
            MeshFunction(mesh2, np.zeros(3))

    def test_locate(self, mesh3, rng):
        pts = rng.normal(size=(20, 3))
        faces, xi = locate(mesh3, pts)
        assert np.all(xi >= -1e-12) and np.all(xi.sum(axis=1) <= 1 + 1e-12)
        back = face_param(mesh3, faces, xi)
        back /= np.linalg.norm(back, axis=1, keepdims=True)
        assert np.allclose(back, pts / np.linalg.norm(pts, axis=1, keepdims=True), atol=1e-12)
