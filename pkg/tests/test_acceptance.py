"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import time

import numpy as np
import pytest

from sphereflow import cli
from sphereflow.flow import FlowConfig, assemble_flow, evaluate_flow, flow_energy, solve_flow
from sphereflow.geometry import RadialSurface, area_weight, hs1_density, local_geometry
from sphereflow.harmonics import ScalarBasis, VectorBasis
from sphereflow.pipeline import (
    PipelineConfig,
    cell_phantom,
    centre_points,
    detect_cell_centres,
    project_frames,
)
from sphereflow.surface_fit import FitConfig, SamplePoints, fit_surface
from sphereflow.trimesh import MeshFunction, build_icosphere, surface_gradient

from conftest import random_directions, rotation_pair

SQ4PI = np.sqrt(4 * np.pi)
Y10_NORM = np.sqrt(3 / (4 * np.pi))
OMEGA = 0.05


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")
        assert ok, detail

    return report


def rel_l2(surf, truth, mesh):
    d = surf.nodal_values(mesh) - truth.nodal_values(mesh)
    return np.sqrt(np.sum(mesh.areas * np.mean(d[mesh.face_nodes] ** 2, axis=1))
                   / np.sum(mesh.areas * np.mean(truth.nodal_values(mesh)[mesh.face_nodes] ** 2, axis=1)))


def image_mesh_area(surf, mesh):
    v = surf.deformed_vertices(mesh)[mesh.faces]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1).sum()


@pytest.fixture(scope="module")
def rotation(mesh5):
    start = time.perf_counter()
    surf = RadialSurface.constant(1.0)
    f0, f1 = rotation_pair(mesh5, OMEGA, n_max=8)
    cfg = FlowConfig(n_max=10, alpha=1e-3, tol=1e-8, max_iter=5000)
    basis = VectorBasis(10, mesh5)
    system = assemble_flow(surf, f0, f1, cfg, basis)
    v, rep = solve_flow(system, cfg)
    field = evaluate_flow(v, surf, mesh5, basis=basis)
    return dict(surf=surf, f0=f0, f1=f1, cfg=cfg, basis=basis, system=system, v=v, report=rep,
                field=field, seconds=time.perf_counter() - start)


def test_criterion_1_orthonormality(mesh5, verdict):
    start = time.perf_counter()
    y = ScalarBasis(10).evaluate(mesh5.centroids(project=True))
    scalar = np.max(np.abs((y * mesh5.areas) @ y.T - np.eye(len(y))))
    values = VectorBasis(5, mesh5).values()
    g = np.einsum("pfa,qfa,f->pq", values, values, mesh5.areas)
    vector = np.max(np.abs(g - np.eye(len(g))))
    elapsed = time.perf_counter() - start
    verdict(1, scalar <= 5e-3 and vector <= 1e-2 and elapsed <= 60,
            f"scalar Gram dev {scalar:.2e} (<= 5e-3), vector Gram dev {vector:.2e} (<= 1e-2), {elapsed:.1f}s")


def test_criterion_2_eigen_seminorm(mesh5, verdict):
    basis = VectorBasis(3, mesh5)
    surf = RadialSurface.constant(1.0)
    geom = local_geometry(surf, mesh5)
    u, du = basis.components()
    w = geom.weight * mesh5.areas
    energy = hs1_density(geom, u, du) @ w
    mass = np.einsum("pfa,pfa,f->p", basis.values(), basis.values(), w)
    half = len(basis) // 2
    lam = np.array([idx.n * (idx.n + 1) for idx in basis.indices[:half]], dtype=float)
    ratio = energy[:half] / (lam * mass[:half])
    worst = np.max(np.abs(ratio - 1))
    by_degree = {n: float(np.mean(ratio[[i.n == n for i in basis.indices[:half]]])) for n in (1, 2, 3)}
    detail = ", ".join(f"n={n}: ratio {r:.3f}" for n, r in by_degree.items())
    verdict(2, worst <= 0.05, f"seminorm / (lambda_n * mass) max dev {worst:.3f} (<= 0.05); {detail}")


def test_criterion_3_area_consistency(verdict):
    surf = RadialSurface.from_terms({(0, 1): SQ4PI, (1, 1): 0.1 / Y10_NORM})
    assert np.allclose(surf.eval(np.array([[0.0, 0, 1]]))[0], 1.1)
    errs = []
    for k in (5, 6):
        mesh = build_icosphere(k)
        quad = np.dot(mesh.areas, area_weight(surf, mesh.centroids(project=True)))
        errs.append(abs(quad / image_mesh_area(surf, mesh) - 1))
    verdict(3, errs[0] <= 0.01 and errs[1] < errs[0],
            f"relative area error k=5 {errs[0]:.2e} (<= 1e-2), k=6 {errs[1]:.2e} (decreasing)")


def test_criterion_4_surface_fit(mesh5, verdict):
    start = time.perf_counter()
    truth = RadialSurface.from_terms({(0, 1): SQ4PI, (2, 1): 0.2}, n_max=5)
    rng = np.random.default_rng(2024)
    d = random_directions(rng, 500)
    clean = SamplePoints(truth.eval(d)[0][:, None] * d)
    fit = fit_surface(clean, FitConfig(n_max=5, beta=1e-9, tol=1e-12, max_iter=1000))
    coeff_err = np.max(np.abs(fit.coeffs - truth.coeffs))

    d = random_directions(rng, 2000)
    rho = truth.eval(d)[0] * (1 + 0.05 * rng.normal(size=len(d)))
    noisy = fit_surface(SamplePoints(rho[:, None] * d), FitConfig(n_max=5, beta=1e-4, tol=1e-10, max_iter=1000))
    l2 = rel_l2(noisy, truth, mesh5)
    elapsed = time.perf_counter() - start
    verdict(4, coeff_err <= 1e-3 and l2 <= 0.02 and elapsed <= 30,
            f"noiseless coeff max err {coeff_err:.2e} (<= 1e-3), noisy rel L2 {l2:.4f} (<= 0.02), {elapsed:.1f}s")


def test_criterion_5_rotation_recovery(rotation, mesh5, verdict):
    field = rotation["field"]
    c = mesh5.centroids()
    truth = OMEGA * np.cross([0.0, 0.0, 1.0], c)
    g = surface_gradient(MeshFunction(mesh5, rotation["f0"].values))
    w = mesh5.areas * np.sum(g * g, axis=1)
    v = field.hat
    nv, nt = np.linalg.norm(v, axis=1), np.linalg.norm(truth, axis=1)
    ok = (nv > 0) & (nt > 0)
    cos = np.clip(np.sum(v * truth, axis=1)[ok] / (nv[ok] * nt[ok]), -1, 1)
    angle = np.degrees(np.sum(w[ok] * np.arccos(cos)) / np.sum(w[ok]))
    mag = np.sum(w * np.abs(nv - nt)) / np.sum(w * nt)
    elapsed = rotation["seconds"]
    verdict(5, angle <= 15 and mag <= 0.25 and elapsed <= 300,
            f"weighted mean angle {angle:.2f} deg (<= 15), weighted rel magnitude err {mag:.3f} (<= 0.25), {elapsed:.1f}s")


def test_criterion_6_quadratic_identity(rotation, verdict):
    system, surf, f0, f1, basis = (rotation[k] for k in ("system", "surf", "f0", "f1", "basis"))
    alpha = rotation["cfg"].alpha
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(10):
        v = rng.normal(size=len(system.b)) * 0.02
        data, reg = flow_energy(surf, f0, f1, v, alpha, basis)
        quad = v @ (system.A + alpha * system.D) @ v - 2 * system.b @ v + system.c0
        worst = max(worst, abs(data + alpha * reg - quad) / abs(quad))
    v = rotation["v"]
    grad = np.linalg.norm((system.A + alpha * system.D) @ v - system.b)
    bound = rotation["cfg"].tol * np.linalg.norm(system.b)
    verdict(6, worst <= 1e-8 and grad <= bound,
            f"energy identity rel err {worst:.2e} (<= 1e-8), optimality {grad:.2e} (<= tol*|b| = {bound:.2e})")


def test_criterion_7_alpha_sweep(rotation, verdict):
    system, surf, f0, f1, basis = (rotation[k] for k in ("system", "surf", "f0", "f1", "basis"))
    alphas = (1e-2, 1e-1, 1.0, 10.0)
    norms, regs = [], []
    for a in alphas:
        v, _ = solve_flow(system, FlowConfig(n_max=10, alpha=a, tol=1e-10, max_iter=5000))
        norms.append(np.linalg.norm(v))
        regs.append(flow_energy(surf, f0, f1, v, a, basis)[1])
    ok = bool(np.all(np.diff(norms) < 0) and np.all(np.diff(regs) < 0))
    verdict(7, ok, "|v(alpha)| " + ", ".join(f"{n:.4g}" for n in norms)
            + "; regulariser " + ", ".join(f"{r:.3g}" for r in regs))


def test_criterion_8_scaling(mesh3, verdict):
    f0, f1 = rotation_pair(mesh3, OMEGA, n_max=6)
    base = {(0, 1): SQ4PI, (2, 1): 0.15, (3, 4): 0.05}
    c = 2.5
    cfg = FlowConfig(n_max=4, alpha=0.1, tol=1e-12, max_iter=5000)
    s1 = assemble_flow(RadialSurface.from_terms(base), f0, f1, cfg)
    s2 = assemble_flow(RadialSurface.from_terms({k: c * v for k, v in base.items()}), f0, f1, cfg)
    entry = max(np.max(np.abs(m2 - c**2 * m1)) / np.max(np.abs(m2))
                for m1, m2 in ((s1.A, s2.A), (s1.D, s2.D), (s1.b, s2.b)))
    v1, _ = solve_flow(s1, cfg)
    v2, _ = solve_flow(s2, cfg)
    coeff = np.max(np.abs(v2 - v1)) / np.max(np.abs(v1))
    verdict(8, entry <= 1e-10 and coeff <= 1e-8,
            f"entry scaling by c^2 rel err {entry:.2e} (<= 1e-10), coeff change {coeff:.2e} (solver tol 1e-12)")


def test_criterion_9_phantom(verdict):
    start = time.perf_counter()
    truth = RadialSurface.from_terms({(0, 1): 40 * SQ4PI, (2, 1): 4.0, (3, 5): 1.5})
    ph = cell_phantom(truth, n_cells=50, shape=(128, 128, 128))
    pc = PipelineConfig(sigma=1.0, threshold=0.3)
    pts = detect_cell_centres(ph.frames[0], pc)
    dist = np.linalg.norm(pts.points[:, None] - ph.cell_centres[0][None], axis=2)
    hits = int(np.sum(dist.min(axis=0) <= 1.0))
    centred, centre, _ = centre_points(pts)
    mesh = build_icosphere(4)
    fit = fit_surface(centred, FitConfig(n_max=4, beta=1e-4, tol=1e-10, max_iter=1000), mesh=mesh,
                      centre=centre)
    l2 = rel_l2(fit, truth, mesh)
    images = project_frames(ph.frames, fit, mesh, pc)
    elapsed = time.perf_counter() - start
    ok = hits >= 48 and l2 <= 0.03 and elapsed <= 120 and np.all(np.isfinite(images[0].values))
    verdict(9, ok, f"{hits}/50 centres within 1 voxel (>= 48), fitted rel L2 {l2:.4f} (<= 0.03), {elapsed:.1f}s")


def test_criterion_10_determinism(tmp_path, verdict):
    blobs = []
    for name in ("first", "second"):
        cfg = cli.synth(tmp_path / name, seed=11)
        assert cli.main(["run", "--config", str(cfg)]) == 0
        work = cfg.parent / "artifacts"
        blobs.append({p.name: p.read_bytes() for g in ("rho_*.json", "flow_*.json", "flow_*.csv")
                      for p in sorted(work.glob(g))})
    same = blobs[0].keys() == blobs[1].keys() and all(blobs[0][k] == blobs[1][k] for k in blobs[0])
    verdict(10, same and len(blobs[0]) > 0, f"{len(blobs[0])} coefficient artifacts byte-identical across runs: {same}")
