"""Volumes to surface images: cell detection, centring and band projection."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .flow import SurfaceImage
from .geometry import RadialSurface
from .surface_fit import SamplePoints
from .trimesh import TriMesh

log = logging.getLogger(__name__)

SIDECAR = "volume.json"


@dataclass(frozen=True, eq=False)
class VolumetricFrame:
    """Intensity grid indexed (x, y, z); voxel (i, j, k) sits at spacing * (i, j, k)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    frame: int = 0
    dt: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3-D array, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValueError("spacing must be three positive numbers")
        if self.dt <= 0:
            raise ValueError("time spacing must be positive")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    @property
    def normalised(self) -> np.ndarray:
        """Intensities in [0, 1]: integer data is divided by 255."""
        if np.issubdtype(self.data.dtype, np.integer):
            return self.data.astype(float) / 255.0
        return self.data.astype(float)

    def to_voxel(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) / np.asarray(self.spacing)

    def to_physical(self, voxels) -> np.ndarray:
        return np.asarray(voxels, dtype=float) * np.asarray(self.spacing)


@dataclass(frozen=True)
class PipelineConfig:
    sigma: float
    threshold: float
    epsilon: float = 0.05
    band_samples: int = 11

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.band_samples < 1:
            raise ValueError("band_samples must be >= 1")


# --------------------------------------------------------------------------
# volume I/O


def write_volume(frame: VolumetricFrame, directory) -> None:
    """One 8-bit PGM per z slice plus a JSON sidecar."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    data = frame.data
    if not np.issubdtype(data.dtype, np.integer):
        data = np.rint(np.clip(data, 0.0, 1.0) * 255.0)
    data = data.astype(np.uint8)
    width = len(str(max(data.shape[2] - 1, 0)))
    for z in range(data.shape[2]):
        # PGM rows are y, columns x
        Image.fromarray(np.ascontiguousarray(data[:, :, z].T), mode="L").save(
            out / f"slice_{z:0{width}d}.pgm"
        )
    meta = {"dims": list(data.shape), "spacing": list(frame.spacing), "frame": frame.frame,
            "dt": frame.dt, "slice_pattern": f"slice_{{z:0{width}d}}.pgm"}
    (out / SIDECAR).write_text(json.dumps(meta, indent=1))


def read_volume(directory) -> VolumetricFrame:
    src = Path(directory)
    meta = json.loads((src / SIDECAR).read_text())
    nx, ny, nz = meta["dims"]
    data = np.empty((nx, ny, nz), dtype=np.uint8)
    for z in range(nz):
        path = src / meta["slice_pattern"].format(z=z)
        with Image.open(path) as img:
            sl = np.asarray(img)
        if sl.shape != (ny, nx):
            raise ValueError(f"{path}: expected {ny}x{nx} slice, got {sl.shape}")
        data[:, :, z] = sl.T
    return VolumetricFrame(data, tuple(meta["spacing"]), meta.get("frame", 0), meta.get("dt", 1.0))


# --------------------------------------------------------------------------
# detection and centring


def smooth(frame: VolumetricFrame, sigma: float) -> np.ndarray:
    """Gaussian filter with an isotropic physical width ``sigma``."""
    return ndimage.gaussian_filter(frame.normalised, np.divide(sigma, frame.spacing), mode="constant")


def _refine(vol, idx):
    """Parabolic sub-voxel offset per axis around integer maxima."""
    out = idx.astype(float)
    for axis in range(3):
        lo, hi = idx.copy(), idx.copy()
        lo[:, axis] -= 1
        hi[:, axis] += 1
        ok = (lo[:, axis] >= 0) & (hi[:, axis] < vol.shape[axis])
        fm = vol[tuple(lo[ok].T)]
        f0 = vol[tuple(idx[ok].T)]
        fp = vol[tuple(hi[ok].T)]
        denom = fm - 2 * f0 + fp
        step = np.where(denom < 0, 0.5 * (fm - fp) / np.where(denom < 0, denom, 1.0), 0.0)
        out[ok, axis] += np.clip(step, -0.5, 0.5)
    return out


def detect_cell_centres(frame: VolumetricFrame, config: PipelineConfig) -> SamplePoints:
    """Local maxima of the smoothed volume above threshold, in physical units.

    Flat maxima spanning several voxels are merged to their centroid.
    """
    vol = smooth(frame, config.sigma)
    peaks = (vol > config.threshold) & (vol == ndimage.maximum_filter(vol, size=3, mode="constant"))
    labels, count = ndimage.label(peaks, structure=np.ones((3, 3, 3)))
    if count == 0:
        log.warning("no voxels above threshold %.3g in frame %d", config.threshold, frame.frame)
        return SamplePoints(np.empty((0, 3)))
    sizes = np.bincount(labels.ravel())[1:]
    centroids = np.array(ndimage.center_of_mass(peaks, labels, range(1, count + 1)))
    single = sizes == 1
    if np.any(single):
        idx = np.rint(centroids[single]).astype(int)
        centroids[single] = _refine(vol, idx)
    return SamplePoints(frame.to_physical(centroids))


class DegenerateSamplesError(ValueError):
    pass


def fit_sphere(points) -> tuple[np.ndarray, float]:
    """Algebraic sphere fit |x|^2 = 2 c.x + d, radius sqrt(d + |c|^2)."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 4:
        raise DegenerateSamplesError("sphere fit needs at least 4 points")
    mean = pts.mean(axis=0)
    q = pts - mean
    a = np.column_stack([2 * q, np.ones(len(q))])
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise DegenerateSamplesError("points are coplanar or otherwise degenerate")
    sol = np.linalg.lstsq(a, np.sum(q * q, axis=1), rcond=None)[0]
    c, d = sol[:3], sol[3]
    return c + mean, float(np.sqrt(d + c @ c))


def centre_points(samples: SamplePoints):
    centre, radius = fit_sphere(samples.points)
    return samples.shifted(centre), centre, radius


# --------------------------------------------------------------------------
# narrow-band projection


def band_factors(epsilon: float, count: int) -> np.ndarray:
    """Equispaced radial factors in [1 - eps, 1 + eps].

    Built as 1 + step * offset, so adding m samples per side at the same step
    gives a superset; for odd n, (2 eps, 2n - 1) contains (eps, n) exactly.
    """
    if count == 1 or epsilon == 0:
        return np.ones(1)
    step = 2.0 * epsilon / (count - 1)
    return 1.0 + step * (np.arange(count) - (count - 1) / 2)


def sample_volume(frame: VolumetricFrame, points) -> np.ndarray:
    """Trilinear interpolation at physical points; zero outside the grid."""
    coords = frame.to_voxel(points).T
    return ndimage.map_coordinates(frame.normalised, coords, order=1, mode="constant", cval=0.0)


def sample_surface_image(frame: VolumetricFrame, surf: RadialSurface, mesh: TriMesh,
                         config: PipelineConfig, centre=None) -> SurfaceImage:
    """Band maximum of the volume around rho(v) v at every node (unscaled).

    ``centre`` is the physical position of the sphere origin; defaults to the
    surface's stored centre, else the array origin.
    """
    if centre is None:
        centre = surf.centre if surf.centre is not None else np.zeros(3)
    nodes = mesh.nodes
    rho = surf.eval(nodes)[0]
    surface_pts = rho[:, None] * nodes
    best = np.full(len(nodes), -np.inf)
    for c in band_factors(config.epsilon, config.band_samples):
        best = np.maximum(best, sample_volume(frame, np.asarray(centre) + c * surface_pts))
    return SurfaceImage(mesh, best, frame.frame)


def rescale_joint(images: list[SurfaceImage]) -> list[SurfaceImage]:
    """Affine map of all values onto [0, 1] with shared min and max.

    A constant set (spread at round-off level) maps to 1 if its value is
    positive and to 0 otherwise.
    """
    lo = min(img.values.min() for img in images)
    hi = max(img.values.max() for img in images)
    constant = hi - lo <= 1e-12 * max(abs(hi), abs(lo), 1.0)
    out = []
    for img in images:
        if not constant:
            vals = (img.values - lo) / (hi - lo)
        else:
            vals = np.full_like(img.values, 1.0 if hi > 0 else 0.0)
        out.append(SurfaceImage(img.mesh, vals, img.frame))
    return out


def project_frames(frames, surf: RadialSurface, mesh: TriMesh, config: PipelineConfig,
                   centre=None) -> list[SurfaceImage]:
    raw = [sample_surface_image(f, surf, mesh, config, centre) for f in frames]
    return rescale_joint(raw)


# --------------------------------------------------------------------------
# synthetic data


def fibonacci_directions(n: int, upper_only: bool = False) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1 - i / n if upper_only else 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    phi = np.pi * (3 - np.sqrt(5)) * i
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def blob_volume(shape, spacing, centres, sigma: float, amplitude: float = 1.0) -> np.ndarray:
    """Sum of isotropic Gaussian blobs (physical units), clipped to [0, 1]."""
    spacing = np.asarray(spacing, dtype=float)
    vol = np.zeros(shape)
    reach = 4 * sigma
    axes = [np.arange(s) * h for s, h in zip(shape, spacing)]
    for c in np.atleast_2d(centres):
        lo = np.maximum(np.floor((c - reach) / spacing).astype(int), 0)
        hi = np.minimum(np.ceil((c + reach) / spacing).astype(int) + 1, shape)
        if np.any(hi <= lo):
            continue
        gx, gy, gz = (np.exp(-0.5 * ((ax[l:h] - cc) / sigma) ** 2)
                      for ax, l, h, cc in zip(axes, lo, hi, c))
        vol[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] += amplitude * gx[:, None, None] * gy[None, :, None] * gz[None, None, :]
    return np.clip(vol, 0.0, 1.0)


def rotate_z(points, angle: float) -> np.ndarray:
    ca, sa = np.cos(angle), np.sin(angle)
    rot = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    return np.asarray(points) @ rot.T


@dataclass(frozen=True, eq=False)
class Phantom:
    frames: list
    cell_centres: list  # physical positions per frame
    surface: RadialSurface
    centre: np.ndarray


def cell_phantom(surface: RadialSurface, n_cells: int = 50, shape=(128, 128, 128),
                 spacing=(1.0, 1.0, 1.0), blob_sigma: float = 1.5, n_frames: int = 1,
                 omega: float = 0.0, centre=None) -> Phantom:
    """Gaussian cells on the surface rho, optionally rotated by omega per frame about x3."""
    spacing = np.asarray(spacing, dtype=float)
    if centre is None:
        centre = 0.5 * (np.asarray(shape) - 1) * spacing
    centre = np.asarray(centre, dtype=float)
    dirs = fibonacci_directions(n_cells)
    frames, truth = [], []
    for t in range(n_frames):
        d = rotate_z(dirs, omega * t)
        pts = centre + surface.eval(d)[0][:, None] * d
        vol = np.rint(blob_volume(shape, spacing, pts, blob_sigma) * 255).astype(np.uint8)
        frames.append(VolumetricFrame(vol, tuple(spacing), frame=t))
        truth.append(pts)
    return Phantom(frames, truth, surface, centre)


def shell_volume(shape, spacing, centre, radius: float, width: float) -> np.ndarray:
    """Indicator of |x - centre| within ``width`` of ``radius``."""
    axes = [np.arange(s) * h - c for s, h, c in zip(shape, spacing, centre)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    r = np.sqrt(gx**2 + gy**2 + gz**2)
    return (np.abs(r - radius) <= width).astype(float)
