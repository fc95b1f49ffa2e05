"""Colour-coded pictures of tangent flow fields.

Vectors are projected onto the x1-x2 plane and rescaled to their original
length, then looked up in the standard optical-flow colour wheel: angle
selects hue, length / R selects saturation (clamped at the rim).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .flow import FlowField
from .geometry import RadialSurface

WHEEL_SEGMENTS = (("RY", 15), ("YG", 6), ("GC", 4), ("CB", 11), ("BM", 13), ("MR", 6))
OUTSIDE_GREY = 0.5
BACKGROUND = 1.0


def _ramp(n):
    return np.floor(255 * np.arange(n) / n)


def colour_wheel() -> np.ndarray:
    """(55, 3) RGB table in [0, 1]."""
    rows = []
    for name, n in WHEEL_SEGMENTS:
        up, down, full, zero = _ramp(n), 255 - _ramp(n), np.full(n, 255.0), np.zeros(n)
        rgb = {
            "RY": (full, up, zero),
            "YG": (down, full, zero),
            "GC": (zero, full, up),
            "CB": (zero, down, full),
            "BM": (up, zero, full),
            "MR": (full, zero, down),
        }[name]
        rows.append(np.column_stack(rgb))
    return np.vstack(rows) / 255.0


WHEEL = colour_wheel()


def wheel_position(w) -> np.ndarray:
    """Continuous column index in [0, ncols) for planar vectors w (..., 2)."""
    w = np.asarray(w, dtype=float)
    a = np.arctan2(-w[..., 1], -w[..., 0]) / np.pi
    return np.mod((a + 1) / 2 * len(WHEEL), len(WHEEL))


def flow_to_rgb(w, radius: float) -> np.ndarray:
    """Colours (..., 3) of planar vectors; the origin maps to white."""
    if radius <= 0:
        raise ValueError("colour disk radius must be positive")
    w = np.asarray(w, dtype=float)
    fk = wheel_position(w)
    k0 = np.floor(fk).astype(int) % len(WHEEL)
    k1 = (k0 + 1) % len(WHEEL)
    f = (fk - np.floor(fk))[..., None]
    hue = (1 - f) * WHEEL[k0] + f * WHEEL[k1]
    sat = np.minimum(np.linalg.norm(w, axis=-1) / radius, 1.0)[..., None]
    return 1 - sat * (1 - hue)


@dataclass(frozen=True)
class RenderConfig:
    R: float | None = None  # default: longest vector of the field
    hemisphere: str = "upper"
    view: str = "top"
    size: int = 512

    def __post_init__(self):
        if self.R is not None and self.R <= 0:
            raise ValueError("R must be positive")
        if self.hemisphere not in ("upper", "lower"):
            raise ValueError("hemisphere must be 'upper' or 'lower'")
        if self.view not in ("top", "rotated"):
            raise ValueError("view must be 'top' or 'rotated'")
        if self.size < 2 or self.size % 2:
            raise ValueError("image size must be an even number >= 2")


@dataclass(frozen=True, eq=False)
class ColouredMesh:
    vertices: np.ndarray
    faces: np.ndarray
    colours: np.ndarray  # (F, 3) in [0, 1]
    radius: float | None = None

    def __post_init__(self):
        c = np.asarray(self.colours, dtype=float)
        if c.shape != (len(self.faces), 3) or np.any(c < 0) or np.any(c > 1):
            raise ValueError("colours must be (F, 3) values in [0, 1]")
        object.__setattr__(self, "colours", c)

    @property
    def colours_u8(self) -> np.ndarray:
        return np.rint(self.colours * 255).astype(np.uint8)


def planar_projection(v) -> np.ndarray:
    """Length-preserving projection onto the x1-x2 plane; zero where undefined."""
    v = np.asarray(v, dtype=float)
    p = v[..., :2]
    pn = np.linalg.norm(p, axis=-1, keepdims=True)
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(pn > 0, p * (vn / pn), 0.0)
    return w


def colour_code(field: FlowField, config: RenderConfig, surf: RadialSurface | None = None) -> ColouredMesh:
    mesh = field.mesh
    w = planar_projection(field.hat)
    radius = config.R
    if radius is None:
        radius = float(np.max(np.linalg.norm(field.hat, axis=1))) or 1.0
    rgb = flow_to_rgb(w, radius)
    z = mesh.centroids()[:, 2]
    inside = z >= 0 if config.hemisphere == "upper" else z < 0
    rgb[~inside] = OUTSIDE_GREY
    verts = mesh.vertices if surf is None else surf.deformed_vertices(mesh)
    return ColouredMesh(verts, mesh.faces, rgb, radius)


def uniform_colour(vertices, faces, rgb) -> ColouredMesh:
    return ColouredMesh(vertices, faces, np.tile(np.asarray(rgb, dtype=float), (len(faces), 1)))


# --------------------------------------------------------------------------
# PLY


def write_ply(cm: ColouredMesh, path) -> None:
    """Binary little-endian PLY with per-face uchar RGB."""
    v = np.asarray(cm.vertices, dtype="<f4")
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,)), ("rgb", "u1", (3,))])
    faces = np.empty(len(cm.faces), dtype=face_dtype)
    faces["n"] = 3
    faces["idx"] = cm.faces
    faces["rgb"] = cm.colours_u8
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {len(v)}\nproperty float x\nproperty float y\nproperty float z\n"
        f"element face {len(faces)}\nproperty list uchar int vertex_indices\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(v.tobytes())
        fh.write(faces.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read files produced by :func:`write_ply`: (vertices, faces, uint8 colours)."""
    raw = Path(path).read_bytes()
    end = raw.index(b"end_header\n") + len(b"end_header\n")
    header = raw[:end].decode("ascii").splitlines()
    if "format binary_little_endian 1.0" not in header:
        raise ValueError("only binary little-endian PLY is supported")
    counts = {line.split()[1]: int(line.split()[2]) for line in header if line.startswith("element")}
    nv, nf = counts["vertex"], counts["face"]
    verts = np.frombuffer(raw, dtype="<f4", count=3 * nv, offset=end).reshape(nv, 3)
    face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,)), ("rgb", "u1", (3,))])
    faces = np.frombuffer(raw, dtype=face_dtype, count=nf, offset=end + verts.nbytes)
    if np.any(faces["n"] != 3):
        raise ValueError("only triangle faces are supported")
    return verts.astype(float), faces["idx"].astype(int), faces["rgb"].copy()


# --------------------------------------------------------------------------
# raster views


def rasterise(vertices, faces, colours, size: int, extent: float | None = None,
              view_from: str = "top") -> np.ndarray:
    """Orthographic z-buffered view along -x3 (``top``) or +x3 (``bottom``).

    Pixel centres are symmetric about the origin; row 0 is the largest x2.
    Returns (size, size, 3) floats with a white background.
    """
    v = np.asarray(vertices, dtype=float)
    if view_from == "bottom":
        v = v * np.array([1.0, -1.0, -1.0])
    if extent is None:
        extent = 1.02 * np.max(np.linalg.norm(v[:, :2], axis=1))
    scale = size / (2 * extent)
    # continuous pixel coordinates: column from x1, row from -x2
    px = (v[:, 0] + extent) * scale - 0.5
    py = (extent - v[:, 1]) * scale - 0.5
    tri_x, tri_y, tri_z = px[faces], py[faces], v[faces, 2]

    x0 = np.clip(np.ceil(tri_x.min(1)), 0, size - 1).astype(int)
    x1 = np.clip(np.floor(tri_x.max(1)), 0, size - 1).astype(int)
    y0 = np.clip(np.ceil(tri_y.min(1)), 0, size - 1).astype(int)
    y1 = np.clip(np.floor(tri_y.max(1)), 0, size - 1).astype(int)
    wmax = int(max((x1 - x0).max(initial=0), (y1 - y0).max(initial=0))) + 1

    ox, oy = np.meshgrid(np.arange(wmax), np.arange(wmax))
    ox, oy = ox.ravel(), oy.ravel()
    pix_all, depth_all, face_all = [], [], []
    batch = max(1, 2_000_000 // (wmax * wmax))
    for s in range(0, len(faces), batch):
        sl = slice(s, s + batch)
        cx = x0[sl, None] + ox[None]
        cy = y0[sl, None] + oy[None]
        ax, ay = tri_x[sl, 0:1], tri_y[sl, 0:1]
        bx, by = tri_x[sl, 1:2] - ax, tri_y[sl, 1:2] - ay
        dx, dy = tri_x[sl, 2:3] - ax, tri_y[sl, 2:3] - ay
        det = bx * dy - by * dx
        with np.errstate(divide="ignore", invalid="ignore"):
            l1 = ((cx - ax) * dy - (cy - ay) * dx) / det
            l2 = (bx * (cy - ay) - by * (cx - ax)) / det
            l0 = 1 - l1 - l2
            tol = -1e-9
            ok = (det != 0) & (l0 >= tol) & (l1 >= tol) & (l2 >= tol)
        ok &= (cx <= x1[sl, None]) & (cy <= y1[sl, None])
        z = l0 * tri_z[sl, 0:1] + l1 * tri_z[sl, 1:2] + l2 * tri_z[sl, 2:3]
        fi, ki = np.nonzero(ok)
        pix_all.append(cy[fi, ki] * size + cx[fi, ki])
        depth_all.append(z[fi, ki])
        face_all.append(fi + s)
    img = np.full((size * size, 3), BACKGROUND)
    if pix_all:
        pix, depth, fidx = (np.concatenate(a) for a in (pix_all, depth_all, face_all))
        order = np.lexsort((fidx, depth, pix))
        pix, fidx = pix[order], fidx[order]
        last = np.r_[pix[1:] != pix[:-1], True]
        img[pix[last]] = np.asarray(colours, dtype=float)[fidx[last]]
    return img.reshape(size, size, 3)


def render_view(cm: ColouredMesh, config: RenderConfig) -> np.ndarray:
    v = np.asarray(cm.vertices, dtype=float)
    if config.view == "rotated":
        v = v * np.array([-1.0, -1.0, 1.0])
    view_from = "top" if config.hemisphere == "upper" else "bottom"
    return rasterise(v, cm.faces, cm.colours, config.size, view_from=view_from)


def to_png(img: np.ndarray, path) -> None:
    Image.fromarray(np.rint(np.clip(img, 0, 1) * 255).astype(np.uint8), mode="RGB").save(path)


def legend(radius: float, size: int = 256) -> np.ndarray:
    """Colour disk image; the rim corresponds to |w| = radius."""
    c = (np.arange(size) + 0.5) - size / 2
    gx, gy = np.meshgrid(c, -c)
    r = size / 2 - 2
    w = np.stack([gx, gy], axis=-1) * (radius / r)
    img = flow_to_rgb(w, radius)
    img[np.hypot(gx, gy) > r] = BACKGROUND
    return img


def export(cm: ColouredMesh, config: RenderConfig, stem) -> dict:
    """Write PLY, the configured view, its 180-degree rotated partner and a legend."""
    stem = Path(stem)
    paths = {"ply": Path(f"{stem}.ply"), "top": Path(f"{stem}_top.png"),
             "rotated": Path(f"{stem}_rotated.png"), "legend": Path(f"{stem}_legend.png")}
    write_ply(cm, paths["ply"])
    for view in ("top", "rotated"):
        cfg = RenderConfig(cm.radius, config.hemisphere, view, config.size)
        to_png(render_view(cm, cfg), paths[view])
    leg = Image.fromarray(np.rint(legend(cm.radius or 1.0) * 255).astype(np.uint8), mode="RGB")
    ImageDraw.Draw(leg).text((4, 4), f"R = {cm.radius:.3g}" if cm.radius else "R = 1", fill=(0, 0, 0))
    leg.save(paths["legend"])
    return paths
