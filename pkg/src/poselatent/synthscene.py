"""Synthetic corpus: primitive meshes, a z-buffer rasterizer, augmentation,
and dataset shards.

Geometry lives in millimeters in a right-handed object frame; the camera sits
at the origin looking down +z with a pinhole model ``u = fx * X/Z + cx``.
Pixel (row, col) samples the ray through (u, v) = (col, row). Depth maps hold
camera-space z in mm with 0 marking background.

Every desk object gets a brightness gradient along its z axis on top of its
base color. The gradient preserves the declared z-axis symmetries but breaks
the extra flips a uniformly colored box/cylinder/mug would have, so the
declared symmetry group is exactly the visual one.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, RenderError
from .fta import load_fta, save_fta
from .so3 import RotationSet, SymmetryGroup, quat_to_matrix

DATASET_FORMAT = "poselatent-ds/1"
DEFAULT_BG = (0.05, 0.05, 0.05)
DEFAULT_LIGHT = (0.4, 0.3, -0.85)
AMBIENT = 0.2
NEAR_MM = 1.0


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    z_ref: float      # canonical render distance in mm

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height, "z_ref": self.z_ref}

    @classmethod
    def from_json(cls, doc: dict) -> "Camera":
        return cls(fx=float(doc["fx"]), fy=float(doc["fy"]), cx=float(doc["cx"]),
                   cy=float(doc["cy"]), width=int(doc["width"]), height=int(doc["height"]),
                   z_ref=float(doc["z_ref"]))


def desk_camera() -> Camera:
    return Camera(fx=120.0, fy=120.0, cx=16.0, cy=16.0, width=32, height=32, z_ref=400.0)


# -- meshes --------------------------------------------------------------------

@dataclass
class Mesh:
    verts: np.ndarray     # (V,3) float64, mm
    faces: np.ndarray     # (F,3) int64, outward CCW winding
    colors: np.ndarray    # (V,3) float64 in [0,1]

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.verts.min(axis=0), self.verts.max(axis=0)

    def recenter(self) -> "Mesh":
        lo, hi = self.bbox()
        self.verts = self.verts - (lo + hi) / 2.0
        return self

    def bbox_diag(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.verts, axis=1).max())

    def signed_volume(self) -> float:
        v = self.verts[self.faces]
        return float(np.einsum("fi,fi->f", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


def _apply_z_gradient(verts: np.ndarray, base: np.ndarray) -> np.ndarray:
    z = verts[:, 2]
    span = z.max() - z.min()
    t = (z - z.min()) / span if span > 0 else np.zeros_like(z)
    return np.clip(base[None, :] * (0.7 + 0.6 * t)[:, None], 0.0, 1.0)


def _ring(radius: float, z: float, segments: int) -> np.ndarray:
    a = 2.0 * np.pi * np.arange(segments) / segments
    return np.stack([radius * np.cos(a), radius * np.sin(a), np.full(segments, z)], axis=1)


def _cylinder_mesh(radius: float, height: float, segments: int = 48) -> Mesh:
    bot = _ring(radius, -height / 2, segments)
    top = _ring(radius, height / 2, segments)
    cb = np.array([[0.0, 0.0, -height / 2]])
    ct = np.array([[0.0, 0.0, height / 2]])
    verts = np.vstack([bot, top, cb, ct])
    icb, ict = 2 * segments, 2 * segments + 1
    faces = []
    for j in range(segments):
        k = (j + 1) % segments
        faces += [(j, k, segments + k), (j, segments + k, segments + j)]   # side
        faces += [(icb, k, j), (ict, segments + j, segments + k)]          # caps
    return Mesh(verts, np.array(faces, dtype=np.int64), np.zeros((len(verts), 3)))


def _cone_mesh(radius: float, height: float, segments: int = 48) -> Mesh:
    base = _ring(radius, -height / 2, segments)
    apex = np.array([[0.0, 0.0, height / 2]])
    cb = np.array([[0.0, 0.0, -height / 2]])
    verts = np.vstack([base, apex, cb])
    ia, ic = segments, segments + 1
    faces = []
    for j in range(segments):
        k = (j + 1) % segments
        faces += [(j, k, ia), (ic, k, j)]
    return Mesh(verts, np.array(faces, dtype=np.int64), np.zeros((len(verts), 3)))


def _extrude_polygon(outline: np.ndarray, fan_center: int, depth: float) -> Mesh:
    """Prism from a CCW outline star-shaped around outline[fan_center].

    Caps are fans from that vertex, so every cap edge pairs exactly with a
    side-wall edge or the mirrored cap and the mesh is watertight.
    """
    n = len(outline)
    zlo, zhi = -depth / 2, depth / 2
    verts = np.concatenate([
        np.column_stack([outline, np.full(n, zlo)]),
        np.column_stack([outline, np.full(n, zhi)])])
    faces = []
    for j in range(n):                       # side walls
        k = (j + 1) % n
        faces += [(j, k, n + k), (j, n + k, n + j)]
    for j in range(n):                       # caps
        k = (j + 1) % n
        if j == fan_center or k == fan_center:
            continue
        faces += [(fan_center, k, j), (n + fan_center, n + j, n + k)]
    return Mesh(verts, np.array(faces, dtype=np.int64), np.zeros((len(verts), 3)))


def _lprism_mesh(arm_x: float, arm_y: float, thick_x: float, thick_y: float,
                 depth: float) -> Mesh:
    """L-shaped prism with unequal arms/thicknesses: no rotational symmetry."""
    outline = np.array([
        (0, 0), (arm_x, 0), (arm_x, thick_y), (thick_x, thick_y),
        (thick_x, arm_y), (0, arm_y)], dtype=np.float64)
    return _extrude_polygon(outline, fan_center=3, depth=depth)


def _mug_mesh(radius: float, height: float, handle_radius: float, tube_radius: float,
              segments: int = 48, handle_segments: int = 16, tube_segments: int = 8) -> Mesh:
    body = _cylinder_mesh(radius, height, segments)
    # Handle: half-torus in the y=0 plane bowing out along +x. Its arc center
    # sits 1mm inside the wall so the tube ends are buried in the body.
    t = np.linspace(-0.5 * np.pi, 0.5 * np.pi, handle_segments + 1)
    cx = radius - 1.0
    centers = np.stack([cx + handle_radius * np.cos(t), np.zeros_like(t),
                        handle_radius * np.sin(t)], axis=1)
    normals = np.stack([np.cos(t), np.zeros_like(t), np.sin(t)], axis=1)
    binorm = np.array([0.0, 1.0, 0.0])
    u = 2.0 * np.pi * np.arange(tube_segments) / tube_segments
    ring_offsets = (np.cos(u)[:, None, None] * normals[None] +
                    np.sin(u)[:, None, None] * binorm[None, None, :])   # (U, T, 3)
    tube = centers[None] + tube_radius * ring_offsets                   # (U, T, 3)
    tube = tube.transpose(1, 0, 2).reshape(-1, 3)                       # ring-major

    base = len(body.verts)
    faces = list(map(tuple, body.faces))
    for i in range(handle_segments):
        for j in range(tube_segments):
            k = (j + 1) % tube_segments
            a = base + i * tube_segments + j
            b = base + i * tube_segments + k
            c = base + (i + 1) * tube_segments + k
            d = base + (i + 1) * tube_segments + j
            faces += [(a, c, b), (a, d, c)]
    verts = np.vstack([body.verts, tube])
    # cap the two tube ends (they sit just outside the wall; visually sealed)
    for ring_start, flip in ((base, False), (base + handle_segments * tube_segments, True)):
        center = tube[ring_start - base : ring_start - base + tube_segments].mean(axis=0)
        verts = np.vstack([verts, center])
        ci = len(verts) - 1
        for j in range(tube_segments):
            k = (j + 1) % tube_segments
            tri = (ci, ring_start + j, ring_start + k)
            faces.append(tri if flip else (ci, ring_start + k, ring_start + j))
    return Mesh(verts, np.array(faces, dtype=np.int64), np.zeros((len(verts), 3)))


@dataclass
class ObjectSpec:
    name: str
    kind: str                      # cylinder | box | cone | lprism | mug
    params: dict = field(default_factory=dict)
    base_color: tuple = (0.7, 0.7, 0.7)

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind, "params": self.params,
                "base_color": list(self.base_color)}

    @classmethod
    def from_json(cls, doc: dict) -> "ObjectSpec":
        return cls(name=doc["name"], kind=doc["kind"], params=dict(doc["params"]),
                   base_color=tuple(doc["base_color"]))


def make_primitive(spec: ObjectSpec) -> tuple[Mesh, SymmetryGroup]:
    """Build the mesh and its declared rotational symmetry group."""
    p = spec.params
    if spec.kind == "cylinder":
        mesh = _cylinder_mesh(p["radius"], p["height"], p.get("segments", 48))
        sym = SymmetryGroup(kind="continuous", axis=(0, 0, 1))
    elif spec.kind == "cone":
        mesh = _cone_mesh(p["radius"], p["height"], p.get("segments", 48))
        sym = SymmetryGroup(kind="continuous", axis=(0, 0, 1))
    elif spec.kind == "box":
        sx, sy, sz = p["sx"], p["sy"], p["sz"]
        x, y, z = sx / 2, sy / 2, sz / 2
        verts = np.array([(-x, -y, -z), (x, -y, -z), (x, y, -z), (-x, y, -z),
                          (-x, -y, z), (x, -y, z), (x, y, z), (-x, y, z)], dtype=np.float64)
        faces = np.array([
            (0, 2, 1), (0, 3, 2),      # bottom  (-z)
            (4, 5, 6), (4, 6, 7),      # top     (+z)
            (0, 1, 5), (0, 5, 4),      # -y
            (2, 3, 7), (2, 7, 6),      # +y
            (1, 2, 6), (1, 6, 5),      # +x
            (3, 0, 4), (3, 4, 7),      # -x
        ], dtype=np.int64)
        mesh = Mesh(verts, faces, np.zeros((8, 3)))
        sym = (SymmetryGroup(kind="cyclic", order=4) if sx == sy
               else SymmetryGroup(kind="cyclic", order=2))
    elif spec.kind == "lprism":
        mesh = _lprism_mesh(p["arm_x"], p["arm_y"], p["thick_x"], p["thick_y"], p["depth"])
        sym = SymmetryGroup(kind="trivial")
    elif spec.kind == "mug":
        mesh = _mug_mesh(p["radius"], p["height"], p["handle_radius"], p["tube_radius"],
                         p.get("segments", 48))
        sym = SymmetryGroup(kind="trivial")
    else:
        raise DimensionError(f"unknown primitive kind {spec.kind!r}")
    mesh.recenter()
    mesh.colors = _apply_z_gradient(mesh.verts, np.asarray(spec.base_color, dtype=np.float64))
    if spec.kind == "mug":
        # handle in a contrasting color (flat, still symmetry-free)
        body_v = 2 * p.get("segments", 48) + 2
        mesh.colors[body_v:] = np.array([0.95, 0.6, 0.15])
    return mesh, sym


def desk_objects() -> list[ObjectSpec]:
    """The five-object corpus used by the desk-scale runs."""
    return [
        ObjectSpec("cylinder", "cylinder", {"radius": 20.0, "height": 55.0}, (0.85, 0.25, 0.2)),
        ObjectSpec("box4", "box", {"sx": 38.0, "sy": 38.0, "sz": 64.0}, (0.2, 0.45, 0.85)),
        ObjectSpec("cone", "cone", {"radius": 22.0, "height": 60.0}, (0.2, 0.8, 0.3)),
        ObjectSpec("lprism", "lprism",
                   {"arm_x": 45.0, "arm_y": 55.0, "thick_x": 17.0, "thick_y": 22.0,
                    "depth": 30.0}, (0.9, 0.75, 0.2)),
        ObjectSpec("mug", "mug",
                   {"radius": 19.0, "height": 50.0, "handle_radius": 14.0,
                    "tube_radius": 4.0}, (0.7, 0.3, 0.8)),
    ]


def fits_in_frame(mesh: Mesh, camera: Camera, margin: float = 0.97) -> bool:
    """Conservative bounding-sphere frustum check at the canonical distance."""
    r = mesh.bounding_radius()
    if r >= camera.z_ref - NEAR_MM:
        return False
    extent = max(camera.fx, camera.fy) * r / (camera.z_ref - r)
    lim_u = min(camera.cx, camera.width - 1 - camera.cx)
    lim_v = min(camera.cy, camera.height - 1 - camera.cy)
    return extent <= margin * min(lim_u, lim_v)


# -- rasterizer -----------------------------------------------------------------

def rasterize(mesh: Mesh, quat: np.ndarray, translation: np.ndarray, camera: Camera,
              light_dir=DEFAULT_LIGHT, bg_rgb=DEFAULT_BG) -> tuple[np.ndarray, np.ndarray]:
    """Render (rgb, depth): z-buffered flat-Lambertian triangles.

    rgb is (3,H,W) float32 in [0,1]; depth is (H,W) float32 camera-space mm,
    0 on background. Shading is max(AMBIENT, n . light) times the
    barycentric vertex color, perspective-correct, with the flat normal
    oriented toward the camera. Raises RenderError if any vertex is at or
    behind the near plane.
    """
    h, w = camera.height, camera.width
    rgb = np.empty((h, w, 3), dtype=np.float64)
    rgb[:] = np.asarray(bg_rgb, dtype=np.float64)
    zbuf = np.full((h, w), np.inf, dtype=np.float64)

    if len(mesh.verts):
        pts = mesh.verts @ quat_to_matrix(np.asarray(quat, dtype=np.float64)).T \
            + np.asarray(translation, dtype=np.float64)
        if pts[:, 2].min() <= NEAR_MM:
            raise RenderError(
                f"mesh crosses the near plane: min z = {pts[:, 2].min():.2f} mm <= {NEAR_MM}")
        light = np.asarray(light_dir, dtype=np.float64)
        light = light / np.linalg.norm(light)
        u = camera.fx * pts[:, 0] / pts[:, 2] + camera.cx
        v = camera.fy * pts[:, 1] / pts[:, 2] + camera.cy
        inv_z = 1.0 / pts[:, 2]

        for f in mesh.faces:
            i0, i1, i2 = f
            x0, y0, x1, y1, x2, y2 = u[i0], v[i0], u[i1], v[i1], u[i2], v[i2]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if abs(area) < 1e-12:
                continue
            ax0 = max(0, int(math.floor(min(x0, x1, x2))))
            ax1 = min(w - 1, int(math.ceil(max(x0, x1, x2))))
            ay0 = max(0, int(math.floor(min(y0, y1, y2))))
            ay1 = min(h - 1, int(math.ceil(max(y0, y1, y2))))
            if ax0 > ax1 or ay0 > ay1:
                continue
            px = np.arange(ax0, ax1 + 1, dtype=np.float64)
            py = np.arange(ay0, ay1 + 1, dtype=np.float64)[:, None]
            l0 = ((x1 - px) * (y2 - py) - (y1 - py) * (x2 - px)) / area
            l1 = ((x2 - px) * (y0 - py) - (y2 - py) * (x0 - px)) / area
            l2 = 1.0 - l0 - l1
            inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
            if not inside.any():
                continue
            invz = l0 * inv_z[i0] + l1 * inv_z[i1] + l2 * inv_z[i2]
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(invz > 0, 1.0 / invz, np.inf)
            block = zbuf[ay0 : ay1 + 1, ax0 : ax1 + 1]
            better = inside & (z < block)
            if not better.any():
                continue
            e1 = pts[i1] - pts[i0]
            e2 = pts[i2] - pts[i0]
            n = np.cross(e1, e2)
            norm = np.linalg.norm(n)
            if norm < 1e-12:
                continue
            n = n / norm
            if np.dot(n, pts[i0]) > 0:      # orient toward the camera at the origin
                n = -n
            shade = max(AMBIENT, float(np.dot(n, light)))
            cw = (l0 * inv_z[i0])[..., None] * mesh.colors[i0] \
                + (l1 * inv_z[i1])[..., None] * mesh.colors[i1] \
                + (l2 * inv_z[i2])[..., None] * mesh.colors[i2]
            with np.errstate(divide="ignore", invalid="ignore"):
                col = shade * cw / invz[..., None]
            block[better] = z[better]
            rgb[ay0 : ay1 + 1, ax0 : ax1 + 1][better] = col[better]

    depth = np.where(np.isinf(zbuf), 0.0, zbuf).astype(np.float32)
    return np.clip(rgb, 0.0, 1.0).astype(np.float32).transpose(2, 0, 1), depth


# -- augmentation ----------------------------------------------------------------

@dataclass
class AugmentParams:
    bg_color: tuple = (0.0, 0.0, 0.0)
    brightness: float = 1.0
    color: tuple = (1.0, 1.0, 1.0)
    contrast: float = 1.0
    scale: float = 1.0
    replace_bg: bool = True


def sample_augment_params(rng: np.random.Generator) -> AugmentParams:
    return AugmentParams(
        bg_color=tuple(rng.uniform(0.0, 1.0, 3)),
        brightness=float(rng.uniform(0.7, 1.3)),
        color=tuple(rng.uniform(0.8, 1.2, 3)),
        contrast=float(rng.uniform(0.8, 1.2)),
        scale=float(rng.uniform(0.85, 1.15)),
    )


def resample_bilinear(img: np.ndarray, src_x: np.ndarray, src_y: np.ndarray,
                      fill: np.ndarray) -> np.ndarray:
    """Sample (C,H,W) at float coords; outside pixels get ``fill`` per channel."""
    c, h, w = img.shape
    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    wx = src_x - x0
    wy = src_y - y0
    valid = (src_x >= 0) & (src_x <= w - 1) & (src_y >= 0) & (src_y <= h - 1)
    x0c = np.clip(x0, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    out = np.empty_like(img)
    for ch in range(c):
        plane = img[ch]
        val = (plane[y0c, x0c] * (1 - wx) * (1 - wy) + plane[y0c, x1c] * wx * (1 - wy)
               + plane[y1c, x0c] * (1 - wx) * wy + plane[y1c, x1c] * wx * wy)
        out[ch] = np.where(valid, val, fill[ch])
    return out


def augment(rgb: np.ndarray, rng: np.random.Generator | None = None,
            params: AugmentParams | None = None,
            bg_mask: np.ndarray | None = None) -> np.ndarray:
    """Photometric + in-plane-scale augmentation of a (3,H,W) image in [0,1].

    Background replacement needs ``bg_mask`` (true where depth == 0); the
    other stages apply regardless. Parameters are drawn from ``rng`` unless a
    frozen AugmentParams is supplied. Output is clipped to [0,1].
    """
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DimensionError(f"augment expects (3,H,W), got {rgb.shape}")
    if params is None:
        if rng is None:
            raise DimensionError("augment needs either rng or params")
        params = sample_augment_params(rng)
    img = rgb.astype(np.float64).copy()
    bg = np.asarray(params.bg_color, dtype=np.float64)
    if bg_mask is not None and params.replace_bg:
        img = np.where(bg_mask[None, :, :], bg[:, None, None], img)
        fill_src = bg
    else:
        fill_src = np.zeros(3)
    # no-op stages are skipped so identity parameters reproduce the input bit
    # for bit (x - 0.5 + 0.5 is not an fp identity)
    if params.brightness != 1.0:
        img *= params.brightness
    if any(c != 1.0 for c in params.color):
        img *= np.asarray(params.color)[:, None, None]
    if params.contrast != 1.0:
        img = (img - 0.5) * params.contrast + 0.5
    fill = ((fill_src * params.brightness * np.asarray(params.color)) - 0.5) \
        * params.contrast + 0.5

    if params.scale != 1.0:
        h, w = img.shape[1:]
        ccx, ccy = (w - 1) / 2.0, (h - 1) / 2.0
        gx, gy = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        img = resample_bilinear(img, ccx + (gx - ccx) / params.scale,
                                ccy + (gy - ccy) / params.scale, fill)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# -- dataset --------------------------------------------------------------------

def _sample_seed(root_seed: int, obj_name: str, rot_idx: int) -> int:
    digest = hashlib.sha256(f"{root_seed}|{obj_name}|{rot_idx}".encode()).hexdigest()
    return int(digest[:8], 16)


def _holdout_rotations(obj_name: str, n_rot: int, fraction: float) -> set[int]:
    """Deterministic split: the ceil(fraction*n) highest-hash rotation indices."""
    n_hold = math.ceil(fraction * n_rot)
    ranked = sorted(range(n_rot),
                    key=lambda r: hashlib.sha256(f"{obj_name}|{r}".encode()).hexdigest(),
                    reverse=True)
    return set(ranked[:n_hold])


def generate_dataset(specs: list[ObjectSpec], rotations: RotationSet, camera: Camera,
                     seed: int, out_dir: str | Path, holdout_fraction: float = 0.1,
                     shard_size: int = 512) -> dict:
    """Render every (object, rotation) pair at (0,0,z_ref) into FTA shards.

    Writes shard_%04d.fta (rgb/depth/object_idx/rotation_idx), rotations.fta,
    and manifest.json. Fully deterministic: rerunning with the same arguments
    produces byte-identical files. Returns the manifest dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meshes = []
    symmetries = []
    for spec in specs:
        mesh, sym = make_primitive(spec)
        if not fits_in_frame(mesh, camera):
            raise RenderError(f"object {spec.name!r} does not fit the frame at z_ref")
        meshes.append(mesh)
        symmetries.append(sym)

    n_rot = len(rotations)
    samples = []
    rgb_rows, depth_rows, obj_rows, rot_rows = [], [], [], []
    shards = []
    shard_idx = 0

    def flush():
        nonlocal shard_idx, rgb_rows, depth_rows, obj_rows, rot_rows
        if not rgb_rows:
            return
        name = f"shard_{shard_idx:04d}.fta"
        save_fta(out / name, {
            "rgb": np.stack(rgb_rows),
            "depth": np.stack(depth_rows),
            "object_idx": np.array(obj_rows, dtype=np.float32),
            "rotation_idx": np.array(rot_rows, dtype=np.float32),
        })
        shards.append({"file": name, "count": len(rgb_rows)})
        shard_idx += 1
        rgb_rows, depth_rows, obj_rows, rot_rows = [], [], [], []

    translation = np.array([0.0, 0.0, camera.z_ref])
    for oi, (spec, mesh) in enumerate(zip(specs, meshes)):
        holdout = _holdout_rotations(spec.name, n_rot, holdout_fraction)
        for ri in range(n_rot):
            rgb, depth = rasterize(mesh, rotations.quats[ri], translation, camera)
            rgb_rows.append(rgb)
            depth_rows.append(depth)
            obj_rows.append(oi)
            rot_rows.append(ri)
            samples.append({
                "shard": shard_idx, "row": len(rgb_rows) - 1, "object": oi,
                "rotation": ri, "split": "holdout" if ri in holdout else "train",
                "seed": _sample_seed(seed, spec.name, ri),
            })
            if len(rgb_rows) == shard_size:
                flush()
    flush()
    rotations.save(out / "rotations.fta")

    manifest = {
        "format": DATASET_FORMAT,
        "seed": seed,
        "camera": camera.to_json(),
        "background": list(DEFAULT_BG),
        "light_dir": list(DEFAULT_LIGHT),
        "holdout_fraction": holdout_fraction,
        "objects": [dict(spec.to_json(), symmetry=sym.to_json())
                    for spec, sym in zip(specs, symmetries)],
        "rotations_file": "rotations.fta",
        "n_rotations": n_rot,
        "shards": shards,
        "samples": samples,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True))
    return manifest


@dataclass
class Dataset:
    rgb: np.ndarray          # (N,3,H,W) float32
    depth: np.ndarray        # (N,H,W) float32 mm
    object_idx: np.ndarray   # (N,) int64
    rotation_idx: np.ndarray  # (N,) int64
    split: np.ndarray        # (N,) bool, True = holdout
    rotations: np.ndarray    # (R,4) float64
    camera: Camera
    objects: list            # manifest object entries (with symmetry)
    manifest: dict

    @property
    def train_indices(self) -> np.ndarray:
        return np.nonzero(~self.split)[0]

    @property
    def holdout_indices(self) -> np.ndarray:
        return np.nonzero(self.split)[0]

    def symmetry(self, object_index: int) -> SymmetryGroup:
        return SymmetryGroup.from_json(self.objects[object_index]["symmetry"])


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != DATASET_FORMAT:
        raise DimensionError(
            f"unsupported dataset format {manifest.get('format')!r}, wanted {DATASET_FORMAT}")
    rgb, depth, obj, rot = [], [], [], []
    for shard in manifest["shards"]:
        data = load_fta(path / shard["file"])
        rgb.append(data["rgb"])
        depth.append(data["depth"])
        obj.append(data["object_idx"].astype(np.int64))
        rot.append(data["rotation_idx"].astype(np.int64))
    rotations = load_fta(path / manifest["rotations_file"])["quats"].astype(np.float64)
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)
    split = np.array([s["split"] == "holdout" for s in manifest["samples"]])
    return Dataset(
        rgb=np.concatenate(rgb) if rgb else np.zeros((0, 3, 1, 1), np.float32),
        depth=np.concatenate(depth) if depth else np.zeros((0, 1, 1), np.float32),
        object_idx=np.concatenate(obj), rotation_idx=np.concatenate(rot),
        split=split, rotations=rotations,
        camera=Camera.from_json(manifest["camera"]),
        objects=manifest["objects"], manifest=manifest)
