"""Pose codebooks, rotation retrieval, and translation/scale estimation.

A codebook is a matrix of latent pose codes indexed by reference rotations.
It is built either by running the conditioning block over rotation features
(``conditioned`` mode, for objects without a mesh at test time) or by encoding
renders of a known mesh (``rendered`` mode). Rotation estimation is an exact
brute-force cosine argmax against the codebook; translation comes from a
pinhole bounding-box argument (RGB only) or from depth-map alignment with an
ICP polish.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hsh
from . import so3
from . import tensor as T
from .errors import ConfigError, DimensionError, EstimationError, RefinementError
from .fta import load_fta, save_fta
from .model import ModelConfig, encode, unit_rows_safe
from .synthscene import DEFAULT_BG, DEFAULT_LIGHT, Camera, Mesh, rasterize

CODEBOOK_FORMAT = "poselatent-cb/1"
MODES = ("conditioned", "rendered")
ENCODE_CHUNK = 64
RETRIEVE_BLOCK = 16384
ICP_MAX_SRC = 4096


# -- containers -----------------------------------------------------------------

@dataclass
class PoseCodebook:
    """Latent codes for a reference rotation set.

    ``render_meta`` carries (bbox diagonal px, render distance mm) per row in
    rendered mode; it stays None for conditioned codebooks.
    """
    codes: np.ndarray
    rotations: so3.RotationSet
    mode: str
    render_meta: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.codes = np.atleast_2d(np.asarray(self.codes))
        if self.mode not in MODES:
            raise ConfigError(f"codebook mode must be one of {MODES}, got {self.mode!r}")
        if self.codes.shape[0] != len(self.rotations):
            raise DimensionError(
                f"{self.codes.shape[0]} codes vs {len(self.rotations)} rotations")
        if not np.all(np.isfinite(self.codes)):
            raise EstimationError("codebook contains non-finite codes")
        if self.render_meta is not None:
            self.render_meta = np.atleast_2d(np.asarray(self.render_meta))
            if self.render_meta.shape != (self.codes.shape[0], 2):
                raise DimensionError(
                    f"render_meta must be ({self.codes.shape[0]}, 2), "
                    f"got {self.render_meta.shape}")
        self._unit = None

    def __len__(self):
        return self.codes.shape[0]

    @property
    def dim(self) -> int:
        return self.codes.shape[1]

    @property
    def unit_codes(self) -> np.ndarray:
        """Row-normalized codes, cached; all-zero rows stay zero."""
        if self._unit is None:
            self._unit = unit_rows_safe(self.codes)
        return self._unit

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tensors = {
            "codes": self.codes.astype(np.float32),
            "rotations": self.rotations.quats.astype(np.float32),
        }
        if self.render_meta is not None:
            tensors["render_meta"] = self.render_meta.astype(np.float32)
        save_fta(path, tensors)
        doc = {
            "format": CODEBOOK_FORMAT,
            "mode": self.mode,
            "count": int(len(self)),
            "dim": int(self.dim),
            "rotations": {"provenance": self.rotations.provenance,
                          "meta": self.rotations.meta},
            "meta": self.meta,
        }
        path.with_suffix(".json").write_text(json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "PoseCodebook":
        path = Path(path)
        doc = json.loads(path.with_suffix(".json").read_text())
        if doc.get("format") != CODEBOOK_FORMAT:
            raise ConfigError(f"unsupported codebook format {doc.get('format')!r}")
        tensors = load_fta(path)
        rotset = so3.RotationSet(
            quats=tensors["rotations"].astype(np.float64),
            provenance=doc["rotations"].get("provenance", "explicit"),
            meta=doc["rotations"].get("meta", {}))
        return cls(codes=tensors["codes"], rotations=rotset, mode=doc["mode"],
                   render_meta=tensors.get("render_meta"), meta=doc.get("meta", {}))


@dataclass
class PoseEstimate:
    rotation: np.ndarray                       # (4,) unit quaternion, w >= 0
    translation: np.ndarray | None = None      # (3,) mm
    scale: float | None = None
    score: float = 0.0                         # cosine similarity in [-1, 1]
    top_k: list = field(default_factory=list)  # [(row index, score)] descending
    index: int = -1                            # top-1 codebook row

    def to_json(self) -> dict:
        return {
            "rotation_quat_wxyz": [float(v) for v in self.rotation],
            "translation_mm": (None if self.translation is None
                               else [float(v) for v in self.translation]),
            "scale": None if self.scale is None else float(self.scale),
            "score": float(self.score),
            "topk": [{"index": int(i), "score": float(s)} for i, s in self.top_k],
        }


# -- codebook construction --------------------------------------------------------

def conditioned_code_fn(params, cfg: ModelConfig, rotations: so3.RotationSet,
                        max_n: int = hsh.DEFAULT_MAX_N):
    """Precompute everything rotation-dependent once; return z_o -> codes.

    The returned callable maps a single shape code (d,) to the full (N, d)
    code matrix, matching condition_pose up to float reassociation. Building
    per-query codebooks this way keeps the rotation-feature and fc_h work out
    of the query loop.
    """
    feats = hsh.encode_rotations(rotations.quats, max_n=max_n,
                                 dim=cfg.hsh_dim).astype(np.float32)
    p = {k: t.data for k, t in params.items()}

    def lrelu(x):
        return np.where(x > 0, x, np.float32(0.1) * x)

    if cfg.variant == "bilinear":
        b_side = feats @ p["cond.fc_h.w"] + p["cond.fc_h.b"]
        wmat = p["cond.w3"].reshape(cfg.d, cfg.d * cfg.d)

        def build(z_o):
            a = _unit_vec(z_o) @ p["cond.fc_c.w"] + p["cond.fc_c.b"]
            z = b_side @ (a @ wmat).reshape(cfg.d, cfg.d)
            hid = lrelu(z @ p["cond.ffn1.w"] + p["cond.ffn1.b"])
            return z + hid @ p["cond.ffn2.w"] + p["cond.ffn2.b"]
        return build

    n_layers = len(cfg.mlp_widths) + 1

    def mlp(x):
        for i in range(1, n_layers + 1):
            x = x @ p[f"cond.mlp{i}.w"] + p[f"cond.mlp{i}.b"]
            if i < n_layers:
                x = lrelu(x)
        return x

    if cfg.variant == "mlp_nocond":
        shared = mlp(feats)
        return lambda z_o: shared.copy()

    def build_concat(z_o):
        tiled = np.broadcast_to(_unit_vec(z_o), (feats.shape[0], cfg.d))
        return mlp(np.concatenate([tiled, feats], axis=1))
    return build_concat


def _unit_vec(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32).reshape(-1)
    return z / max(float(np.linalg.norm(z)), 1e-12)


def build_codebook_conditioned(params, cfg: ModelConfig, z_o,
                               rotations: so3.RotationSet,
                               max_n: int = hsh.DEFAULT_MAX_N,
                               meta: dict | None = None) -> PoseCodebook:
    """Generate codes for every reference rotation from one shape code.

    Conditions on the live z_o that the caller extracted from the query image
    (normalized here, matching how conditioning inputs are scaled in
    training).
    """
    z_o = np.asarray(z_o).reshape(-1)
    if z_o.shape[0] != cfg.d:
        raise DimensionError(f"shape code has dim {z_o.shape[0]}, model wants {cfg.d}")
    codes = conditioned_code_fn(params, cfg, rotations, max_n)(z_o)
    doc = {"hsh_max_n": int(max_n), "hsh_dim": int(cfg.hsh_dim),
           "variant": cfg.variant}
    doc.update(meta or {})
    return PoseCodebook(codes=codes, rotations=rotations, mode="conditioned",
                        meta=doc)


def silhouette_bbox(mask: np.ndarray) -> tuple[tuple[float, float], float]:
    """((center u, center v), diagonal px) of the true pixels of a mask."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise EstimationError("empty silhouette, no bounding box")
    du = float(cols.max() - cols.min())
    dv = float(rows.max() - rows.min())
    center = ((cols.max() + cols.min()) / 2.0, (rows.max() + rows.min()) / 2.0)
    return center, float(np.hypot(du, dv))


def build_codebook_rendered(params, cfg: ModelConfig, mesh: Mesh,
                            rotations: so3.RotationSet, camera: Camera,
                            distance: float | None = None,
                            light_dir=DEFAULT_LIGHT, bg_rgb=DEFAULT_BG,
                            meta: dict | None = None) -> PoseCodebook:
    """Render the mesh at every reference rotation and encode the pose codes.

    Each row also records the silhouette bbox diagonal and render distance so
    pinhole translation estimation can compare against a detected bbox later.
    """
    dist = float(camera.z_ref if distance is None else distance)
    translation = np.array([0.0, 0.0, dist])
    n = len(rotations)
    codes = np.empty((n, cfg.d), dtype=np.float32)
    render_meta = np.empty((n, 2), dtype=np.float64)
    batch, rows = [], []
    for i, q in enumerate(rotations.quats):
        rgb, depth = rasterize(mesh, q, translation, camera,
                               light_dir=light_dir, bg_rgb=bg_rgb)
        sil = depth > 0
        diag = silhouette_bbox(sil)[1] if sil.any() else 0.0
        render_meta[i] = (diag, dist)
        batch.append(rgb)
        rows.append(i)
        if len(batch) == ENCODE_CHUNK or i == n - 1:
            _, z_p = encode(params, cfg, np.stack(batch))
            codes[rows] = z_p.data
            batch, rows = [], []
    doc = {"render_distance_mm": dist, "camera": camera.to_json(),
           "light_dir": [float(v) for v in light_dir]}
    doc.update(meta or {})
    return PoseCodebook(codes=codes, rotations=rotations, mode="rendered",
                        render_meta=render_meta, meta=doc)


# -- retrieval --------------------------------------------------------------------

def retrieve_rotation(z_p, codebook: PoseCodebook, k: int = 5,
                      block: int = RETRIEVE_BLOCK) -> PoseEstimate:
    """Exact cosine argmax over the codebook; ties go to the lowest row index.

    The dot products run over row blocks so each pass stays cache-resident;
    there is no approximate index.
    """
    cb = codebook.unit_codes
    q = np.asarray(z_p, dtype=cb.dtype).reshape(-1)
    if q.shape[0] != codebook.dim:
        raise DimensionError(
            f"query dim {q.shape[0]} does not match codebook dim {codebook.dim}")
    norm = float(np.linalg.norm(q))
    if norm <= 1e-12:
        raise EstimationError("zero-norm pose code cannot be retrieved")
    qu = q / norm
    n = len(cb)
    scores = np.empty(n, dtype=cb.dtype)
    for i in range(0, n, block):
        scores[i:i + block] = cb[i:i + block] @ qu
    best = int(np.argmax(scores))          # first occurrence = lowest index
    kk = max(1, min(int(k), n))
    cand = np.argpartition(-scores, kk - 1)[:kk]
    cand = np.unique(np.append(cand, best))
    order = np.lexsort((cand, -scores[cand]))[:kk]
    top = [(int(cand[o]), float(np.clip(scores[cand[o]], -1.0, 1.0)))
           for o in order]
    return PoseEstimate(rotation=codebook.rotations.quats[best].copy(),
                        score=top[0][1], top_k=top, index=best)


# -- translation from a single RGB bbox --------------------------------------------

def estimate_translation_pinhole(bbox_center, bbox_diag: float, row_meta,
                                 camera: Camera) -> np.ndarray:
    """Similar-triangles depth from bbox diagonals, then ray through the center.

    row_meta is the (render diagonal px, render distance mm) pair stored per
    codebook row in rendered mode.
    """
    render_diag, render_dist = float(row_meta[0]), float(row_meta[1])
    diag = float(bbox_diag)
    if diag <= 0 or render_diag <= 0:
        raise EstimationError(
            f"bbox diagonals must be positive, got detected={diag} "
            f"rendered={render_diag}")
    t_z = render_dist * (render_diag / diag)
    u, v = float(bbox_center[0]), float(bbox_center[1])
    t_x = (u - camera.cx) * t_z / camera.fx
    t_y = (v - camera.cy) * t_z / camera.fy
    return np.array([t_x, t_y, t_z])


# -- depth alignment ----------------------------------------------------------------

def backproject_depth(depth_mm: np.ndarray, camera: Camera) -> np.ndarray:
    """(M, 3) camera-frame points in mm for every pixel with depth > 0."""
    depth_mm = np.asarray(depth_mm)
    if depth_mm.ndim != 2:
        raise DimensionError(f"depth map must be 2-D, got {depth_mm.shape}")
    rows, cols = np.nonzero(depth_mm > 0)
    z = depth_mm[rows, cols].astype(np.float64)
    x = (cols - camera.cx) * z / camera.fx
    y = (rows - camera.cy) * z / camera.fy
    return np.stack([x, y, z], axis=1)


def _rank3_check(pts: np.ndarray, label: str) -> None:
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if s[0] <= 0 or s[2] <= 1e-9 * s[0]:
        raise RefinementError(f"{label} point set is degenerate (rank < 3)")


def _median_spacing(pts: np.ndarray, sample: int = 256) -> float:
    take = min(sample, len(pts))
    idx = np.linspace(0, len(pts) - 1, take).astype(int)
    d2 = ((pts[idx][:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    d2[np.arange(take), idx] = np.inf
    return float(np.median(np.sqrt(d2.min(axis=1))))


class _GridNN:
    """Exact nearest neighbor via a uniform hash grid with expanding search.

    The search widens its cell radius until the best candidate provably beats
    anything outside the searched block, so results match brute force.
    """

    def __init__(self, pts: np.ndarray, cell: float):
        self.pts = pts
        self.cell = max(float(cell), 1e-9)
        keys = np.floor(pts / self.cell).astype(np.int64)
        self.table: dict[tuple, list] = {}
        for j, key in enumerate(map(tuple, keys)):
            self.table.setdefault(key, []).append(j)
        self.table = {k: np.asarray(v) for k, v in self.table.items()}

    def query(self, p: np.ndarray) -> int:
        base = tuple(np.floor(p / self.cell).astype(np.int64))
        best_j, best_d2 = -1, np.inf
        r = 1
        while True:
            if (2 * r + 1) ** 3 > 4 * len(self.table) + 27:
                diff = self.pts - p
                return int(np.argmin((diff * diff).sum(axis=1)))
            for dx in range(-r, r + 1):
                for dy in range(-r, r + 1):
                    for dz in range(-r, r + 1):
                        if max(abs(dx), abs(dy), abs(dz)) != r and r > 1:
                            continue
                        rows = self.table.get((base[0] + dx, base[1] + dy,
                                               base[2] + dz))
                        if rows is None:
                            continue
                        diff = self.pts[rows] - p
                        d2 = (diff * diff).sum(axis=1)
                        jloc = int(np.argmin(d2))
                        if d2[jloc] < best_d2:
                            best_d2, best_j = float(d2[jloc]), int(rows[jloc])
            if best_j >= 0 and best_d2 <= (r * self.cell) ** 2:
                return best_j
            r += 1


def _rigid_fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares R, t with R @ src + t ~ dst (closed form via SVD)."""
    sc, dc = src.mean(axis=0), dst.mean(axis=0)
    h = (src - sc).T @ (dst - dc)
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0 or s[1] <= 1e-12 * s[0]:
        raise RefinementError("correspondences collapsed, rigid fit is underdetermined")
    d = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return r, dc - r @ sc


def icp_refine(src: np.ndarray, dst: np.ndarray, max_iters: int = 30,
               tol: float = 1e-4) -> tuple[np.ndarray, np.ndarray, float]:
    """Point-to-point ICP. Returns (R, t, final mean correspondence distance).

    Only improving iterations are kept: if an update raises the mean nearest
    neighbor distance it is rolled back and iteration stops. src is strided
    down to at most ICP_MAX_SRC points; dst is indexed in full through a
    uniform grid at twice its median point spacing.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != 3 or dst.ndim != 2 or dst.shape[1] != 3:
        raise DimensionError(f"point sets must be (N, 3), got {src.shape} and {dst.shape}")
    if len(src) < 3 or len(dst) < 3:
        raise RefinementError(f"need at least 3 points, got {len(src)} and {len(dst)}")
    _rank3_check(src, "source")
    _rank3_check(dst, "destination")

    if len(src) > ICP_MAX_SRC:
        src = src[np.linspace(0, len(src) - 1, ICP_MAX_SRC).astype(int)]
    nn = _GridNN(dst, 2.0 * _median_spacing(dst))

    def mean_dist(pts):
        idx = np.array([nn.query(p) for p in pts])
        return idx, float(np.linalg.norm(dst[idx] - pts, axis=1).mean())

    r_tot, t_tot = np.eye(3), np.zeros(3)
    cur = src
    match, best = mean_dist(cur)
    for _ in range(max_iters):
        r, t = _rigid_fit(cur, dst[match])
        cand = cur @ r.T + t
        cand_match, cand_mean = mean_dist(cand)
        if cand_mean > best:
            break
        cur, match = cand, cand_match
        r_tot, t_tot = r @ r_tot, r @ t_tot + t
        improved = best - cand_mean
        best = cand_mean
        if improved < tol:
            break
    return r_tot, t_tot, best


@dataclass
class DepthAlignment:
    scale: float
    translation: np.ndarray          # (3,) mm, after ICP polish
    rotation: np.ndarray             # (3, 3) residual ICP rotation (near identity)
    mean_distance: float             # mm, final mean correspondence distance
    rough_translation: np.ndarray    # (3,) mm, centroid-difference estimate


def estimate_translation_depth(depth_pred: np.ndarray, depth_obs: np.ndarray,
                               camera: Camera, max_iters: int = 30,
                               tol: float = 1e-4) -> DepthAlignment:
    """Scale and translation from two depth maps of the same posed surface.

    Both maps are in mm with 0 marking background, and the predicted map is
    already at the retrieved rotation, so only a similarity (scale, shift)
    remains. Scale comes from the 3D bounding-box diagonal ratio, the shift
    from centroids, and ICP polishes the result; if ICP degenerates the rough
    estimate is returned unchanged.
    """
    pts_p = backproject_depth(depth_pred, camera)
    pts_o = backproject_depth(depth_obs, camera)
    if len(pts_p) < 20 or len(pts_o) < 20:
        raise EstimationError(
            f"need at least 20 valid depth pixels, got {len(pts_p)} predicted "
            f"and {len(pts_o)} observed")
    diag_p = float(np.linalg.norm(np.ptp(pts_p, axis=0)))
    diag_o = float(np.linalg.norm(np.ptp(pts_o, axis=0)))
    if diag_p <= 0:
        raise EstimationError("predicted depth points span a zero-size box")
    scale = diag_o / diag_p
    rough = pts_o.mean(axis=0) - scale * pts_p.mean(axis=0)
    try:
        r, t, dist = icp_refine(scale * pts_p + rough, pts_o,
                                max_iters=max_iters, tol=tol)
    except RefinementError:
        resid = float(np.linalg.norm(
            (scale * pts_p + rough).mean(axis=0) - pts_o.mean(axis=0)))
        return DepthAlignment(scale, rough.copy(), np.eye(3), resid, rough)
    return DepthAlignment(scale, r @ rough + t, r, dist, rough)
