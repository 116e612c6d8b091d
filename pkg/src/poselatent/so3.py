"""Rotation utilities: quaternions, view sampling, clustering, symmetry.

Conventions used throughout the package:

* Quaternions are Hamilton ``(w, x, y, z)`` and unit-norm. Each rotation has
  two lifts ``+q``/``-q``; ``canonicalize`` picks ``w >= 0``, breaking the
  ``w == 0`` tie by making the first nonzero of ``(x, y, z)`` positive.
* View angles ``(beta, theta, phi)`` build the rotation
  ``R = Rz(phi) @ Ry(theta) @ Rz(beta)``: ``theta``/``phi`` select the viewing
  direction on the sphere, ``beta`` is the in-plane angle.
* Distances are geodesic on the rotation group,
  ``2 * arccos(min(1, |q1 . q2|))``, which ignores the sign ambiguity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .fta import load_fta, save_fta

TWO_PI = 2.0 * np.pi


# -- basic quaternion algebra -------------------------------------------------

def canonicalize(q: np.ndarray) -> np.ndarray:
    """Flip quaternion signs so w >= 0 (ties: first nonzero of x,y,z > 0)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q).copy()
    if q.shape[-1] != 4:
        raise DimensionError(f"quaternions must have shape (...,4), got {q.shape}")
    flip = q[:, 0] < 0
    zero_w = q[:, 0] == 0
    if np.any(zero_w):
        for i in np.nonzero(zero_w)[0]:
            for c in (1, 2, 3):
                if q[i, c] != 0:
                    flip[i] = q[i, c] < 0
                    break
    q[flip] *= -1.0
    return q[0] if single else q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b, broadcasting over leading dimensions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quat_about_axis(axis, angle) -> np.ndarray:
    """Unit quaternion for a rotation of ``angle`` about ``axis``; broadcasts over angles."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0:
        raise DimensionError("rotation axis must be nonzero")
    axis = axis / n
    angle = np.asarray(angle, dtype=np.float64)
    half = angle / 2.0
    s = np.sin(half)
    return np.stack([np.cos(half),
                     s * axis[0] * np.ones_like(half),
                     s * axis[1] * np.ones_like(half),
                     s * axis[2] * np.ones_like(half)], axis=-1)


def quat_from_view(beta: float, theta: float, phi: float) -> np.ndarray:
    """Canonical quaternion of Rz(phi) @ Ry(theta) @ Rz(beta)."""
    qz_phi = quat_about_axis((0.0, 0.0, 1.0), phi)
    qy = quat_about_axis((0.0, 1.0, 0.0), theta)
    qz_beta = quat_about_axis((0.0, 0.0, 1.0), beta)
    return canonicalize(quat_multiply(quat_multiply(qz_phi, qy), qz_beta))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of one or more unit quaternions (last axis 4 -> 3x3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_rotate(q: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Rotate points (N,3) by a single quaternion."""
    return pts @ quat_to_matrix(q).T


def view_from_quat(q: np.ndarray) -> tuple[float, float, float]:
    """Invert quat_from_view: (beta, theta, phi) with theta in [0, pi].

    At the gimbal poles (theta ~ 0 or pi) phi is fixed to 0 and beta carries
    the whole in-plane angle.
    """
    m = quat_to_matrix(canonicalize(q))
    c = float(np.clip(m[2, 2], -1.0, 1.0))
    theta = float(np.arccos(c))
    if np.sin(theta) > 1e-9:
        phi = float(np.arctan2(m[1, 2], m[0, 2]))
        beta = float(np.arctan2(m[2, 1], -m[2, 0]))
    elif c > 0:                      # theta ~ 0: R = Rz(phi + beta)
        phi = 0.0
        beta = float(np.arctan2(m[1, 0], m[0, 0]))
    else:                            # theta ~ pi: R = Rz(phi) Ry(pi) Rz(beta)
        phi = 0.0
        beta = float(np.arctan2(m[1, 0], -m[0, 0]))
    return (beta % TWO_PI, theta, phi % TWO_PI)


def geodesic_distance(q1: np.ndarray, q2: np.ndarray) -> float | np.ndarray:
    """2 * arccos(min(1, |q1 . q2|)) in radians; broadcasts over rows."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    dot = np.abs((q1 * q2).sum(axis=-1))
    d = 2.0 * np.arccos(np.minimum(1.0, dot))
    return float(d) if d.ndim == 0 else d


# -- view sampling -------------------------------------------------------------

_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    (-1, _ICO_T, 0), (1, _ICO_T, 0), (-1, -_ICO_T, 0), (1, -_ICO_T, 0),
    (0, -1, _ICO_T), (0, 1, _ICO_T), (0, -1, -_ICO_T), (0, 1, -_ICO_T),
    (_ICO_T, 0, -1), (_ICO_T, 0, 1), (-_ICO_T, 0, -1), (-_ICO_T, 0, 1),
], dtype=np.float64)
_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere_vertices(level: int) -> np.ndarray:
    """Unit vertices of the icosahedron subdivided ``level`` times (10*4^L + 2)."""
    if level < 0:
        raise DimensionError(f"subdivision level must be >= 0, got {level}")
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = list(_ICO_FACES)
    for _ in range(level):
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts)


def sample_equidistant_views(level: int) -> np.ndarray:
    """(V,2) array of (theta, phi) view angles, sorted by theta then phi."""
    v = icosphere_vertices(level)
    theta = np.arccos(np.clip(v[:, 2], -1.0, 1.0))
    phi = np.arctan2(v[:, 1], v[:, 0]) % TWO_PI
    order = np.lexsort((phi, theta))
    return np.stack([theta[order], phi[order]], axis=1)


# -- rotation sets ---------------------------------------------------------------

@dataclass
class RotationSet:
    """An ordered set of canonical unit quaternions plus provenance."""
    quats: np.ndarray                 # (N,4) float64, canonicalized
    provenance: str = "explicit"     # "equidistant" | "kmeans" | "explicit"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.quats = np.atleast_2d(np.asarray(self.quats, dtype=np.float64))
        if self.quats.shape[-1] != 4:
            raise DimensionError(f"rotation set needs (N,4) quaternions, got {self.quats.shape}")
        self.quats = canonicalize(self.quats)

    def __len__(self):
        return self.quats.shape[0]

    def min_pairwise_angle(self, block: int = 2048) -> float:
        """Smallest double-cover geodesic between distinct members."""
        q = self.quats
        best = np.pi
        for i in range(0, len(q), block):
            dots = np.abs(q[i : i + block] @ q.T)
            np.fill_diagonal(dots[:, i : i + block], -1.0)
            best = min(best, float(2.0 * np.arccos(np.minimum(1.0, dots.max(axis=1)).min())))
        return best if len(q) > 1 else np.pi

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_fta(path, {"quats": self.quats.astype(np.float32)})
        sidecar = {"provenance": self.provenance, "count": int(len(self)), "meta": self.meta}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "RotationSet":
        path = Path(path)
        quats = load_fta(path)["quats"].astype(np.float64)
        norms = np.linalg.norm(quats, axis=1, keepdims=True)
        quats = quats / norms
        side = path.with_suffix(path.suffix + ".json")
        provenance, meta = "explicit", {}
        if side.exists():
            doc = json.loads(side.read_text())
            provenance = doc.get("provenance", "explicit")
            meta = doc.get("meta", {})
        return cls(quats=quats, provenance=provenance, meta=meta)


def build_reference_rotations(views: np.ndarray, n_inplane: int) -> RotationSet:
    """Cross every (theta, phi) view with n_inplane in-plane angles.

    Rotation order is view-major: index = view_index * n_inplane + inplane_index,
    with in-plane angles beta = 2*pi*k / n_inplane.
    """
    views = np.atleast_2d(np.asarray(views, dtype=np.float64))
    if views.shape[-1] != 2:
        raise DimensionError(f"views must be (V,2) theta/phi pairs, got {views.shape}")
    if n_inplane < 1:
        raise DimensionError(f"n_inplane must be >= 1, got {n_inplane}")
    betas = TWO_PI * np.arange(n_inplane) / n_inplane
    quats = np.empty((len(views) * n_inplane, 4))
    for i, (theta, phi) in enumerate(views):
        for j, beta in enumerate(betas):
            quats[i * n_inplane + j] = quat_from_view(beta, theta, phi)
    return RotationSet(quats=quats, provenance="equidistant",
                       meta={"n_views": int(len(views)), "n_inplane": int(n_inplane)})


# -- clustering ------------------------------------------------------------------

def double_cover_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """min(|p-q|, |p+q|) for unit quaternions; equals sqrt(2 - 2|p.q|)."""
    dot = np.abs((np.asarray(p) * np.asarray(q)).sum(axis=-1))
    return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * np.minimum(1.0, dot)))


def quat_kmeans(quats: np.ndarray, k: int, seed: int, max_iter: int = 100) -> RotationSet:
    """k-means on the rotation group with the double-cover chordal metric.

    Seeding is k-means++ driven by ``seed``; members are sign-aligned to their
    centroid before averaging; assignment ties go to the lowest centroid
    index; empty clusters keep their previous centroid. Deterministic given
    (quats, k, seed).
    """
    q = np.atleast_2d(np.asarray(quats, dtype=np.float64))
    n = q.shape[0]
    if q.shape[-1] != 4:
        raise DimensionError(f"quat_kmeans needs (N,4), got {q.shape}")
    if not 1 <= k <= n:
        raise DimensionError(f"k={k} invalid for {n} quaternions")
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, 4))
    centroids[0] = q[rng.integers(n)]
    d2 = 2.0 - 2.0 * np.abs(q @ centroids[0])
    d2 = np.maximum(d2, 0.0)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[c] = q[rng.integers(n)]
        else:
            centroids[c] = q[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.maximum(0.0, 2.0 - 2.0 * np.abs(q @ centroids[c])))

    assign = np.full(n, -1)
    for _ in range(max_iter):
        absdot = np.abs(q @ centroids.T)            # (N,k); argmax = nearest
        new_assign = np.argmax(absdot, axis=1)      # first max = lowest index
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        signed = q @ centroids.T                     # sign-align members to centroid
        for c in range(k):
            members = assign == c
            if not members.any():
                continue
            aligned = q[members] * np.sign(signed[members, c])[:, None]
            m = aligned.mean(axis=0)
            norm = np.linalg.norm(m)
            if norm > 1e-12:
                centroids[c] = m / norm
    return RotationSet(quats=centroids, provenance="kmeans",
                       meta={"k": int(k), "seed": int(seed), "n_input": int(n)})


# -- symmetry --------------------------------------------------------------------

CONTINUOUS_STEPS = 360  # 1-degree discretization of continuous groups


@dataclass
class SymmetryGroup:
    """Rotational symmetry of an object: trivial, cyclic(k), or continuous.

    ``axis`` is in the object frame. Continuous groups are discretized at
    CONTINUOUS_STEPS evenly spaced angles wherever a finite element list is
    required.
    """
    kind: str = "trivial"              # "trivial" | "cyclic" | "continuous"
    axis: tuple = (0.0, 0.0, 1.0)
    order: int = 1                      # cyclic only

    def __post_init__(self):
        if self.kind not in ("trivial", "cyclic", "continuous"):
            raise DimensionError(f"unknown symmetry kind {self.kind!r}")
        if self.kind == "cyclic" and self.order < 2:
            raise DimensionError(f"cyclic symmetry needs order >= 2, got {self.order}")

    def elements(self) -> np.ndarray:
        """(M,4) quaternions of the (discretized) group, identity first."""
        if self.kind == "trivial":
            return np.array([[1.0, 0.0, 0.0, 0.0]])
        steps = self.order if self.kind == "cyclic" else CONTINUOUS_STEPS
        angles = TWO_PI * np.arange(steps) / steps
        return quat_about_axis(self.axis, angles)

    def to_json(self) -> dict:
        return {"kind": self.kind, "axis": list(map(float, self.axis)), "order": int(self.order)}

    @classmethod
    def from_json(cls, doc: dict) -> "SymmetryGroup":
        return cls(kind=doc["kind"], axis=tuple(doc["axis"]), order=int(doc.get("order", 1)))


def symmetry_aware_error(q_est: np.ndarray, q_gt: np.ndarray, group: SymmetryGroup) -> float:
    """min over group elements s of geodesic(q_est, q_gt * s)."""
    variants = quat_multiply(np.asarray(q_gt, dtype=np.float64)[None, :], group.elements())
    dots = np.abs(variants @ np.asarray(q_est, dtype=np.float64))
    return float(2.0 * np.arccos(np.minimum(1.0, dots.max())))


def symmetry_aware_errors(q_est: np.ndarray, q_gt: np.ndarray, group: SymmetryGroup) -> np.ndarray:
    """Vectorized symmetry_aware_error over paired (N,4) arrays."""
    q_est = np.atleast_2d(np.asarray(q_est, dtype=np.float64))
    q_gt = np.atleast_2d(np.asarray(q_gt, dtype=np.float64))
    if q_est.shape != q_gt.shape:
        raise DimensionError(f"estimate/gt shapes differ: {q_est.shape} vs {q_gt.shape}")
    elems = group.elements()                               # (M,4)
    variants = quat_multiply(q_gt[:, None, :], elems[None, :, :])   # (N,M,4)
    dots = np.abs(np.einsum("nmd,nd->nm", variants, q_est))
    return 2.0 * np.arccos(np.minimum(1.0, dots.max(axis=1)))
