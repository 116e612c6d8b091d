"""Metrics and analyses: angular-error AP tables, depth-based pose scoring,
principal-component views of codebooks, and shape-space cluster quality.

Aggregate AP numbers are macro averages: per-object AP first, then the mean
across objects, so small and large holdout sets weigh equally.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import so3
from .errors import ConfigError, DimensionError
from .inference import PoseCodebook, conditioned_code_fn, retrieve_rotation
from .model import ModelConfig, encode, unit_rows_safe
from .synthscene import Dataset

DEFAULT_AP_THRESHOLDS_DEG = (5.0, 10.0, 15.0, 20.0, 30.0, 60.0)
VSD_TOLERANCE_MM = 20.0
VSD_RECALL_THRESHOLD = 0.3
ENCODE_CHUNK = 64


# -- angular precision -------------------------------------------------------------

def angular_ap(errors, thresholds) -> np.ndarray:
    """Fraction of errors at or below each threshold (radians in, radians in).

    An empty error list yields NaN columns; callers flag that as a warning
    instead of silently reporting zero.
    """
    errors = np.asarray(errors, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if errors.size == 0:
        return np.full(thresholds.shape, np.nan)
    if not np.all(np.isfinite(errors)):
        raise DimensionError("angular errors must be finite")
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)


def angular_ap_by_object(errors, object_ids, n_objects: int,
                         thresholds) -> tuple[np.ndarray, np.ndarray]:
    """Per-object AP matrix (n_objects, T) and its macro average (T,).

    Objects absent from the sample get NaN rows and drop out of the macro
    average via nanmean.
    """
    errors = np.asarray(errors, dtype=np.float64)
    object_ids = np.asarray(object_ids)
    if errors.shape != object_ids.shape:
        raise DimensionError(
            f"errors {errors.shape} and object ids {object_ids.shape} differ")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    per = np.stack([angular_ap(errors[object_ids == k], thresholds)
                    for k in range(n_objects)])
    if np.all(np.isnan(per)):
        return per, np.full(thresholds.shape, np.nan)
    return per, np.nanmean(per, axis=0)


# -- visible surface discrepancy ----------------------------------------------------

def vsd(depth_est: np.ndarray, depth_gt: np.ndarray, visib_est: np.ndarray,
        visib_gt: np.ndarray, tol_mm: float = VSD_TOLERANCE_MM) -> float:
    """Step-cost visible surface discrepancy over the union of silhouettes.

    A pixel costs 0 only when both maps see the surface and their depths
    agree within tol_mm; every other union pixel costs 1. An empty union
    scores 0 (nothing visible to disagree about).
    """
    depth_est = np.asarray(depth_est, dtype=np.float64)
    depth_gt = np.asarray(depth_gt, dtype=np.float64)
    visib_est = np.asarray(visib_est, dtype=bool)
    visib_gt = np.asarray(visib_gt, dtype=bool)
    if not (depth_est.shape == depth_gt.shape == visib_est.shape == visib_gt.shape):
        raise DimensionError(
            f"vsd maps disagree in shape: {depth_est.shape} {depth_gt.shape} "
            f"{visib_est.shape} {visib_gt.shape}")
    union = visib_est | visib_gt
    n = int(union.sum())
    if n == 0:
        return 0.0
    both = visib_est & visib_gt
    ok = both & (np.abs(depth_est - depth_gt) < tol_mm)
    return float(1.0 - ok.sum() / n)


def vsd_recall(scores, threshold: float = VSD_RECALL_THRESHOLD) -> float:
    """Fraction strictly below the threshold; NaN for an empty list."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return float("nan")
    return float((scores < threshold).mean())


# -- principal components ------------------------------------------------------------

def pca_project(codes: np.ndarray, out_dims: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Top principal-component projections and their explained variances.

    Deterministic sign convention: each component's largest-magnitude entry
    is positive. Variances use the 1/N convention so the reconstruction
    identity (residual power equals discarded eigenvalue sum) is exact.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] <= out_dims:
        raise DimensionError(
            f"need more than {out_dims} code rows, got {codes.shape}")
    centered = codes - codes.mean(axis=0)
    cov = centered.T @ centered / codes.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:out_dims]
    comps = evecs[:, order]
    for j in range(comps.shape[1]):
        peak = np.argmax(np.abs(comps[:, j]))
        if comps[peak, j] < 0:
            comps[:, j] = -comps[:, j]
    return centered @ comps, np.maximum(evals[order], 0.0)


def write_pca_csv(path: str | Path, projections: np.ndarray,
                  quats: np.ndarray) -> None:
    """CSV rows index,pc1,pc2,pc3,beta,theta,phi for external plotting."""
    projections = np.asarray(projections)
    quats = np.atleast_2d(np.asarray(quats))
    if projections.shape[0] != quats.shape[0] or projections.shape[1] != 3:
        raise DimensionError(
            f"expected matching (N,3) projections and (N,4) quats, got "
            f"{projections.shape} and {quats.shape}")
    lines = ["index,pc1,pc2,pc3,beta,theta,phi"]
    for i, (row, q) in enumerate(zip(projections, quats)):
        beta, theta, phi = so3.view_from_quat(q)
        lines.append(f"{i},{row[0]:.6f},{row[1]:.6f},{row[2]:.6f},"
                     f"{beta:.6f},{theta:.6f},{phi:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- shape space --------------------------------------------------------------------

@dataclass
class ClusterReport:
    accuracy: float
    confusion: np.ndarray     # (K, K) counts, rows = true object, cols = predicted
    centroids: np.ndarray     # (K, d) unit-normalized training centroids

    def to_json(self) -> dict:
        return {"accuracy": float(self.accuracy),
                "confusion": self.confusion.tolist()}


def shape_cluster_report(train_codes: np.ndarray, train_ids: np.ndarray,
                         holdout_codes: np.ndarray,
                         holdout_ids: np.ndarray) -> ClusterReport:
    """Nearest-centroid classification of holdout shape codes by cosine.

    Centroids come from unit-normalized training codes; cosine ties resolve
    to the lowest object index.
    """
    train_codes = np.atleast_2d(np.asarray(train_codes, dtype=np.float64))
    holdout_codes = np.atleast_2d(np.asarray(holdout_codes, dtype=np.float64))
    train_ids = np.asarray(train_ids)
    holdout_ids = np.asarray(holdout_ids)
    k = int(max(train_ids.max(), holdout_ids.max())) + 1
    if k < 2:
        raise ConfigError("shape clustering needs at least 2 objects")
    missing = sorted(set(range(k)) - set(np.unique(train_ids).tolist()))
    if missing:
        raise ConfigError(f"objects {missing} have no training codes")
    unit_train = unit_rows_safe(train_codes)
    centroids = np.stack([unit_train[train_ids == j].mean(axis=0)
                          for j in range(k)])
    centroids = unit_rows_safe(centroids)
    scores = unit_rows_safe(holdout_codes) @ centroids.T
    pred = np.argmax(scores, axis=1)
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (holdout_ids, pred), 1)
    accuracy = float((pred == holdout_ids).mean()) if len(holdout_ids) else float("nan")
    return ClusterReport(accuracy=accuracy, confusion=confusion,
                         centroids=centroids)


# -- model-in-the-loop pipelines -------------------------------------------------------

def encode_dataset(params, cfg: ModelConfig, images: np.ndarray,
                   chunk: int = ENCODE_CHUNK) -> tuple[np.ndarray, np.ndarray]:
    """Encode (N,3,H,W) images in chunks; returns numpy (z_o, z_p)."""
    n = images.shape[0]
    z_o = np.empty((n, cfg.d), dtype=np.float32)
    z_p = np.empty((n, cfg.d), dtype=np.float32)
    for i in range(0, n, chunk):
        a, b = encode(params, cfg, images[i:i + chunk])
        z_o[i:i + chunk] = a.data
        z_p[i:i + chunk] = b.data
    return z_o, z_p


def select_holdout(ds: Dataset, max_queries: int, seed: int) -> np.ndarray:
    """A deterministic, seed-driven sample of holdout indices, sorted."""
    hold = ds.holdout_indices
    if len(hold) <= max_queries:
        return hold
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(hold, size=max_queries, replace=False))


def conditioned_errors(params, cfg: ModelConfig, ds: Dataset,
                       rotations: so3.RotationSet, indices: np.ndarray,
                       max_n: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-query symmetry-aware retrieval errors in conditioned mode.

    Every query conditions the codebook on its own live shape code, mirroring
    the unknown-object test setting; rotation features are shared across the
    whole batch of queries.
    """
    indices = np.asarray(indices)
    build = conditioned_code_fn(params, cfg, rotations, max_n)
    z_o, z_p = encode_dataset(params, cfg, ds.rgb[indices])
    groups = {k: ds.symmetry(k) for k in np.unique(ds.object_idx[indices])}
    errors = np.empty(len(indices))
    for row, i in enumerate(indices):
        cb = PoseCodebook(codes=build(z_o[row]), rotations=rotations,
                          mode="conditioned")
        est = retrieve_rotation(z_p[row], cb)
        gt = ds.rotations[ds.rotation_idx[i]]
        errors[row] = so3.symmetry_aware_error(
            est.rotation, gt, groups[int(ds.object_idx[i])])
    return errors, ds.object_idx[indices].copy()


def rendered_errors(params, cfg: ModelConfig, ds: Dataset,
                    codebook: PoseCodebook, object_index: int,
                    indices: np.ndarray) -> np.ndarray:
    """Symmetry-aware retrieval errors of one object against a rendered codebook."""
    indices = np.asarray(indices)
    if not np.all(ds.object_idx[indices] == object_index):
        raise ConfigError("rendered-mode queries must all belong to the codebook object")
    group = ds.symmetry(object_index)
    _, z_p = encode_dataset(params, cfg, ds.rgb[indices])
    errors = np.empty(len(indices))
    for row, i in enumerate(indices):
        est = retrieve_rotation(z_p[row], codebook)
        errors[row] = so3.symmetry_aware_error(
            est.rotation, ds.rotations[ds.rotation_idx[i]], group)
    return errors


def shape_space_metrics(params, cfg: ModelConfig, ds: Dataset) -> ClusterReport:
    """Cluster quality of shape codes: train centroids vs holdout assignment."""
    train_idx, hold_idx = ds.train_indices, ds.holdout_indices
    z_train, _ = encode_dataset(params, cfg, ds.rgb[train_idx])
    z_hold, _ = encode_dataset(params, cfg, ds.rgb[hold_idx])
    return shape_cluster_report(z_train, ds.object_idx[train_idx],
                                z_hold, ds.object_idx[hold_idx])


# -- report assembly -----------------------------------------------------------------

@dataclass
class EvalReport:
    config: dict
    per_object: dict
    aggregate: dict
    warnings: list = field(default_factory=list)
    generated_at: str = ""

    def __post_init__(self):
        if not self.generated_at:
            self.generated_at = datetime.datetime.now(
                datetime.timezone.utc).isoformat()

    def to_json(self) -> dict:
        return {"config": self.config, "per_object": self.per_object,
                "aggregate": self.aggregate, "warnings": self.warnings,
                "generated_at": self.generated_at}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1, sort_keys=True))

    def save_csv(self, path: str | Path) -> None:
        cols = sorted(next(iter(self.per_object.values()))["ap"],
                      key=float) if self.per_object else []
        lines = ["object,n,median_err_deg," + ",".join(f"ap{c}" for c in cols)]
        for name, row in self.per_object.items():
            ap = ",".join(f"{row['ap'][c]:.4f}" for c in cols)
            lines.append(f"{name},{row['n']},{row['median_err_deg']:.4f},{ap}")
        agg = self.aggregate
        ap = ",".join(f"{agg['ap'][c]:.4f}" for c in cols)
        lines.append(f"macro,{agg['n']},{agg['median_err_deg']:.4f},{ap}")
        Path(path).write_text("\n".join(lines) + "\n")


def build_report(errors: np.ndarray, object_ids: np.ndarray,
                 object_names: list, config: dict,
                 thresholds_deg=DEFAULT_AP_THRESHOLDS_DEG,
                 extra_aggregate: dict | None = None) -> EvalReport:
    """Assemble per-object and macro AP/median tables from raw errors."""
    errors = np.asarray(errors, dtype=np.float64)
    object_ids = np.asarray(object_ids)
    thresholds = np.radians(np.asarray(thresholds_deg, dtype=np.float64))
    per, macro = angular_ap_by_object(errors, object_ids,
                                      len(object_names), thresholds)
    warnings = []
    per_object = {}
    for k, name in enumerate(object_names):
        sel = errors[object_ids == k]
        if sel.size == 0:
            warnings.append(f"no holdout samples for object {name}")
        per_object[name] = {
            "n": int(sel.size),
            "median_err_deg": float(np.degrees(np.median(sel))) if sel.size else float("nan"),
            "ap": {f"{t:g}": float(per[k, j]) for j, t in enumerate(thresholds_deg)},
        }
    aggregate = {
        "n": int(errors.size),
        "median_err_deg": float(np.degrees(np.median(errors))) if errors.size else float("nan"),
        "ap": {f"{t:g}": float(macro[j]) for j, t in enumerate(thresholds_deg)},
    }
    aggregate.update(extra_aggregate or {})
    return EvalReport(config=config, per_object=per_object,
                      aggregate=aggregate, warnings=warnings)
