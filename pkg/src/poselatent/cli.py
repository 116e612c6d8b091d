"""Command-line surface: dataset generation, training, codebook building,
pose estimation, evaluation, and a self-check of the numerical core.

Exit codes: 0 on success, 1 on a validation problem (bad flag or config
field, missing file; the message names the offender), 2 on a runtime
failure. Config files are validated against the versioned JSON schemas
shipped with the package before any work starts, and every artifact embeds
format metadata so the next command can check compatibility up front.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import evaluation as E
from . import hsh
from . import inference as I
from . import model as M
from . import so3
from . import synthscene as ss
from . import tensor as T
from . import training as tr
from .errors import ConfigError, DimensionError, PoseLatentError
from .fta import load_fta

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

SCHEMA_DIR = Path(__file__).resolve().parent / "schemas"
DEFAULT_COLOR = (0.7, 0.7, 0.7)
ABLATION_FORMAT = "poselatent-ablation/1"


class _ValidationFailure(Exception):
    """Raised by command bodies for problems the user can fix; exits 1."""


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; status 2 is reserved
    for runtime failures here, so usage problems are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_VALIDATION)


# -- shared plumbing --------------------------------------------------------------


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _require_path(value: str, flag: str) -> Path:
    p = Path(value)
    if not p.exists():
        raise _ValidationFailure(f"{flag}: missing file {p}")
    return p


def _read_json(value: str, flag: str) -> dict:
    p = _require_path(value, flag)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise _ValidationFailure(f"{flag}: {p} is not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise _ValidationFailure(f"{flag}: {p} must hold a JSON object")
    return doc


def _validate_schema(doc: dict, schema_name: str, flag: str) -> None:
    schema = json.loads((SCHEMA_DIR / schema_name).read_text())
    validator = jsonschema.Draft202012Validator(schema)
    err = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if err is not None:
        where = err.json_path if err.json_path != "$" else "$ (top level)"
        raise _ValidationFailure(f"{flag} field {where}: {err.message}")


def _ckpt_extra(path: Path) -> dict:
    """The optional free-form metadata block of a checkpoint sidecar."""
    doc = json.loads(path.with_suffix(".json").read_text())
    meta = doc.get("meta", {})
    return meta if isinstance(meta, dict) else {}


def _object_specs(entries) -> list[ss.ObjectSpec]:
    if entries == "desk":
        return ss.desk_objects()
    specs = []
    for entry in entries:
        doc = dict(entry)
        doc.setdefault("base_color", list(DEFAULT_COLOR))
        specs.append(ss.ObjectSpec.from_json(doc))
    return specs


def _reference_grid(level: int, n_inplane: int) -> so3.RotationSet:
    views = so3.sample_equidistant_views(level)
    return so3.build_reference_rotations(views, n_inplane)


def _rotation_source(args) -> so3.RotationSet:
    if args.rotations is not None:
        if args.level is not None or args.inplane is not None:
            raise _ValidationFailure("--rotations: cannot combine with --level/--inplane")
        return so3.RotationSet.load(_require_path(args.rotations, "--rotations"))
    if args.level is None or args.inplane is None:
        raise _ValidationFailure(
            "--level/--inplane: both required when --rotations is not given")
    return _reference_grid(args.level, args.inplane)


def _resolve_object(requested: str | None, names: list[str],
                    flag: str = "--object") -> int:
    if requested is None:
        raise _ValidationFailure(f"{flag}: required for this mode")
    if requested in names:
        return names.index(requested)
    try:
        idx = int(requested)
    except ValueError:
        raise _ValidationFailure(
            f"{flag}: unknown object {requested!r}; known: {names}") from None
    if not 0 <= idx < len(names):
        raise _ValidationFailure(f"{flag}: index {idx} outside [0, {len(names) - 1}]")
    return idx


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


# -- gen-data ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    doc = _read_json(args.config, "--config")
    _validate_schema(doc, "dataset_config.schema.json", "--config")
    specs = _object_specs(doc["objects"])
    camera = ss.Camera.from_json(doc["camera"]) if "camera" in doc else ss.desk_camera()
    rots = _reference_grid(doc["views_level"], doc["n_inplane"])
    manifest = ss.generate_dataset(
        specs, rots, camera, seed=doc["seed"], out_dir=args.out,
        holdout_fraction=doc.get("holdout_fraction", 0.1),
        shard_size=doc.get("shard_size", 512))
    _emit({"command": "gen-data", "out": str(args.out),
           "objects": [s.name for s in specs], "rotations": len(rots),
           "samples": len(manifest["samples"])})
    return EXIT_OK


# -- train ------------------------------------------------------------------------


def _train_once(doc: dict, data_dir: str, out_path: Path,
                variant: str | None) -> tuple[tr.TrainState, ss.Dataset, float]:
    doc = dict(doc)
    doc.pop("version", None)
    if variant is not None:
        doc["variant"] = variant
    if doc.get("variant") == "no_shape_space":
        # pseudo-variant: the bilinear conditioner fed raw encoder shape
        # codes instead of codebook rows, with the contrastive term off
        doc["variant"] = "bilinear"
        doc["use_shape_space"] = False
    run_dir = out_path.with_name(out_path.stem + "_run")
    doc["dataset_dir"] = str(data_dir)
    doc["out_dir"] = str(run_dir)
    cfg = tr.TrainConfig.from_json(doc)
    ds = ss.load_dataset(data_dir)
    t0 = time.perf_counter()
    state = tr.train(cfg, ds)
    elapsed = time.perf_counter() - t0
    meta = {"hsh_max_n": cfg.hsh_max_n,
            "camera": ds.camera.to_json(),
            "object_specs": ds.objects,
            "dataset_seed": ds.manifest.get("seed"),
            "train_seed": cfg.seed,
            "use_shape_space": cfg.use_shape_space}
    M.save_weights(out_path, state.params, state.codebook, state.model_cfg,
                   state.objects, meta=meta)
    return state, ds, elapsed


def cmd_train(args) -> int:
    doc = _read_json(args.config, "--config")
    _validate_schema(doc, "train_config.schema.json", "--config")
    _require_path(args.data, "--data")
    out_path = Path(args.out)
    state, _, elapsed = _train_once(doc, args.data, out_path, args.variant)
    final = {k: float(v) for k, v in (state.logs[-1] if state.logs else {}).items()}
    _emit({"command": "train", "out": str(out_path),
           "variant": state.model_cfg.variant,
           "use_shape_space": state.cfg.use_shape_space,
           "iterations": state.iteration, "seconds": round(elapsed, 1),
           "final_losses": final})
    return EXIT_OK


# -- build-codebook ---------------------------------------------------------------


def cmd_build_codebook(args) -> int:
    ckpt = _require_path(args.ckpt, "--ckpt")
    params, shape_cb, mcfg, objects = M.load_weights(ckpt)
    extra = _ckpt_extra(ckpt)
    rots = _rotation_source(args)
    max_n = int(extra.get("hsh_max_n", 6))
    obj_idx = _resolve_object(args.object, list(objects))
    name = objects[obj_idx]
    if args.mode == "conditioned":
        cb = I.build_codebook_conditioned(
            params, mcfg, shape_cb[obj_idx], rots, max_n=max_n,
            meta={"object": name, "shape_code": "codebook-row"})
    else:
        spec_docs = extra.get("object_specs")
        if spec_docs is None:
            raise _ValidationFailure(
                "--ckpt: checkpoint carries no object geometry; "
                "rendered mode needs one saved by the train command")
        mesh, _ = ss.make_primitive(ss.ObjectSpec.from_json(spec_docs[obj_idx]))
        camera = (ss.Camera.from_json(extra["camera"]) if "camera" in extra
                  else ss.desk_camera())
        cb = I.build_codebook_rendered(params, mcfg, mesh, rots, camera,
                                       meta={"object": name})
    cb.save(args.out)
    _emit({"command": "build-codebook", "out": str(args.out), "mode": args.mode,
           "object": name, "rows": int(cb.codes.shape[0]),
           "dim": int(cb.codes.shape[1])})
    return EXIT_OK


# -- estimate ---------------------------------------------------------------------


def _foreground_mask(rgb: np.ndarray) -> np.ndarray:
    bg = np.asarray(ss.DEFAULT_BG, dtype=np.float64).reshape(3, 1, 1)
    return np.any(np.abs(rgb - bg) > 0.02, axis=0)


def _predicted_depth(params, mcfg, extra: dict, cb: I.PoseCodebook,
                     est: I.PoseEstimate, z_o: np.ndarray, z_p: np.ndarray,
                     camera: ss.Camera) -> np.ndarray:
    """Depth map of the estimate at canonical distance, mm, 0 = background.

    Rendered codebooks built from a geometry-carrying checkpoint re-render
    the retrieved rotation exactly; otherwise the decoder's depth head
    stands in, thresholded to drop its soft background.
    """
    specs = extra.get("object_specs")
    target = (cb.meta or {}).get("object")
    if cb.mode == "rendered" and specs is not None and target is not None:
        names = [s["name"] for s in specs]
        if target in names:
            mesh, _ = ss.make_primitive(ss.ObjectSpec.from_json(specs[names.index(target)]))
            dist = (float(cb.render_meta[est.index, 1])
                    if cb.render_meta is not None else camera.z_ref)
            _, depth = ss.rasterize(mesh, est.rotation,
                                    np.array([0.0, 0.0, dist]), camera)
            return np.asarray(depth, dtype=np.float64)
    _, dep = M.decode(params, mcfg, T.Tensor(z_p[None]), T.Tensor(z_o[None]))
    dep_mm = np.asarray(dep.data[0], dtype=np.float64) * camera.z_ref
    return np.where(dep_mm > 0.5 * camera.z_ref, dep_mm, 0.0)


def cmd_estimate(args) -> int:
    ckpt = _require_path(args.ckpt, "--ckpt")
    params, _, mcfg, _ = M.load_weights(ckpt)
    extra = _ckpt_extra(ckpt)
    cb = I.PoseCodebook.load(_require_path(args.codebook, "--codebook"))
    if int(cb.codes.shape[1]) != int(mcfg.d):
        raise _ValidationFailure(
            f"--codebook: codebook dim {int(cb.codes.shape[1])} does not match "
            f"checkpoint dim {int(mcfg.d)}")
    sample_path = _require_path(args.input, "--input")
    tensors = load_fta(sample_path)
    if "rgb" not in tensors:
        raise _ValidationFailure("--input: sample archive lacks an 'rgb' tensor")
    rgb = np.asarray(tensors["rgb"], dtype=np.float32)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise _ValidationFailure(f"--input: rgb must be (3, H, W), got {tuple(rgb.shape)}")
    if rgb.shape[1] != mcfg.image_size or rgb.shape[2] != mcfg.image_size:
        raise _ValidationFailure(
            f"--input: rgb is {rgb.shape[1]}x{rgb.shape[2]}, checkpoint expects "
            f"{mcfg.image_size}x{mcfg.image_size}")

    side = {}
    side_path = sample_path.with_suffix(sample_path.suffix + ".json")
    if side_path.exists():
        side = json.loads(side_path.read_text())
        _validate_schema(side, "sample_meta.schema.json", "--input sidecar")
    camera = ss.Camera.from_json(side["camera"]) if "camera" in side else None
    depth_obs = (np.asarray(tensors["depth"], dtype=np.float64)
                 if "depth" in tensors else None)

    z_o, z_p = E.encode_dataset(params, mcfg, rgb[None])
    est = I.retrieve_rotation(z_p[0], cb, k=args.topk)

    if args.depth:
        if depth_obs is None:
            raise _ValidationFailure("--depth: sample archive has no 'depth' tensor")
        if camera is None:
            raise _ValidationFailure("--depth: sample sidecar must provide a camera")
        pred = _predicted_depth(params, mcfg, extra, cb, est, z_o[0], z_p[0], camera)
        align = I.estimate_translation_depth(pred, depth_obs, camera)
        est.translation = align.translation
        est.scale = align.scale
    elif cb.render_meta is not None and camera is not None:
        if "bbox" in side:
            center, diag = (side["bbox"][0], side["bbox"][1]), float(side["bbox"][2])
        else:
            mask = depth_obs > 0 if depth_obs is not None else _foreground_mask(rgb)
            center, diag = I.silhouette_bbox(mask)
        est.translation = I.estimate_translation_pinhole(
            center, diag, cb.render_meta[est.index], camera)

    doc = est.to_json()
    doc["generated_at"] = _utc_now()
    Path(args.out).write_text(json.dumps(doc, indent=1, sort_keys=True))
    _emit({"command": "estimate", "out": str(args.out), "index": est.index,
           "score": round(float(est.score), 6),
           "has_translation": est.translation is not None})
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    ckpt = _require_path(args.ckpt, "--ckpt")
    params, _, mcfg, objects = M.load_weights(ckpt)
    extra = _ckpt_extra(ckpt)
    ds = ss.load_dataset(_require_path(args.data, "--data"))
    names = [o["name"] for o in ds.objects]
    if names != list(objects):
        raise _ValidationFailure(
            f"--data: dataset objects {names} do not match checkpoint objects "
            f"{list(objects)}")
    max_n = int(extra.get("hsh_max_n", 6))
    indices = E.select_holdout(ds, args.max_queries, args.seed)
    rots = _reference_grid(args.level, args.inplane)

    if args.codebook_mode == "conditioned":
        errors, obj_ids = E.conditioned_errors(params, mcfg, ds, rots, indices,
                                               max_n=max_n)
    else:
        obj_idx = _resolve_object(args.object, names)
        mesh, _ = ss.make_primitive(ss.ObjectSpec.from_json(ds.objects[obj_idx]))
        cb = I.build_codebook_rendered(params, mcfg, mesh, rots, ds.camera,
                                       meta={"object": names[obj_idx]})
        sel = indices[ds.object_idx[indices] == obj_idx]
        if len(sel) == 0:
            raise _ValidationFailure(
                f"--object: no holdout samples for {names[obj_idx]!r}")
        errors = E.rendered_errors(params, mcfg, ds, cb, obj_idx, sel)
        obj_ids = np.full(len(sel), obj_idx)

    shape = E.shape_space_metrics(params, mcfg, ds)
    report = E.build_report(
        errors, obj_ids, names,
        config={"codebook_mode": args.codebook_mode, "level": args.level,
                "inplane": args.inplane, "max_queries": args.max_queries,
                "seed": args.seed, "hsh_max_n": max_n,
                "ckpt": str(args.ckpt), "data": str(args.data),
                "object": args.object},
        extra_aggregate={"shape_accuracy": float(shape.accuracy)})
    report.save(args.report)
    report.save_csv(Path(args.report).with_suffix(".csv"))
    _emit({"command": "evaluate", "report": str(args.report), "n": int(len(errors)),
           "median_err_deg": report.aggregate["median_err_deg"],
           "ap30": report.aggregate["ap"]["30"],
           "shape_accuracy": float(shape.accuracy)})
    return EXIT_OK


# -- inspect ----------------------------------------------------------------------


def cmd_inspect(args) -> int:
    cb = I.PoseCodebook.load(_require_path(args.codebook, "--codebook"))
    proj, evals = E.pca_project(np.asarray(cb.codes, dtype=np.float64), out_dims=3)
    E.write_pca_csv(args.pca, proj, cb.rotations.quats)
    total = float(evals.sum())
    explained = [round(float(v) / total, 6) if total > 0 else 0.0 for v in evals[:3]]
    _emit({"command": "inspect", "out": str(args.pca), "rows": int(len(proj)),
           "mode": cb.mode, "explained_variance": explained})
    return EXIT_OK


# -- ablate -----------------------------------------------------------------------


def cmd_ablate(args) -> int:
    doc = _read_json(args.config, "--config")
    _validate_schema(doc, "train_config.schema.json", "--config")
    _require_path(args.data, "--data")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    allowed = {"bilinear", "mlp_concat", "mlp_nocond", "no_shape_space"}
    bad = [v for v in variants if v not in allowed]
    if bad or not variants:
        raise _ValidationFailure(f"--variants: unknown {bad or ['(empty)']}; "
                                 f"choose from {sorted(allowed)}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rots = _reference_grid(args.level, args.inplane)

    results = {}
    for variant in variants:
        ckpt_path = out_dir / f"{variant}.fta"
        state, ds, elapsed = _train_once(doc, args.data, ckpt_path, variant)
        indices = E.select_holdout(ds, args.max_queries, args.eval_seed)
        errors, obj_ids = E.conditioned_errors(
            state.params, state.model_cfg, ds, rots, indices,
            max_n=state.cfg.hsh_max_n)
        names = [o["name"] for o in ds.objects]
        report = E.build_report(errors, obj_ids, names,
                                config={"variant": variant})
        shape = E.shape_space_metrics(state.params, state.model_cfg, ds)
        results[variant] = {
            "ckpt": str(ckpt_path),
            "train_seconds": round(elapsed, 1),
            "median_err_deg": report.aggregate["median_err_deg"],
            "ap30_points": round(report.aggregate["ap"]["30"] * 100.0, 3),
            "shape_accuracy": float(shape.accuracy),
        }
        print(f"{variant}: ap30 {results[variant]['ap30_points']:.1f} points, "
              f"median {results[variant]['median_err_deg']:.2f} deg, "
              f"shape acc {results[variant]['shape_accuracy']:.3f}")

    gaps = {}
    if "bilinear" in results and "mlp_nocond" in results:
        gaps["conditioning_ap30_points"] = round(
            results["bilinear"]["ap30_points"] - results["mlp_nocond"]["ap30_points"], 3)
    if "bilinear" in results and "no_shape_space" in results:
        gaps["shape_space_ap30_points"] = round(
            results["bilinear"]["ap30_points"] - results["no_shape_space"]["ap30_points"], 3)
    for key, val in gaps.items():
        print(f"{key}: {val:+.1f}")

    summary = {"format": ABLATION_FORMAT,
               "config": {"data": str(args.data), "level": args.level,
                          "inplane": args.inplane, "max_queries": args.max_queries,
                          "eval_seed": args.eval_seed, "variants": variants},
               "variants": results, "gaps": gaps, "generated_at": _utc_now()}
    (out_dir / "ablation.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return EXIT_OK


# -- selftest ---------------------------------------------------------------------


def _selftest_gradients() -> str:
    mcfg = M.ModelConfig(d=4, image_size=32, hsh_dim=8, n_objects=2)
    params = {k: T.Tensor(t.data.astype(np.float64), requires_grad=True)
              for k, t in M.init_params(mcfg, seed=0).items()}
    rng = np.random.default_rng(0)
    imgs = rng.uniform(0.0, 1.0, (2, 3, 32, 32))
    rgb_t = T.Tensor(rng.uniform(0.0, 1.0, (2, 3, 32, 32)))
    depth_t = T.Tensor(rng.uniform(0.8, 1.1, (2, 1, 32, 32)))
    labels = np.array([0, 1])
    codebook = rng.standard_normal((2, 4))
    quats = rng.standard_normal((2, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    feats = hsh.encode_rotations(quats, max_n=2, dim=8)

    def loss(_inputs):
        z_o, z_p = M.encode(params, mcfg, imgs)
        rgb_p, dep_p = M.decode(params, mcfg, z_p, z_o)
        recon = tr.reconstruction_loss(rgb_p, dep_p, rgb_t, depth_t)
        shape = tr.shape_space_loss(z_o, codebook, labels, 0.07)
        z_c = M.condition_pose(params, mcfg, M.unit_rows_safe(codebook[labels]),
                               feats)
        pose = tr.pose_alignment_loss(z_c, z_p)
        return tr.total_loss(recon, shape, pose, 0.004, 0.002)

    probe = ["enc.conv1.w", "enc.fc.w", "dec.fc.w", "dec.block1.adain.w",
             "dec.rgb.w", "dec.depth.w", "cond.w3", "cond.fc_h.w",
             "cond.ffn1.w"]
    worst = T.grad_check(loss, [params[k] for k in probe], eps=1e-6,
                         max_entries=6, rng=np.random.default_rng(1))
    if worst >= 1e-3:
        raise RuntimeError(f"end-to-end gradient rel err {worst:.3e} >= 1e-3")
    return f"end-to-end 2-sample loss, max rel err {worst:.2e}"


def _selftest_hsh() -> str:
    dev = hsh.orthonormality_check(max_n=6, n_samples=200_000, seed=0)
    if dev >= 0.05:
        raise RuntimeError(f"Gram deviation {dev:.4f} >= 0.05 at 200k samples")
    const = float(hsh.encode_rotations(np.array([[1.0, 0.0, 0.0, 0.0]]),
                                       max_n=0, dim=1)[0, 0])
    expect = 1.0 / np.sqrt(2.0 * np.pi ** 2)
    if abs(const - expect) > 1e-6:
        raise RuntimeError(f"constant basis {const!r} != {expect!r}")
    return f"Gram deviation {dev:.4f} at 200k samples; constant basis ok"


def _selftest_retrieval() -> str:
    rng = np.random.default_rng(0)
    grid = _reference_grid(4, 36)
    if len(grid) != 92232:
        raise RuntimeError(f"reference grid has {len(grid)} rows, expected 92232")
    codes = rng.standard_normal((len(grid), 128))
    cb = I.PoseCodebook(codes=codes, rotations=grid, mode="conditioned", meta={})

    small = I.PoseCodebook(codes=codes[:2000],
                           rotations=so3.RotationSet(grid.quats[:2000]),
                           mode="conditioned", meta={})
    small_unit = small.unit_codes
    mismatches = 0
    for _ in range(100):
        q = rng.standard_normal(128)
        est = I.retrieve_rotation(q, small, k=1)
        qn = q / np.linalg.norm(q)
        best_i, best_s = 0, -np.inf
        for j in range(len(small_unit)):
            s = float(np.dot(small_unit[j], qn))
            if s > best_s:
                best_i, best_s = j, s
        if est.index != best_i:
            mismatches += 1
    if mismatches:
        raise RuntimeError(f"{mismatches}/100 oracle disagreements")

    I.retrieve_rotation(rng.standard_normal(128), cb, k=5)  # warm the cache
    worst_ms = 0.0
    for _ in range(20):
        q = rng.standard_normal(128)
        t0 = time.perf_counter()
        I.retrieve_rotation(q, cb, k=5)
        worst_ms = max(worst_ms, (time.perf_counter() - t0) * 1e3)
    if worst_ms >= 20.0:
        raise RuntimeError(f"single-query latency {worst_ms:.2f} ms >= 20 ms")
    return (f"oracle agreement 100/100 on 2000 rows; worst latency "
            f"{worst_ms:.2f} ms over 92232x128")


def cmd_selftest(args) -> int:
    sections = [("gradients", _selftest_gradients),
                ("hsh-orthonormality", _selftest_hsh),
                ("retrieval", _selftest_retrieval)]
    failures = 0
    for name, fn in sections:
        t0 = time.perf_counter()
        try:
            detail = fn()
        except Exception as exc:
            failures += 1
            sys.stderr.write(f"FAIL {name} ({time.perf_counter() - t0:.1f}s): {exc}\n")
        else:
            print(f"ok {name} ({time.perf_counter() - t0:.1f}s): {detail}")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poselatent",
                     description="shape/pose disentangling pipeline")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--config", required=True, help="dataset config JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the autoencoder")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path (.fta)")
    p.add_argument("--variant",
                   choices=["bilinear", "mlp_concat", "mlp_nocond", "no_shape_space"],
                   help="override the config's conditioner variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-codebook", help="precompute a pose codebook")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--mode", required=True, choices=["conditioned", "rendered"])
    p.add_argument("--object", help="object name or index from the checkpoint")
    p.add_argument("--level", type=int, help="icosphere subdivision level")
    p.add_argument("--inplane", type=int, help="in-plane rotations per view")
    p.add_argument("--rotations", help="explicit rotation set (.fta)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_codebook)

    p = sub.add_parser("estimate", help="estimate the pose of one sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--codebook", required=True)
    p.add_argument("--input", required=True, help="sample archive (.fta)")
    p.add_argument("--depth", action="store_true",
                   help="refine translation against the sample's depth map")
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--out", required=True, help="pose JSON path")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("evaluate", help="score holdout retrieval + shape space")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--codebook-mode", required=True, dest="codebook_mode",
                   choices=["conditioned", "rendered"])
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--object", help="target object for rendered mode")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--inplane", type=int, default=12)
    p.add_argument("--max-queries", type=int, default=500, dest="max_queries")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect", help="project a codebook to PCA coordinates")
    p.add_argument("--codebook", required=True)
    p.add_argument("--pca", required=True, help="output CSV path")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("ablate", help="train and score conditioner variants")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variants", default="bilinear,mlp_nocond,no_shape_space")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--inplane", type=int, default=12)
    p.add_argument("--max-queries", type=int, default=500, dest="max_queries")
    p.add_argument("--eval-seed", type=int, default=0, dest="eval_seed")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("selftest", help="check gradients, HSH, and retrieval")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if not exc.code else EXIT_VALIDATION
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"{parser.prog}: error: a command is required\n")
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except _ValidationFailure as exc:
        sys.stderr.write(f"{parser.prog}: error: {exc}\n")
        return EXIT_VALIDATION
    except (ConfigError, DimensionError) as exc:
        sys.stderr.write(f"{parser.prog}: error: {exc}\n")
        return EXIT_VALIDATION
    except FileNotFoundError as exc:
        sys.stderr.write(f"{parser.prog}: error: missing file "
                         f"{exc.filename or exc}\n")
        return EXIT_VALIDATION
    except PoseLatentError as exc:
        sys.stderr.write(f"{parser.prog}: error: {exc}\n")
        return EXIT_RUNTIME
    except Exception as exc:  # anything unplanned is a runtime failure
        sys.stderr.write(f"{parser.prog}: error: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
