"""Deterministic training loop.

Each iteration samples a batch of (object, rotation) renders, augments the
inputs, and optimizes three terms: reconstruction of the canonical rgb+depth
render from the pose half of the code, a contrastive loss tying the shape
half to a per-object moving-average codebook, and a cosine alignment between
the encoder's pose code and the code predicted from the ground-truth rotation
by the conditioner. The moving-average codebook is updated outside the tape,
sequentially in batch order, after the optimizer step.

Everything is seeded: rerunning the same config on the same dataset yields
bit-identical weights, and a saved state resumes bit-identically (parameters,
moments, codebook, and the RNG stream are all checkpointed).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import hsh
from . import model as M
from . import synthscene as ss
from . import tensor as T
from .errors import ConfigError, TrainingError
from .fta import load_fta, save_fta
from .tensor import AdamState, Tensor

STATE_FORMAT = "poselatent-train/1"
LOG_HEADER = "iter,recon,shape,pose,total"


@dataclass
class TrainConfig:
    """Desk-scale defaults; larger corpora usually want a slower codebook
    decay (0.9999) and more iterations."""
    dataset_dir: str = ""
    out_dir: str = ""
    d: int = 64
    variant: str = "bilinear"
    hsh_max_n: int = 6
    hsh_dim: int = 128
    batch_size: int = 32
    iterations: int = 3000
    lr: float = 0.0002
    # the conditioner chases a target that the reconstruction losses never
    # touch, so its useful step budget is lr * iterations; short desk runs
    # give it a head start without destabilizing the encoder
    cond_lr_scale: float = 1.0
    seed: int = 0
    tau: float = 0.07
    w_shape: float = 0.004
    w_pose: float = 0.002
    use_shape_space: bool = True
    ema_decay: float = 0.999
    log_every: int = 50
    checkpoint_every: int = 500

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown training config fields: {sorted(extra)}")
        return cls(**doc)


# -- losses ---------------------------------------------------------------------

def reconstruction_loss(rgb_pred: Tensor, depth_pred: Tensor,
                        rgb_target: Tensor, depth_target: Tensor) -> Tensor:
    """MSE over rgb plus MSE over depth (depth in canonical-distance units)."""
    return T.add(T.mse(rgb_pred, rgb_target), T.mse(depth_pred, depth_target))


def shape_space_loss(z_o: Tensor, codebook: np.ndarray, labels: np.ndarray,
                     tau: float) -> Tensor:
    """Mean cross-entropy of cosine/tau scores against the object codebook.

    The codebook enters as a constant (it is trained by moving average, not
    by gradient); rows are normalized here, zero rows stay zero.
    """
    logits = M.shape_logits(z_o, M.unit_rows_safe(codebook), tau)
    return T.mean_all(T.cross_entropy_rows(logits, labels))


def pose_alignment_loss(z_cond: Tensor, z_p: Tensor) -> Tensor:
    """Negative mean cosine between conditioned and encoded pose codes."""
    return T.scale(T.mean_all(T.cosine_rows(z_cond, z_p)), -1.0)


def total_loss(recon: Tensor, shape: Tensor | None, pose: Tensor,
               w_shape: float, w_pose: float) -> Tensor:
    out = T.add(recon, T.scale(pose, w_pose))
    if shape is not None:
        out = T.add(out, T.scale(shape, w_shape))
    return out


def ema_update(codebook: np.ndarray, z: np.ndarray, labels: np.ndarray,
               decay: float) -> None:
    """codebook[l] <- decay * codebook[l] + (1-decay) * z, one sample at a
    time in batch order (later duplicates see the earlier update)."""
    one_minus = np.asarray(1.0 - decay, dtype=codebook.dtype)
    d = np.asarray(decay, dtype=codebook.dtype)
    for i, l in enumerate(labels):
        codebook[l] = d * codebook[l] + one_minus * z[i].astype(codebook.dtype)


def hsh_features(rotations: np.ndarray, max_n: int, dim: int) -> np.ndarray:
    """Rotation feature table for the whole reference set, float32 (R, dim)."""
    return hsh.encode_rotations(rotations, max_n=max_n, dim=dim).astype(np.float32)


# -- state ----------------------------------------------------------------------

@dataclass
class TrainState:
    cfg: TrainConfig
    model_cfg: M.ModelConfig
    objects: list
    params: dict
    codebook: np.ndarray
    adam: AdamState
    rng: np.random.Generator
    iteration: int = 0
    logs: list = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        """FTA with params, codebook, and Adam moments + a JSON sidecar
        carrying everything else. Round-trips bit-exactly."""
        path = Path(path)
        tensors = {name: t.data for name, t in self.params.items()}
        tensors["shape_codebook"] = self.codebook
        for name in self.adam.m:
            tensors[f"adam.m.{name}"] = self.adam.m[name]
            tensors[f"adam.v.{name}"] = self.adam.v[name]
        save_fta(path, tensors)
        sidecar = {
            "format": STATE_FORMAT,
            "iteration": self.iteration,
            "cfg": self.cfg.to_json(),
            "model_cfg": self.model_cfg.to_json(),
            "objects": self.objects,
            "adam": {"lr": self.adam.lr, "beta1": self.adam.beta1,
                     "beta2": self.adam.beta2, "eps": self.adam.eps,
                     "t": self.adam.t, "lr_scale": self.adam.lr_scale},
            "rng_state": self.rng.bit_generator.state,
            "param_names": list(self.params.keys()),
        }
        path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TrainState":
        path = Path(path)
        doc = json.loads(path.with_suffix(".json").read_text())
        if doc.get("format") != STATE_FORMAT:
            raise ConfigError(f"unsupported training state format {doc.get('format')!r}")
        tensors = load_fta(path)
        params = {name: Tensor(tensors[name], requires_grad=True)
                  for name in doc["param_names"]}
        adam = AdamState(lr=doc["adam"]["lr"], beta1=doc["adam"]["beta1"],
                         beta2=doc["adam"]["beta2"], eps=doc["adam"]["eps"],
                         t=doc["adam"]["t"],
                         lr_scale=doc["adam"].get("lr_scale", {}))
        for name in doc["param_names"]:
            if f"adam.m.{name}" in tensors:
                adam.m[name] = tensors[f"adam.m.{name}"]
                adam.v[name] = tensors[f"adam.v.{name}"]
        rng = np.random.default_rng()
        rng.bit_generator.state = doc["rng_state"]
        return cls(cfg=TrainConfig.from_json(doc["cfg"]),
                   model_cfg=M.ModelConfig.from_json(doc["model_cfg"]),
                   objects=doc["objects"], params=params,
                   codebook=tensors["shape_codebook"], adam=adam, rng=rng,
                   iteration=doc["iteration"])


def init_state(cfg: TrainConfig, dataset: ss.Dataset) -> TrainState:
    image_size = int(dataset.rgb.shape[-1])
    model_cfg = M.ModelConfig(d=cfg.d, image_size=image_size, hsh_dim=cfg.hsh_dim,
                              n_objects=len(dataset.objects), variant=cfg.variant,
                              tau=cfg.tau)
    params = M.init_params(model_cfg, seed=cfg.seed)
    # tiny random directions rather than zeros: the conditioner consumes a
    # normalized codebook row at iteration 1, before any average exists, and
    # a zero row would make its output identically zero. The moving average
    # forgets this init within a few hundred updates.
    codebook = (np.random.default_rng(cfg.seed + 2)
                .standard_normal((len(dataset.objects), cfg.d))
                .astype(np.float32) * 1e-3)
    scales = {"cond.": cfg.cond_lr_scale} if cfg.cond_lr_scale != 1.0 else {}
    return TrainState(cfg=cfg, model_cfg=model_cfg,
                      objects=[o["name"] for o in dataset.objects],
                      params=params, codebook=codebook,
                      adam=AdamState(lr=cfg.lr, lr_scale=scales),
                      rng=np.random.default_rng(cfg.seed + 1))


# -- loop -----------------------------------------------------------------------

def train(cfg: TrainConfig, dataset: ss.Dataset | None = None,
          state: TrainState | None = None) -> TrainState:
    """Run (or continue) training up to cfg.iterations. Returns the state;
    per-log-point loss rows accumulate in state.logs."""
    ds = dataset if dataset is not None else ss.load_dataset(cfg.dataset_dir)
    if state is None:
        state = init_state(cfg, ds)
    else:
        state.cfg = cfg      # a resumed run may extend iterations etc.
    feats = hsh_features(ds.rotations, cfg.hsh_max_n, cfg.hsh_dim)
    train_idx = ds.train_indices
    if len(train_idx) == 0:
        raise ConfigError("dataset has no training samples")
    inv_zref = np.float32(1.0 / ds.camera.z_ref)
    out = Path(cfg.out_dir) if cfg.out_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "training_log.csv"
        if state.iteration == 0 or not log_path.exists():
            log_path.write_text(LOG_HEADER + "\n")

    params, mcfg = state.params, state.model_cfg

    for it in range(state.iteration + 1, cfg.iterations + 1):
        idx = train_idx[state.rng.integers(0, len(train_idx), size=cfg.batch_size)]
        rgb_t = ds.rgb[idx]
        depth_t = (ds.depth[idx] * inv_zref)[:, None, :, :]
        labels = ds.object_idx[idx]
        inputs = np.stack([ss.augment(ds.rgb[j], rng=state.rng,
                                      bg_mask=ds.depth[j] == 0) for j in idx])

        z_o, z_p = M.encode(params, mcfg, inputs)
        rgb_p, depth_p = M.decode(params, mcfg, z_p, z_o)
        recon = reconstruction_loss(rgb_p, depth_p, Tensor(rgb_t), Tensor(depth_t))

        if cfg.use_shape_space:
            shape = shape_space_loss(z_o, state.codebook, labels, cfg.tau)
            cond_in = M.unit_rows_safe(state.codebook[labels])
        else:
            shape = None
            cond_in = M.unit_rows_safe(z_o.data)
        z_cond = M.condition_pose(params, mcfg, cond_in, feats[ds.rotation_idx[idx]])
        pose = pose_alignment_loss(z_cond, z_p)
        total = total_loss(recon, shape, pose, cfg.w_shape, cfg.w_pose)

        vals = {"iter": it, "recon": recon.item(),
                "shape": shape.item() if shape is not None else 0.0,
                "pose": pose.item(), "total": total.item()}
        if not all(math.isfinite(v) for v in vals.values()):
            raise TrainingError(
                f"non-finite loss at iteration {it}: recon={vals['recon']} "
                f"shape={vals['shape']} pose={vals['pose']} total={vals['total']}")

        for t in params.values():
            t.grad = None
        total.backward()
        T.adam_step(params, state.adam)
        ema_update(state.codebook, z_o.data, labels, cfg.ema_decay)
        state.iteration = it

        if it == 1 or it % cfg.log_every == 0 or it == cfg.iterations:
            state.logs.append(vals)
            if out is not None:
                with open(log_path, "a") as f:
                    f.write(f"{it},{vals['recon']:.6f},{vals['shape']:.6f},"
                            f"{vals['pose']:.6f},{vals['total']:.6f}\n")
        if out is not None and (it % cfg.checkpoint_every == 0
                                or it == cfg.iterations):
            state.save(out / f"state_{it:06d}.fta")
            M.save_weights(out / "weights.fta", params, state.codebook, mcfg,
                           state.objects)
    return state
