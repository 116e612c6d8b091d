"""Autoencoder with separate shape and pose codes, plus the rotation
conditioning block used to turn a reference rotation into a pose code.

The encoder maps an image to a 2d-dim vector split into a shape half z_o and
a pose half z_p. The decoder reconstructs rgb and normalized depth from z_p,
with z_o injected through per-block AdaIN gains, so appearance and pose stay
in their own halves. The conditioner maps (shape code, rotation features) to
a pose code; its default form is a third-order contraction followed by a
small residual feed-forward, with two mlp ablations. The conditioning shape
input is always treated as a constant (no gradient flows into it).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .fta import load_fta, save_fta
from .tensor import Tensor

CHECKPOINT_FORMAT = "poselatent-ckpt/1"
VARIANTS = ("bilinear", "mlp_concat", "mlp_nocond")


@dataclass
class ModelConfig:
    d: int = 64
    image_size: int = 32
    hsh_dim: int = 128
    n_objects: int = 5
    variant: str = "bilinear"
    tau: float = 0.07
    enc_channels: tuple = (32, 64, 128, 256)
    dec_channels: tuple = (256, 128, 64, 32, 16)
    mlp_widths: tuple = (1024, 1024, 1024)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown conditioner variant {self.variant!r}, "
                              f"expected one of {VARIANTS}")
        if self.image_size % 16 != 0 or self.image_size < 16:
            raise ConfigError(f"image_size must be a positive multiple of 16, "
                              f"got {self.image_size}")

    @property
    def start_hw(self) -> int:
        return self.image_size // 16

    @property
    def flat_dim(self) -> int:
        return self.enc_channels[-1] * self.start_hw ** 2

    def to_json(self) -> dict:
        return {"d": self.d, "image_size": self.image_size, "hsh_dim": self.hsh_dim,
                "n_objects": self.n_objects, "variant": self.variant, "tau": self.tau,
                "enc_channels": list(self.enc_channels),
                "dec_channels": list(self.dec_channels),
                "mlp_widths": list(self.mlp_widths)}

    @classmethod
    def from_json(cls, doc: dict) -> "ModelConfig":
        return cls(d=int(doc["d"]), image_size=int(doc["image_size"]),
                   hsh_dim=int(doc["hsh_dim"]), n_objects=int(doc["n_objects"]),
                   variant=doc["variant"], tau=float(doc["tau"]),
                   enc_channels=tuple(doc["enc_channels"]),
                   dec_channels=tuple(doc["dec_channels"]),
                   mlp_widths=tuple(doc["mlp_widths"]))


def _param(rng, shape, std) -> Tensor:
    data = (rng.standard_normal(shape) * std).astype(np.float32)
    return Tensor(data, requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def init_params(cfg: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Fresh parameter dict; iteration order is fixed and part of the format."""
    rng = np.random.default_rng(seed)
    p: dict[str, Tensor] = {}

    cin = 3
    for i, cout in enumerate(cfg.enc_channels, start=1):
        p[f"enc.conv{i}.w"] = _param(rng, (cout, cin, 3, 3), np.sqrt(2.0 / (cin * 9)))
        p[f"enc.conv{i}.b"] = _zeros(cout)
        cin = cout
    p["enc.fc.w"] = _param(rng, (cfg.flat_dim, 2 * cfg.d), np.sqrt(1.0 / cfg.flat_dim))
    p["enc.fc.b"] = _zeros(2 * cfg.d)

    dc = cfg.dec_channels
    p["dec.fc.w"] = _param(rng, (cfg.d, dc[0] * cfg.start_hw ** 2), np.sqrt(2.0 / cfg.d))
    p["dec.fc.b"] = _zeros(dc[0] * cfg.start_hw ** 2)
    for i in range(4):
        cin, cout = dc[i], dc[i + 1]
        p[f"dec.block{i + 1}.conv.w"] = _param(rng, (cout, cin, 3, 3),
                                               np.sqrt(2.0 / (cin * 9)))
        p[f"dec.block{i + 1}.conv.b"] = _zeros(cout)
        p[f"dec.block{i + 1}.adain.w"] = _param(rng, (cfg.d, 2 * cout), 0.02)
        bias = np.concatenate([np.ones(cout), np.zeros(cout)]).astype(np.float32)
        p[f"dec.block{i + 1}.adain.b"] = Tensor(bias, requires_grad=True)
    p["dec.rgb.w"] = _param(rng, (3, dc[4], 3, 3), np.sqrt(1.0 / (dc[4] * 9)))
    p["dec.rgb.b"] = _zeros(3)
    p["dec.depth.w"] = _param(rng, (1, dc[4], 3, 3), np.sqrt(1.0 / (dc[4] * 9)))
    p["dec.depth.b"] = _zeros(1)

    if cfg.variant == "bilinear":
        p["cond.fc_c.w"] = _param(rng, (cfg.d, cfg.d), np.sqrt(1.0 / cfg.d))
        p["cond.fc_c.b"] = _zeros(cfg.d)
        p["cond.fc_h.w"] = _param(rng, (cfg.hsh_dim, cfg.d), np.sqrt(1.0 / cfg.hsh_dim))
        p["cond.fc_h.b"] = _zeros(cfg.d)
        p["cond.w3"] = _param(rng, (cfg.d, cfg.d, cfg.d), 1.0 / cfg.d)
        p["cond.ffn1.w"] = _param(rng, (cfg.d, 2 * cfg.d), np.sqrt(2.0 / cfg.d))
        p["cond.ffn1.b"] = _zeros(2 * cfg.d)
        p["cond.ffn2.w"] = _zeros((2 * cfg.d, cfg.d))   # residual starts as identity
        p["cond.ffn2.b"] = _zeros(cfg.d)
    else:
        first = cfg.hsh_dim + (cfg.d if cfg.variant == "mlp_concat" else 0)
        widths = [first, *cfg.mlp_widths, cfg.d]
        for i in range(len(widths) - 1):
            fan = widths[i]
            last = i == len(widths) - 2
            std = np.sqrt(1.0 / fan) if last else np.sqrt(2.0 / fan)
            p[f"cond.mlp{i + 1}.w"] = _param(rng, (widths[i], widths[i + 1]), std)
            p[f"cond.mlp{i + 1}.b"] = _zeros(widths[i + 1])
    return p


def n_parameters(params: dict[str, Tensor]) -> int:
    return sum(t.size for t in params.values())


def _as_tensor(x) -> Tensor:
    # Tensor() keeps float32/float64 and casts everything else to float32
    return x if isinstance(x, Tensor) else Tensor(x)


def _conv_block(x, w, b, stride):
    return T.add_channel_bias(T.conv2d(x, w, stride=stride), b)


def encode(params: dict[str, Tensor], cfg: ModelConfig, images) -> tuple[Tensor, Tensor]:
    """images (B,3,H,W) -> shape code z_o (B,d) and pose code z_p (B,d)."""
    x = _as_tensor(images)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != cfg.image_size:
        raise DimensionError(f"encode expects (B,3,{cfg.image_size},{cfg.image_size}), "
                             f"got {x.shape}")
    for i in range(1, 5):
        x = T.leaky_relu(_conv_block(x, params[f"enc.conv{i}.w"],
                                     params[f"enc.conv{i}.b"], stride=2))
    x = T.reshape(x, (x.shape[0], cfg.flat_dim))
    z = T.affine(x, params["enc.fc.w"], params["enc.fc.b"])
    return T.cols(z, 0, cfg.d), T.cols(z, cfg.d, 2 * cfg.d)


def decode(params: dict[str, Tensor], cfg: ModelConfig, z_p, z_o) -> tuple[Tensor, Tensor]:
    """Pose code + shape code -> (rgb (B,3,H,W) in (0,1), depth (B,1,H,W)).

    Depth is in units of the canonical render distance (1.0 = that distance),
    nonnegative via softplus.
    """
    z_p = _as_tensor(z_p)
    z_o = _as_tensor(z_o)
    s = cfg.start_hw
    x = T.affine(z_p, params["dec.fc.w"], params["dec.fc.b"])
    x = T.reshape(x, (x.shape[0], cfg.dec_channels[0], s, s))
    for i in range(1, 5):
        c = cfg.dec_channels[i]
        x = _conv_block(T.upsample2x(x), params[f"dec.block{i}.conv.w"],
                        params[f"dec.block{i}.conv.b"], stride=1)
        gains = T.affine(z_o, params[f"dec.block{i}.adain.w"],
                         params[f"dec.block{i}.adain.b"])
        x = T.adain(x, T.cols(gains, 0, c), T.cols(gains, c, 2 * c))
        x = T.leaky_relu(x)
    rgb = T.sigmoid(_conv_block(x, params["dec.rgb.w"], params["dec.rgb.b"], 1))
    depth = T.softplus(_conv_block(x, params["dec.depth.w"], params["dec.depth.b"], 1))
    return rgb, depth


def condition_pose(params: dict[str, Tensor], cfg: ModelConfig, c_o, h_p) -> Tensor:
    """Map (shape code, rotation features) to a pose code.

    The shape input is detached: conditioning never backpropagates into the
    shape pathway, in every variant.
    """
    c_o = _as_tensor(c_o).detach()
    h_p = _as_tensor(h_p)
    if cfg.variant == "bilinear":
        a = T.affine(c_o, params["cond.fc_c.w"], params["cond.fc_c.b"])
        b = T.affine(h_p, params["cond.fc_h.w"], params["cond.fc_h.b"])
        z = T.bilinear(params["cond.w3"], a, b)
        hid = T.leaky_relu(T.affine(z, params["cond.ffn1.w"], params["cond.ffn1.b"]))
        return T.add(z, T.affine(hid, params["cond.ffn2.w"], params["cond.ffn2.b"]))
    if cfg.variant == "mlp_concat":
        x = T.concat_cols(c_o, h_p)
    else:
        x = h_p
    n_layers = len(cfg.mlp_widths) + 1
    for i in range(1, n_layers + 1):
        x = T.affine(x, params[f"cond.mlp{i}.w"], params[f"cond.mlp{i}.b"])
        if i < n_layers:
            x = T.leaky_relu(x)
    return x


def shape_logits(z_o: Tensor, codebook_unit: np.ndarray, tau: float) -> Tensor:
    """Cosine logits of shape codes against a row-normalized codebook."""
    cb = Tensor(np.ascontiguousarray(codebook_unit.T))
    return T.scale(T.matmul(T.unit_rows(z_o), cb), 1.0 / tau)


def shape_probabilities(z_o: np.ndarray, codebook: np.ndarray, tau: float) -> np.ndarray:
    """Softmax over cosine/tau scores; plain numpy, for analysis and tests."""
    zu = z_o / np.maximum(np.linalg.norm(z_o, axis=1, keepdims=True), 1e-12)
    cu = unit_rows_safe(codebook)
    logits = zu @ cu.T / tau
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def unit_rows_safe(m: np.ndarray) -> np.ndarray:
    """Row-normalize, leaving all-zero rows (untouched codebook slots) at zero."""
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, 1e-12)


def save_weights(path: str | Path, params: dict[str, Tensor], codebook: np.ndarray,
                 cfg: ModelConfig, objects: list[str],
                 meta: dict | None = None) -> None:
    """Write parameters + shape codebook to FTA with a JSON sidecar.

    meta, when given, is stored verbatim in the sidecar; the CLI uses it to
    carry object geometry, the render camera, and the rotation-feature order
    so codebooks can be rebuilt from the checkpoint alone.
    """
    path = Path(path)
    tensors = {name: t.data for name, t in params.items()}
    tensors["shape_codebook"] = np.asarray(codebook, dtype=np.float32)
    save_fta(path, tensors)
    sidecar = {"format": CHECKPOINT_FORMAT, "config": cfg.to_json(),
               "objects": list(objects)}
    if meta is not None:
        sidecar["meta"] = meta
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True))


def load_weights(path: str | Path):
    """Read a checkpoint back: (params, codebook, config, object names)."""
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {doc.get('format')!r}")
    cfg = ModelConfig.from_json(doc["config"])
    tensors = load_fta(path)
    codebook = tensors.pop("shape_codebook")
    params = {name: Tensor(data, requires_grad=True) for name, data in tensors.items()}
    return params, codebook, cfg, doc["objects"]
