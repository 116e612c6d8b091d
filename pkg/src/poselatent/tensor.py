"""Dense tensors with reverse-mode automatic differentiation.

The engine is deliberately small: float32/float64 numpy storage, a closure
tape, and exactly the operations the encoder/decoder/conditioning stack
needs. There is no general broadcasting; shapes are fixed by the
architecture and every mismatch raises DimensionError naming both shapes.
Every reduction is a single numpy call with a fixed summation order, so
forward and backward results are bit-identical across runs on the same
machine for a fixed thread count.

Training runs in float32; gradient checks build the same graphs in float64
(pass ``dtype=np.float64`` when creating leaves).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError

EPS_INSTANCE = 1e-5   # variance guard inside instance statistics
EPS_NORM = 1e-12      # below this, a row norm counts as zero and is an error


class Tensor:
    """A numpy array plus the tape bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    # -- inspection ---------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph --------------------------------------------------------------

    def detach(self) -> "Tensor":
        """Same values, cut from the tape (stop-gradient)."""
        return Tensor(self.data, requires_grad=False)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None) -> None:
        """Reverse-mode sweep from this node.

        ``grad`` defaults to 1 and may only be omitted for single-element
        outputs. Leaf gradients accumulate in ``.grad``.
        """
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without seed needs a scalar output, got shape {self.data.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} != output shape {self.data.shape}")

        order = _topo_order(self)
        self.grad = grad
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the tape reachable from ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    out.op = op
    return out


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


# -- linear maps -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _need(a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0],
          f"matmul needs (B,I)x(I,O), got {a.shape} x {b.shape}")
    y = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(y, (a, b), bw, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b for x (B,I), w (I,O), b (O,)."""
    _need(x.ndim == 2 and w.ndim == 2 and x.shape[1] == w.shape[0],
          f"affine needs (B,I)x(I,O), got {x.shape} x {w.shape}")
    _need(b.ndim == 1 and b.shape[0] == w.shape[1],
          f"affine bias shape {b.shape} does not match weight {w.shape}")
    y = x.data @ w.data + b.data

    def bw(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0))

    return _make(y, (x, w, b), bw, "affine")


# -- convolution stack -------------------------------------------------------

def _im2col(xpad: np.ndarray, hh: int, ww: int, stride: int) -> np.ndarray:
    """(B,C,Hp,Wp) -> (B, C*9, hh*ww) patch matrix for a 3x3 kernel."""
    bsz, ch = xpad.shape[:2]
    cols = np.empty((bsz, ch, 3, 3, hh, ww), dtype=xpad.dtype)
    for di in range(3):
        for dj in range(3):
            cols[:, :, di, dj] = xpad[:, :, di : di + stride * (hh - 1) + 1 : stride,
                                      dj : dj + stride * (ww - 1) + 1 : stride]
    return cols.reshape(bsz, ch * 9, hh * ww)


def conv2d(x: Tensor, k: Tensor, stride: int = 1) -> Tensor:
    """3x3 convolution, zero padding 1, stride 1 or 2.

    x is (B,C,H,W), k is (O,C,3,3); output is (B,O,ceil(H/s),ceil(W/s)).
    """
    _need(x.ndim == 4, f"conv2d input must be (B,C,H,W), got {x.shape}")
    _need(k.ndim == 4 and k.shape[2:] == (3, 3),
          f"conv2d kernel must be (O,C,3,3), got {k.shape}")
    _need(x.shape[1] == k.shape[1],
          f"conv2d channel mismatch: input {x.shape} vs kernel {k.shape}")
    if stride not in (1, 2):
        raise DimensionError(f"conv2d stride must be 1 or 2, got {stride}")
    bsz, ch, h, w = x.shape
    out_c = k.shape[0]
    hh = -(-h // stride)
    ww = -(-w // stride)

    xpad = np.zeros((bsz, ch, h + 2, w + 2), dtype=x.data.dtype)
    xpad[:, :, 1 : h + 1, 1 : w + 1] = x.data
    cols = _im2col(xpad, hh, ww, stride)              # (B, C9, L)
    kmat = k.data.reshape(out_c, ch * 9)
    y = np.matmul(kmat[None], cols).reshape(bsz, out_c, hh, ww)

    def bw(g):
        gmat = g.reshape(bsz, out_c, hh * ww)
        if k.requires_grad:
            dk = np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0)
            k._accumulate(dk.reshape(k.shape))
        if x.requires_grad:
            dcols = np.matmul(kmat.T[None], gmat).reshape(bsz, ch, 3, 3, hh, ww)
            dxpad = np.zeros_like(xpad)
            for di in range(3):
                for dj in range(3):
                    dxpad[:, :, di : di + stride * (hh - 1) + 1 : stride,
                          dj : dj + stride * (ww - 1) + 1 : stride] += dcols[:, :, di, dj]
            x._accumulate(dxpad[:, :, 1 : h + 1, 1 : w + 1])

    return _make(y, (x, k), bw, "conv2d")


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbor 2x upsample of (B,C,H,W)."""
    _need(x.ndim == 4, f"upsample2x input must be (B,C,H,W), got {x.shape}")
    bsz, ch, h, w = x.shape
    y = np.broadcast_to(x.data[:, :, :, None, :, None],
                        (bsz, ch, h, 2, w, 2)).reshape(bsz, ch, 2 * h, 2 * w)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g.reshape(bsz, ch, h, 2, w, 2).sum(axis=(3, 5)))

    return _make(np.ascontiguousarray(y), (x,), bw, "upsample2x")


# -- instance statistics and AdaIN -------------------------------------------

def instance_stats(x: Tensor) -> tuple[Tensor, Tensor]:
    """Per-(sample, channel) spatial mean and std of (B,C,H,W).

    The std uses the population variance with EPS_INSTANCE added under the
    square root, so constant maps give sigma = sqrt(EPS_INSTANCE).
    """
    _need(x.ndim == 4, f"instance_stats input must be (B,C,H,W), got {x.shape}")
    n = x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(2, 3))
    centered = x.data - mu[:, :, None, None]
    var = np.mean(centered * centered, axis=(2, 3))
    sigma = np.sqrt(var + np.asarray(EPS_INSTANCE, dtype=x.data.dtype))

    def bw_mu(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to((g / n)[:, :, None, None], x.shape).copy())

    def bw_sigma(g):
        if x.requires_grad:
            x._accumulate((g / (n * sigma))[:, :, None, None] * centered)

    return (_make(mu, (x,), bw_mu, "instance_mean"),
            _make(sigma, (x,), bw_sigma, "instance_std"))


def adain(x: Tensor, gs: Tensor, gb: Tensor) -> Tensor:
    """Instance-normalize x over its spatial dims, then scale/shift per channel.

    x is (B,C,H,W); gs and gb are (B,C). Fused forward/backward of
    gs * (x - mu) / sigma + gb with the same epsilon as instance_stats.
    """
    _need(x.ndim == 4, f"adain input must be (B,C,H,W), got {x.shape}")
    _need(gs.shape == x.shape[:2] and gb.shape == x.shape[:2],
          f"adain gains must be (B,C)={x.shape[:2]}, got {gs.shape} and {gb.shape}")
    n = x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=(2, 3), keepdims=True)
    sigma = np.sqrt(var + np.asarray(EPS_INSTANCE, dtype=x.data.dtype))
    xhat = centered / sigma
    y = gs.data[:, :, None, None] * xhat + gb.data[:, :, None, None]

    def bw(g):
        if gb.requires_grad:
            gb._accumulate(g.sum(axis=(2, 3)))
        if gs.requires_grad:
            gs._accumulate((g * xhat).sum(axis=(2, 3)))
        if x.requires_grad:
            dxhat = g * gs.data[:, :, None, None]
            m1 = dxhat.mean(axis=(2, 3), keepdims=True)
            m2 = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
            x._accumulate((dxhat - m1 - xhat * m2) / sigma)

    return _make(y, (x, gs, gb), bw, "adain")


# -- third-order contraction --------------------------------------------------

def bilinear(w3: Tensor, a: Tensor, b: Tensor) -> Tensor:
    """out[n,k] = sum_ij w3[i,j,k] * a[n,i] * b[n,j].

    w3 is (I,J,K); a and b are batched (B,I) and (B,J).
    """
    _need(w3.ndim == 3, f"bilinear weight must be rank 3, got {w3.shape}")
    _need(a.ndim == 2 and b.ndim == 2 and a.shape[0] == b.shape[0],
          f"bilinear inputs must share a batch: got {a.shape} and {b.shape}")
    di, dj, dk = w3.shape
    _need(a.shape[1] == di and b.shape[1] == dj,
          f"bilinear operand shapes {a.shape},{b.shape} do not match weight {w3.shape}")
    wmat = w3.data.reshape(di, dj * dk)
    t = (a.data @ wmat).reshape(-1, dj, dk)          # (B,J,K)
    y = (t * b.data[:, :, None]).sum(axis=1)         # (B,K)

    def bw(g):
        if w3.requires_grad:
            outer = (b.data[:, :, None] * g[:, None, :]).reshape(-1, dj * dk)
            w3._accumulate((a.data.T @ outer).reshape(di, dj, dk))
        if a.requires_grad:
            outer = (b.data[:, :, None] * g[:, None, :]).reshape(-1, dj * dk)
            a._accumulate(outer @ wmat.T)
        if b.requires_grad:
            b._accumulate((t * g[:, None, :]).sum(axis=2))

    return _make(y, (w3, a, b), bw, "bilinear")


# -- elementwise --------------------------------------------------------------

def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    _need(a.shape == b.shape, f"{op} needs equal shapes, got {a.shape} and {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), bw, "add")


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x + b broadcast over channels: x is (B,C,H,W), b is (C,)."""
    _need(x.ndim == 4 and b.ndim == 1 and b.shape[0] == x.shape[1],
          f"add_channel_bias needs (B,C,H,W) and (C,), got {x.shape} and {b.shape}")

    def bw(g):
        if x.requires_grad:
            x._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    return _make(x.data + b.data[None, :, None, None], (x, b), bw, "add_channel_bias")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * np.asarray(s, dtype=g.dtype))

    return _make(x.data * np.asarray(s, dtype=x.data.dtype), (x,), bw, "scale")


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    mask = x.data >= 0
    y = np.where(mask, x.data, x.data * np.asarray(slope, dtype=x.data.dtype))

    def bw(g):
        if x.requires_grad:
            x._accumulate(np.where(mask, g, g * np.asarray(slope, dtype=g.dtype)))

    return _make(y, (x,), bw, "leaky_relu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    y[~pos] = e / (1.0 + e)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * y * (1.0 - y))

    return _make(y, (x,), bw, "sigmoid")


def softplus(x: Tensor) -> Tensor:
    d = x.data
    y = np.maximum(d, 0) + np.log1p(np.exp(-np.abs(d)))

    def bw(g):
        if x.requires_grad:
            s = np.empty_like(d)
            pos = d >= 0
            s[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
            e = np.exp(d[~pos])
            s[~pos] = e / (1.0 + e)
            x._accumulate(g * s)

    return _make(y, (x,), bw, "softplus")


# -- shaping ------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    y = x.data.reshape(shape)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g.reshape(x.shape))

    return _make(y.copy(), (x,), bw, "reshape")


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Column slice x[:, start:stop] of a 2-D tensor."""
    _need(x.ndim == 2, f"cols needs a 2-D tensor, got {x.shape}")
    _need(0 <= start < stop <= x.shape[1],
          f"cols range [{start}:{stop}] invalid for shape {x.shape}")

    def bw(g):
        if x.requires_grad:
            full = np.zeros(x.shape, dtype=g.dtype)
            full[:, start:stop] = g
            x._accumulate(full)

    return _make(x.data[:, start:stop].copy(), (x,), bw, "cols")


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    _need(a.ndim == 2 and b.ndim == 2 and a.shape[0] == b.shape[0],
          f"concat_cols needs matching batches, got {a.shape} and {b.shape}")
    na = a.shape[1]

    def bw(g):
        if a.requires_grad:
            a._accumulate(g[:, :na])
        if b.requires_grad:
            b._accumulate(g[:, na:])

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), bw, "concat_cols")


# -- reductions and losses -----------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    def bw(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(x.data.sum(keepdims=True).reshape(()), (x,), bw, "sum_all")


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def bw(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g / n, x.shape).copy())

    return _make(x.data.mean(keepdims=True).reshape(()), (x,), bw, "mean_all")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    _same_shape(a, b, "mse")
    diff = a.data - b.data
    n = diff.size
    y = np.asarray((diff * diff).mean(), dtype=a.data.dtype)

    def bw(g):
        d = g * 2.0 / n
        if a.requires_grad:
            a._accumulate(d * diff)
        if b.requires_grad:
            b._accumulate(-d * diff)

    return _make(y, (a, b), bw, "mse")


def unit_rows(x: Tensor) -> Tensor:
    """Row-wise L2 normalization of (B,D); zero rows are an error."""
    _need(x.ndim == 2, f"unit_rows needs (B,D), got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if np.any(norms < EPS_NORM):
        raise FloatingPointError("unit_rows: a row has (near-)zero norm")
    y = x.data / norms

    def bw(g):
        if x.requires_grad:
            proj = (g * y).sum(axis=1, keepdims=True)
            x._accumulate((g - y * proj) / norms)

    return _make(y, (x,), bw, "unit_rows")


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine similarity of two (B,D) tensors; zero rows are an error."""
    _same_shape(a, b, "cosine_rows")
    _need(a.ndim == 2, f"cosine_rows needs (B,D), got {a.shape}")
    na = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=1, keepdims=True))
    if np.any(na < EPS_NORM) or np.any(nb < EPS_NORM):
        raise FloatingPointError("cosine_rows: a row has (near-)zero norm")
    ah = a.data / na
    bh = b.data / nb
    c = (ah * bh).sum(axis=1)

    def bw(g):
        gcol = g[:, None]
        if a.requires_grad:
            a._accumulate(gcol * (bh - c[:, None] * ah) / na)
        if b.requires_grad:
            b._accumulate(gcol * (ah - c[:, None] * bh) / nb)

    return _make(c, (a, b), bw, "cosine_rows")


def cross_entropy_rows(logits: Tensor, ids: np.ndarray) -> Tensor:
    """Per-row -log softmax(logits)[id]; ids is an int vector of length B."""
    _need(logits.ndim == 2, f"cross_entropy_rows needs (B,N), got {logits.shape}")
    ids = np.asarray(ids)
    _need(ids.shape == (logits.shape[0],),
          f"ids shape {ids.shape} does not match batch {logits.shape[0]}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    logp = (z - zmax) - np.log(sez)
    rows = np.arange(z.shape[0])
    y = -logp[rows, ids]

    def bw(g):
        if logits.requires_grad:
            dz = ez / sez
            dz[rows, ids] -= 1.0
            logits._accumulate(dz * g[:, None])

    return _make(y, (logits,), bw, "cross_entropy_rows")


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment estimates keyed like the parameter dict."""
    lr: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    # name-prefix -> lr multiplier; longest matching prefix wins
    lr_scale: dict = field(default_factory=dict)

    def lr_for(self, name: str) -> float:
        best = ""
        for prefix in self.lr_scale:
            if name.startswith(prefix) and len(prefix) > len(best):
                best = prefix
        return self.lr * self.lr_scale[best] if best else self.lr


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One Adam update in place from each parameter's .grad.

    Parameters with grad None are skipped (their moments are not advanced
    either). The step counter advances once per call.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p.data -= (state.lr_for(name) * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype, copy=False)


# -- finite differences ---------------------------------------------------------

def grad_check(fn, inputs: list[Tensor], eps: float = 1e-6,
               max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare reverse-mode gradients of a scalar fn against central differences.

    Returns the max of |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|) over the
    checked entries. All inputs should be float64 leaves with requires_grad.
    ``max_entries`` (with ``rng``) subsamples entries per input for large
    tensors; by default every entry is checked.
    """
    for t in inputs:
        t.grad = None
    out = fn(inputs)
    out.backward()
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue
        g_ad = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        gflat = g_ad.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            if rng is None:
                rng = np.random.default_rng(0)
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + eps
            hi = fn(inputs).item()
            flat[i] = keep - eps
            lo = fn(inputs).item()
            flat[i] = keep
            g_fd = (hi - lo) / (2.0 * eps)
            denom = max(1e-8, abs(gflat[i]) + abs(g_fd))
            worst = max(worst, abs(gflat[i] - g_fd) / denom)
    return worst
