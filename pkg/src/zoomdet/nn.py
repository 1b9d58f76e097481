"""Minimal dense CNN core: forward/backward layers, loss, SGD, serialization.

Tensors are plain numpy arrays, (channels, h, w) for feature maps and (n,)
for vectors. Convolution is direct (a tensordot per kernel offset, no
im2col); the corpora here are tiny, so clarity and checkability win over
throughput. Training runs in float32; gradient checking re-casts the same
network to float64.

Determinism contracts that the rest of the pipeline leans on:
  - max pooling and global max pooling break ties toward the first position
    in row-major order
  - global max pooling routes gradient to exactly one location per channel
"""

from __future__ import annotations

import struct
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import NumericError

Tensor = np.ndarray


def _check_3d(x: Tensor, who: str) -> None:
    if x.ndim != 3:
        raise ValueError(f"{who}: expected (c, h, w) tensor, got shape {x.shape}")


class Conv2d:
    """Cross-correlation with bias. Output dims: floor((in + 2p - k)/s) + 1."""

    kind = "conv"

    def __init__(self, weight: Tensor, bias: Tensor, stride: int = 1, pad: int = 0):
        if weight.ndim != 4:
            raise ValueError(f"conv weight must be (out, in, kh, kw), got {weight.shape}")
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match {weight.shape[0]} filters")
        if stride < 1 or pad < 0:
            raise ValueError(f"bad stride/pad ({stride}, {pad})")
        self.weight = weight
        self.bias = bias
        self.stride = stride
        self.pad = pad
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self._cache_padded: Optional[Tensor] = None
        self._cache_in_shape: Optional[Tuple[int, int, int]] = None

    @classmethod
    def create(cls, rng: np.random.Generator, in_ch: int, out_ch: int, kh: int,
               kw: int, stride: int = 1, pad: int = 0, dtype=np.float32) -> "Conv2d":
        # uniform Xavier: bound = sqrt(6 / (fan_in + fan_out))
        fan_in = in_ch * kh * kw
        fan_out = out_ch * kh * kw
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(out_ch, in_ch, kh, kw)).astype(dtype)
        b = np.zeros(out_ch, dtype=dtype)
        return cls(w, b, stride=stride, pad=pad)

    def out_dims(self, h: int, w: int) -> Tuple[int, int]:
        kh, kw = self.weight.shape[2], self.weight.shape[3]
        oh = (h + 2 * self.pad - kh) // self.stride + 1
        ow = (w + 2 * self.pad - kw) // self.stride + 1
        if h + 2 * self.pad < kh or w + 2 * self.pad < kw or oh < 1 or ow < 1:
            raise ValueError(
                f"kernel {kh}x{kw} (pad {self.pad}) does not fit input {h}x{w}"
            )
        return oh, ow

    def forward(self, x: Tensor) -> Tensor:
        _check_3d(x, "conv")
        if x.shape[0] != self.weight.shape[1]:
            raise ValueError(
                f"conv expects {self.weight.shape[1]} input channels, got {x.shape[0]}"
            )
        c, h, w = x.shape
        oh, ow = self.out_dims(h, w)
        p = self.pad
        xp = np.pad(x, ((0, 0), (p, p), (p, p))) if p else x
        out = np.zeros((self.weight.shape[0], oh, ow), dtype=x.dtype)
        s = self.stride
        kh, kw = self.weight.shape[2], self.weight.shape[3]
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, u:u + s * oh:s, v:v + s * ow:s]
                out += np.tensordot(self.weight[:, :, u, v], patch, axes=([1], [0]))
        out += self.bias[:, None, None]
        self._cache_padded = xp
        self._cache_in_shape = (c, h, w)
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        if self._cache_padded is None:
            raise RuntimeError("conv backward before forward")
        xp = self._cache_padded
        c, h, w = self._cache_in_shape
        s, p = self.stride, self.pad
        kh, kw = self.weight.shape[2], self.weight.shape[3]
        oh, ow = grad_out.shape[1], grad_out.shape[2]
        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, u:u + s * oh:s, v:v + s * ow:s]
                self.grad_weight[:, :, u, v] = np.tensordot(
                    grad_out, patch, axes=([1, 2], [1, 2])
                )
                dxp[:, u:u + s * oh:s, v:v + s * ow:s] += np.tensordot(
                    self.weight[:, :, u, v], grad_out, axes=([0], [0])
                )
        self.grad_bias[...] = grad_out.sum(axis=(1, 2))
        return dxp[:, p:p + h, p:p + w] if p else dxp

    def params(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def grads(self) -> List[Tensor]:
        return [self.grad_weight, self.grad_bias]


class ReLU:
    kind = "relu"

    def __init__(self):
        self._mask: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, grad_out: Tensor) -> Tensor:
        if self._mask is None:
            raise RuntimeError("relu backward before forward")
        return np.where(self._mask, grad_out, grad_out.dtype.type(0))

    def params(self):
        return []

    def grads(self):
        return []


class MaxPool2:
    """2x2 max pooling, stride 2; odd trailing rows/columns are dropped."""

    kind = "maxpool2"

    def __init__(self):
        self._cache = None

    def forward(self, x: Tensor) -> Tensor:
        _check_3d(x, "maxpool2")
        c, h, w = x.shape
        oh, ow = h // 2, w // 2
        if oh < 1 or ow < 1:
            raise ValueError(f"maxpool2 input too small: {x.shape}")
        xc = x[:, :2 * oh, :2 * ow]
        # windows flattened in row-major order so argmax ties pick the first
        win = xc.reshape(c, oh, 2, ow, 2).transpose(0, 1, 3, 2, 4).reshape(c, oh, ow, 4)
        idx = win.argmax(axis=3)
        self._cache = (x.shape, idx)
        return np.take_along_axis(win, idx[..., None], axis=3)[..., 0]

    def backward(self, grad_out: Tensor) -> Tensor:
        if self._cache is None:
            raise RuntimeError("maxpool2 backward before forward")
        in_shape, idx = self._cache
        c, h, w = in_shape
        oh, ow = h // 2, w // 2
        dwin = np.zeros((c, oh, ow, 4), dtype=grad_out.dtype)
        np.put_along_axis(dwin, idx[..., None], grad_out[..., None], axis=3)
        dx = np.zeros(in_shape, dtype=grad_out.dtype)
        dx[:, :2 * oh, :2 * ow] = (
            dwin.reshape(c, oh, ow, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * oh, 2 * ow)
        )
        return dx

    def params(self):
        return []

    def grads(self):
        return []


class GlobalMaxPool:
    """(c, h, w) -> (c,); remembers per-channel argmax, first in row-major order."""

    kind = "global_max_pool"

    def __init__(self):
        self._cache = None
        self.last_input: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        _check_3d(x, "global_max_pool")
        c, h, w = x.shape
        flat = x.reshape(c, h * w)
        idx = flat.argmax(axis=1)
        self._cache = (x.shape, idx)
        self.last_input = x
        return flat[np.arange(c), idx]

    def argmax_positions(self) -> List[Tuple[int, int]]:
        if self._cache is None:
            raise RuntimeError("no forward pass recorded")
        (c, h, w), idx = self._cache
        return [(int(i // w), int(i % w)) for i in idx]

    def backward(self, grad_out: Tensor) -> Tensor:
        if self._cache is None:
            raise RuntimeError("global_max_pool backward before forward")
        (c, h, w), idx = self._cache
        dx = np.zeros((c, h * w), dtype=grad_out.dtype)
        dx[np.arange(c), idx] = grad_out
        return dx.reshape(c, h, w)

    def params(self):
        return []

    def grads(self):
        return []


class Sigmoid:
    kind = "sigmoid"

    def __init__(self):
        self._out: Optional[Tensor] = None

    def forward(self, x: Tensor) -> Tensor:
        out = sigmoid(x)
        self._out = out
        return out

    def backward(self, grad_out: Tensor) -> Tensor:
        if self._out is None:
            raise RuntimeError("sigmoid backward before forward")
        return grad_out * self._out * (1.0 - self._out)

    def params(self):
        return []

    def grads(self):
        return []


LAYER_KINDS = {
    "conv": Conv2d,
    "relu": ReLU,
    "maxpool2": MaxPool2,
    "global_max_pool": GlobalMaxPool,
    "sigmoid": Sigmoid,
}


class Network:
    def __init__(self, layers: Sequence):
        self.layers = list(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: Tensor) -> Tensor:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def params(self) -> List[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def grads(self) -> List[Tensor]:
        out = []
        for layer in self.layers:
            out.extend(layer.grads())
        return out

    def astype(self, dtype) -> "Network":
        """Deep copy with parameters cast to dtype (for gradient checking)."""
        layers = []
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                layers.append(
                    Conv2d(layer.weight.astype(dtype), layer.bias.astype(dtype),
                           stride=layer.stride, pad=layer.pad)
                )
            else:
                layers.append(type(layer)())
        return Network(layers)

    def total_stride(self) -> int:
        s = 1
        for layer in self.layers:
            if isinstance(layer, Conv2d):
                s *= layer.stride
            elif isinstance(layer, MaxPool2):
                s *= 2
        return s


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_ce_elements(logits: Tensor, targets: Tensor) -> Tuple[Tensor, Tensor]:
    """Per-element stable cross entropy and its gradient wrt the logits.

    loss = max(z, 0) - z*p + log(1 + exp(-|z|)); grad = sigmoid(z) - p.
    No normalization, so callers can mask and weight elements freely.
    """
    z = logits
    p = targets
    if z.shape != p.shape:
        raise ValueError(f"logits shape {z.shape} != targets shape {p.shape}")
    loss = np.maximum(z, 0) - z * p + np.log1p(np.exp(-np.abs(z)))
    grad = sigmoid(z) - p
    return loss, grad


def sigmoid_ce_loss(logits: Tensor, targets: Tensor) -> Tuple[float, Tensor]:
    """Mean sigmoid cross entropy over the vector; gradient has the 1/N inside."""
    loss, grad = sigmoid_ce_elements(logits, targets)
    n = logits.size
    return float(loss.sum() / n), (grad / n).astype(logits.dtype)


def smooth_l1(diff: Tensor, beta: float = 1.0) -> Tuple[Tensor, Tensor]:
    """Elementwise smooth L1 (Huber): quadratic within beta, linear outside."""
    a = np.abs(diff)
    loss = np.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta)
    grad = np.where(a < beta, diff / beta, np.sign(diff))
    return loss, grad


def sgd_step(params: Sequence[Tensor], grads: Sequence[Tensor],
             velocities: Sequence[Tensor], lr: float, momentum: float) -> None:
    """In-place momentum SGD update: v = mu*v + g; p -= lr*v."""
    if not (len(params) == len(grads) == len(velocities)):
        raise ValueError("params/grads/velocities length mismatch")
    for p, g, v in zip(params, grads, velocities):
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; aborting training")
        v *= momentum
        v += g
        p -= lr * v


class SGD:
    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocities = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[Tensor]) -> None:
        sgd_step(self.params, grads, self.velocities, self.lr, self.momentum)


class Adam:
    """Adam with bias correction; per-parameter adaptive step sizes.

    Fits training signals where raw gradients are sparse or heavy-tailed
    (a global max pool hands each channel's gradient to one cell per
    step): the moment estimates rescale them into steady updates bounded
    by lr, where plain SGD either crawls or, with momentum, runs away.
    """

    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[Tensor]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("params/grads length mismatch")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient; aborting training")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# --- serialization -----------------------------------------------------------

MODEL_MAGIC = b"ZDNET\x00"
MODEL_VERSION = 1


def save_model(path, net: Network) -> None:
    """Versioned binary dump; parameters as little-endian float32 blocks."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<HI", MODEL_VERSION, len(net.layers)))
        for layer in net.layers:
            kind = layer.kind.encode("ascii")
            f.write(struct.pack("<B", len(kind)))
            f.write(kind)
            if isinstance(layer, Conv2d):
                o, i, kh, kw = layer.weight.shape
                f.write(struct.pack("<6I", o, i, kh, kw, layer.stride, layer.pad))
                f.write(np.ascontiguousarray(layer.weight, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())


def load_model(path) -> Network:
    with open(path, "rb") as f:
        magic = f.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a model file (bad magic {magic!r})")
        version, n_layers = struct.unpack("<HI", f.read(6))
        if version != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        layers = []
        for _ in range(n_layers):
            (klen,) = struct.unpack("<B", f.read(1))
            kind = f.read(klen).decode("ascii")
            if kind == "conv":
                o, i, kh, kw, stride, pad = struct.unpack("<6I", f.read(24))
                w = np.frombuffer(f.read(4 * o * i * kh * kw), dtype="<f4")
                w = w.reshape(o, i, kh, kw).copy()
                b = np.frombuffer(f.read(4 * o), dtype="<f4").copy()
                layers.append(Conv2d(w, b, stride=stride, pad=pad))
            elif kind in LAYER_KINDS:
                layers.append(LAYER_KINDS[kind]())
            else:
                raise ValueError(f"{path}: unknown layer kind {kind!r}")
    return Network(layers)


# --- gradient checking -------------------------------------------------------

def grad_check(net: Network, x: Tensor, target: Tensor,
               epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    The loss is sigmoid cross entropy of the network output against the
    target. Relative error per parameter element is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    logits = net.forward(x)
    _, dlogits = sigmoid_ce_loss(logits, target)
    net.backward(dlogits)
    analytic = [g.copy() for g in net.grads()]

    worst = 0.0
    for p, g in zip(net.params(), analytic):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + epsilon
            lo_plus, _ = sigmoid_ce_loss(net.forward(x), target)
            flat_p[j] = orig - epsilon
            lo_minus, _ = sigmoid_ce_loss(net.forward(x), target)
            flat_p[j] = orig
            numeric = (lo_plus - lo_minus) / (2.0 * epsilon)
            denom = max(abs(flat_g[j]), abs(numeric), 1e-8)
            worst = max(worst, abs(flat_g[j] - numeric) / denom)
    return worst
