# -*- coding: utf-8 -*-
"""
Forward and backward passes of every layer kind the networks use.

Two levels are exposed:
- functional ops on Tensors (conv2d_forward, batchnorm, prelu, ...) that
  return explicit gradients, convenient for checks and small experiments;
- Layer objects that cache what their backward pass needs and accumulate
  parameter gradients into the Tensors' grad buffers.  They exchange plain
  numpy arrays (N, C, H, W) so a whole network runs without rewrapping.
"""
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import as_strided

from progDilUNet.exceptions import LabelError, ShapeError
from progDilUNet.pdu_types import bnModeT
from progDilUNet.settings import BN_EPS_DFT, BN_MOMENTUM_DFT, PRELU_SLOPE_DFT
from progDilUNet.tensor import DTYPE, Tensor, wrap, zeros

arrayLike = Union[Tensor, np.ndarray]


def _arr(x: arrayLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _channels(t: Tensor) -> np.ndarray:
    """Per-channel (1, C, 1, 1) view of a parameter."""
    return t.data.reshape(1, -1, 1, 1)


def effective_extent(k: int, dilation: int) -> int:
    return k + (k - 1) * (dilation - 1)


def output_extent(n: int, k: int, dilation: int, stride: int, padding: int) -> int:
    eff = effective_extent(k, dilation)
    if n + 2 * padding < eff:
        raise ShapeError(
            f"effective kernel {eff} (k={k}, D={dilation}) exceeds padded extent"
            f" {n + 2 * padding}"
        )
    return (n + 2 * padding - eff) // stride + 1


# #### Convolution ####
@dataclass
class ConvParams:
    in_channels: int
    out_channels: int
    kernel: int = 3
    dilation: int = 1
    stride: int = 1
    padding: int = 0
    weight: Optional[Tensor] = None
    bias: Optional[Tensor] = None

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel) < 1:
            raise ShapeError(f"bad conv geometry {self}")
        if self.dilation < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError(
                f"dilation={self.dilation}, stride={self.stride},"
                f" padding={self.padding}"
            )
        wshape = (self.out_channels, self.in_channels, self.kernel, self.kernel)
        if self.weight is None:
            self.weight = zeros(wshape)
        if self.bias is None:
            self.bias = zeros((1, self.out_channels, 1, 1), dtype=self.weight.data.dtype)
        if self.weight.shape != wshape:
            raise ShapeError(f"weight {self.weight.shape} != {wshape}")
        if self.bias.shape != (1, self.out_channels, 1, 1):
            raise ShapeError(f"bias {self.bias.shape} for {self.out_channels} outputs")

    @property
    def effective_extent(self) -> int:
        return effective_extent(self.kernel, self.dilation)

    def output_hw(self, h: int, w: int) -> Tuple[int, int]:
        args = (self.kernel, self.dilation, self.stride, self.padding)
        return output_extent(h, *args), output_extent(w, *args)

    @property
    def n_params(self) -> int:
        return self.weight.data.size + self.bias.data.size


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, k: int, d: int, s: int, ho: int, wo: int) -> np.ndarray:
    """Read-only (N, C, k, k, Ho, Wo) view of the dilated, strided taps."""
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, k, k, ho, wo),
        strides=(sn, sc, d * sh, d * sw, s * sh, s * sw),
        writeable=False,
    )


def _conv_fwd(x: np.ndarray, p: ConvParams) -> Tuple[np.ndarray, np.ndarray]:
    if x.ndim != 4 or x.shape[1] != p.in_channels:
        raise ShapeError(f"conv expects (N, {p.in_channels}, H, W), got {x.shape}")
    ho, wo = p.output_hw(*x.shape[2:])
    xp = _pad(x, p.padding)
    cols = _windows(xp, p.kernel, p.dilation, p.stride, ho, wo)
    y = np.tensordot(p.weight.data, cols, axes=([1, 2, 3], [1, 2, 3]))
    y = y.transpose(1, 0, 2, 3) + _channels(p.bias)
    return np.ascontiguousarray(y), xp


def _conv_bwd(
    xp: np.ndarray, hw: Tuple[int, int], p: ConvParams, gy: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    k, d, s, pad = p.kernel, p.dilation, p.stride, p.padding
    n, o, ho, wo = gy.shape
    if o != p.out_channels or gy.shape[0] != xp.shape[0] or (ho, wo) != p.output_hw(*hw):
        raise ShapeError(f"grad_y {gy.shape} does not match the forward pass")
    cols = _windows(xp, k, d, s, ho, wo)
    gw = np.tensordot(gy, cols, axes=([0, 2, 3], [0, 4, 5]))
    gb = gy.sum(axis=(0, 2, 3))
    gcols = np.tensordot(p.weight.data, gy, axes=([0], [1]))  # (C, k, k, N, Ho, Wo)
    gxp = np.zeros(xp.shape, dtype=gcols.dtype)
    hspan, wspan = s * (ho - 1) + 1, s * (wo - 1) + 1
    for u in range(k):
        for v in range(k):
            gxp[:, :, u * d : u * d + hspan : s, v * d : v * d + wspan : s] += gcols[
                :, u, v
            ].transpose(1, 0, 2, 3)
    h, w = hw
    gx = gxp[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(gx), gw, gb


def conv2d_forward(x: arrayLike, p: ConvParams) -> Tensor:
    """y[n,o,i,j] = b[o] + sum w[o,c,u,v] x[n,c,i*s+u*D-p,j*s+v*D-p], zero outside."""
    y, _ = _conv_fwd(_arr(x), p)
    return wrap(y)


def conv2d_backward(
    x: arrayLike, p: ConvParams, grad_y: arrayLike
) -> Tuple[Tensor, Tensor, Tensor]:
    """Return (grad_x, grad_w, grad_b) for the forward pass on x."""
    x = _arr(x)
    if x.ndim != 4 or x.shape[1] != p.in_channels:
        raise ShapeError(f"conv expects (N, {p.in_channels}, H, W), got {x.shape}")
    gx, gw, gb = _conv_bwd(_pad(x, p.padding), x.shape[2:], p, _arr(grad_y))
    return wrap(gx), wrap(gw), wrap(gb.reshape(1, -1, 1, 1))


# #### Batch normalisation ####
@dataclass
class BNParams:
    channels: int
    momentum: float = BN_MOMENTUM_DFT
    epsilon: float = BN_EPS_DFT
    mode: bnModeT = "train"
    gamma: Tensor = None
    beta: Tensor = None
    running_mean: Tensor = None
    running_var: Tensor = None

    def __post_init__(self):
        if self.epsilon <= 0 or not 0 < self.momentum < 1:
            raise ValueError(f"epsilon={self.epsilon}, momentum={self.momentum}")
        shape = (1, self.channels, 1, 1)
        defaults = {
            "gamma": np.ones(shape, DTYPE),
            "beta": np.zeros(shape, DTYPE),
            "running_mean": np.zeros(shape, DTYPE),
            "running_var": np.ones(shape, DTYPE),
        }
        for name, value in defaults.items():
            t = getattr(self, name)
            if t is None:
                setattr(self, name, Tensor(value))
            elif t.shape != shape:
                raise ShapeError(f"{name} {t.shape} for {self.channels} channels")


def _bn_fwd(x: np.ndarray, p: BNParams, update: bool = True):
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"batchnorm expects (N, {p.channels}, H, W), got {x.shape}")
    gamma, beta = _channels(p.gamma), _channels(p.beta)
    if p.mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m == 1:
            raise ShapeError("degenerate batch: N*H*W == 1 in train mode")
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        xc = x - mean
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        if update:
            mom = p.momentum
            rm, rv = p.running_mean.data, p.running_var.data
            rm[...] = (1 - mom) * rm + mom * mean
            rv[...] = (1 - mom) * rv + mom * var * (m / (m - 1))
    else:
        xc = x - _channels(p.running_mean)
        var = _channels(p.running_var)
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv)


def _bn_bwd(gy: np.ndarray, cache, p: BNParams):
    xhat, inv = cache
    gamma = _channels(p.gamma)
    gbeta = gy.sum(axis=(0, 2, 3), keepdims=True)
    ggamma = (gy * xhat).sum(axis=(0, 2, 3), keepdims=True)
    if p.mode == "train":
        m = gy.shape[0] * gy.shape[2] * gy.shape[3]
        gx = (gamma * inv / m) * (m * gy - gbeta - xhat * ggamma)
    else:
        gx = gy * gamma * inv
    return gx, ggamma, gbeta


def batchnorm(x: arrayLike, p: BNParams) -> Tensor:
    """Normalise per channel; in train mode also updates the running statistics."""
    y, _ = _bn_fwd(_arr(x), p)
    return wrap(y)


def batchnorm_backward(
    x: arrayLike, p: BNParams, grad_y: arrayLike
) -> Tuple[Tensor, Tensor, Tensor]:
    """(grad_x, grad_gamma, grad_beta), running statistics are left untouched."""
    _, cache = _bn_fwd(_arr(x), p, update=False)
    return tuple(wrap(g) for g in _bn_bwd(_arr(grad_y), cache, p))


# #### PReLU ####
@dataclass
class PReLUParams:
    channels: int
    slope: Tensor = None

    def __post_init__(self):
        if self.slope is None:
            self.slope = Tensor(np.full((1, self.channels, 1, 1), PRELU_SLOPE_DFT, DTYPE))
        elif self.slope.shape != (1, self.channels, 1, 1):
            raise ShapeError(f"slope {self.slope.shape} for {self.channels} channels")


def _prelu_check(x: np.ndarray, p: PReLUParams):
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"prelu expects (N, {p.channels}, H, W), got {x.shape}")


def prelu(x: arrayLike, p: PReLUParams) -> Tensor:
    x = _arr(x)
    _prelu_check(x, p)
    return wrap(np.where(x >= 0, x, _channels(p.slope) * x))


def prelu_backward(x: arrayLike, p: PReLUParams, grad_y: arrayLike) -> Tuple[Tensor, Tensor]:
    """(grad_x, grad_slope)."""
    x, gy = _arr(x), _arr(grad_y)
    _prelu_check(x, p)
    neg = x < 0
    gx = np.where(neg, _channels(p.slope) * gy, gy)
    ga = (gy * x * neg).sum(axis=(0, 2, 3), keepdims=True)
    return wrap(gx), wrap(ga)


# #### Resampling, concatenation ####
def upsample_nearest2x(x: arrayLike) -> Tensor:
    return wrap(np.repeat(np.repeat(_arr(x), 2, axis=2), 2, axis=3))


def upsample_backward(grad_y: arrayLike) -> Tensor:
    """Sum of each 2x2 block of the output gradient."""
    gy = _arr(grad_y)
    n, c, h, w = gy.shape
    if h % 2 or w % 2:
        raise ShapeError(f"upsampled grad must have even extents, got {gy.shape}")
    return wrap(gy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)))


def _pool_windows(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max-pooling needs even extents, got {x.shape}")
    return (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )


def maxpool2x2(x: arrayLike) -> Tuple[Tensor, np.ndarray]:
    """2x2 max-pooling, returns the pooled tensor and the argmax of each window."""
    win = _pool_windows(_arr(x))
    idx = win.argmax(axis=-1)
    return wrap(np.take_along_axis(win, idx[..., None], -1)[..., 0]), idx


def maxpool_backward(grad_y: arrayLike, argmax: np.ndarray) -> Tensor:
    """Route each gradient to the first maximum of its window."""
    gy = _arr(grad_y)
    n, c, h, w = gy.shape
    win = np.zeros((n, c, h, w, 4), dtype=gy.dtype)
    np.put_along_axis(win, argmax[..., None], gy[..., None], -1)
    gx = win.reshape(n, c, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return wrap(gx.reshape(n, c, 2 * h, 2 * w))


def concat_channels(a: arrayLike, b: arrayLike) -> Tensor:
    a, b = _arr(a), _arr(b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
    return wrap(np.concatenate([a, b], axis=1))


def split_channels(t: arrayLike, c_a: int) -> Tuple[Tensor, Tensor]:
    """Inverse of concat_channels, a gets the first c_a channels."""
    t = _arr(t)
    if not 0 < c_a < t.shape[1]:
        raise ShapeError(f"cannot split {t.shape} at channel {c_a}")
    return wrap(t[:, :c_a]), wrap(t[:, c_a:])


# #### Loss ####
def softmax(logits: arrayLike) -> np.ndarray:
    z = _arr(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _labels(target, n: int, h: int, w: int) -> np.ndarray:
    grid = getattr(target, "grid", target)
    lbl = np.asarray(grid)
    if lbl.ndim == 2:
        lbl = lbl[None]
    elif lbl.ndim == 4 and lbl.shape[1] == 1:
        lbl = lbl[:, 0]
    if lbl.shape != (n, h, w):
        raise ShapeError(f"target {lbl.shape} does not match logits ({n}, ., {h}, {w})")
    return lbl.astype(np.intp)


def softmax_xent(logits: arrayLike, target) -> Tuple[float, Tensor]:
    """Mean per-pixel cross-entropy and its gradient w.r.t. the logits.

    target is a LabelMap, or an integer array (N, H, W) / (H, W).
    """
    z = _arr(logits)
    n, c, h, w = z.shape
    lbl = _labels(target, n, h, w)
    if lbl.min() < 0 or lbl.max() >= c:
        raise LabelError(f"labels must lie in [0, {c}), got [{lbl.min()}, {lbl.max()}]")
    zs = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(zs).sum(axis=1, keepdims=True))
    logp = zs - logsum
    m = n * h * w
    picked = np.take_along_axis(logp, lbl[:, None], axis=1)
    loss = float(-picked.sum() / m)
    grad = np.exp(logp)
    onehot_rows = np.take_along_axis(grad, lbl[:, None], axis=1) - 1
    np.put_along_axis(grad, lbl[:, None], onehot_rows, axis=1)
    return loss, wrap(grad / m)


# #### Layer objects ####
class Layer:
    """A node of a network: forward caches, backward accumulates grads."""

    training = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def named_params(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        return iter(())

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        return iter(())

    def train(self, mode: bool = True) -> None:
        self.training = mode

    def clear(self) -> None:
        """Drop the cached activations."""


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


class Conv2d(Layer):
    def __init__(self, params: ConvParams):
        self.p = params
        self._xp, self._hw = None, None

    def __repr__(self):
        p = self.p
        return (
            f"Conv2d({p.in_channels}->{p.out_channels}, k={p.kernel},"
            f" D={p.dilation}, s={p.stride}, p={p.padding})"
        )

    def forward(self, x):
        y, xp = _conv_fwd(x, self.p)
        if self.training:
            self._xp, self._hw = xp, x.shape[2:]
        return y

    def backward(self, grad_y):
        gx, gw, gb = _conv_bwd(self._xp, self._hw, self.p, grad_y)
        self.p.weight.accumulate_grad(gw)
        self.p.bias.accumulate_grad(gb)
        return gx

    def named_params(self, prefix=""):
        yield _join(prefix, "weight"), self.p.weight
        yield _join(prefix, "bias"), self.p.bias

    def clear(self):
        self._xp = None


class BatchNorm2d(Layer):
    def __init__(self, params: BNParams):
        self.p = params
        self._cache = None

    def forward(self, x):
        self.p.mode = "train" if self.training else "infer"
        y, cache = _bn_fwd(x, self.p)
        if self.training:
            self._cache = cache
        return y

    def backward(self, grad_y):
        gx, gg, gb = _bn_bwd(grad_y, self._cache, self.p)
        self.p.gamma.accumulate_grad(gg)
        self.p.beta.accumulate_grad(gb)
        return gx

    def named_params(self, prefix=""):
        yield _join(prefix, "gamma"), self.p.gamma
        yield _join(prefix, "beta"), self.p.beta

    def named_buffers(self, prefix=""):
        yield _join(prefix, "running_mean"), self.p.running_mean
        yield _join(prefix, "running_var"), self.p.running_var

    def clear(self):
        self._cache = None


class PReLU(Layer):
    def __init__(self, params: PReLUParams):
        self.p = params
        self._x = None

    def forward(self, x):
        if self.training:
            self._x = x
        return np.where(x >= 0, x, _channels(self.p.slope) * x)

    def backward(self, grad_y):
        gx, ga = prelu_backward(self._x, self.p, grad_y)
        self.p.slope.accumulate_grad(ga.data)
        return gx.data

    def named_params(self, prefix=""):
        yield _join(prefix, "slope"), self.p.slope

    def clear(self):
        self._x = None


class Upsample2x(Layer):
    def forward(self, x):
        return upsample_nearest2x(x).data

    def backward(self, grad_y):
        return upsample_backward(grad_y).data


class MaxPool2x2(Layer):
    def __init__(self):
        self._idx = None

    def forward(self, x):
        y, idx = maxpool2x2(x)
        if self.training:
            self._idx = idx
        return y.data

    def backward(self, grad_y):
        return maxpool_backward(grad_y, self._idx).data

    def clear(self):
        self._idx = None
