"""Neural-network layers and losses for the desk-scale backbones.

Convolution is cross-correlation (no kernel flip).  The heavy ops (conv2d,
batch norm, cross-entropy) are single fused tape nodes with hand-written
backward rules; everything else composes tensor primitives.
"""

from __future__ import annotations

import numpy as np

from . import _conv
from .errors import ContractError, DimensionError
from .rng import RngStream
from .tensor import Tensor, matmul, relu, tmean

__all__ = [
    "Module",
    "Conv2d",
    "BatchNorm2d",
    "Linear",
    "conv2d",
    "cross_entropy",
    "global_avg_pool",
    "relu",
]


# -- functional ops -----------------------------------------------------------


def conv2d(x: Tensor, kernel: Tensor, bias, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over (batch, channel, height, width)."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects 4-D input and kernel, got {x.data.shape} and {kernel.data.shape}"
        )
    n, cin, h, w = x.data.shape
    cout, cin_k, k, k2 = kernel.data.shape
    if k != k2:
        raise DimensionError(f"conv2d kernel must be square, got {kernel.data.shape}")
    if cin != cin_k:
        raise DimensionError(
            f"conv2d channel mismatch: input has {cin}, kernel expects {cin_k}"
        )
    if h + 2 * padding < k or w + 2 * padding < k:
        raise DimensionError(
            f"conv2d padded size ({h + 2 * padding}x{w + 2 * padding}) smaller than kernel {k}"
        )
    xp = (
        np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if padding
        else np.ascontiguousarray(x.data)
    )
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = _conv.conv_forward(xp, kernel.data, stride, oh, ow)
    if bias is not None:
        out += bias.data[None, :, None, None]

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        g = np.ascontiguousarray(g)
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            kernel._accum(_conv.conv_dw(xp, g, stride, k))
        if x.requires_grad:
            # dx = full correlation of the stride-dilated output grad with the
            # spatially flipped kernel, evaluated in padded coordinates.
            if stride == 1:
                gd = g
            else:
                gd = np.zeros((n, cout, (oh - 1) * stride + 1, (ow - 1) * stride + 1))
                gd[:, :, ::stride, ::stride] = g
            gp = np.pad(gd, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            used = _conv.conv_dx_full(gp, kernel.data)
            fh, fw = used.shape[2], used.shape[3]
            hp, wp = xp.shape[2], xp.shape[3]
            if fh == hp and fw == wp and padding == 0:
                x._accum(used)
            else:
                dxp = np.zeros((n, cin, hp, wp))
                dxp[:, :, :fh, :fw] = used
                x._accum(dxp[:, :, padding : padding + h, padding : padding + w])

    return Tensor._result(out, parents, backward, "conv2d")


def batchnorm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Batch normalization over (batch, H, W) per channel, training statistics.

    Returns (normalized Tensor, batch_mean, batch_var) where the statistics
    are plain arrays for the running-average update.
    """
    if _conv.bn_forward is not None:
        out, xhat, m, var = _conv.bn_forward(np.ascontiguousarray(x.data),
                                             gamma.data, beta.data, eps)

        def backward(g):
            dx, gsum, ghsum = _conv.bn_backward(np.ascontiguousarray(g), xhat,
                                                gamma.data, var, eps)
            if beta.requires_grad:
                beta._accum(gsum)
            if gamma.requires_grad:
                gamma._accum(ghsum)
            if x.requires_grad:
                x._accum(dx)

        return Tensor._result(out, (x, gamma, beta), backward, "batchnorm"), m, var

    axes = (0, 2, 3)
    m = x.data.mean(axis=axes)
    xc = x.data - m[None, :, None, None]
    var = np.mean(xc * xc, axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if x.requires_grad:
            gh = g * gamma.data[None, :, None, None]
            t1 = gh.mean(axis=axes)
            t2 = (gh * xhat).mean(axis=axes)
            dx = inv[None, :, None, None] * (
                gh - t1[None, :, None, None] - xhat * t2[None, :, None, None]
            )
            x._accum(dx)

    return Tensor._result(out, (x, gamma, beta), backward, "batchnorm"), m, var


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer class labels under softmax."""
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects (n, classes) logits, got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    n, classes = logits.data.shape
    if labels.shape != (n,):
        raise ContractError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ContractError(
            f"labels must lie in [0, {classes}), got range [{labels.min()}, {labels.max()}]"
        )
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    losses = lse - z[np.arange(n), labels]
    probs = np.exp(z - lse[:, None])

    def backward(g):
        if logits.requires_grad:
            grad = probs.copy()
            grad[np.arange(n), labels] -= 1.0
            logits._accum(grad * (np.asarray(g) / n))

    return Tensor._result(np.asarray(losses.mean()), (logits,), backward, "cross_entropy")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial grid: (batch, c, h, w) -> (batch, c)."""
    if x.data.ndim != 4:
        raise DimensionError(f"global_avg_pool expects a 4-D feature map, got {x.data.shape}")
    return tmean(x, axis=(2, 3))


# -- layer containers ----------------------------------------------------------


class Module:
    """Minimal layer container: parameter discovery and train/eval mode."""

    def __init__(self):
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in self.__dict__.items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        for name, value in self.__dict__.items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield (f"{prefix}{name}", value)
        for name, child in self._children():
            yield from child.named_parameters(prefix=f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        """Non-trainable state arrays (e.g. batch-norm running statistics)."""
        for name, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                yield (f"{prefix}{name}", value)
        for name, child in self._children():
            yield from child.named_buffers(prefix=f"{prefix}{name}.")

    def set_buffer(self, name: str, value):
        parts = name.split(".")
        obj = self
        for part in parts[:-1]:
            obj = obj[int(part)] if isinstance(obj, (list, tuple)) else getattr(obj, part)
        setattr(obj, parts[-1], value)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    """Convolution layer with Kaiming fan-in init."""

    def __init__(self, cin: int, cout: int, k: int, rng: RngStream,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        super().__init__()
        std = np.sqrt(2.0 / (cin * k * k))
        self.kernel = Tensor(rng.normal(size=(cout, cin, k, k), scale=std), requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    """Batch norm with running statistics; train mode updates them, eval is
    a fixed affine map (no state mutation)."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        if not (0.0 < momentum < 1.0):
            raise ContractError(f"momentum must lie in (0,1), got {momentum}")
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        if self.training:
            out, m, v = batchnorm_train(x, self.gamma, self.beta, self.eps)
            mom = self.momentum
            self.running_mean = (1.0 - mom) * self.running_mean + mom * m
            self.running_var = (1.0 - mom) * self.running_var + mom * v
            return out
        inv = Tensor(1.0 / np.sqrt(self.running_var + self.eps))
        scale = self.gamma * inv
        shift = self.beta - Tensor(self.running_mean) * scale
        c = scale.data.shape[0]
        return x * scale.reshape(1, c, 1, 1) + shift.reshape(1, c, 1, 1)


class Linear(Module):
    """Affine layer with Kaiming fan-in init."""

    def __init__(self, fin: int, fout: int, rng: RngStream, bias: bool = True):
        super().__init__()
        std = np.sqrt(2.0 / fin)
        self.weight = Tensor(rng.normal(size=(fin, fout), scale=std), requires_grad=True)
        self.bias = Tensor(np.zeros(fout), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out
