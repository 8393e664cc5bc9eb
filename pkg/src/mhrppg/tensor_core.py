"""Dense float64 tensor operations with hand-written backward passes.

Arrays use the batched layout ``(N, C, T, H, W)``. The public op functions
also accept an unbatched ``(C, T, H, W)`` array and hand back the same rank.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import InvalidArgument

Tensor = np.ndarray

_AXES = ("T", "H", "W")


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(a) for a in v)
    if len(v) != 3:
        raise InvalidArgument(f"expected 3 values, got {v}")
    return v


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        return x[None], True
    if x.ndim != 5:
        raise InvalidArgument(f"expected a 4-D or 5-D tensor, got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return y[0] if squeeze else y


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "kernel", _triple(self.kernel))
        object.__setattr__(self, "stride", _triple(self.stride))
        object.__setattr__(self, "padding", _triple(self.padding))
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidArgument("channel counts must be positive")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise InvalidArgument(f"bad kernel/stride/padding in {self}")

    @classmethod
    def same(cls, in_channels, out_channels, kernel):
        """Stride-1 conv with ``floor(k/2)`` padding per axis."""
        kernel = _triple(kernel)
        return cls(in_channels, out_channels, kernel, (1, 1, 1), tuple(k // 2 for k in kernel))

    def output_dims(self, dims) -> tuple[int, int, int]:
        out = []
        for axis, n, k, s, p in zip(_AXES, dims, self.kernel, self.stride, self.padding):
            o = (n + 2 * p - k) // s + 1
            if o < 1:
                raise InvalidArgument(f"axis {axis}: input {n} too small for kernel {k} (pad {p})")
            out.append(o)
        return tuple(out)

    def transposed_output_dims(self, dims) -> tuple[int, int, int]:
        out = []
        for axis, n, k, s, p in zip(_AXES, dims, self.kernel, self.stride, self.padding):
            o = (n - 1) * s - 2 * p + k
            if o < 1:
                raise InvalidArgument(f"axis {axis}: transposed output would be empty")
            out.append(o)
        return tuple(out)


def _check_conv(x, w, spec, transposed=False):
    if x.shape[1] != spec.in_channels:
        raise InvalidArgument(
            f"axis C: input has {x.shape[1]} channels, spec expects {spec.in_channels}")
    want = ((spec.in_channels, spec.out_channels) if transposed
            else (spec.out_channels, spec.in_channels)) + spec.kernel
    if w.shape != want:
        for name, got, exp in zip(("0", "1", "k_t", "k_h", "k_w"), w.shape, want):
            if got != exp:
                raise InvalidArgument(f"weight axis {name}: got {got}, expected {exp}")
        raise InvalidArgument(f"weight shape {w.shape} != {want}")


def _pad(x, padding):
    if not any(padding):
        return x
    pt, ph, pw = padding
    return np.pad(x, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))


def _window(offset, stride, out_dims):
    return tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_dims))


def conv3d(x: Tensor, w: Tensor, b: Tensor | None, spec: ConvSpec) -> Tensor:
    """Cross-correlation ``y[o] = sum_{c,k} w[o,c,k] * x[c, pos+k] + b[o]``."""
    x, squeeze = _batched(x)
    _check_conv(x, w, spec)
    out_dims = spec.output_dims(x.shape[2:])
    xp = _pad(x, spec.padding)
    # accumulate channel-major, transpose once at the end
    acc = np.zeros((spec.out_channels, x.shape[0]) + out_dims)
    for off in product(*(range(k) for k in spec.kernel)):
        patch = xp[(slice(None), slice(None)) + _window(off, spec.stride, out_dims)]
        acc += np.tensordot(w[(slice(None), slice(None)) + off], patch, axes=([1], [1]))
    if b is not None:
        if b.shape != (spec.out_channels,):
            raise InvalidArgument(f"bias shape {b.shape} != ({spec.out_channels},)")
        acc += b[:, None, None, None, None]
    return _unbatch(np.ascontiguousarray(acc.transpose(1, 0, 2, 3, 4)), squeeze)


def conv3d_backward(grad_out: Tensor, x: Tensor, w: Tensor, spec: ConvSpec):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`conv3d`."""
    x, squeeze = _batched(x)
    grad_out, _ = _batched(grad_out)
    _check_conv(x, w, spec)
    out_dims = spec.output_dims(x.shape[2:])
    expect = (x.shape[0], spec.out_channels) + out_dims
    if grad_out.shape != expect:
        raise InvalidArgument(f"grad_out shape {grad_out.shape} != forward output {expect}")
    xp = _pad(x, spec.padding)
    go = grad_out.transpose(1, 0, 2, 3, 4)
    grad_w = np.empty_like(w)
    grad_xp = np.zeros((spec.in_channels, x.shape[0]) + xp.shape[2:])
    for off in product(*(range(k) for k in spec.kernel)):
        win = _window(off, spec.stride, out_dims)
        patch = xp[(slice(None), slice(None)) + win]
        grad_w[(slice(None), slice(None)) + off] = np.tensordot(
            go, patch, axes=([1, 2, 3, 4], [0, 2, 3, 4]))
        grad_xp[(slice(None), slice(None)) + win] += np.tensordot(
            w[(slice(None), slice(None)) + off], go, axes=([0], [0]))
    pt, ph, pw = spec.padding
    T, H, W = xp.shape[2:]
    grad_x = grad_xp[:, :, pt:T - pt, ph:H - ph, pw:W - pw].transpose(1, 0, 2, 3, 4)
    grad_b = grad_out.sum(axis=(0, 2, 3, 4))
    return _unbatch(np.ascontiguousarray(grad_x), squeeze), grad_w, grad_b


def transposed_conv3d(x: Tensor, w: Tensor, spec: ConvSpec, b: Tensor | None = None) -> Tensor:
    """Adjoint of :func:`conv3d`; ``w`` is laid out ``(C_in, C_out, k_t, k_h, k_w)``.

    Output length per axis is ``(n - 1) * s - 2 * p + k``.
    """
    x, squeeze = _batched(x)
    _check_conv(x, w, spec, transposed=True)
    n_in = x.shape[2:]
    spec.transposed_output_dims(n_in)
    full_dims = tuple((n - 1) * s + k for n, s, k in zip(n_in, spec.stride, spec.kernel))
    full = np.zeros((spec.out_channels, x.shape[0]) + full_dims)
    for off in product(*(range(k) for k in spec.kernel)):
        win = _window(off, spec.stride, n_in)
        full[(slice(None), slice(None)) + win] += np.tensordot(
            w[(slice(None), slice(None)) + off], x, axes=([0], [1]))
    pt, ph, pw = spec.padding
    y = full[:, :, pt:full_dims[0] - pt, ph:full_dims[1] - ph, pw:full_dims[2] - pw]
    if b is not None:
        y = y + b[:, None, None, None, None]
    return _unbatch(np.ascontiguousarray(y.transpose(1, 0, 2, 3, 4)), squeeze)


def transposed_conv3d_backward(grad_out: Tensor, x: Tensor, w: Tensor, spec: ConvSpec):
    """Returns ``(grad_x, grad_w, grad_b)`` for :func:`transposed_conv3d`."""
    x, squeeze = _batched(x)
    grad_out, _ = _batched(grad_out)
    _check_conv(x, w, spec, transposed=True)
    n_in = x.shape[2:]
    expect = (x.shape[0], spec.out_channels) + spec.transposed_output_dims(n_in)
    if grad_out.shape != expect:
        raise InvalidArgument(f"grad_out shape {grad_out.shape} != forward output {expect}")
    gfull = _pad(grad_out, spec.padding)
    grad_x = np.zeros_like(x)
    grad_w = np.empty_like(w)
    for off in product(*(range(k) for k in spec.kernel)):
        g = gfull[(slice(None), slice(None)) + _window(off, spec.stride, n_in)]
        wk = w[(slice(None), slice(None)) + off]
        grad_x += np.tensordot(g, wk, axes=([1], [1])).transpose(0, 4, 1, 2, 3)
        grad_w[(slice(None), slice(None)) + off] = np.tensordot(
            x, g, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    grad_b = grad_out.sum(axis=(0, 2, 3, 4))
    return _unbatch(grad_x, squeeze), grad_w, grad_b


# ---------------------------------------------------------------- pooling

def _pool_dims(x, kernel, stride):
    dims = []
    for axis, n, k, s in zip(_AXES, x.shape[2:], kernel, stride):
        if k > n:
            raise InvalidArgument(f"axis {axis}: pool kernel {k} larger than input {n}")
        dims.append((n - k) // s + 1)
    return tuple(dims)


def pool3d(x: Tensor, kind: str, kernel, stride=None, *, return_cache=False):
    """Max or average pooling with floor semantics.

    With ``return_cache`` the function returns ``(y, cache)`` where ``cache``
    feeds :func:`pool3d_backward`.
    """
    if kind not in ("max", "avg"):
        raise InvalidArgument(f"pool kind must be 'max' or 'avg', got {kind!r}")
    kernel = _triple(kernel)
    stride = kernel if stride is None else _triple(stride)
    x, squeeze = _batched(x)
    out_dims = _pool_dims(x, kernel, stride)
    offsets = list(product(*(range(k) for k in kernel)))
    lead = (slice(None), slice(None))
    arg = None
    if kind == "max":
        y = x[lead + _window(offsets[0], stride, out_dims)].copy()
        arg = np.zeros(y.shape, dtype=np.int32)
        for i, off in enumerate(offsets[1:], start=1):
            s = x[lead + _window(off, stride, out_dims)]
            # strict > keeps the first maximum in scan order
            upd = s > y
            y[upd] = s[upd]
            arg[upd] = i
    else:
        y = np.zeros(x.shape[:2] + out_dims)
        for off in offsets:
            y += x[lead + _window(off, stride, out_dims)]
        y /= len(offsets)
    y = _unbatch(y, squeeze)
    if return_cache:
        return y, (kind, kernel, stride, x.shape, arg, squeeze)
    return y


def pool3d_backward(grad_out: Tensor, cache) -> Tensor:
    kind, kernel, stride, in_shape, arg, squeeze = cache
    g, _ = _batched(grad_out)
    out_dims = g.shape[2:]
    offsets = list(product(*(range(k) for k in kernel)))
    grad_x = np.zeros(in_shape)
    lead = (slice(None), slice(None))
    for i, off in enumerate(offsets):
        win = lead + _window(off, stride, out_dims)
        if kind == "max":
            grad_x[win] += np.where(arg == i, g, 0.0)
        else:
            grad_x[win] += g / len(offsets)
    return _unbatch(grad_x, squeeze)


# ---------------------------------------------------------- normalization

@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1

    @classmethod
    def fresh(cls, channels: int, momentum: float = 0.1):
        return cls(np.zeros(channels), np.ones(channels), momentum)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5,
              mode: str = "train", state: BatchNormState | None = None):
    """Per-channel normalization over the batch and (T, H, W) axes.

    Returns ``(y, cache)``. In train mode the batch statistics are used and
    ``state`` (if given) has its running statistics updated in place; eval
    mode reads them instead.
    """
    if not eps > 0:
        raise InvalidArgument(f"eps must be positive, got {eps}")
    if mode not in ("train", "eval"):
        raise InvalidArgument(f"mode must be 'train' or 'eval', got {mode!r}")
    x, squeeze = _batched(x)
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise InvalidArgument(f"gamma/beta must have shape ({C},)")
    axes = (0, 2, 3, 4)
    bc = (None, slice(None), None, None, None)
    if mode == "train":
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if state is not None:
            m = x.size // C
            unbiased = var * m / (m - 1) if m > 1 else var
            state.running_mean *= 1 - state.momentum
            state.running_mean += state.momentum * mean
            state.running_var *= 1 - state.momentum
            state.running_var += state.momentum * unbiased
    else:
        if state is None:
            raise InvalidArgument("eval mode needs running statistics")
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[bc]) * inv_std[bc]
    y = gamma[bc] * xhat + beta[bc]
    return _unbatch(y, squeeze), (xhat, inv_std, gamma, mode, squeeze)


def batchnorm_backward(grad_out: Tensor, cache):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    xhat, inv_std, gamma, mode, squeeze = cache
    g, _ = _batched(grad_out)
    axes = (0, 2, 3, 4)
    bc = (None, slice(None), None, None, None)
    grad_beta = g.sum(axis=axes)
    grad_gamma = (g * xhat).sum(axis=axes)
    dxhat = g * gamma[bc]
    if mode == "eval":
        grad_x = dxhat * inv_std[bc]
    else:
        m = xhat.size // xhat.shape[1]
        grad_x = (inv_std[bc] / m) * (
            m * dxhat - dxhat.sum(axis=axes)[bc] - xhat * (dxhat * xhat).sum(axis=axes)[bc])
    return _unbatch(grad_x, squeeze), grad_gamma, grad_beta


# -------------------------------------------------------------- pointwise

def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def elementwise(x: Tensor, fn: str) -> Tensor:
    x = np.asarray(x, dtype=np.float64)
    if fn == "relu":
        return np.maximum(x, 0.0)
    if fn == "sigmoid":
        return _sigmoid(x)
    raise InvalidArgument(f"unknown pointwise function {fn!r}")


def elementwise_backward(grad_out: Tensor, x: Tensor, fn: str) -> Tensor:
    if fn == "relu":
        return grad_out * (x > 0)
    if fn == "sigmoid":
        s = _sigmoid(np.asarray(x, dtype=np.float64))
        return grad_out * s * (1.0 - s)
    raise InvalidArgument(f"unknown pointwise function {fn!r}")


def softmax_spatial(x: Tensor) -> Tensor:
    """Softmax over the last two (H, W) axes, independently per leading index."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise InvalidArgument("softmax_spatial needs at least (H, W) axes")
    z = x - x.max(axis=(-2, -1), keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=(-2, -1), keepdims=True)


def softmax_spatial_backward(grad_out: Tensor, s: Tensor) -> Tensor:
    """Backward given the forward *output* ``s``."""
    return s * (grad_out - (grad_out * s).sum(axis=(-2, -1), keepdims=True))


# --------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    """
    if not lr > 0:
        raise InvalidArgument(f"learning rate must be positive, got {lr}")
    t = state.step + 1
    new_params, m_new, v_new = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InvalidArgument(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return new_params, AdamState(t, m_new, v_new)


def kaiming_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
