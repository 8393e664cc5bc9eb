"""Multi-hierarchical 3-D convolutional rPPG network.

Four stages: low-level face features (LFFG), stacked spatio-temporal
convolution (STSC), multi-hierarchical feature fusion (channel-feature and
skin-map branches fused into a spatial weight mask) and the signal predictor
(temporal upsampling, spatial pooling, channel projection).

Shapes for a batch of ``N`` clips of ``3 x T x H x W``::

    f_l               N x 32 x T   x H/2 x W/2
    f_h               N x 64 x T/4 x H/8 x W/8
    f_c, f_s, M_w     N x T/4 x H/8 x W/8
    f_roi             N x 64 x T/4 x H/8 x W/8
    f_up              N x 64 x T   x H/8 x W/8
    f_roi_up          N x 64 x T   x 1   x 1     (after spatial pooling)
    rppg              N x T

``T/4`` is rounded up: when ``T`` is not a multiple of 4 the low-level features
are zero-padded in time to ``4 * ceil(T / 4)`` frames before the strided stages
and the predicted signal is cropped back to ``T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor_core as tc
from .errors import ConfigError, InvalidArgument
from .layers import (Activation, BatchNorm3d, Conv3d, Layer, Pool3d, Sequential,
                     TransposedConv3d, conv_bn_relu)


@dataclass(frozen=True)
class NetworkConfig:
    T: int = 150
    H: int = 112
    W: int = 112
    use_cfeature: bool = True
    use_skinmap: bool = True
    lffg_channels: int = 32
    stsc_channels: int = 64
    skin_channels: int = 16
    cfeature_hidden: int = 4
    rescale_mask: bool = True
    stsc_pool: str = "max"

    def __post_init__(self):
        if self.T < 4:
            raise ConfigError(f"T must be at least 4, got {self.T}")
        for name in ("H", "W"):
            v = getattr(self, name)
            if v < 16 or v % 8:
                raise ConfigError(f"{name} must be >= 16 and divisible by 8, got {v}")
        if self.stsc_pool not in ("max", "avg"):
            raise ConfigError(f"stsc_pool must be 'max' or 'avg', got {self.stsc_pool!r}")

    @property
    def padded_T(self):
        return 4 * math.ceil(self.T / 4)

    @property
    def mask_dims(self):
        return (self.padded_T // 4, self.H // 8, self.W // 8)


@dataclass
class ForwardTrace:
    f_l: np.ndarray
    f_h: np.ndarray
    f_c: np.ndarray
    f_s: np.ndarray
    M_w: np.ndarray
    f_roi: np.ndarray
    f_up: np.ndarray
    f_roi_up: np.ndarray
    rppg: np.ndarray

    def squeezed(self) -> "ForwardTrace":
        return ForwardTrace(**{f.name: getattr(self, f.name)[0] for f in fields(self)})


def _pad_time(x, T_pad):
    # zero frames: constant, so they never tie with live values in a max pool
    T = x.shape[2]
    if T == T_pad:
        return x
    pad = np.zeros(x.shape[:2] + (T_pad - T,) + x.shape[3:])
    return np.concatenate([x, pad], axis=2)


def _pad_time_backward(g, T):
    return g if g.shape[2] == T else np.ascontiguousarray(g[:, :, :T])


def _upsample_spec(channels):
    # k=4, s=2, p=1 gives exactly 2n output frames
    return tc.ConvSpec(channels, channels, (4, 1, 1), (2, 1, 1), (1, 0, 0))


class MultiHierarchicalNet(Layer):
    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c1, c2, cs = config.lffg_channels, config.stsc_channels, config.skin_channels

        self.lffg = Sequential(
            *conv_bn_relu(3, c1, (1, 5, 5), rng),
            Pool3d("max", (1, 2, 2)),
            *conv_bn_relu(c1, c1, 3, rng),
            *conv_bn_relu(c1, c1, 3, rng),
        )
        pool = config.stsc_pool
        self.stsc1 = Sequential(*conv_bn_relu(c1, c2, 3, rng), *conv_bn_relu(c2, c2, 3, rng),
                                Pool3d(pool, 2, 2))
        self.stsc2 = Sequential(*conv_bn_relu(c2, c2, 3, rng), *conv_bn_relu(c2, c2, 3, rng),
                                Pool3d(pool, 2, 2))

        hid = config.cfeature_hidden
        self.cfeature = Sequential(
            Conv3d(tc.ConvSpec(1, hid, 1), rng), Activation("relu"),
            Conv3d(tc.ConvSpec(hid, 1, 1), rng))

        self.skin_backbone = Sequential(
            *conv_bn_relu(c1, cs, (1, 3, 3), rng),
            Conv3d(tc.ConvSpec.same(cs, cs, (1, 3, 3)), rng, bias=False), BatchNorm3d(cs))
        self.skin_skip = Conv3d(tc.ConvSpec(c1, cs, 1), rng)
        self.skin_head = Conv3d(tc.ConvSpec.same(cs, 1, (1, 3, 3)), rng)
        self.skin_pool = Pool3d("avg", 2, 2)

        up = _upsample_spec(c2)
        for n in (config.padded_T // 4, config.padded_T // 2):
            if up.transposed_output_dims((n, 1, 1))[0] != 2 * n:
                raise ConfigError(f"temporal upsampling does not double length {n}")
        self.sp_up1 = Sequential(TransposedConv3d(up, rng, bias=False), BatchNorm3d(c2),
                                 Activation("relu"))
        self.sp_up2 = Sequential(TransposedConv3d(up, rng, bias=False), BatchNorm3d(c2),
                                 Activation("relu"))
        self.sp_proj = Conv3d(tc.ConvSpec(c2, 1, 1), rng)

    def children(self):
        return {
            "lffg": self.lffg, "stsc1": self.stsc1, "stsc2": self.stsc2,
            "cfeature": self.cfeature, "skin_backbone": self.skin_backbone,
            "skin_skip": self.skin_skip, "skin_head": self.skin_head,
            "sp_up1": self.sp_up1, "sp_up2": self.sp_up2, "sp_proj": self.sp_proj,
        }

    # ------------------------------------------------------------ stages

    def lffg_forward(self, clip):
        return self.lffg.forward(clip)

    def stsc_forward(self, f_l):
        if f_l.shape[2] % 4:
            raise ConfigError(f"temporal length {f_l.shape[2]} not divisible by 4")
        h1, c1 = self.stsc1.forward(f_l)
        f_h, c2 = self.stsc2.forward(h1)
        return f_h, (c1, c2)

    def stsc_backward(self, g, cache):
        c1, c2 = cache
        return self.stsc1.backward(self.stsc2.backward(g, c2), c1)

    def cfeature_forward(self, f_h):
        mx = f_h.max(axis=1, keepdims=True)
        arg = f_h.argmax(axis=1)
        av = f_h.mean(axis=1, keepdims=True)
        a, ca = self.cfeature.forward(mx)
        b, cb = self.cfeature.forward(av)
        pre = a + b
        f_c = tc.elementwise(pre, "sigmoid")[:, 0]
        return f_c, (pre, ca, cb, arg, f_h.shape)

    def cfeature_backward(self, g_fc, cache):
        pre, ca, cb, arg, shape = cache
        g_pre = tc.elementwise_backward(g_fc[:, None], pre, "sigmoid")
        g_mx = self.cfeature.backward(g_pre, ca)[:, 0]
        g_av = self.cfeature.backward(g_pre, cb)[:, 0]
        g = np.broadcast_to(g_av[:, None] / shape[1], shape).copy()
        n, t, h, w = np.indices(arg.shape, sparse=True)
        g[n, arg, t, h, w] += g_mx
        return g

    def skinmap_forward(self, f_l):
        bb, cbb = self.skin_backbone.forward(f_l)
        sk, csk = self.skin_skip.forward(f_l)
        res = bb + sk
        r = tc.elementwise(res, "relu")
        head, chead = self.skin_head.forward(r)
        sg = tc.elementwise(head, "sigmoid")
        p1, cp1 = self.skin_pool.forward(sg)
        p2, cp2 = self.skin_pool.forward(p1)
        return p2[:, 0], (cbb, csk, res, chead, head, cp1, cp2)

    def skinmap_backward(self, g_fs, cache):
        cbb, csk, res, chead, head, cp1, cp2 = cache
        g = self.skin_pool.backward(g_fs[:, None], cp2)
        g = self.skin_pool.backward(g, cp1)
        g = tc.elementwise_backward(g, head, "sigmoid")
        g = self.skin_head.backward(g, chead)
        g = tc.elementwise_backward(g, res, "relu")
        return self.skin_backbone.backward(g, cbb) + self.skin_skip.backward(g, csk)

    def mhff_forward(self, f_h, f_c, f_s):
        """Weight mask ``M_w`` from ``f_c + f_s`` and the channel-wise product."""
        if f_c.shape != f_s.shape or f_c.shape != f_h.shape[:1] + f_h.shape[2:]:
            raise InvalidArgument(
                f"mask inputs {f_c.shape}/{f_s.shape} do not match features {f_h.shape}")
        sm = tc.softmax_spatial(f_c + f_s)
        scale = sm.shape[-1] * sm.shape[-2] if self.config.rescale_mask else 1.0
        m_w = sm * scale
        return m_w, f_h * m_w[:, None], (sm, scale, m_w)

    def mhff_backward(self, g_roi, f_h, cache):
        sm, scale, m_w = cache
        g_fh = g_roi * m_w[:, None]
        g_m = (g_roi * f_h).sum(axis=1)
        g_logits = tc.softmax_spatial_backward(g_m * scale, sm)
        return g_fh, g_logits

    def sp_forward(self, f_roi):
        u1, c1 = self.sp_up1.forward(f_roi)
        f_up, c2 = self.sp_up2.forward(u1)
        pooled = f_up.mean(axis=(3, 4), keepdims=True)
        out, c3 = self.sp_proj.forward(pooled)
        return out[:, 0, :, 0, 0], f_up, pooled, (c1, c2, c3, f_up.shape)

    def sp_backward(self, g_rppg, cache):
        c1, c2, c3, up_shape = cache
        g = self.sp_proj.backward(g_rppg[:, None, :, None, None], c3)
        g = np.broadcast_to(g / (up_shape[3] * up_shape[4]), up_shape).copy()
        return self.sp_up1.backward(self.sp_up2.backward(g, c2), c1)

    # ------------------------------------------------------------ whole graph

    def check_input(self, clip):
        cfg = self.config
        want = (3, cfg.T, cfg.H, cfg.W)
        if clip.ndim != 5 or clip.shape[1:] != want:
            raise InvalidArgument(f"clip shape {clip.shape} does not match (N,)+{want}")

    def forward(self, clip):
        """Run all stages on a ``(N, 3, T, H, W)`` batch; returns ``(trace, cache)``."""
        clip = np.asarray(clip, dtype=np.float64)
        self.check_input(clip)
        cfg = self.config
        f_l, c_l = self.lffg_forward(clip)
        f_lp = _pad_time(f_l, cfg.padded_T)
        f_h, c_h = self.stsc_forward(f_lp)
        zeros = np.zeros((clip.shape[0],) + cfg.mask_dims)
        f_c, c_c = self.cfeature_forward(f_h) if cfg.use_cfeature else (zeros, None)
        f_s, c_s = self.skinmap_forward(f_lp) if cfg.use_skinmap else (zeros.copy(), None)
        m_w, f_roi, c_m = self.mhff_forward(f_h, f_c, f_s)
        rppg, f_up, pooled, c_p = self.sp_forward(f_roi)
        T = cfg.T
        trace = ForwardTrace(f_l, f_h, f_c, f_s, m_w, f_roi, f_up[:, :, :T], pooled[:, :, :T],
                             rppg[:, :T])
        return trace, (c_l, c_h, c_c, c_s, c_m, c_p, f_h)

    def backward(self, cache, grad_rppg, grad_fs=None):
        """Accumulate parameter gradients; returns the gradient w.r.t. the clip.

        ``grad_fs`` is an extra gradient arriving directly at the skin map
        (the skin-label loss).
        """
        c_l, c_h, c_c, c_s, c_m, c_p, f_h = cache
        T, Tp = self.config.T, self.config.padded_T
        grad_rppg = np.asarray(grad_rppg, dtype=np.float64)
        if Tp != T:
            grad_rppg = np.concatenate(
                [grad_rppg, np.zeros(grad_rppg.shape[:1] + (Tp - T,))], axis=1)
        g_roi = self.sp_backward(grad_rppg, c_p)
        g_fh, g_logits = self.mhff_backward(g_roi, f_h, c_m)
        g_fl = None
        if c_s is not None:
            g_fs = g_logits if grad_fs is None else g_logits + grad_fs
            g_fl = self.skinmap_backward(g_fs, c_s)
        if c_c is not None:
            g_fh = g_fh + self.cfeature_backward(g_logits, c_c)
        g = self.stsc_backward(g_fh, c_h)
        if g_fl is not None:
            g = g + g_fl
        return self.lffg.backward(_pad_time_backward(g, T), c_l)

    def zero_grad(self):
        for p in self.named_params().values():
            p.zero_grad()

    def state_dict(self) -> dict:
        out = {k: p.data.copy() for k, p in self.named_params().items()}
        out.update({k: b.copy() for k, b in self.named_buffers().items()})
        return out

    def load_state_dict(self, state: dict):
        targets = {k: p.data for k, p in self.named_params().items()}
        targets.update(self.named_buffers())
        missing = sorted(set(targets) - set(state))
        extra = sorted(set(state) - set(targets))
        if missing or extra:
            raise ConfigError(f"checkpoint/config mismatch: missing {missing[:5]}, "
                              f"unexpected {extra[:5]}")
        for k, dst in targets.items():
            src = np.asarray(state[k], dtype=np.float64)
            if src.shape != dst.shape:
                raise ConfigError(f"checkpoint/config mismatch at {k}: "
                                  f"checkpoint {src.shape} vs network {dst.shape}")
            dst[...] = src


def full_forward(net: MultiHierarchicalNet, clip) -> ForwardTrace:
    """Forward a single ``(3, T, H, W)`` clip (or a batch) and return the trace."""
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim == 4:
        trace, _ = net.forward(clip[None])
        return trace.squeezed()
    return net.forward(clip)[0]
