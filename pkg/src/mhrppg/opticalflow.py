"""Pyramidal Lucas-Kanade sparse point tracking.

Coordinates are ``(x, y)`` = (column, row) with pixel centres on integers.
Tracking runs coarse to fine: the guess at the top level starts at zero, each
level refines a residual displacement ``d`` by iterated least squares, and the
guess handed to the next finer level is ``2 * (g + d)``. The final flow is
``g0 + d0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, TrackingError

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LKParams:
    window: int = 15
    max_iter: int = 20
    eps: float = 0.01
    levels: int = 3
    min_eig: float = 1e-7
    max_lost_fraction: float = 0.5


@dataclass
class Pyramid:
    levels: list

    @property
    def L(self):
        return len(self.levels) - 1

    def __getitem__(self, i):
        return self.levels[i]


@dataclass
class FlowResult:
    v: np.ndarray
    converged: bool
    residual: float


@dataclass
class LandmarkTrack:
    points: np.ndarray     # (T, n, 2) as (x, y)
    converged: np.ndarray  # (T, n) bool

    @property
    def T(self):
        return self.points.shape[0]


def to_gray(rgb) -> np.ndarray:
    """Luma of a ``(3, ..., H, W)`` array (channel axis first)."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return np.tensordot(LUMA, rgb, axes=([0], [0]))


def _reduce(img):
    H, W = img.shape
    if H % 2 or W % 2:
        img = np.pad(img, ((0, H % 2), (0, W % 2)), mode="edge")
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def build_pyramid(frame, L: int, min_size: int = 4) -> Pyramid:
    """Level 0 is ``frame``; level ``l`` has size ``ceil(H / 2**l) x ceil(W / 2**l)``."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise InvalidArgument(f"expected a 2-D gray frame, got shape {frame.shape}")
    if L < 0:
        raise InvalidArgument(f"level count must be >= 0, got {L}")
    smallest = -(-min(frame.shape) // 2 ** L)
    if smallest < min_size:
        raise InvalidArgument(
            f"frame {frame.shape} too small for {L} levels (top level {smallest} < {min_size})")
    levels = [frame]
    for _ in range(L):
        levels.append(_reduce(levels[-1]))
    return Pyramid(levels)


def bilinear(img, xs, ys):
    """Sample ``img`` at float coordinates; out-of-range samples clamp to the border."""
    H, W = img.shape
    xs = np.clip(xs, 0.0, W - 1.0)
    ys = np.clip(ys, 0.0, H - 1.0)
    x0 = np.minimum(np.floor(xs).astype(int), W - 2) if W > 1 else np.zeros_like(xs, int)
    y0 = np.minimum(np.floor(ys).astype(int), H - 2) if H > 1 else np.zeros_like(ys, int)
    ax, ay = xs - x0, ys - y0
    x1, y1 = np.minimum(x0 + 1, W - 1), np.minimum(y0 + 1, H - 1)
    return ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x1])
            + ay * ((1 - ax) * img[y1, x0] + ax * img[y1, x1]))


def _gradients(img):
    gy, gx = np.gradient(img)
    return gx, gy


def track_point(prev: Pyramid, nxt: Pyramid, u, params: LKParams = LKParams(),
                prev_grads=None) -> FlowResult:
    """Track one point from ``prev`` to ``nxt``; returns the new position ``v``."""
    u = np.asarray(u, dtype=np.float64)
    L = min(params.levels, prev.L, nxt.L)
    half = params.window // 2
    offs = np.arange(-half, half + 1, dtype=np.float64)
    wx, wy = np.meshgrid(offs, offs)
    wx, wy = wx.ravel(), wy.ravel()
    H0, W0 = prev[0].shape
    if not (0 <= u[0] <= W0 - 1 and 0 <= u[1] <= H0 - 1):
        return FlowResult(u.copy(), False, np.inf)

    g = np.zeros(2)
    d = np.zeros(2)
    step = 0.0
    for level in range(L, -1, -1):
        I, J = prev[level], nxt[level]
        Hl, Wl = I.shape
        gx_img, gy_img = prev_grads[level] if prev_grads is not None else _gradients(I)
        p = u / 2 ** level
        px, py = p[0] + wx, p[1] + wy
        Iw = bilinear(I, px, py)
        Ix = bilinear(gx_img, px, py)
        Iy = bilinear(gy_img, px, py)
        G = np.array([[Ix @ Ix, Ix @ Iy], [Ix @ Iy, Iy @ Iy]])
        if np.linalg.eigvalsh(G)[0] < params.min_eig * len(wx):
            return FlowResult(u + g * 2 ** level, False, np.inf)
        Ginv = np.linalg.inv(G)
        d = np.zeros(2)
        step = np.inf
        for _ in range(params.max_iter):
            q = p + g + d
            if not (-0.5 <= q[0] <= Wl - 0.5 and -0.5 <= q[1] <= Hl - 0.5):
                return FlowResult(u + (g + d) * 2 ** level, False, np.inf)
            diff = Iw - bilinear(J, px + g[0] + d[0], py + g[1] + d[1])
            delta = Ginv @ np.array([diff @ Ix, diff @ Iy])
            d += delta
            step = float(np.hypot(*delta))
            if step < params.eps:
                break
        if level > 0:
            g = 2 * (g + d)
    flow = g + d
    v = u + flow
    inside = 0 <= v[0] <= W0 - 1 and 0 <= v[1] <= H0 - 1
    return FlowResult(v, bool(step < params.eps and inside), step)


def track_landmarks(frames, seed, params: LKParams = LKParams()) -> LandmarkTrack:
    """Chain :func:`track_point` frame to frame for every seed point.

    ``frames`` is a ``(T, H, W)`` gray stack. A lost point keeps its last
    position; losing more than ``max_lost_fraction`` of the points raises.
    """
    frames = np.asarray(frames, dtype=np.float64)
    seed = np.asarray(seed, dtype=np.float64)
    if frames.ndim != 3:
        raise InvalidArgument(f"expected (T, H, W) frames, got {frames.shape}")
    if seed.ndim != 2 or seed.shape[1] != 2:
        raise InvalidArgument(f"seed must be (n, 2), got {seed.shape}")
    T, H, W = frames.shape
    if np.any(seed[:, 0] < 0) or np.any(seed[:, 0] > W - 1) or \
            np.any(seed[:, 1] < 0) or np.any(seed[:, 1] > H - 1):
        raise InvalidArgument("seed points must lie inside frame 0")
    n = len(seed)
    pts = np.empty((T, n, 2))
    ok = np.ones((T, n), dtype=bool)
    pts[0] = seed
    L = params.levels
    prev = build_pyramid(frames[0], L, min_size=1)
    for t in range(1, T):
        nxt = build_pyramid(frames[t], L, min_size=1)
        grads = [_gradients(im) for im in prev.levels]
        lost = 0
        for i in range(n):
            res = track_point(prev, nxt, pts[t - 1, i], params, prev_grads=grads)
            if res.converged or np.isfinite(res.residual):
                pts[t, i] = res.v
            else:
                pts[t, i] = pts[t - 1, i]
            ok[t, i] = res.converged
            lost += not res.converged
        if lost > params.max_lost_fraction * n:
            raise TrackingError(f"lost {lost}/{n} points at frame {t}", frame=t)
        prev = nxt
    return LandmarkTrack(pts, ok)
