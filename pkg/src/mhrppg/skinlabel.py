"""Binary skin labels from tracked facial landmarks.

Landmarks found in the first frame are tracked through the clip, the polygon
they outline is filled in every frame, and the resulting mask stack is block
averaged down to the skin-map resolution used as the BCE target.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .opticalflow import LandmarkTrack, LKParams, to_gray, track_landmarks


@dataclass
class SkinLabel:
    masks: np.ndarray                    # (T, H, W) uint8 in {0, 1}
    downsampled: np.ndarray | None = None  # (T/4, H/8, W/8) block means


def polygon_area(poly) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def fill_polygon(poly, H: int, W: int) -> np.ndarray:
    """Even-odd scanline fill sampled at pixel centres.

    Pixel ``(r, c)`` is set when its centre ``(c, r)`` is inside the polygon;
    edges are half-open in y and spans half-open in x so shared edges are not
    counted twice.
    """
    poly = np.asarray(poly, dtype=np.float64)
    mask = np.zeros((H, W), dtype=np.uint8)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    ymin, ymax = np.minimum(y0, y1), np.maximum(y0, y1)
    nonflat = y0 != y1
    cols = np.arange(W)
    r_lo = max(int(np.ceil(ymin.min())), 0)
    r_hi = min(int(np.ceil(ymax.max())), H)
    for r in range(r_lo, r_hi):
        hit = nonflat & (ymin <= r) & (r < ymax)
        if not hit.any():
            continue
        t = (r - y0[hit]) / (y1[hit] - y0[hit])
        xs = np.sort(x0[hit] + t * (x1[hit] - x0[hit]))
        for a, b in zip(xs[0::2], xs[1::2]):
            mask[r, (cols >= a) & (cols < b)] = 1
    return mask


def rasterize_skin(track, H: int, W: int) -> SkinLabel:
    """Fill the landmark ring of every frame; ring order is the landmark order."""
    pts = track.points if isinstance(track, LandmarkTrack) else np.asarray(track, dtype=float)
    if pts.ndim == 2:
        pts = pts[None]
    if pts.shape[1] < 3:
        raise InvalidArgument("need at least 3 landmarks per frame")
    masks = np.empty((pts.shape[0], H, W), dtype=np.uint8)
    for t, poly in enumerate(pts):
        if abs(polygon_area(poly)) < 1e-9:
            raise InvalidArgument(f"degenerate (zero-area) landmark polygon in frame {t}")
        masks[t] = fill_polygon(poly, H, W)
    return SkinLabel(masks)


def downsample_label(masks, t_factor: int = 4, s_factor: int = 8) -> np.ndarray:
    """Block mean over ``t_factor x s_factor x s_factor`` cells."""
    if isinstance(masks, SkinLabel):
        masks = masks.masks
    m = np.asarray(masks, dtype=np.float64)
    T, H, W = m.shape
    if T % t_factor or H % s_factor or W % s_factor:
        raise InvalidArgument(
            f"label {m.shape} not divisible by ({t_factor}, {s_factor}, {s_factor})")
    blocks = m.reshape(T // t_factor, t_factor, H // s_factor, s_factor, W // s_factor, s_factor)
    return blocks.mean(axis=(1, 3, 5))


def generate_labels(frames, seed_landmarks, params: LKParams = LKParams(),
                    t_factor: int = 4, s_factor: int = 8):
    """Track ``seed_landmarks`` through ``frames`` and rasterise skin labels.

    ``frames`` is an RGB ``(3, T, H, W)`` clip or a gray ``(T, H, W)`` stack.
    Returns ``(SkinLabel, LandmarkTrack)``.
    """
    frames = np.asarray(frames, dtype=np.float64)
    gray = to_gray(frames) if frames.ndim == 4 else frames
    track = track_landmarks(gray, seed_landmarks, params)
    T, H, W = gray.shape
    label = rasterize_skin(track, H, W)
    label.downsampled = downsample_label(label.masks, t_factor, s_factor)
    return label, track


def mask_centroids(masks) -> np.ndarray:
    """``(T, 2)`` array of (x, y) centroids."""
    m = np.asarray(masks, dtype=np.float64)
    ys, xs = np.mgrid[0:m.shape[1], 0:m.shape[2]]
    area = m.sum(axis=(1, 2))
    return np.stack([(m * xs).sum(axis=(1, 2)) / area, (m * ys).sum(axis=(1, 2)) / area], axis=1)
