"""Clip I/O, manifests and the synthetic pulsatile-face generator.

File formats (all little-endian):

* raw clip container: 8-byte magic ``RPPGRAW1``, uint32 ``C, T, H, W``, then
  ``C*T*H*W`` float64 values in C-order.
* frame sequences: 8-bit binary PPM (RGB) / PGM (gray), one file per frame,
  read in sorted filename order.
* PPG: CSV with header ``time_s,value``.
* landmark seed: CSV with header ``index,x,y`` (frame-0 pixel coordinates);
  the row order defines the polygon ring.
* manifest: ``key = value`` lines, ``#`` comments; relative paths resolve
  against the manifest's directory. Keys: ``frames`` and ``fps`` (required),
  ``id``, ``crop`` (``x,y,w,h``), ``landmarks``, ``ppg``, ``hr``, ``skin``
  (raw container of full-resolution masks at the resized clip size).
"""
from __future__ import annotations

import configparser
import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .dsp import HR_BAND, RppgSignal, estimate_hr
from .errors import DataError, InvalidArgument
from .opticalflow import bilinear

RAW_MAGIC = b"RPPGRAW1"
N_LANDMARKS = 29


@dataclass
class VideoClip:
    frames: np.ndarray  # (3, T, H, W) in [0, 1]
    fps: float
    meta: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.frames.shape[1]


# ------------------------------------------------------------ raw container

def save_raw(path, array):
    a = np.asarray(array, dtype="<f8")
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4:
        raise InvalidArgument(f"raw container holds (C, T, H, W) arrays, got {a.shape}")
    with open(path, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<4I", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def load_raw(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != RAW_MAGIC:
            raise DataError(f"{path}: not a raw clip container")
        shape = struct.unpack("<4I", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise DataError(f"{path}: expected {np.prod(shape)} values, found {data.size}")
    return data.reshape(shape).astype(np.float64)


# ------------------------------------------------------------ frame images

def write_frames(directory, frames, prefix="frame"):
    """Write ``(3, T, H, W)`` as PPM or ``(T, H, W)`` as PGM, quantised to 8 bits."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    a = np.asarray(frames)
    if a.dtype != np.uint8:
        a = np.clip(np.rint(np.asarray(a, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    if a.ndim == 4:
        for t in range(a.shape[1]):
            Image.fromarray(np.moveaxis(a[:, t], 0, -1), "RGB").save(d / f"{prefix}_{t:05d}.ppm")
    elif a.ndim == 3:
        for t in range(a.shape[0]):
            Image.fromarray(a[t], "L").save(d / f"{prefix}_{t:05d}.pgm")
    else:
        raise InvalidArgument(f"cannot write frames of shape {a.shape}")


def write_mask_sequence(directory, masks):
    """Binary masks as PGM images holding 0 / 255."""
    write_frames(directory, (np.asarray(masks) > 0).astype(np.uint8) * 255, prefix="mask")


def read_frames(directory) -> np.ndarray:
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
    if not files:
        raise DataError(f"no PPM/PGM frames in {directory}")
    imgs = [np.asarray(Image.open(f).convert("RGB"), dtype=np.float64) / 255.0 for f in files]
    return np.moveaxis(np.stack(imgs), -1, 0)


# ------------------------------------------------------------- CSV helpers

def write_signal_csv(path, values, fs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "time_s", "value"])
        for i, v in enumerate(values):
            w.writerow([i, repr(i / fs), repr(float(v))])


def read_signal_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(row["value"]) for row in csv.DictReader(fh)])


def write_ppg_csv(path, times, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "value"])
        for t, v in zip(times, values):
            w.writerow([repr(float(t)), repr(float(v))])


def read_ppg_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: empty PPG file")
    t = np.array([float(r["time_s"]) for r in rows])
    v = np.array([float(r["value"]) for r in rows])
    return t, v


def write_landmarks_csv(path, points):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y"])
        for i, (x, y) in enumerate(points):
            w.writerow([i, repr(float(x)), repr(float(y))])


def read_landmarks_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) < 3:
        raise DataError(f"{path}: need at least 3 landmarks")
    return np.array([[float(r["x"]), float(r["y"])] for r in rows])


def write_track_csv(path, track):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "landmark", "x", "y", "converged"])
        for t in range(track.points.shape[0]):
            for i in range(track.points.shape[1]):
                x, y = track.points[t, i]
                w.writerow([t, i, repr(float(x)), repr(float(y)), int(track.converged[t, i])])


# ----------------------------------------------------------------- manifest

@dataclass
class ClipManifest:
    frames: Path
    fps: float
    crop: tuple | None = None   # (x, y, w, h)
    landmarks: Path | None = None
    ppg: Path | None = None
    hr: float | None = None
    clip_id: str = ""
    skin: Path | None = None    # raw container of full-resolution masks

    def __post_init__(self):
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")


def read_manifest(path) -> ClipManifest:
    path = Path(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string("[clip]\n" + path.read_text())
    except (OSError, configparser.Error) as exc:
        raise DataError(f"{path}: {exc}") from exc
    s = cp["clip"]
    base = path.parent

    def opt_path(key):
        return base / s[key] if key in s and s[key].strip() else None

    if "frames" not in s or "fps" not in s:
        raise DataError(f"{path}: manifest needs 'frames' and 'fps'")
    crop = tuple(int(v) for v in s["crop"].split(",")) if "crop" in s else None
    if crop is not None and len(crop) != 4:
        raise DataError(f"{path}: crop must be x,y,w,h")
    return ClipManifest(
        frames=base / s["frames"], fps=float(s["fps"]), crop=crop,
        landmarks=opt_path("landmarks"), ppg=opt_path("ppg"),
        hr=float(s["hr"]) if "hr" in s else None,
        clip_id=s.get("id", path.stem), skin=opt_path("skin"))


def write_manifest(path, frames, fps, crop=None, landmarks=None, ppg=None, hr=None,
                   clip_id=None, skin=None):
    lines = [f"frames = {frames}", f"fps = {fps!r}"]
    if clip_id:
        lines.append(f"id = {clip_id}")
    if crop is not None:
        lines.append("crop = " + ",".join(str(int(v)) for v in crop))
    if landmarks:
        lines.append(f"landmarks = {landmarks}")
    if ppg:
        lines.append(f"ppg = {ppg}")
    if hr is not None:
        lines.append(f"hr = {hr!r}")
    if skin:
        lines.append(f"skin = {skin}")
    Path(path).write_text("\n".join(lines) + "\n")


# -------------------------------------------------------------- loading

def resize_bilinear(frames, size) -> np.ndarray:
    """Resize the last two axes of ``frames`` with half-pixel-centre alignment."""
    frames = np.asarray(frames, dtype=np.float64)
    H_in, W_in = frames.shape[-2:]
    H, W = size
    if (H, W) == (H_in, W_in):
        return frames.copy()
    ys = (np.arange(H) + 0.5) * H_in / H - 0.5
    xs = (np.arange(W) + 0.5) * W_in / W - 0.5
    gx, gy = np.meshgrid(xs, ys)
    flat = frames.reshape(-1, H_in, W_in)
    out = np.stack([bilinear(img, gx, gy) for img in flat])
    return out.reshape(frames.shape[:-2] + (H, W))


def transform_points(points, crop, in_size, size):
    """Map frame coordinates into the cropped-and-resized coordinate system."""
    pts = np.asarray(points, dtype=np.float64).copy()
    x0, y0, w, h = crop if crop is not None else (0, 0, in_size[1], in_size[0])
    H, W = size
    pts[..., 0] = (pts[..., 0] - x0 + 0.5) * W / w - 0.5
    pts[..., 1] = (pts[..., 1] - y0 + 0.5) * H / h - 0.5
    return pts


def crop_and_resize(frames, crop, size):
    C, T, H0, W0 = frames.shape
    if crop is not None:
        x, y, w, h = crop
        if x < 0 or y < 0 or w <= 0 or h <= 0 or x + w > W0 or y + h > H0:
            raise DataError(f"crop box {crop} outside frame {W0}x{H0}")
        frames = frames[:, :, y:y + h, x:x + w]
    return resize_bilinear(frames, size) if size is not None else frames.copy()


def resample_ppg(times, values, fps, n, start_time=0.0):
    """Linearly interpolate a PPG trace at ``n`` frame instants."""
    t_frames = start_time + np.arange(n) / fps
    tol = 1.0 / fps
    if t_frames[0] < times[0] - tol or t_frames[-1] > times[-1] + tol:
        raise DataError(
            f"PPG covers [{times[0]:.3f}, {times[-1]:.3f}] s but the clip spans "
            f"[{t_frames[0]:.3f}, {t_frames[-1]:.3f}] s")
    return np.interp(t_frames, times, values)


def load_clip(manifest, size=(112, 112), T: int | None = None, start: int = 0):
    """Load, crop, resize and trim a clip; align its PPG to the frame clock.

    Returns ``(VideoClip, RppgSignal | None, hr_bpm | None)``.
    """
    if not isinstance(manifest, ClipManifest):
        manifest = read_manifest(manifest)
    src = manifest.frames
    if not src.exists():
        raise DataError(f"missing frames: {src}")
    raw = read_frames(src) if src.is_dir() else load_raw(src)
    if raw.shape[0] != 3:
        raise DataError(f"{src}: expected 3 colour channels, got {raw.shape[0]}")
    total = raw.shape[1]
    T = total - start if T is None else T
    if start < 0 or T < 1 or start + T > total:
        raise DataError(f"requested frames [{start}, {start + T}) but only {total} available")
    raw = raw[:, start:start + T]
    frames = np.clip(crop_and_resize(raw, manifest.crop, size), 0.0, 1.0)
    clip = VideoClip(frames, manifest.fps, {"source": str(src), "clip_id": manifest.clip_id,
                                            "start": start, "in_size": raw.shape[2:],
                                            "crop": manifest.crop})
    ppg = None
    if manifest.ppg is not None:
        if not manifest.ppg.exists():
            raise DataError(f"missing PPG file {manifest.ppg}")
        t, v = read_ppg_csv(manifest.ppg)
        ppg = RppgSignal(resample_ppg(t, v, manifest.fps, T, start / manifest.fps), manifest.fps)
    hr = manifest.hr
    if hr is None and ppg is not None and T >= 8:
        hr = estimate_hr(ppg.values, manifest.fps)
    return clip, ppg, hr


def segment_starts(total: int, T: int, stride: int) -> list:
    if T > total:
        raise InvalidArgument(f"window {T} longer than {total} frames")
    if T < 1 or stride < 1:
        raise InvalidArgument("window and stride must be positive")
    return list(range(0, total - T + 1, stride))


def segment_clips(clip: VideoClip, T: int, stride: int) -> list:
    return [VideoClip(clip.frames[:, s:s + T].copy(), clip.fps, {**clip.meta, "start": s})
            for s in segment_starts(clip.T, T, stride)]


# ------------------------------------------------------------- synthetic

@dataclass
class SynthSpec:
    hr: float = 72.0
    fps: float = 30.0
    T: int = 450
    H: int = 64
    W: int = 64
    face_center: tuple | None = None      # (x, y); default frame centre
    face_radii: tuple | None = None       # (rx, ry); default (0.3 W, 0.38 H)
    landmark_ring: float = 0.6            # ring radius as a fraction of the face radii
    skin_rgb: tuple = (0.75, 0.55, 0.45)
    background_rgb: tuple = (0.35, 0.40, 0.45)
    pulse_amplitude: tuple = (0.0033, 0.0077, 0.0053)  # relative, per channel
    harmonic: float = 0.3
    noise_std: float = 0.0
    drift: tuple = (0.0, 0.0)             # px / frame
    flicker_amplitude: float = 0.0
    flicker_hz: float = 1.5
    distractor_amplitude: float = 0.0     # periodic background modulation
    distractor_hz: float = 2.0
    texture_contrast: float = 0.25
    background_contrast: float = 0.03
    n_landmarks: int = N_LANDMARKS

    def __post_init__(self):
        lo, hi = 60 * HR_BAND[0], 60 * HR_BAND[1]
        if not lo <= self.hr <= hi:
            raise InvalidArgument(f"hr must lie in [{lo}, {hi}] bpm, got {self.hr}")
        if max(abs(a) for a in self.pulse_amplitude) >= 0.2:
            raise InvalidArgument("pulse amplitudes must be small (< 0.2)")
        if self.fps <= 0 or self.T < 1 or self.H < 4 or self.W < 4:
            raise InvalidArgument("fps, T, H, W must be positive")


@dataclass
class SyntheticClip:
    clip: VideoClip
    ppg: RppgSignal
    hr: float
    landmarks: np.ndarray  # (T, n, 2)


def pulse_waveform(t, hr, harmonic=0.3):
    w = 2 * math.pi * hr / 60.0
    return np.sin(w * t) + harmonic * np.sin(2 * w * t + math.pi / 4)


def _spots(rng, n, spread, scale, contrast):
    pos = rng.uniform(-1, 1, size=(n, 2)) * spread
    sig = rng.uniform(1.5, 3.0, size=n) * scale
    amp = rng.uniform(-1, 1, size=n) * contrast
    return pos, sig, amp


def _texture(xs, ys, spots):
    pos, sig, amp = spots
    out = np.zeros_like(xs)
    for (px, py), s, a in zip(pos, sig, amp):
        out += a * np.exp(-((xs - px) ** 2 + (ys - py) ** 2) / (2 * s * s))
    return out


def generate_synthetic(spec: SynthSpec, seed: int = 0) -> SyntheticClip:
    """Render a textured elliptical skin patch pulsing at ``spec.hr``."""
    rng = np.random.default_rng(seed)
    H, W, T = spec.H, spec.W, spec.T
    cx, cy = spec.face_center if spec.face_center is not None else ((W - 1) / 2, (H - 1) / 2)
    rx, ry = spec.face_radii if spec.face_radii is not None else (0.3 * W, 0.38 * H)
    scale = min(H, W) / 64.0
    face_spots = _spots(rng, 40, np.array([rx, ry]), scale, spec.texture_contrast)
    bg_spots = _spots(rng, 30, np.array([W / 2, H / 2]), 2 * scale, spec.background_contrast)

    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    bg_tex = _texture(xs - W / 2, ys - H / 2, bg_spots)
    times = np.arange(T) / spec.fps
    amp = np.asarray(spec.pulse_amplitude, dtype=np.float64)
    wave = pulse_waveform(times, spec.hr, spec.harmonic)
    skin = np.asarray(spec.skin_rgb)[:, None, None]
    bg = np.asarray(spec.background_rgb)[:, None, None] * (1 + bg_tex)
    dx, dy = spec.drift
    frames = np.empty((3, T, H, W))
    angles = 2 * np.pi * np.arange(spec.n_landmarks) / spec.n_landmarks
    ring = np.stack([spec.landmark_ring * rx * np.cos(angles),
                     spec.landmark_ring * ry * np.sin(angles)], axis=1)
    landmarks = np.empty((T, spec.n_landmarks, 2))
    edge = max(min(rx, ry), 1.0)
    for t in range(T):
        fx, fy = cx + dx * t, cy + dy * t
        rel_x, rel_y = xs - fx, ys - fy
        rho = np.sqrt((rel_x / rx) ** 2 + (rel_y / ry) ** 2)
        inside = 1.0 / (1.0 + np.exp(-np.clip((1.0 - rho) * edge * 2.0, -50, 50)))
        tex = _texture(rel_x, rel_y, face_spots)
        face = skin * (1 + tex) * (1 + amp[:, None, None] * wave[t])
        back = bg * (1 + spec.distractor_amplitude * math.sin(2 * math.pi * spec.distractor_hz
                                                              * times[t]))
        frame = inside * face + (1 - inside) * back
        frame = frame * (1 + spec.flicker_amplitude * math.sin(2 * math.pi * spec.flicker_hz
                                                              * times[t]))
        if spec.noise_std > 0:
            frame = frame + rng.normal(0.0, spec.noise_std, size=frame.shape)
        frames[:, t] = frame
        landmarks[t] = ring + (fx, fy)
    frames = np.clip(frames, 0.0, 1.0)
    ppg = wave if np.any(amp != 0) else np.zeros(T)
    clip = VideoClip(frames, spec.fps, {"synthetic": True, "seed": seed, "hr": spec.hr})
    return SyntheticClip(clip, RppgSignal(ppg, spec.fps), float(spec.hr), landmarks)
