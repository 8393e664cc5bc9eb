"""Training losses: negative Pearson, spectral cross-entropy, skin-map BCE.

Each loss ``foo`` has a companion ``foo_grad`` returning the gradient with
respect to the prediction.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dsp import HR_BAND, band_power_and_vjp
from .errors import DegenerateSignalWarning, InvalidArgument

BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.5
    use_frequency: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidArgument(f"{name} must be finite and >= 0, got {v}")


def _pearson_parts(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise InvalidArgument(f"need equal 1-D signals of length >= 2, got {x.shape}, {y.shape}")
    xc, yc = x - x.mean(), y - y.mean()
    return xc, yc, np.sqrt(xc @ xc), np.sqrt(yc @ yc)


def pearson_loss(x, y) -> float:
    """``1 - r(x, y)``; a constant input falls back to 1 with a warning."""
    xc, yc, sx, sy = _pearson_parts(x, y)
    if sx == 0 or sy == 0:
        warnings.warn("constant signal in pearson_loss; using r = 0", DegenerateSignalWarning)
        return 1.0
    r = (xc @ yc) / (sx * sy)
    return float(1.0 - np.clip(r, -1.0, 1.0))


def pearson_loss_grad(x, y) -> np.ndarray:
    xc, yc, sx, sy = _pearson_parts(x, y)
    if sx == 0 or sy == 0:
        return np.zeros_like(xc)
    r = (xc @ yc) / (sx * sy)
    return -(yc / (sx * sy) - r * xc / (sx * sx))


def _hr_target(bins, n, fs, hr_gt):
    f_gt = hr_gt / 60.0
    if not (HR_BAND[0] <= f_gt <= HR_BAND[1]):
        raise InvalidArgument(f"ground-truth HR {hr_gt} bpm outside the {HR_BAND} Hz band")
    return int(np.argmin(np.abs(bins * fs / n - f_gt)))


def _log_softmax(z):
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def _ce_logits(power, log_psd):
    if log_psd:
        return np.log(power + 1e-12)
    return power


def frequency_ce_loss(x, fs: float, hr_gt: float, log_psd: bool = False,
                      target_bin: int | None = None) -> float:
    """Cross-entropy of in-band PSD values (as logits) against the HR bin.

    ``target_bin`` overrides the class index (position within the band bins).
    """
    x = np.asarray(x, dtype=np.float64)
    bins, power, _ = band_power_and_vjp(x, fs)
    j = _hr_target(bins, len(x), fs, hr_gt) if target_bin is None else target_bin
    return float(-_log_softmax(_ce_logits(power, log_psd))[j])


def frequency_ce_loss_grad(x, fs: float, hr_gt: float, log_psd: bool = False,
                           target_bin: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    bins, power, vjp = band_power_and_vjp(x, fs)
    j = _hr_target(bins, len(x), fs, hr_gt) if target_bin is None else target_bin
    p = np.exp(_log_softmax(_ce_logits(power, log_psd)))
    g = p.copy()
    g[j] -= 1.0
    if log_psd:
        g = g / (power + 1e-12)
    return vjp(g)


def skin_bce_loss(f_s, s_label) -> float:
    f_s = np.asarray(f_s, dtype=np.float64)
    s_label = np.asarray(s_label, dtype=np.float64)
    if f_s.shape != s_label.shape:
        raise InvalidArgument(f"skin map {f_s.shape} vs label {s_label.shape}")
    p = np.clip(f_s, BCE_CLAMP, 1 - BCE_CLAMP)
    return float(-np.mean(s_label * np.log(p) + (1 - s_label) * np.log1p(-p)))


def skin_bce_loss_grad(f_s, s_label) -> np.ndarray:
    f_s = np.asarray(f_s, dtype=np.float64)
    s_label = np.asarray(s_label, dtype=np.float64)
    if f_s.shape != s_label.shape:
        raise InvalidArgument(f"skin map {f_s.shape} vs label {s_label.shape}")
    p = np.clip(f_s, BCE_CLAMP, 1 - BCE_CLAMP)
    inside = (f_s > BCE_CLAMP) & (f_s < 1 - BCE_CLAMP)
    g = (p - s_label) / (p * (1 - p)) / f_s.size
    return g * inside


def total_loss(l_r: float, l_f: float, l_s: float, w: LossWeights) -> float:
    """``alpha * L_r + L_f + beta * L_s`` (``L_f`` dropped when ``use_frequency`` is off)."""
    return w.alpha * l_r + (l_f if w.use_frequency else 0.0) + w.beta * l_s
