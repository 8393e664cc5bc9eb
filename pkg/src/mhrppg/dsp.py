"""Spectral helpers: one-sided PSD, heart-rate peak picking, band-pass, Pearson r."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NoSignalError, UndefinedCorrelation

HR_BAND = (0.7, 4.0)  # Hz, i.e. 42-240 bpm


@dataclass
class RppgSignal:
    values: np.ndarray
    fs: float

    def __len__(self):
        return len(self.values)


@dataclass
class Spectrum:
    freqs: np.ndarray
    power: np.ndarray
    fs: float
    n: int
    band: tuple = HR_BAND

    def band_mask(self, band=None):
        lo, hi = self.band if band is None else band
        return (self.freqs >= lo) & (self.freqs <= hi)


def _as_signal(x):
    if isinstance(x, RppgSignal):
        return np.asarray(x.values, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def psd(x, fs: float, window: str | None = None) -> Spectrum:
    """Periodogram ``|DFT(x - mean)|^2 / N`` on bins ``k = 0 .. N//2``.

    ``window='hann'`` tapers the mean-removed signal first.
    """
    x = _as_signal(x)
    if not fs > 0:
        raise InvalidArgument(f"sampling rate must be positive, got {fs}")
    if x.ndim != 1 or len(x) < 8:
        raise InvalidArgument(f"need a 1-D signal of at least 8 samples, got shape {x.shape}")
    n = len(x)
    xc = x - x.mean()
    if window == "hann":
        xc = xc * np.hanning(n)
    elif window is not None:
        raise InvalidArgument(f"unknown window {window!r}")
    spec = np.fft.rfft(xc)
    power = (spec.real ** 2 + spec.imag ** 2) / n
    freqs = np.arange(len(power)) * fs / n
    return Spectrum(freqs, power, float(fs), n)


def band_bins(n: int, fs: float, band=HR_BAND) -> np.ndarray:
    k = np.arange(n // 2 + 1)
    f = k * fs / n
    return k[(f >= band[0]) & (f <= band[1])]


def band_power_and_vjp(x, fs: float, band=HR_BAND):
    """PSD restricted to ``band`` via an explicit DFT, plus its vector-Jacobian product.

    Returns ``(bins, power, vjp)`` where ``vjp(g)`` maps a gradient on the band
    powers back to a gradient on ``x``.
    """
    x = _as_signal(x)
    n = len(x)
    bins = band_bins(n, fs, band)
    if bins.size == 0:
        raise InvalidArgument(f"no DFT bins fall inside {band} Hz for N={n}, fs={fs}")
    xc = x - x.mean()
    theta = 2 * np.pi * np.outer(bins, np.arange(n)) / n
    cos, sin = np.cos(theta), np.sin(theta)
    re = cos @ xc
    im = -(sin @ xc)
    power = (re ** 2 + im ** 2) / n

    def vjp(g):
        g = np.asarray(g, dtype=np.float64)
        gx = (2.0 / n) * ((g * re) @ cos - (g * im) @ sin)
        return gx - gx.mean()

    return bins, power, vjp


def estimate_hr(x, fs: float, band=HR_BAND, window: str | None = None) -> float:
    """Heart rate in bpm: 60 times the in-band frequency of maximum power."""
    spec = psd(x, fs, window)
    mask = spec.band_mask(band)
    if not mask.any():
        raise InvalidArgument(f"no DFT bins inside {band} Hz for N={spec.n}, fs={fs}")
    p = spec.power[mask]
    if not np.any(p > 0):
        raise NoSignalError("no power inside the heart-rate band")
    k = np.flatnonzero(mask)[int(np.argmax(p))]
    return 60.0 * k * spec.fs / spec.n


def bandpass(x, fs: float, f_lo: float = HR_BAND[0], f_hi: float = HR_BAND[1]) -> np.ndarray:
    """Zero-phase band-pass by zeroing out-of-band DFT bins."""
    x = _as_signal(x)
    if not (0 <= f_lo < f_hi < fs / 2):
        raise InvalidArgument(f"invalid band [{f_lo}, {f_hi}] for fs={fs}")
    n = len(x)
    spec = np.fft.rfft(x)
    f = np.arange(len(spec)) * fs / n
    spec[(f < f_lo) | (f > f_hi)] = 0.0
    return np.fft.irfft(spec, n=n)


def pearson_r(x, y) -> float:
    x, y = _as_signal(x), _as_signal(y)
    if x.shape != y.shape:
        raise InvalidArgument(f"length mismatch {x.shape} vs {y.shape}")
    xc, y_c = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(xc @ xc), np.sqrt(y_c @ y_c)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("correlation undefined for a constant input")
    return float(np.clip((xc @ y_c) / (sx * sy), -1.0, 1.0))


def snr_db(x, fs: float, hr_bpm: float, halfwidth_hz: float = 0.1, band=HR_BAND) -> float:
    """Power near the HR fundamental and first harmonic over the rest of the band."""
    spec = psd(x, fs)
    f0 = hr_bpm / 60.0
    inband = spec.band_mask(band)
    sig = inband & ((np.abs(spec.freqs - f0) <= halfwidth_hz)
                    | (np.abs(spec.freqs - 2 * f0) <= halfwidth_hz))
    noise = inband & ~sig
    ps, pn = spec.power[sig].sum(), spec.power[noise].sum()
    return float(10 * np.log10(ps / max(pn, 1e-300)))
