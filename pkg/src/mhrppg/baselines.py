"""Classical rPPG extractors built on the skin-ROI mean colour trace.

Each method maps a ``(T, 3)`` RGB trace and a frame rate to a pulse signal
and an HR estimate in bpm.
"""
from __future__ import annotations

import numpy as np

from .dsp import HR_BAND, RppgSignal, bandpass, estimate_hr, psd
from .errors import ConvergenceError, DataError, InvalidArgument

WINDOW_S = 1.6
MIN_STEP = 0.125


def roi_mean_trace(frames, mask) -> np.ndarray:
    """Per-frame mean of each colour channel over the mask.

    ``frames`` is ``(3, T, H, W)``; ``mask`` is ``(T, H, W)``, a single
    ``(H, W)`` mask used for every frame, or a ``SkinLabel``.
    """
    frames = getattr(frames, "frames", frames)
    mask = getattr(mask, "masks", mask)
    frames = np.asarray(frames, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    C, T, H, W = frames.shape
    if m.ndim == 2:
        m = np.broadcast_to(m, (T, H, W))
    if m.shape != (T, H, W):
        raise InvalidArgument(f"mask {m.shape} does not match clip {(T, H, W)}")
    area = m.sum(axis=(1, 2))
    empty = np.flatnonzero(area == 0)
    if empty.size:
        raise DataError(f"empty skin mask at frame {int(empty[0])}")
    return np.einsum("cthw,thw->tc", frames, m) / area[:, None]


def _band_limit(x, fs):
    hi = min(HR_BAND[1], 0.999 * fs / 2)
    return bandpass(x, fs, HR_BAND[0], hi)


def _check_trace(trace):
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 2 or trace.shape[1] != 3:
        raise InvalidArgument(f"trace must be (T, 3), got {trace.shape}")
    return trace


def _normalize(block):
    mu = block.mean(axis=0)
    if np.any(mu == 0):
        raise InvalidArgument("colour channel with zero temporal mean")
    return block / mu


def _windows(T, fs):
    win = max(int(round(WINDOW_S * fs)), 2)
    win += win % 2
    if win >= T:
        return [(0, T)]
    hop = win // 2
    starts = list(range(0, T - win + 1, hop))
    if starts[-1] + win < T:
        starts.append(T - win)
    return [(s, s + win) for s in starts]


def _finish(signal, fs):
    out = _band_limit(signal, fs)
    return RppgSignal(out, fs), float(estimate_hr(out, fs))


def green_method(trace, fs):
    trace = _check_trace(trace)
    g = _normalize(trace[:, 1:2])[:, 0] - 1.0
    return _finish(g, fs)


def chrom_method(trace, fs, eps: float = 1e-12):
    """Chrominance projection with Hann-weighted overlap-add."""
    trace = _check_trace(trace)
    _normalize(trace)
    T = len(trace)
    out = np.zeros(T)
    for a, b in _windows(T, fs):
        c = _normalize(trace[a:b])
        x = 3 * c[:, 0] - 2 * c[:, 1]
        y = 1.5 * c[:, 0] + c[:, 1] - 1.5 * c[:, 2]
        s = x - (x.std() / (y.std() + eps)) * y
        out[a:b] += (s - s.mean()) * np.hanning(b - a)
    return _finish(out, fs)


def pos_method(trace, fs, eps: float = 1e-12):
    """Plane-orthogonal-to-skin projection with overlap-add."""
    trace = _check_trace(trace)
    _normalize(trace)
    T = len(trace)
    out = np.zeros(T)
    for a, b in _windows(T, fs):
        c = _normalize(trace[a:b])
        s1 = c[:, 1] - c[:, 2]
        s2 = -2 * c[:, 0] + c[:, 1] + c[:, 2]
        h = s1 + (s1.std() / (s2.std() + eps)) * s2
        out[a:b] += h - h.mean()
    return _finish(out, fs)


def moving_average_detrend(x, width: int):
    """Subtract a centred moving average; edges use the available samples only."""
    x = np.asarray(x, dtype=np.float64)
    k = np.ones(max(int(width), 1))
    num = np.apply_along_axis(lambda c: np.convolve(c, k, mode="same"), 0, x)
    den = np.convolve(np.ones(len(x)), k, mode="same")
    return x - (num.T / den).T


def whiten(x, rtol: float = 1e-10):
    """Whiten rows of ``x`` (``(d, n)``, zero-mean); returns ``(z, matrix)``.

    Directions with variance below ``rtol`` times the largest are dropped, so
    ``z`` has as many rows as the numerical rank of ``x``.
    """
    cov = x @ x.T / x.shape[1]
    vals, vecs = np.linalg.eigh(cov)
    if vals[-1] <= 0:
        raise InvalidArgument("cannot whiten an all-zero mixture")
    keep = vals > rtol * vals[-1]
    if keep.all():
        k = vecs @ np.diag(vals ** -0.5) @ vecs.T
    else:
        k = np.diag(vals[keep] ** -0.5) @ vecs[:, keep].T
    return k @ x, k


def _sym_decorrelate(w):
    vals, vecs = np.linalg.eigh(w @ w.T)
    return vecs @ np.diag(vals ** -0.5) @ vecs.T @ w


def _change(a, b):
    return float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", a, b)) - 1)))


def fast_ica(x, n_components=None, tol=1e-6, max_iter=500, seed=0):
    """Symmetric FastICA with the tanh contrast.

    Near-Gaussian sources can make the plain fixed-point update cycle or
    wander. Whenever the change between iterates fails to shrink, the step
    towards the update is halved, down to ``MIN_STEP``.

    ``x`` is ``(d, n)``. Returns ``(sources (k, n), unmixing (k, d))`` where the
    unmixing matrix applies to the centred input.
    """
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean(axis=1, keepdims=True)
    z, k_white = whiten(x)
    d = z.shape[0]
    k = min(n_components or d, d)
    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((k, d)))
    n = z.shape[1]
    mu, prev = 1.0, np.inf
    for _ in range(max_iter):
        wz = w @ z
        g = np.tanh(wz)
        w_new = _sym_decorrelate(g @ z.T / n - np.diag((1 - g * g).mean(axis=1)) @ w)
        if mu < 1.0:
            signs = np.sign(np.einsum("ij,ij->i", w_new, w))
            signs[signs == 0] = 1.0
            w_new = _sym_decorrelate(w + mu * (signs[:, None] * w_new - w))
        lim = _change(w_new, w)
        w = w_new
        if lim < tol:
            break
        if lim >= prev:
            mu = max(mu / 2, MIN_STEP)
        prev = lim
    else:
        raise ConvergenceError(f"FastICA did not converge in {max_iter} iterations")
    unmix = w @ k_white
    return unmix @ x, unmix


def ica_method(trace, fs, seed: int = 0, tol=1e-6, max_iter=500):
    trace = _check_trace(trace)
    T = len(trace)
    if T < 9:
        raise InvalidArgument(f"ICA needs at least 9 samples for 3 channels, got {T}")
    x = moving_average_detrend(trace, int(round(fs)))
    sd = x.std(axis=0)
    if np.any(sd == 0):
        raise InvalidArgument("constant colour channel after detrending")
    x = (x - x.mean(axis=0)) / sd
    sources, _ = fast_ica(x.T, tol=tol, max_iter=max_iter, seed=seed)
    peaks = []
    for s in sources:
        spec = psd(s, fs)
        peaks.append(spec.power[spec.band_mask()].max())
    return _finish(sources[int(np.argmax(peaks))], fs)


METHODS = {"green": green_method, "chrom": chrom_method, "pos": pos_method, "ica": ica_method}


def run_baseline(name: str, trace, fs):
    try:
        fn = METHODS[name]
    except KeyError:
        raise InvalidArgument(f"unknown method {name!r}; choose from {sorted(METHODS)}") from None
    return fn(trace, fs)
