"""Central finite-difference gradient checking."""
from __future__ import annotations

import numpy as np


def numerical_grad(f, x: np.ndarray, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. ``x`` (perturbed in place).

    ``indices`` restricts the probe to a subset of flat positions; the other
    entries of the result are left at zero.
    """
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def _central(f, flat, i, h):
    orig = flat[i]
    flat[i] = orig + h
    fp = f()
    flat[i] = orig - h
    fm = f()
    flat[i] = orig
    return (fp - fm) / (2 * h), fp, fm


def probe_error(f, x: np.ndarray, i: int, analytic: float, steps=(1e-4, 1e-5, 1e-6),
                floor: float = 1e-6, agree_tol: float = 1e-5):
    """Relative error of ``analytic`` against central differences at flat index ``i``.

    For a function that is smooth around ``x`` the central differences at two
    consecutive step sizes agree to within ``agree_tol``; the probe uses the
    first agreeing pair (up to a roundoff allowance) and scores its larger
    step. A ReLU or max-pool switch inside ``[x - h, x + h]``
    makes the difference at that step average two slopes and breaks the
    agreement, so the search moves on to the next smaller step. If no pair
    agrees, the switch sits within the smallest step and the analytic value
    is compared with the nearer one-sided slope at that step.

    Returns ``(error, switched)`` where ``switched`` flags probes whose
    largest step crossed a switch.
    """
    flat = x.reshape(-1)

    def rel(n):
        return abs(analytic - n) / max(abs(analytic), abs(n), floor)

    prev, _, _ = _central(f, flat, i, steps[0])
    for h in steps[1:]:
        cur, fp, fm = _central(f, flat, i, h)
        roundoff = 4 * np.finfo(float).eps * max(abs(fp), abs(fm), 1.0) / h
        if abs(cur - prev) <= agree_tol * max(abs(cur), abs(prev), floor) + roundoff:
            # the larger step of the pair carries less roundoff
            return rel(prev), h != steps[1]
        prev = cur
    f0 = f()
    return min(rel((fp - f0) / h), rel((f0 - fm) / h)), True


def network_gradcheck(net, clip, rng, probes_per_tensor: int = 3,
                      floor: float = 1e-6, skin_weight: float = 1.0):
    """Compare backprop with finite differences for the whole network.

    The scalar objective is ``<r, rppg> + skin_weight * <q, f_s>`` for fixed
    random ``r`` and ``q``, which exercises both gradient entry points. A few
    random entries of the clip and of every parameter tensor are probed with
    :func:`probe_error`. Returns ``(errors, n_kinks)`` where ``errors`` maps
    tensor name to its largest relative error.
    """
    clip = np.array(clip, dtype=np.float64)
    trace, cache = net.forward(clip)
    r = rng.normal(size=trace.rppg.shape)
    q = rng.normal(size=trace.f_s.shape) * skin_weight

    def objective():
        tr, _ = net.forward(clip)
        return float(np.sum(r * tr.rppg) + np.sum(q * tr.f_s))

    net.zero_grad()
    g_clip = net.backward(cache, r, q if net.config.use_skinmap else None)
    errors = {}
    kinks = 0

    def probe(name, arr, analytic):
        nonlocal kinks
        idx = rng.choice(arr.size, size=min(probes_per_tensor, arr.size), replace=False)
        worst = 0.0
        for i in idx:
            e, k = probe_error(objective, arr, int(i), float(analytic.reshape(-1)[i]),
                               floor=floor)
            worst = max(worst, e)
            kinks += k
        errors[name] = worst

    probe("clip", clip, g_clip)
    for name, p in net.named_params().items():
        probe(name, p.data, p.grad.copy())
    return errors, kinks
