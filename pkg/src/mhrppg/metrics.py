"""HR evaluation metrics and error-distribution summaries."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument


@dataclass
class ClipError:
    clip_id: str
    predicted: float
    truth: float

    @property
    def abs_error(self):
        return abs(self.predicted - self.truth)


@dataclass
class EvalReport:
    mae: float
    rmse: float
    sd_e: float
    r: float | None
    clips: list = field(default_factory=list)

    @property
    def errors(self):
        return np.array([c.abs_error for c in self.clips])


def compute_metrics(pred, truth, clip_ids=None, sample_sd=False) -> EvalReport:
    """MAE, RMSE, SD of absolute errors (population by default) and Pearson r.

    ``r`` is ``None`` when either series is constant.
    """
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(truth, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size == 0:
        raise InvalidArgument(f"need equal non-empty 1-D inputs, got {x.shape}, {y.shape}")
    diff = x - y
    err = np.abs(diff)
    mae = float(err.mean())
    rmse = float(np.sqrt(np.mean(diff ** 2)))
    ddof = 1 if sample_sd and x.size > 1 else 0
    sd_e = float(np.sqrt(np.sum((err - mae) ** 2) / (x.size - ddof)))
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt(xc @ xc) * np.sqrt(yc @ yc)
    r = float(np.clip(xc @ yc / denom, -1, 1)) if denom > 0 else None
    ids = clip_ids if clip_ids is not None else [str(i) for i in range(x.size)]
    clips = [ClipError(str(i), float(p), float(t)) for i, p, t in zip(ids, x, y)]
    return EvalReport(mae, rmse, sd_e, r, clips)


def error_histogram(errors, edges):
    """Counts of absolute errors per bin and the fraction strictly below each edge.

    Bins are ``[0, e0), [e0, e1), ..., [e_last, inf)``.
    """
    if isinstance(errors, EvalReport):
        errors = errors.errors
    errs = np.asarray(errors, dtype=np.float64).ravel()
    edges = np.asarray(edges, dtype=np.float64)
    if np.any(np.diff(edges) <= 0):
        raise InvalidArgument(f"edges must be strictly increasing, got {edges.tolist()}")
    idx = np.searchsorted(edges, errs, side="right")
    counts = np.bincount(idx, minlength=len(edges) + 1)
    below = np.cumsum(counts)[:len(edges)]
    frac = below / errs.size if errs.size else np.zeros(len(edges))
    return counts, frac


def write_report_csv(report: EvalReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["clip_id", "predicted_bpm", "truth_bpm", "abs_error"])
        for c in report.clips:
            w.writerow([c.clip_id, repr(c.predicted), repr(c.truth), repr(c.abs_error)])


def summary_dict(report: EvalReport) -> dict:
    return {"n": len(report.clips), "MAE": report.mae, "RMSE": report.rmse,
            "SD_e": report.sd_e, "r": report.r}


def format_metric(v):
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))
