"""Training loop, inference and ablation evaluation for the pulse network."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, config_from_dict
from .data import (ClipManifest, load_clip, load_raw, read_landmarks_csv, read_manifest,
                   segment_starts, transform_points)
from .dsp import estimate_hr
from .errors import ConfigError, DataError, DivergenceError, NoSignalError
from .metrics import EvalReport, compute_metrics
from .network import MultiHierarchicalNet, NetworkConfig, full_forward
from .opticalflow import LKParams
from .skinlabel import downsample_label, generate_labels
from .tensor_core import AdamState, adam_step


@dataclass
class Sample:
    clip_id: str
    frames: np.ndarray        # (3, T, H, W)
    ppg: np.ndarray           # (T,)
    hr: float
    fps: float
    skin: np.ndarray | None   # downsampled label at the skin-map resolution


@dataclass
class EpochLog:
    epoch: int
    L_r: float
    L_f: float
    L_s: float
    total: float
    val_L_r: float


@dataclass
class TrainResult:
    net: MultiHierarchicalNet
    history: list = field(default_factory=list)
    best_state: dict = field(default_factory=dict)
    best_epoch: int = 0
    best_val: float = math.inf


# ------------------------------------------------------------------ data

def skin_target(masks, net_cfg: NetworkConfig) -> np.ndarray:
    """Downsample full-resolution masks to the skin-map grid.

    When T is not a multiple of 4 the last mask is repeated up to the padded
    length the network works on.
    """
    masks = np.asarray(masks, dtype=np.float64)
    pad = net_cfg.padded_T - masks.shape[0]
    if pad:
        masks = np.concatenate([masks, np.repeat(masks[-1:], pad, axis=0)])
    return downsample_label(masks)


def _clip_masks(manifest: ClipManifest, clip, size, lk: LKParams):
    if manifest.skin is not None:
        masks = load_raw(manifest.skin)[0]
        start = clip.meta.get("start", 0)
        masks = masks[start:start + clip.T]
        if masks.shape != (clip.T,) + tuple(size):
            raise DataError(f"{manifest.skin}: label {masks.shape} does not match clip "
                            f"{(clip.T,) + tuple(size)}")
        return masks
    if manifest.landmarks is not None:
        seed = read_landmarks_csv(manifest.landmarks)
        seed = transform_points(seed, manifest.crop, clip.meta["in_size"], size)
        label, _ = generate_labels(clip.frames, seed, lk)
        return label.masks
    return None


def prepare_samples(manifests, cfg: RunConfig, lk: LKParams = LKParams(),
                    with_skin: bool = True) -> list:
    """Load manifests, build skin labels and cut T-frame training windows.

    ``with_skin=False`` skips label generation (evaluation only needs HR).
    """
    net = cfg.net
    size = (net.H, net.W)
    out = []
    for m in manifests:
        if not isinstance(m, ClipManifest):
            m = read_manifest(m)
        clip, ppg, hr = load_clip(m, size=size)
        if ppg is None:
            raise DataError(f"{m.clip_id}: training needs a PPG file")
        masks = _clip_masks(m, clip, size, lk) if with_skin else None
        if with_skin and masks is None and net.use_skinmap and cfg.loss.beta > 0:
            raise DataError(f"{m.clip_id}: no skin label or landmark seed for the skin loss")
        for s in segment_starts(clip.T, net.T, cfg.segment_stride):
            seg_ppg = ppg.values[s:s + net.T]
            seg_hr = hr if m.hr is not None else estimate_hr(seg_ppg, m.fps)
            skin = skin_target(masks[s:s + net.T], net) if masks is not None else None
            out.append(Sample(f"{m.clip_id}@{s}", clip.frames[:, s:s + net.T], seg_ppg,
                              float(seg_hr), m.fps, skin))
    return out


def split_samples(samples, val_fraction: float, seed: int):
    """Split by source clip so windows of one clip never straddle the split."""
    ids = sorted({s.clip_id.split("@")[0] for s in samples})
    if len(ids) < 2 or val_fraction == 0:
        return list(samples), []
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    n_val = min(max(1, int(round(val_fraction * len(ids)))), len(ids) - 1)
    val_ids = set(order[:n_val])
    train = [s for s in samples if s.clip_id.split("@")[0] not in val_ids]
    val = [s for s in samples if s.clip_id.split("@")[0] in val_ids]
    return train, val


# ------------------------------------------------------------- training

def _losses(trace, batch, cfg: RunConfig, need_grad=True):
    """Mean losses over a batch and gradients w.r.t. rPPG and the skin map."""
    n = len(batch)
    w = cfg.loss
    l_r = l_f = l_s = 0.0
    g_r = np.zeros_like(trace.rppg)
    g_s = np.zeros_like(trace.f_s)
    use_skin = cfg.net.use_skinmap
    for i, smp in enumerate(batch):
        y = trace.rppg[i]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", L.DegenerateSignalWarning)
            l_r += L.pearson_loss(y, smp.ppg) / n
        l_f += L.frequency_ce_loss(y, smp.fps, smp.hr, cfg.log_psd) / n
        if use_skin and smp.skin is not None:
            l_s += L.skin_bce_loss(trace.f_s[i], smp.skin) / n
        if need_grad:
            g_r[i] = w.alpha * L.pearson_loss_grad(y, smp.ppg) / n
            if w.use_frequency:
                g_r[i] += L.frequency_ce_loss_grad(y, smp.fps, smp.hr, cfg.log_psd) / n
            if use_skin and smp.skin is not None and w.beta > 0:
                g_s[i] = w.beta * L.skin_bce_loss_grad(trace.f_s[i], smp.skin) / n
    total = L.total_loss(l_r, l_f, l_s, w)
    return (l_r, l_f, l_s, total), g_r, g_s


def _stack(batch):
    return np.stack([s.frames for s in batch])


def validation_loss(net: MultiHierarchicalNet, samples, cfg: RunConfig) -> float:
    """Mean Pearson loss in inference mode."""
    was = net.training
    net.eval()
    total = 0.0
    for s in samples:
        trace, _ = net.forward(s.frames[None])
        total += _losses(trace, [s], cfg, need_grad=False)[0][0]
    net.train(was)
    return total / max(len(samples), 1)


def train(cfg: RunConfig, train_samples, val_samples=(), progress=None) -> TrainResult:
    """Adam training; keeps the state with the lowest validation Pearson loss.

    Without a validation set the training clips are scored instead.
    """
    if not train_samples and cfg.epochs > 0:
        raise DataError("no training samples")
    net = MultiHierarchicalNet(cfg.net, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed + 1)
    scored = list(val_samples) or list(train_samples)
    res = TrainResult(net)
    res.best_state = net.state_dict()
    adam = AdamState()
    named = net.named_params()
    for epoch in range(1, cfg.epochs + 1):
        net.train()
        order = rng.permutation(len(train_samples))
        sums = np.zeros(4)
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [train_samples[i] for i in order[start:start + cfg.batch_size]]
            trace, cache = net.forward(_stack(batch))
            parts, g_r, g_s = _losses(trace, batch, cfg)
            if not all(np.isfinite(parts)):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}: "
                                      f"L_r={parts[0]}, L_f={parts[1]}, L_s={parts[2]}")
            net.zero_grad()
            net.backward(cache, g_r, g_s if cfg.net.use_skinmap else None)
            new, adam = adam_step({k: p.data for k, p in named.items()},
                                  {k: p.grad for k, p in named.items()}, adam,
                                  cfg.lr, cfg.beta1, cfg.beta2)
            for k, p in named.items():
                p.data[...] = new[k]
            sums += np.array(parts) * len(batch)
        means = sums / len(train_samples)
        val = validation_loss(net, scored, cfg)
        res.history.append(EpochLog(epoch, *means.tolist(), val))
        if progress is not None:
            progress(res.history[-1])
        if val < res.best_val:
            res.best_val, res.best_epoch, res.best_state = val, epoch, net.state_dict()
    if cfg.epochs == 0:
        res.best_val = validation_loss(net, scored, cfg) if scored else math.nan
    return res


def write_loss_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "L_r", "L_f", "L_s", "total", "val_L_r"])
        for h in history:
            w.writerow([h.epoch, repr(h.L_r), repr(h.L_f), repr(h.L_s), repr(h.total),
                        repr(h.val_L_r)])


# ------------------------------------------------------- checkpoints

def save_net(path, state: dict, cfg: RunConfig, **meta):
    # the output directory does not shape the model; leaving it out keeps
    # same-seed runs written to different places byte-identical
    stored = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    save_checkpoint(path, state, {"config": stored, **meta})


def load_net(path, cfg: RunConfig | None = None):
    """Rebuild a network from a checkpoint.

    With ``cfg`` the network follows that config and a shape mismatch is an
    error; otherwise the config stored in the checkpoint is used.
    """
    tensors, meta = load_checkpoint(path)
    if cfg is None:
        if "config" not in meta:
            raise ConfigError(f"{path}: checkpoint carries no config; pass one explicitly")
        cfg = config_from_dict(meta["config"])
    net = MultiHierarchicalNet(cfg.net, seed=cfg.seed)
    net.load_state_dict(tensors)
    net.eval()
    return net, cfg, meta


# -------------------------------------------------------------- inference

def predict(net: MultiHierarchicalNet, frames, fps: float):
    """rPPG for one ``(3, T, H, W)`` clip and its HR (``None`` if the output is flat)."""
    net.eval()
    rppg = full_forward(net, frames).rppg
    try:
        hr = float(estimate_hr(rppg, fps))
    except NoSignalError:
        hr = None
    return rppg, hr


def evaluate(net: MultiHierarchicalNet, samples) -> EvalReport:
    preds, truth, ids = [], [], []
    for s in samples:
        _, hr = predict(net, s.frames, s.fps)
        preds.append(np.nan if hr is None else hr)
        truth.append(s.hr)
        ids.append(s.clip_id)
    return compute_metrics(preds, truth, ids)


# --------------------------------------------------------------- ablation

VARIANTS = (
    ("No C_feature extractor", "no_cfeature", {"use_cfeature": False}),
    ("No Skin Map", "no_skinmap", {"use_skinmap": False}),
    ("Loss (L_r)", "loss_lr", {"use_frequency": False, "beta": 0.0}),
    ("Loss (L_r + L_f)", "loss_lr_lf", {"beta": 0.0}),
    ("Proposed Method (L_r + L_f + L_s)", "full", {}),
)


def variant_config(cfg: RunConfig, slug: str) -> RunConfig:
    for _, s, overrides in VARIANTS:
        if s == slug:
            return config_from_dict(overrides, cfg)
    raise ConfigError(f"unknown ablation variant {slug!r}")


def ablation_report(checkpoint_dir, samples, variants=VARIANTS):
    """Evaluate ``<slug>.ckpt`` for every variant; returns ``[(label, EvalReport)]``."""
    d = Path(checkpoint_dir)
    absent = [slug for _, slug, _ in variants if not (d / f"{slug}.ckpt").exists()]
    if absent:
        raise DataError(f"missing ablation checkpoints in {d}: {', '.join(absent)}")
    rows = []
    for label, slug, _ in variants:
        net, _, _ = load_net(d / f"{slug}.ckpt")
        rows.append((label, evaluate(net, samples)))
    return rows


ABLATION_HEADER = ["variant", "MAE", "RMSE", "SD_e", "r", "n"]


def write_ablation_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ABLATION_HEADER)
        for label, rep in rows:
            w.writerow([label, repr(rep.mae), repr(rep.rmse), repr(rep.sd_e),
                        "nan" if rep.r is None else repr(rep.r), len(rep.clips)])


def read_ablation_csv(path) -> dict:
    """``label -> EvalReport`` (per-clip errors are not stored in the table)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            r = float(row["r"])
            out[row["variant"]] = EvalReport(float(row["MAE"]), float(row["RMSE"]),
                                             float(row["SD_e"]), None if math.isnan(r) else r)
    return out
