"""Command-line entry point: ``python -m mhrppg <subcommand>``.

On failure a single line ``error: <category>: <message>`` goes to stderr and
the exit status is 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines
from .config import RunConfig, config_from_dict, dump_config, load_config
from .data import (ClipManifest, SynthSpec, generate_synthetic, load_clip, load_raw,
                   pulse_waveform, read_landmarks_csv, read_manifest, save_raw, transform_points,
                   write_frames, write_landmarks_csv, write_manifest, write_mask_sequence,
                   write_ppg_csv, write_signal_csv, write_track_csv)
from .errors import DataError, RppgError
from .metrics import compute_metrics, error_histogram, summary_dict, write_report_csv
from .opticalflow import LKParams
from .skinlabel import downsample_label, generate_labels
from .train import (VARIANTS, ablation_report, evaluate, load_net, predict, prepare_samples,
                    save_net, split_samples, train, variant_config, write_ablation_csv,
                    write_loss_csv)

HIST_EDGES = (3.0, 5.0, 10.0)


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {"seed": args.seed, "out": args.out}
    for key in ("epochs", "lr", "T", "H", "W"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = v
    cfg = config_from_dict({k: v for k, v in overrides.items() if v is not None}, cfg)
    variant = getattr(args, "variant", None)
    return variant_config(cfg, variant) if variant else cfg


def _out_dir(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifests(args) -> list:
    paths = list(args.manifest or [])
    if getattr(args, "list", None):
        base = Path(args.list).parent
        for line in Path(args.list).read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                paths.append(base / line)
    if not paths:
        raise DataError("no clip manifests given (use --manifest or --list)")
    return paths


# ------------------------------------------------------------- commands

def cmd_synth(args):
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(args.n):
        hr = args.hr if args.hr is not None else float(rng.uniform(args.hr_min, args.hr_max))
        spec = SynthSpec(hr=hr, fps=args.fps, T=args.frames, H=args.height, W=args.width,
                         noise_std=args.noise, drift=tuple(args.drift),
                         flicker_amplitude=args.flicker,
                         distractor_amplitude=args.distractor)
        syn = generate_synthetic(spec, seed=seed * 100003 + i)
        cid = f"clip_{i:03d}"
        d = out / cid
        d.mkdir(exist_ok=True)
        if args.ppm:
            write_frames(d / "frames", syn.clip.frames)
            frames = "frames"
        else:
            save_raw(d / "frames.raw", syn.clip.frames)
            frames = "frames.raw"
        # contact-sensor style trace at 250 Hz covering the clip
        t = np.arange(0, spec.T / spec.fps + 0.1, 1 / 250.0)
        write_ppg_csv(d / "ppg.csv", t, pulse_waveform(t, hr, spec.harmonic))
        write_landmarks_csv(d / "landmarks.csv", syn.landmarks[0])
        np.save(d / "landmarks_truth.npy", syn.landmarks)
        write_manifest(d / "manifest.txt", frames, spec.fps, landmarks="landmarks.csv",
                       ppg="ppg.csv", hr=hr, clip_id=cid)
        lines.append(f"{cid}/manifest.txt")
    (out / "dataset.list").write_text("\n".join(lines) + "\n")
    print(f"wrote {args.n} clips to {out}")


def cmd_skinlabel(args):
    cfg = _run_config(args)
    out = _out_dir(args)
    m = read_manifest(args.manifest)
    size = (cfg.net.H, cfg.net.W)
    clip, _, _ = load_clip(m, size=size)
    if m.landmarks is None:
        raise DataError(f"{args.manifest}: manifest has no landmark seed file")
    seed = transform_points(read_landmarks_csv(m.landmarks), m.crop, clip.meta["in_size"], size)
    label, track = generate_labels(clip.frames, seed, LKParams(), 1, 1)
    save_raw(out / "masks.raw", label.masks[None].astype(np.float64))
    write_mask_sequence(out / "masks", label.masks)
    write_track_csv(out / "track.csv", track)
    T = label.masks.shape[0]
    if T % 4 == 0:
        save_raw(out / "labels_down.raw", downsample_label(label.masks)[None])
    print(f"{T} masks, mean skin fraction {label.masks.mean():.4f}")


def cmd_train(args):
    cfg = _run_config(args)
    out = _out_dir(args)
    samples = prepare_samples(_manifests(args), cfg)
    tr, val = split_samples(samples, cfg.val_fraction, cfg.seed)

    def log(h):
        if not args.quiet:
            print(f"epoch {h.epoch}: L_r={h.L_r:.4f} L_f={h.L_f:.4f} L_s={h.L_s:.4f} "
                  f"total={h.total:.4f} val_L_r={h.val_L_r:.4f}", flush=True)

    res = train(cfg, tr, val, progress=log)
    name = f"{args.variant}.ckpt" if args.variant else "model.ckpt"
    save_net(out / name, res.best_state, cfg, best_epoch=res.best_epoch)
    write_loss_csv(res.history, out / (Path(name).stem + "_loss.csv"))
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"best epoch {res.best_epoch}, validation L_r {res.best_val:.6f} -> {out / name}")


def cmd_infer(args):
    cfg = _run_config(args) if args.config else None
    net, cfg, _ = load_net(args.checkpoint, cfg)
    out = _out_dir(args)
    clip, _, _ = load_clip(args.manifest, size=(cfg.net.H, cfg.net.W), T=cfg.net.T,
                           start=args.start)
    rppg, hr = predict(net, clip.frames, clip.fps)
    write_signal_csv(out / "rppg.csv", rppg, clip.fps)
    (out / "hr.txt").write_text("nan\n" if hr is None else f"{hr!r}\n")
    print("HR: no in-band signal" if hr is None else f"HR {hr:.2f} bpm")


def _baseline_on(manifest, method, size=None):
    m = manifest if isinstance(manifest, ClipManifest) else read_manifest(manifest)
    clip, _, hr_true = load_clip(m, size=size)
    H, W = clip.frames.shape[2:]
    if m.skin is not None:
        masks = load_raw(m.skin)[0]
    elif m.landmarks is not None:
        seed = transform_points(read_landmarks_csv(m.landmarks), m.crop, clip.meta["in_size"],
                                (H, W))
        masks = generate_labels(clip.frames, seed, LKParams(), 1, 1)[0].masks
    else:
        raise DataError(f"{manifest}: need a skin mask or a landmark seed")
    trace = baselines.roi_mean_trace(clip.frames, masks)
    sig, hr = baselines.run_baseline(method, trace, clip.fps)
    return m.clip_id, sig, hr, hr_true


def cmd_baseline(args):
    out = _out_dir(args)
    m = read_manifest(args.clip)
    if args.mask:
        m.skin = Path(args.mask)
    cid, sig, hr, _ = _baseline_on(m, args.method)
    write_signal_csv(out / f"{args.method}_signal.csv", sig.values, sig.fs)
    (out / f"{args.method}_hr.txt").write_text(f"{hr!r}\n")
    print(f"{cid}: {args.method} HR {hr:.2f} bpm")


def cmd_eval(args):
    out = _out_dir(args)
    if args.predictions:
        with open(args.predictions, newline="") as fh:
            rows = list(csv.DictReader(fh))
        ids = [r["clip_id"] for r in rows]
        pred = [float(r["predicted_bpm"]) for r in rows]
        truth = [float(r["truth_bpm"]) for r in rows]
        report = compute_metrics(pred, truth, ids)
    elif args.checkpoint:
        cfg = _run_config(args) if args.config else None
        net, cfg, _ = load_net(args.checkpoint, cfg)
        report = evaluate(net, prepare_samples(_manifests(args), cfg, with_skin=False))
    elif args.method:
        ids, pred, truth = [], [], []
        for mp in _manifests(args):
            cid, _, hr, hr_true = _baseline_on(mp, args.method)
            if hr_true is None:
                raise DataError(f"{mp}: no ground-truth HR")
            ids.append(cid)
            pred.append(hr)
            truth.append(hr_true)
        report = compute_metrics(pred, truth, ids)
    else:
        raise DataError("eval needs --predictions, --checkpoint or --method")
    write_report_csv(report, out / "eval.csv")
    counts, frac = error_histogram(report, HIST_EDGES)
    summary = summary_dict(report)
    summary["histogram"] = {"edges": list(HIST_EDGES), "counts": counts.tolist(),
                            "fraction_below": frac.tolist()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary_dict(report)))


def cmd_report(args):
    first = Path(args.checkpoints) / f"{VARIANTS[0][1]}.ckpt"
    if args.config or not first.exists():
        cfg = _run_config(args)
    else:
        # segment clips the way the variants were trained
        _, cfg, _ = load_net(first)
    out = _out_dir(args)
    samples = prepare_samples(_manifests(args), cfg, with_skin=False)
    rows = ablation_report(args.checkpoints, samples)
    write_ablation_csv(rows, out / "ablation.csv")
    for label, rep in rows:
        print(f"{label:34s} MAE={rep.mae:.3f} RMSE={rep.rmse:.3f} SD_e={rep.sd_e:.3f} r={rep.r}")


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run config file")
    common.add_argument("--seed", type=int, default=None, help="seed (default 0)")
    common.add_argument("--out", default="out", help="output directory")

    p = argparse.ArgumentParser(prog="mhrppg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic clip dataset")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--hr", type=float, default=None, help="fixed HR; random if omitted")
    s.add_argument("--hr-min", type=float, default=50.0)
    s.add_argument("--hr-max", type=float, default=120.0)
    s.add_argument("--fps", type=float, default=30.0)
    s.add_argument("--frames", type=int, default=450)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--drift", type=float, nargs=2, default=(0.0, 0.0))
    s.add_argument("--flicker", type=float, default=0.0)
    s.add_argument("--distractor", type=float, default=0.0)
    s.add_argument("--ppm", action="store_true", help="write PPM frames instead of raw")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("skinlabel", parents=[common], help="track landmarks, write skin masks")
    s.add_argument("--manifest", required=True)
    s.add_argument("--H", type=int, default=None)
    s.add_argument("--W", type=int, default=None)
    s.set_defaults(func=cmd_skinlabel)

    def data_args(s):
        s.add_argument("--manifest", action="append", help="clip manifest (repeatable)")
        s.add_argument("--list", help="file listing manifest paths")

    s = sub.add_parser("train", parents=[common], help="train the network")
    data_args(s)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None)
    s.add_argument("--variant", choices=[v[1] for v in VARIANTS], default=None,
                   help="train an ablation variant")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="predict rPPG and HR for one clip")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--start", type=int, default=0, help="first frame")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("baseline", parents=[common], help="run a classical method")
    s.add_argument("--method", choices=sorted(baselines.METHODS), required=True)
    s.add_argument("--clip", required=True, help="clip manifest")
    s.add_argument("--mask", help="raw container of skin masks (else tracked from landmarks)")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("eval", parents=[common], help="HR metrics over a set of clips")
    data_args(s)
    s.add_argument("--predictions", help="CSV with clip_id,predicted_bpm,truth_bpm")
    s.add_argument("--checkpoint")
    s.add_argument("--method", choices=sorted(baselines.METHODS))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("report", parents=[common], help="ablation table from variant checkpoints")
    data_args(s)
    s.add_argument("--checkpoints", required=True, help="directory of <variant>.ckpt files")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except RppgError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
