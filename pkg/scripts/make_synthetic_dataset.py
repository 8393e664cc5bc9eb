#!/usr/bin/env python3
"""Write a synthetic dataset in the manifest format, then skin labels for each clip.

Equivalent to ``python3 -m mhrppg synth`` followed by ``skinlabel`` per clip;
the masks are stored next to each clip and referenced from its manifest, so
training does not have to track landmarks again.
"""
import argparse
from pathlib import Path

from mhrppg.cli import main as cli
from mhrppg.data import read_manifest, write_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="synthetic")
    ap.add_argument("--n", type=int, default=10)
    ap.add_argument("--frames", type=int, default=150)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--fps", type=float, default=30.0)
    ap.add_argument("--noise", type=float, default=0.002)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    code = cli(["synth", "--out", str(out), "--n", str(args.n), "--frames", str(args.frames),
                "--height", str(args.size), "--width", str(args.size), "--fps", str(args.fps),
                "--noise", str(args.noise), "--seed", str(args.seed)])
    if code:
        raise SystemExit(code)
    for line in (out / "dataset.list").read_text().split():
        mpath = out / line
        clip_dir = mpath.parent
        code = cli(["skinlabel", "--manifest", str(mpath), "--out", str(clip_dir / "skin"),
                    "--H", str(args.size), "--W", str(args.size)])
        if code:
            raise SystemExit(code)
        m = read_manifest(mpath)
        write_manifest(mpath, m.frames.name, m.fps, m.crop, m.landmarks.name, m.ppg.name, m.hr,
                       m.clip_id, "skin/masks.raw")


if __name__ == "__main__":
    main()
