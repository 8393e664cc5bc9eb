#!/usr/bin/env python3
"""Train the micro network on one synthetic clip and report loss and HR."""
import argparse
import dataclasses
import time

from mhrppg.experiments import OverfitSpec, overfit_run
from mhrppg.train import write_loss_csv


def main():
    d = OverfitSpec()
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epochs", type=int, default=d.epochs)
    ap.add_argument("--lr", type=float, default=d.lr)
    ap.add_argument("--hr", type=float, default=d.hr)
    ap.add_argument("--seed", type=int, default=d.seed)
    ap.add_argument("--loss-csv", help="write the per-epoch losses here")
    args = ap.parse_args()
    spec = dataclasses.replace(d, epochs=args.epochs, lr=args.lr, hr=args.hr, seed=args.seed)

    t0 = time.perf_counter()

    def log(h):
        if h.epoch % 10 == 0 or h.epoch == 1:
            print(f"epoch {h.epoch:3d}  L_r {h.L_r:.4f}  L_f {h.L_f:.4f}  L_s {h.L_s:.4f}  "
                  f"{time.perf_counter() - t0:6.0f} s", flush=True)

    res, best, hr, _ = overfit_run(spec, progress=log)
    if args.loss_csv:
        write_loss_csv(res.history, args.loss_csv)
    print(f"best epoch {res.best_epoch}: L_r {best:.5f}; HR {hr} (truth {spec.hr}); "
          f"bin width {60 * spec.fps / spec.T:.2f} bpm")


if __name__ == "__main__":
    main()
