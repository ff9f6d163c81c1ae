"""Swept comparison of all methods, one photon level per run directory.

    python3 scripts/compare.py --mode limited --size 256 --photons 1e5 1e4 1e3 --out runs/limited
    python3 scripts/compare.py --mode sparse --size 256 --out runs/sparse

Each level gets <out>/<photons>/ with metrics.csv, one PNG per method and a
side-by-side panel; <out>/table.csv aggregates everything.
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from limitedct import experiment as ex
from limitedct.cli import cmd_table, format_config
from limitedct.grid import write_png
from limitedct.metrics import append_metrics_row


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--mode", default="limited", choices=ex.MODES)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--photons", type=float, nargs="+", default=[1e4])
    ap.add_argument("--methods", nargs="+", default=list(ex.PROTOCOL_ORDER))
    ap.add_argument("--out", default="runs/compare")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    root = Path(args.out)
    for photons in args.photons:
        cfg = ex.RunConfig(size=args.size, mode=args.mode, photons=photons, record_time=False)
        run_dir = root / f"{photons:g}"
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(format_config(cfg))
        data = ex.make_data(cfg)
        write_png(run_dir / "truth.png", data.truth, 0.0, 1.0)
        out = ex.run_protocol(cfg, methods=args.methods, data=data)
        (run_dir / "metrics.csv").unlink(missing_ok=True)
        for method, o in out.items():
            append_metrics_row(run_dir / "metrics.csv", {
                "method": method, "photons": repr(photons), **o.metrics, "seconds": o.seconds})
            write_png(run_dir / f"{method}.png", o.result.image, 0.0, 1.0)
            c = o.config
            logging.info("%g photons %-13s rel_l2 %.4f psnr %.2f ssim %.3f  alpha=%g beta=%g mu=%g",
                         photons, method, o.metrics["rel_l2"], o.metrics["psnr"],
                         o.metrics["ssim"], c.alpha, c.beta, c.mu)
        gap = np.ones((args.size, 2))
        panel = [data.truth]
        for o in out.values():
            panel += [gap, np.clip(o.result.image, 0, 1)]
        write_png(run_dir / "panel.png", np.hstack(panel), 0.0, 1.0)
    cmd_table(root)


if __name__ == "__main__":
    main()
