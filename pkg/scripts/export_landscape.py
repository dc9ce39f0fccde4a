"""Export U = -s on a 2D grid at several times from a saved checkpoint.

    python3 scripts/export_landscape.py runs/grn/train.json --bounds 0,2.5,0,2.5 --out runs/grn/landscape
"""

from __future__ import annotations

import argparse
from pathlib import Path

from ruot.evaluation import landscape_grid
from ruot.training import load_checkpoint


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("checkpoint")
    ap.add_argument("--bounds", default="0,2.5,0,2.5", help="lo,hi,lo,hi")
    ap.add_argument("--resolution", type=int, default=100)
    ap.add_argument("--times", default="0,1,2,3,4")
    ap.add_argument("--axes", default="0,1")
    ap.add_argument("--out", default="landscape")
    args = ap.parse_args(argv)

    ckpt = load_checkpoint(args.checkpoint)
    lo0, hi0, lo1, hi1 = (float(v) for v in args.bounds.split(","))
    axes = tuple(int(a) for a in args.axes.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t in (float(v) for v in args.times.split(",")):
        grid = landscape_grid(ckpt.fields.s, [(lo0, hi0), (lo1, hi1)], [args.resolution] * 2, t,
                              axes=axes, sigma=ckpt.config.sigma)
        path = out / f"U_t{t:g}.csv"
        path.write_text(grid.to_csv())
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
