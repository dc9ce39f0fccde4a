"""Train on the 10-dimensional Gaussian mixture and report W1/W2 at the final snapshot.

    python3 scripts/gauss_experiment.py --out runs/gauss [--seed 0] [--dim 10]
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

import torch

from ruot.config import preset
from ruot.evaluation import evaluate_model
from ruot.synthdata import simulate_gaussian_mixture
from ruot.training import Checkpoint, run_pipeline, save_checkpoint


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/gauss")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--dim", type=int, default=10)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cfg = preset("gauss10d", seed=args.seed)
    data = simulate_gaussian_mixture(args.dim, args.data_seed)
    start = time.perf_counter()

    def stage_done(stage, fields):
        save_checkpoint(out / f"{stage}.json", Checkpoint(fields, cfg, stage))

    fields = run_pipeline(data, cfg, stage_done=stage_done)
    elapsed = time.perf_counter() - start
    metrics = evaluate_model(fields, data, cfg.sigma, cfg.steps_per_unit_time, repeats=5, seed=args.seed)
    print(metrics.format_table())
    print(f"training time {elapsed:.1f}s")
    (out / "metrics.csv").write_text(metrics.to_csv())
    summary = {"w1": metrics.mean("W1").tolist(), "w2": metrics.mean("W2").tolist(), "seconds": elapsed}
    (out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
