"""Command-line entry point: ``ruot {simulate,train,eval,sample,landscape}``.

Config precedence is preset < ``--config`` file < command-line flags. Every
output goes through a temp file and a rename, so a failed command leaves no
partial file at the final path. The default output directory is taken from
``$RUOT_OUT_DIR`` when ``--out`` is not given.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import PRESETS, TrainConfig, load_config, preset, save_config
from .dynamics import SigmaSchedule, integrate, sample_sde
from .errors import ConfigError, FormatError, NumericError, RuotError, UsageError
from .evaluation import DYNAMICS, MODES, evaluate_identity, evaluate_model, landscape_grid
from .nets import DTYPE
from .synthdata import (
    GaussMixtureParams,
    GrnParams,
    atomic_write_text,
    load_csv,
    save_csv,
    simulate_gaussian_mixture,
    simulate_grn,
)
from .training import Checkpoint, load_checkpoint, run_pipeline, save_checkpoint, snapshot_grid

OUT_ENV = "RUOT_OUT_DIR"
DEFAULT_OUT = "ruot_out"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_FORMAT = 4
EXIT_IO = 5
EXIT_NUMERIC = 6

log = logging.getLogger("ruot")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON file of training config keys")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in config preset")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="ruot", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", metavar="{simulate,train,eval,sample,landscape}")
    sub.required = True

    sp = sub.add_parser("simulate", parents=[common], help="write a synthetic snapshot dataset")
    sp.add_argument("--kind", choices=("grn", "gauss"), default="grn")
    sp.add_argument("--n-per-cluster", type=int, default=250, help="initial cells per GRN cluster")
    sp.add_argument("--alpha-g", type=float, default=2.0, help="GRN division-rate scale")
    sp.add_argument("--dim", type=int, default=10, help="state dimension of the Gaussian mixture")
    sp.add_argument("--name", default="data.csv")

    tp = sub.add_parser("train", parents=[common], help="run the training stages, checkpointing each")
    tp.add_argument("--data", required=True)
    tp.add_argument("--set", action="append", default=[], metavar="KEY=JSON", help="override one config key")

    ep = sub.add_parser("eval", parents=[common], help="Wasserstein metrics of a checkpoint against data")
    ep.add_argument("--data", required=True)
    src = ep.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--identity", action="store_true", help="score the model that reproduces the data")
    ep.add_argument("--mode", choices=MODES, default="all")
    ep.add_argument("--dynamics", choices=DYNAMICS, default="sde")
    ep.add_argument("--repeats", type=int, default=5)
    ep.add_argument("--name", default="metrics.csv")

    sa = sub.add_parser("sample", parents=[common], help="trajectories from the initial snapshot")
    sa.add_argument("--checkpoint", required=True)
    sa.add_argument("--data", required=True)
    sa.add_argument("--dynamics", choices=DYNAMICS, default="sde")
    sa.add_argument("--n", type=int, default=0, help="number of particles (0: all initial points)")
    sa.add_argument("--name", default="trajectories.csv")

    la = sub.add_parser("landscape", parents=[common], help="export U = -s on a grid")
    la.add_argument("--checkpoint", required=True)
    la.add_argument("--bounds", required=True, help="lo,hi[,lo,hi]")
    la.add_argument("--resolution", required=True, help="n[,n]")
    la.add_argument("--t", type=float, default=0.0)
    la.add_argument("--axes", help="exported state coordinates, e.g. 0,1")
    la.add_argument("--name", default="landscape.csv")
    return ap


def parse_args(argv: list[str]) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolve_config(args) -> TrainConfig:
    base = preset(args.preset) if args.preset else TrainConfig()
    cfg = load_config(args.config, base) if args.config else base
    changes = {}
    for item in getattr(args, "set", []):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=JSON, got {item!r}")
        try:
            changes[key] = json.loads(value)
        except json.JSONDecodeError:
            raise UsageError(f"--set {key}: value {value!r} is not JSON") from None
        if key not in cfg.to_dict():
            raise ConfigError(f"unknown config key: {key}")
    if args.seed is not None:
        changes["seed"] = args.seed
    return cfg.replace(**changes) if changes else cfg


def _project(data, cfg: TrainConfig):
    return data.project(cfg.dims) if cfg.dims is not None else data


def cmd_simulate(args) -> None:
    seed = 0 if args.seed is None else args.seed
    if args.kind == "grn":
        data = simulate_grn(GrnParams(alpha_g=args.alpha_g), args.n_per_cluster, seed).dataset
    else:
        data = simulate_gaussian_mixture(args.dim, seed, GaussMixtureParams())
    path = _out_dir(args) / args.name
    save_csv(data, path)
    print(f"wrote {path} ({sum(data.counts)} rows, times {data.times})")


def cmd_train(args) -> None:
    cfg = resolve_config(args)
    data = load_csv(args.data)
    out = _out_dir(args)
    save_config(cfg, out / "config.json")

    def stage_done(stage, fields):
        path = out / f"checkpoint_{stage}.json"
        save_checkpoint(path, Checkpoint(fields, cfg, stage))
        log.info("wrote %s", path)

    run_pipeline(data, cfg, stage_done=stage_done)
    print(f"wrote checkpoints to {out}")


def cmd_eval(args) -> None:
    data = load_csv(args.data)
    if args.identity:
        metrics = evaluate_identity(data, repeats=1)
    else:
        ckpt = load_checkpoint(args.checkpoint)
        cfg = ckpt.config
        seed = cfg.seed if args.seed is None else args.seed
        metrics = evaluate_model(
            ckpt.fields, _project(data, cfg), cfg.sigma, cfg.steps_per_unit_time,
            repeats=args.repeats, mode=args.mode, dynamics=args.dynamics, seed=seed,
        )
    path = _out_dir(args) / args.name
    atomic_write_text(path, metrics.to_csv())
    print(metrics.format_table())


def trajectories_csv(times, positions: np.ndarray, log_weights: np.ndarray) -> str:
    n, d = positions.shape[1], positions.shape[2]
    buf = io.StringIO()
    buf.write("time,particle,log_weight," + ",".join(f"x{i}" for i in range(d)) + "\n")
    for j, t in enumerate(times):
        for i in range(n):
            coords = ",".join(f"{c:.17g}" for c in positions[j, i])
            buf.write(f"{t:.17g},{i},{log_weights[j, i]:.17g},{coords}\n")
    return buf.getvalue()


def cmd_sample(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    data = _project(load_csv(args.data), cfg)
    seed = cfg.seed if args.seed is None else args.seed
    x0 = data.clouds[0]
    if args.n > 0:
        x0 = x0[np.random.default_rng(seed).choice(len(x0), size=args.n, replace=True)]
    x0 = torch.as_tensor(x0, dtype=DTYPE)
    grid = snapshot_grid(data, cfg.steps_per_unit_time)
    with torch.no_grad():
        ode = integrate(ckpt.fields.v, ckpt.fields.g, x0, grid)
    pos = ode.positions
    if args.dynamics == "sde" and cfg.sigma > 0:
        pos = sample_sde(ckpt.fields.v, ckpt.fields.s, SigmaSchedule(cfg.sigma), x0, grid, seed).positions
    path = _out_dir(args) / args.name
    atomic_write_text(path, trajectories_csv(grid.nodes(), pos.detach().numpy(), ode.log_weights.detach().numpy()))
    print(f"wrote {path}")


def cmd_landscape(args) -> None:
    ckpt = load_checkpoint(args.checkpoint)
    lims = _floats(args.bounds, "--bounds")
    res = [int(r) for r in _floats(args.resolution, "--resolution")]
    if len(lims) != 2 * len(res):
        raise UsageError("--bounds needs a lo,hi pair per --resolution entry")
    bounds = [(lims[2 * i], lims[2 * i + 1]) for i in range(len(res))]
    axes = None if args.axes is None else tuple(int(a) for a in _floats(args.axes, "--axes"))
    grid = landscape_grid(ckpt.fields.s, bounds, res, args.t, axes=axes, sigma=ckpt.config.sigma)
    path = _out_dir(args) / args.name
    atomic_write_text(path, grid.to_csv())
    print(f"wrote {path}")


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "landscape": cmd_landscape,
}


def run(args) -> int:
    try:
        COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RuotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    # single-threaded kernels keep reruns bitwise identical
    torch.set_num_threads(1)
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
