"""Command line interface (installed as ``forge``).

Subcommands: gen, transport, perlin, corrupt, metrics, snapshot.  The
``FORGE_WORKERS`` environment variable supplies the default worker count
for batch generation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .corruption import LEVELS, corrupt, dump_parameter_table
from .errors import ForgeError, ParameterError
from .fields import TransportFields
from .noise import PerlinParams, perlin_noise_3d, threshold_to_anomaly
from .objective import metrics_report
from .pipeline import (
    PipelineConfig,
    read_sample_dir,
    run_pipeline,
    snapshot_export,
    transport_trajectory,
    write_sample_dir,
)
from .transport import SolverConfig, transport
from .volume import (
    Mask3,
    ScalarField3,
    VectorField3,
    as_mask,
    read_volume,
    write_volume,
)


def _int_triplet(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated ints, got {text!r}")
    return tuple(parts)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _load_scalar(path: str) -> ScalarField3:
    vol = read_volume(path)
    if isinstance(vol, ScalarField3):
        return vol
    raise ParameterError(f"{path} is not a scalar volume")


def _load_vector(path: str) -> VectorField3:
    vol = read_volume(path)
    if isinstance(vol, VectorField3):
        return vol
    raise ParameterError(f"{path} is not a vector volume")


def _load_domain(path: str | None, shape) -> Mask3:
    if path is None:
        return Mask3(np.ones(shape, dtype=bool))
    return as_mask(read_volume(path))


def _solver_from_args(args) -> SolverConfig:
    return SolverConfig(
        t_max=args.tmax,
        cfl_safety=args.cfl_safety,
        stepper=args.stepper,
        clamp_each_step=not args.no_clamp,
    )


def _cmd_gen(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    if args.seed is not None:
        mapping = dict(cfg.raw)
        mapping["master_seed"] = args.seed
        cfg = PipelineConfig.from_mapping(mapping)
    flags = {"config": str(args.config), "workers": args.workers, "seed": args.seed}
    manifest = run_pipeline(cfg, workers=args.workers, extra_flags=flags)
    print(json.dumps({"samples": len(manifest["samples"]), "failed": manifest["failed"],
                      "output_dir": cfg.output_dir}))
    return 1 if manifest["failed"] else 0


def _cmd_transport(args) -> int:
    p0 = _load_scalar(args.p0)
    velocity = _load_vector(args.v)
    diffusivity = _load_scalar(args.d)
    domain = _load_domain(args.domain, p0.shape)
    fields = TransportFields(velocity, diffusivity)
    result = transport(p0, fields, domain, _solver_from_args(args))
    write_volume(result, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_perlin(args) -> int:
    params = PerlinParams(
        shape=args.shape, res=args.res,
        tileable=tuple(bool(v) for v in (args.tileable or (0, 0, 0))),
        seed=args.seed, percentile=args.percentile,
    )
    noise = perlin_noise_3d(params)
    if args.percentile is not None:
        domain = _load_domain(args.domain, noise.shape)
        p0, _mask = threshold_to_anomaly(noise, args.percentile, domain)
        write_volume(p0, args.out)
    else:
        write_volume(noise, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_corrupt(args) -> int:
    record = read_sample_dir(args.input)
    out_dir = args.out or f"{args.input.rstrip('/')}_{args.level}"
    corrupted = corrupt(record, args.level, args.seed)
    write_sample_dir(corrupted, out_dir)
    print(f"wrote {out_dir}")
    return 0


def _cmd_metrics(args) -> int:
    pred = _load_scalar(args.pred)
    target = _load_scalar(args.target)
    mask = _load_domain(args.mask, pred.shape)
    report = metrics_report(pred, target, mask)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_snapshot(args) -> int:
    p0 = _load_scalar(args.p0)
    velocity = _load_vector(args.v)
    diffusivity = _load_scalar(args.d)
    domain = _load_domain(args.domain, p0.shape)
    fields = TransportFields(velocity, diffusivity)
    states = transport_trajectory(p0, fields, domain, _solver_from_args(args), args.times)
    written = snapshot_export(states, args.times, args.out)
    print(f"wrote {len(written)} files to {args.out}")
    return 0


def _cmd_table(args) -> int:
    print(dump_parameter_table(), end="")
    return 0


def _add_solver_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tmax", type=float, default=10.0)
    p.add_argument("--cfl-safety", type=float, default=0.9)
    p.add_argument("--stepper", choices=("fixed_euler", "adaptive_rk45"),
                   default="fixed_euler")
    p.add_argument("--no-clamp", action="store_true",
                   help="disable per-step clamping to [0,1]")
    p.add_argument("--domain", default=None, help="domain mask volume (default: full box)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forge",
                                     description="synthetic pathology data engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="batch sample generation from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("FORGE_WORKERS", "1")))
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("transport", help="run the anomaly transport solver")
    p.add_argument("--p0", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--d", required=True)
    p.add_argument("--out", required=True)
    _add_solver_args(p)
    p.set_defaults(func=_cmd_transport)

    p = sub.add_parser("perlin", help="generate (optionally thresholded) Perlin noise")
    p.add_argument("--shape", type=_int_triplet, required=True)
    p.add_argument("--res", type=_int_triplet, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--percentile", type=float, default=None)
    p.add_argument("--tileable", type=_int_triplet, default=None)
    p.add_argument("--domain", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_perlin)

    p = sub.add_parser("corrupt", help="corrupt a written sample directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--level", choices=LEVELS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("metrics", help="print {l1, psnr, ssim, dice} as JSON")
    p.add_argument("--pred", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--mask", default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("snapshot", help="export transport snapshots at given times")
    p.add_argument("--p0", required=True)
    p.add_argument("--v", required=True)
    p.add_argument("--d", required=True)
    p.add_argument("--times", type=_float_list, required=True)
    p.add_argument("--out", required=True)
    _add_solver_args(p)
    p.set_defaults(func=_cmd_snapshot)

    p = sub.add_parser("table", help="dump the corruption parameter table as JSON")
    p.set_defaults(func=_cmd_table)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ForgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
