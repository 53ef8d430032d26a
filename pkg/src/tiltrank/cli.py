"""Command-line entry point: ``tiltrank <command> ...``.

One-shot utilities (``synth-field``, ``warp``) take flags; experiment stages
take a JSON config whose ``output_dir`` may be overridden by
``$TILTRANK_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .config import load_config
from .fields import KOLMOGOROV_ALPHA, FieldSpec, generate_tilt_map, measure_psd_slope
from .io import load_tilt, read_image, save_tilt, write_image
from .warp import DEFAULT_KSIZE, DEFAULT_SIGMA, MODES, degrade

logger = logging.getLogger("tiltrank")


def _psd_band(n: int):
    lo, hi = 4.0, n / 4.0
    return (lo, hi) if hi > lo else (1.0, n / 2.0)


def field_stats(tilt) -> dict:
    stats = {}
    n = min(tilt.dx.shape)
    for name, ch in (("dx", tilt.dx), ("dy", tilt.dy)):
        flat = not np.any(ch - ch.mean())
        stats[name] = {
            "mean": float(ch.mean()),
            "var": float(ch.var()),
            "psd_slope": None if flat or n < 8 else measure_psd_slope(ch, _psd_band(n)),
        }
    return stats


def cmd_synth_field(args) -> int:
    spec = FieldSpec(
        (args.size, args.size), alpha=args.alpha, corr_length=args.corr_length, strength=args.strength, seed=args.seed
    )
    tilt = generate_tilt_map(spec)
    save_tilt(args.out, tilt)
    print(json.dumps(field_stats(tilt), sort_keys=True))
    return 0


def cmd_warp(args) -> int:
    img = read_image(args.image)
    tilt = load_tilt(args.tilt) if args.tilt else None
    if "tilt" in args.mode and tilt is None:
        raise ValueError(f"mode {args.mode!r} needs --tilt")
    write_image(args.out, degrade(img, tilt, args.mode, (args.sigma, args.ksize)))
    return 0


def cmd_make_benchmark(args) -> int:
    cfg = load_config(args.config)
    paths = pipeline.make_benchmark_stage(cfg, args.out or cfg.output_dir / "benchmark")
    print(json.dumps({k: str(v) for k, v in paths.items()}, sort_keys=True))
    return 0


def cmd_train_tilt(args) -> int:
    cfg = load_config(args.config)
    result = pipeline.train_tilt_stage(cfg)
    print(json.dumps({"checkpoint": str(cfg.output_dir / "tilt"), "final_loss": result.losses[-1] if result.losses else None}))
    return 0


def cmd_train_id(args) -> int:
    cfg = load_config(args.config)
    result = pipeline.train_identity_stage(cfg)
    print(json.dumps({"checkpoint": str(cfg.output_dir / "identity"), "final_loss": result.losses[-1] if result.losses else None}))
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    print(json.dumps(pipeline.eval_stage(cfg, args.rerank), indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tiltrank", description="Turbulence-robust recognition toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-field", help="generate a power-law tilt map (NPY [2,H,W])")
    s.add_argument("--alpha", type=float, default=KOLMOGOROV_ALPHA)
    s.add_argument("--corr-length", type=float, default=None, help="pixels; omit to disable the cutoff")
    s.add_argument("--strength", type=float, default=1.0, help="per-channel standard deviation in pixels")
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_field)

    s = sub.add_parser("warp", help="degrade an image with a tilt map and/or blur")
    s.add_argument("--image", required=True)
    s.add_argument("--tilt")
    s.add_argument("--mode", choices=MODES, default="tilt")
    s.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    s.add_argument("--ksize", type=int, default=DEFAULT_KSIZE)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_warp)

    s = sub.add_parser("make-benchmark", help="write the synthetic benchmark and its manifests")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="default: <output_dir>/benchmark")
    s.set_defaults(func=cmd_make_benchmark)

    for name, func, text in (
        ("train-tilt", cmd_train_tilt, "train the tilt predictor"),
        ("train-id", cmd_train_id, "train the identity embedder"),
    ):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("eval", help="rank queries against the gallery and write metrics")
    s.add_argument("--config", required=True)
    s.add_argument("--rerank", choices=pipeline.RERANK_MODES, default="none")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"tiltrank {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
