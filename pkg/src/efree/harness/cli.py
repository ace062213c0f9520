"""Command-line entry point: ``efree {generate,train,render,eval,sweep,gradcheck}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .gradcheck import SUITES


def _cmd_generate(args) -> int:
    from .data import generate

    root = generate(args.out, seed=args.seed, num_scenes=args.scenes,
                    gaussians_per_scene=args.gaussians, image_size=args.size,
                    baseline_deg=args.baseline_deg, baseline_max=args.baseline_max)
    print(f"wrote {args.scenes} scene(s) to {root}")
    return 0


def _cmd_train(args) -> int:
    from .config import RunConfig
    from .train import train

    cfg = RunConfig.load(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.data:
        cfg.data_dir = args.data
    ckpt = train(cfg, resume=not args.fresh, log=print)
    print(f"final checkpoint: {ckpt}")
    return 0


def _parse_views(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _cmd_render(args) -> int:
    from .evaluate import render

    for path in render(args.ckpt, args.scene, args.views, args.out):
        print(path)
    return 0


def _cmd_eval(args) -> int:
    from .evaluate import evaluate, format_report

    result = evaluate(args.ckpt, args.data, args.report, iterations=args.iterations)
    print(format_report(result["scenes"], result["bins"]), end="")
    return 0


def _cmd_sweep(args) -> int:
    from .config import RunConfig
    from .data import load_dataset
    from .experiments import format_study, iteration_study, write_study

    cfg = RunConfig.load(args.config)
    if args.data:
        cfg.data_dir = args.data
    rows = iteration_study(cfg, load_dataset(cfg.data_dir), args.iterations, args.out,
                           eval_views=args.views, log=print)
    write_study(rows, args.report)
    print(format_study(rows), end="")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_suites

    names = sorted(SUITES) if args.module == "all" else [args.module]
    results = run_suites(names, args.tol)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.suite:<11} {r.name:<28} max rel err {r.error:.3e}  (tol {r.tol:g})")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="efree", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scenes", type=int, default=1)
    g.add_argument("--gaussians", type=int, default=200, help="blob primitives per scene")
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--baseline-deg", type=float, default=15.0)
    g.add_argument("--baseline-max", type=float, default=None,
                   help="if set, draw each scene's baseline uniformly from [baseline-deg, this]")
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=_cmd_generate)

    t = sub.add_parser("train", help="train from a JSON RunConfig")
    t.add_argument("--config", type=Path, required=True)
    t.add_argument("--out", type=str, default=None)
    t.add_argument("--data", type=str, default=None)
    t.add_argument("--fresh", action="store_true", help="ignore existing checkpoints")
    t.set_defaults(func=_cmd_train)

    r = sub.add_parser("render", help="render views of a scene from a checkpoint")
    r.add_argument("--ckpt", type=Path, required=True)
    r.add_argument("--scene", type=Path, required=True)
    r.add_argument("--views", type=_parse_views, default=[2, 3, 4])
    r.add_argument("--out", type=Path, required=True)
    r.set_defaults(func=_cmd_render)

    e = sub.add_parser("eval", help="metrics report over a dataset")
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--report", type=Path, required=True)
    e.add_argument("--iterations", type=int, default=None)
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("sweep", help="train and score one model per ICGA iteration count")
    s.add_argument("--config", type=Path, required=True)
    s.add_argument("--iterations", type=_parse_views, default=[1, 2, 3])
    s.add_argument("--views", type=_parse_views, default=None, help="evaluation views (default: targets)")
    s.add_argument("--data", type=str, default=None)
    s.add_argument("--out", type=Path, required=True, help="directory for the per-variant runs")
    s.add_argument("--report", type=Path, required=True)
    s.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    c.add_argument("--module", choices=sorted(SUITES) + ["all"], default="all")
    c.add_argument("--tol", type=float, default=None)
    c.set_defaults(func=_cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"efree {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
