"""Command line entry point: ``casa run | bounds | report | generate``."""
from __future__ import annotations

import argparse
import glob
import logging
import sys
from pathlib import Path

from .config import POLICIES, ConfigError, RunConfig, load_config
from .harness import report, train_upper_bounds, write_run, write_upper_bounds
from .orchestrator import run_experiment
from .synth import generate, write_ndjson


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "policy": args.policy.upper() if args.policy else None}
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file (defaults if omitted)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)


def cmd_run(args) -> int:
    cfg = _config(args)
    ds = generate(cfg.synth_config(), seed=cfg.seed)
    art = run_experiment(cfg, ds)
    out = write_run(art, args.out, ds, plots=not args.no_plots)
    if args.upper_bounds:
        write_upper_bounds(train_upper_bounds(cfg, ds), ds.domains, cfg.seed, out)
    R = art.eval_matrix
    print(f"{cfg.policy} seed={cfg.seed} final={[round(float(v), 3) for v in R[-1]]} "
          f"labels={art.oracle_calls}/{art.ledger.total} pseudo_domains={art.n_pseudo_domains} -> {out}")
    return 0


def cmd_bounds(args) -> int:
    cfg = _config(args)
    ds = generate(cfg.synth_config(), seed=cfg.seed)
    rows = train_upper_bounds(cfg, ds)
    path = write_upper_bounds(rows, ds.domains, cfg.seed, args.out)
    for name, row in rows.items():
        print(name, [round(float(v), 3) for v in row])
    print(f"-> {path}")
    return 0


def cmd_report(args) -> int:
    dirs = [Path(d) for pattern in args.dirs for d in (sorted(glob.glob(pattern)) or [pattern])]
    text = report(dirs)
    if args.out:
        args.out.write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_generate(args) -> int:
    cfg = _config(args)
    ds = generate(cfg.synth_config(), seed=cfg.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_ndjson(ds, args.out)
    print(f"{len(ds.stream)} stream samples -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="casa", description="Continual active learning on synthetic drifting streams.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one policy on one seed and write its outputs")
    _add_common(p)
    p.add_argument("--policy", choices=[x.lower() for x in POLICIES] + list(POLICIES))
    p.add_argument("--upper-bounds", action="store_true", help="also train DSM and JModel references")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bounds", help="train the DSM and JModel references")
    _add_common(p)
    p.set_defaults(func=cmd_bounds, policy=None)

    p = sub.add_parser("report", help="aggregate run directories into mean±std tables")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("generate", help="export the synthetic dataset as NDJSON")
    _add_common(p)
    p.set_defaults(func=cmd_generate, policy=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
