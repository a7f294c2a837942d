"""Command line front end.

Subcommands mirror the pipeline stages (``synth``, ``heat2dist``,
``recon-local``, ``recon-global``, ``evaluate``) plus ``run`` for all of them,
``sweep`` and ``report``.  Exit codes: 0 success, 2 input error, 3 selection,
alignment or frame error, 4 resource error, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

COMMANDS = ("synth", "heat2dist", "recon-local", "recon-global", "evaluate", "run", "sweep", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="manirecon", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="pipeline config (JSON); paths inside are relative to it")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="cap on worker threads for numerical libraries")
    parser.add_argument("--eps1", type=float, help="override params.eps1")
    parser.add_argument("--sigma", type=float, help="override heat.sigma")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _limit_threads(k: int) -> None:
    # must happen before numpy loads its BLAS
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(k)


def _dispatch(args) -> int:
    from pathlib import Path

    from . import pipeline as pl
    from .errors import InputError

    if args.command == "report":
        if args.out is None and args.config is None:
            raise InputError("report needs --out or --config")
        out = Path(args.out) if args.out else pl.load_config(args.config).output
        print(pl.write_report(out))
        return 0
    if args.config is None:
        raise InputError(f"{args.command} needs --config")
    if args.seed is not None and args.seed < 0:
        raise InputError("--seed must be nonnegative")
    cfg = pl.load_config(args.config).with_overrides(
        seed=args.seed, output=args.out, eps1=args.eps1, sigma=args.sigma)
    Path(cfg.output).mkdir(parents=True, exist_ok=True)
    if args.command == "run":
        rep = pl.run(cfg)
        print(pl.summarize(cfg.output))
        return 0 if rep.status == "ok" else int(rep.failure["exit_code"])
    if args.command == "sweep":
        # failed runs are recorded in the sweep report, not in the exit code
        pl.sweep(cfg)
        print(pl.summarize(cfg.output))
        return 0
    if args.command == "synth":
        pl.stage_synth(cfg)
    elif args.command == "heat2dist":
        pl.stage_heat2dist(cfg)
    elif args.command == "recon-local":
        nodes, charts, failures = pl.stage_local(cfg)
        print(f"{len(charts)} charts for {len(nodes)} nodes, {len(failures)} failures")
    elif args.command == "recon-global":
        m = pl.stage_global(cfg)
        print(f"distance matrix over {len(m.nodes)} nodes, {len(m.unreachable)} unreachable pairs")
    elif args.command == "evaluate":
        doc = pl.stage_evaluate(cfg)
        print(f"evaluation: {doc['status']}" + (f", max error {doc['max_error']:.6g}" if doc["status"] == "ok" else ""))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error (input): --threads must be positive", file=sys.stderr)
            return 2
        _limit_threads(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import ReconstructionError

    try:
        return _dispatch(args)
    except ReconstructionError as exc:
        print(f"error ({exc.category}): {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
