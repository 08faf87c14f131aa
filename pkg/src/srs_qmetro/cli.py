"""Command-line front end.

Usage::

    srs-qmetro [COMMAND] (--config FILE | --preset NAME) [--out DIR] [--seed N] [--threads N]

``COMMAND`` may be omitted when the job file names it. ``accept`` runs the
acceptance suite with default settings when no file is given.

Exit codes: 0 success, 1 usage or config error, 2 numerical-integrity
failure, 3 acceptance failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import __version__
from .config import COMMANDS, PRESETS, ConfigError, default_accept, load, load_preset
from .fock import NumericalIntegrityError, TruncationError
from .jobs import JobError, run_job
from .lineshape import QuadratureError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_ACCEPT = 0, 1, 2, 3
THREADS_ENV = "SRS_QMETRO_THREADS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="srs-qmetro", description="Quantum-enhanced stimulated Raman scattering toolkit.")
    p.add_argument("command", nargs="?", choices=COMMANDS, help="job type (defaults to the job file's)")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="TOML job file")
    src.add_argument("--preset", choices=PRESETS, help="shipped job file")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: ./out)")
    p.add_argument("--seed", type=int, help="override the job seed")
    p.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        threads = arg
    else:
        raw = os.environ.get(THREADS_ENV, "1")
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigError("thread count must be >= 1")
    return threads


def _load_job(args):
    if args.config is not None:
        job = load(args.config)
    elif args.preset is not None:
        job = load_preset(args.preset)
    elif args.command == "accept":
        job = default_accept()
    else:
        raise ConfigError("give --config or --preset (only 'accept' runs without one)")
    if args.command is not None and args.command != job.command:
        raise ConfigError(f"job file is a '{job.command}' job, not '{args.command}'")
    if args.seed is not None:
        job = job.with_seed(args.seed)
    return job


def _write(out_dir: Path, files: dict) -> list[Path]:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out_dir}: {exc}") from exc
    written = []
    for name in sorted(files):
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            fh.write(files[name])
        written.append(path)
    return written


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = _load_job(args)
        threads = resolve_threads(args.threads)
        if job.command == "accept":
            from .acceptance import run_accept_job
            out = run_accept_job(job, threads, report=lambda r: print(r.line(), flush=True))
        else:
            out = run_job(job, threads)
        for path in _write(args.out, out.files):
            print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except JobError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (NumericalIntegrityError, TruncationError, QuadratureError) as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if job.command == "accept" and not out.ok:
        failing = ", ".join(str(n) for n in out.results["failing"])
        print(f"acceptance failed: criteria {failing}", file=sys.stderr)
        return EXIT_ACCEPT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
