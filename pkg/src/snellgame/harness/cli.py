"""Command-line interface.

Subcommands: simulate, solve-game, solve-bsde, verify-saddle, compare, sweep.
Each run writes a CSV (UTF-8, header row, '.' decimal) and a JSON verdict file
next to it (``<out>.verdict.json``); the exit code is 0 iff every configured
tolerance passed (2 on capacity errors, with the largest feasible grid named
in the verdict).  ``SNELL_THREADS`` caps worker threads; all results on the
tree backend are identical for any thread count.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..model import SpecError
from .config import ExperimentConfig
from .registry import REGISTRY, fixture_names
from . import runner


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.from_file(args.config)
    else:
        fixture = getattr(args, "fixture", None) or "f1"
        fx = REGISTRY[fixture] if fixture in REGISTRY else None
        if fx is None:
            raise SpecError(f"unknown fixture {fixture!r}; known: {', '.join(fixture_names())}")
        cfg = ExperimentConfig(
            fixture=fixture,
            eps=fx.default_eps,
            budgets=tuple(range(fx.default_budget + 2)),
        )
    if getattr(args, "seed", None) is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    if getattr(args, "backend", None):
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "backend": args.backend})
    return cfg


def _emit(out: str, header, rows, verdict) -> None:
    out_path = Path(out)
    runner.write_csv(out_path, header, rows)
    runner.write_verdict(out_path.with_suffix(out_path.suffix + ".verdict.json"), verdict)
    status = "PASS" if verdict.get("pass") else "FAIL"
    err = verdict.get("error")
    extra = f" ({err['message']})" if err else ""
    print(f"{status}: wrote {out_path} and {out_path}.verdict.json{extra}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (see ExperimentConfig schema)")
    p.add_argument("--fixture", help="registry fixture name when no --config is given")
    p.add_argument("--seed", type=int, help="override the top-level seed")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="snellgame",
        description=(
            "Impulse-control-versus-stopping games: discretized dynamic programming "
            "cross-validated against the penalized reflected-scheme limit."
        ),
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate forward bundles; optionally dump breakpoints")
    _add_common(p)
    p.add_argument("--paths", type=int, default=None, help="number of paths (default: min(n_paths, 16))")
    p.add_argument("--dump-paths", action="store_true", help="write per-breakpoint rows")
    p.add_argument("--out", default="simulate.csv")

    p = sub.add_parser("solve-game", help="lower/upper value of the discretized game")
    _add_common(p)
    p.add_argument("--eps", type=float, default=None, help="time-grid mesh target")
    p.add_argument("--k", type=int, default=None, help="intervention budget")
    p.add_argument("--backend", choices=("tree", "lsmc"))
    p.add_argument("--out", default="solve-game.csv")

    p = sub.add_parser("solve-bsde", help="penalized reflected scheme at one or many levels")
    _add_common(p)
    p.add_argument("--n", default="sweep", help="penalty level (integer) or 'sweep'")
    p.add_argument("--backend", choices=("tree", "lsmc"))
    p.add_argument("--out", default="solve-bsde.csv")

    p = sub.add_parser("verify-saddle", help="probe the saddle-point inequalities")
    _add_common(p)
    p.add_argument("--n", type=int, default=None, help="penalty level (default: largest simplex-feasible)")
    p.add_argument("--probes", type=int, default=None)
    p.add_argument("--out", default="verify-saddle.csv")

    p = sub.add_parser("compare", help="cross-validate both routes and check all tolerances")
    _add_common(p)
    p.add_argument("--backend", choices=("tree", "lsmc"))
    p.add_argument("--out", default="compare.csv")

    p = sub.add_parser("sweep", help="parameter sweeps (eps refinement, penalty ladder, budget)")
    _add_common(p)
    p.add_argument("--kind", choices=("eps", "n", "k", "all"), default="all")
    p.add_argument("--backend", choices=("tree", "lsmc"))
    p.add_argument("--out", default="sweep.csv")

    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "simulate":
            rows, verdict, code = runner.run_simulate(cfg, args.paths, dump=args.dump_paths)
            _emit(args.out, runner.SIMULATE_CSV_HEADER, rows, verdict)
        elif args.command == "solve-game":
            rows, verdict, code = runner.run_solve_game(cfg, args.eps, args.k, args.backend)
            _emit(args.out, runner.GAME_CSV_HEADER, rows, verdict)
        elif args.command == "solve-bsde":
            n_arg = args.n if args.n == "sweep" else int(args.n)
            rows, verdict, code = runner.run_solve_bsde(cfg, n_arg, args.backend)
            _emit(args.out, runner.BSDE_CSV_HEADER, rows, verdict)
        elif args.command == "verify-saddle":
            rows, verdict, code = runner.run_verify_saddle(cfg, args.n, args.probes)
            _emit(args.out, runner.SADDLE_CSV_HEADER, rows, verdict)
        elif args.command == "compare":
            rows, verdict, code = runner.run_compare(cfg)
            _emit(args.out, runner.COMPARE_CSV_HEADER, rows, verdict)
        elif args.command == "sweep":
            rows, verdict, code = runner.run_sweep(cfg, args.kind)
            _emit(args.out, runner.SWEEP_CSV_HEADER, rows, verdict)
        else:  # pragma: no cover - argparse enforces the choices
            raise SpecError(f"unknown command {args.command!r}")
        return code
    except SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
