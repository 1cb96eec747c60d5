"""Experiment orchestration: compare, sweeps, single-solver runs, persistence.

Every run produces a CSV (UTF-8, header row, '.' decimal, repr-formatted
floats so tree-backend outputs are bit-reproducible) plus a JSON verdict file
with the pass/fail checks, runtimes, config/input hashes and an environment
stamp.  Runtimes never enter the CSVs — determinism checks diff the CSVs
byte-for-byte across thread counts.
"""

from __future__ import annotations

import csv
import json
import hashlib
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import CapacityError, ImpulseControl, ProblemSpec, SpecError
from ..paths import DriverNoise, ScenarioLattice, simulate_bundle
from ..game import GameGrid, GameSolution, dpp_backward, truncation_sweep, upper_value
from ..bsde import (
    BsdeSpec,
    snell_limit,
    solve_penalized,
    solve_penalized_lsmc,
)
from ..randomized import verify_saddle
from .._parallel import thread_budget
from .config import ExperimentConfig, canonical_json
from .registry import fixture_source, make_problem

__all__ = [
    "ResultRecord",
    "env_stamp",
    "input_hash",
    "write_csv",
    "run_compare",
    "run_sweep",
    "run_solve_game",
    "run_solve_bsde",
    "run_verify_saddle",
    "run_simulate",
]

GAME_CSV_HEADER = ["eps", "k", "n_steps", "lower_value", "upper_value", "gap", "runtime_ms", "seed"]
BSDE_CSV_HEADER = ["n", "Y0", "K_minus_total", "K_plus_total", "max_violation", "runtime_ms"]
SADDLE_CSV_HEADER = ["probe_id", "J_nu_star_tau", "J_nu_star_taun", "J_nu_taun", "violation"]
COMPARE_CSV_HEADER = ["quantity", "k", "n", "value"]
SWEEP_CSV_HEADER = ["parameter", "value", "metric", "result"]
SIMULATE_CSV_HEADER = ["path", "time", "state", "jump", "mark"]


def env_stamp() -> dict:
    return {
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "platform": platform.platform(),
        "threads": thread_budget(),
    }


def input_hash(cfg: ExperimentConfig) -> str:
    """Content hash of everything that determines the run: config + fixture code."""
    payload = cfg.to_json() + "\n" + fixture_source(cfg.fixture)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ResultRecord:
    config_hash: str
    input_hash: str
    metrics: dict
    env: dict = field(default_factory=env_stamp)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "input_hash": self.input_hash,
            "metrics": self.metrics,
            "env": self.env,
        }


def _fmt(v):
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def write_csv(path: str | Path, header: list[str], rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def write_verdict(path: str | Path, verdict: dict) -> None:
    Path(path).write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _record(cfg: ExperimentConfig, metrics: dict) -> dict:
    return ResultRecord(cfg.config_hash, input_hash(cfg), metrics).to_dict()


# ---------------------------------------------------------------------------
# compare: the cross-solver pipeline
# ---------------------------------------------------------------------------


def _capacity_verdict(cfg: ExperimentConfig, exc: CapacityError) -> dict:
    return {
        "pass": False,
        "error": {"kind": "capacity", "message": str(exc)},
        "record": _record(cfg, {}),
    }


def run_compare(cfg: ExperimentConfig) -> tuple[list, dict, int]:
    """Cross-validate the two routes on one fixture.

    Emits one long-format table (quantity, k, n, value) holding the per-budget
    lower/upper game values and their gaps, the penalization ladder, the
    coincidence gaps |lower(k_max) - Y^n|, and the saddle check — and a
    verdict dict evaluating every configured tolerance.  Returns
    (rows, verdict, exit_code).
    """
    t_start = time.perf_counter()
    spec = make_problem(cfg.fixture, cfg.params)
    runtimes: dict[str, float] = {}
    try:
        grid = GameGrid.from_spec(spec, cfg.eps, max(cfg.budgets))
        t0 = time.perf_counter()
        sol = dpp_backward(
            spec, grid, cfg.backend, seed=cfg.seed, n_paths=cfg.n_paths, root_budgets=cfg.budgets
        )
        runtimes["game_ms"] = 1e3 * (time.perf_counter() - t0)

        lowers: list[tuple[int, float]] = []
        uppers: list[tuple[int, float, float]] = []
        t0 = time.perf_counter()
        for k in cfg.budgets:
            grid_k = GameGrid(grid.horizon, grid.eps, grid.iota, k, grid.cells, grid.max_batch)
            if cfg.backend == "tree":
                sol_k = GameSolution(spec, grid_k, "tree", sol.field, None, cfg.seed)
            else:
                sol_k = dpp_backward(spec, grid_k, "lsmc", seed=cfg.seed, n_paths=cfg.n_paths)
            lowers.append((k, sol_k.lower_value))
            up, se = upper_value(sol_k, n_paths=cfg.n_paths, seed=cfg.seed + 1)
            uppers.append((k, up, se))
        runtimes["responses_ms"] = 1e3 * (time.perf_counter() - t0)

        t0 = time.perf_counter()
        lat = ScenarioLattice(spec, cfg.steps, include_jumps=True)
        report = snell_limit(spec, cfg.steps, schedule=cfg.penalties, tol=0.0, lattice=lat)
        runtimes["bsde_ms"] = 1e3 * (time.perf_counter() - t0)

        # saddle check at the largest simplex-feasible penalty level
        dt = spec.horizon / cfg.steps
        feasible = [n for n in cfg.penalties if n * spec.lam_total * dt <= 1.0 + 1e-12]
        n_saddle = max(feasible) if feasible else min(cfg.penalties)
        t0 = time.perf_counter()
        saddle = verify_saddle(spec, cfg.steps, n_saddle, cfg.probes, cfg.seed)
        runtimes["saddle_ms"] = 1e3 * (time.perf_counter() - t0)
    except CapacityError as exc:
        return [], _capacity_verdict(cfg, exc), 2

    k_ref, lower_ref = lowers[-1]
    rows: list = []
    for k, v in lowers:
        rows.append(("lower_value", k, "", v))
    for k, u, _ in uppers:
        rows.append(("upper_value", k, "", u))
    for (k, v), (_, u, _) in zip(lowers, uppers):
        rows.append(("order_gap", k, "", u - v))
    for n, y in report.values:
        rows.append(("penalized_y0", "", n, y))
    gaps = [(n, abs(lower_ref - y)) for n, y in report.values]
    for n, g in gaps:
        rows.append(("coincidence_gap", "", n, g))
    rows.append(("snell_limit", "", report.values[-1][0], report.limit))
    rows.append(("saddle_identity_gap", "", n_saddle, saddle.identity_gap))
    rows.append(("saddle_worst_violation", "", n_saddle, saddle.worst_violation))

    se_by_k = {k: se for k, _, se in uppers}
    order_worst = max(v - u for (k, v), (_, u, _) in zip(lowers, uppers))
    order_tol = cfg.tol_order if cfg.backend == "tree" else cfg.tol_order + 3.0 * max(
        se_by_k.values(), default=0.0
    )
    gap_seq = [g for _, g in gaps]
    coincidence_monotone = all(b <= a + 1e-12 for a, b in zip(gap_seq, gap_seq[1:]))
    checks = {
        "order_lower_le_upper": {
            "pass": bool(order_worst <= order_tol),
            "worst_excess": order_worst,
            "tol": order_tol,
        },
        "value_coincidence": {
            "pass": bool(gaps[-1][1] <= cfg.tol_value),
            "gap": gaps[-1][1],
            "tol": cfg.tol_value,
            "k": k_ref,
            "n": gaps[-1][0],
        },
        "coincidence_gap_monotone": {
            "pass": bool(coincidence_monotone),
            "gaps": gap_seq,
        },
        "penalized_monotone": {
            "pass": bool(report.monotone),
            "violations": report.violations,
        },
        "saddle": {
            "pass": bool(saddle.worst_violation <= cfg.tol_saddle
                         and saddle.identity_gap <= cfg.tol_saddle),
            "worst_violation": saddle.worst_violation,
            "identity_gap": saddle.identity_gap,
            "n": n_saddle,
            "simplex_ok": saddle.simplex_ok,
        },
    }
    ok = all(c["pass"] for c in checks.values())
    runtimes["total_ms"] = 1e3 * (time.perf_counter() - t_start)
    metrics = {
        "lower_value": lower_ref,
        "upper_value": uppers[-1][1],
        "snell_limit": report.limit,
        "coincidence_gap": gaps[-1][1],
        "saddle_worst_violation": saddle.worst_violation,
    }
    verdict = {
        "pass": bool(ok),
        "checks": checks,
        "runtimes_ms": runtimes,
        "record": _record(cfg, metrics),
    }
    return rows, verdict, 0 if ok else 1


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def run_sweep(cfg: ExperimentConfig, kind: str = "all") -> tuple[list, dict, int]:
    """Long-format (parameter, value, metric, result) rows, deterministic order.

    ``eps``: grid refinement of the game lower value (three halvings);
    ``n``: the penalization ladder on the fixed lattice;
    ``k``: the intervention-budget sweep with its C/sqrt(k) envelope fit.
    """
    if kind not in ("eps", "n", "k", "all"):
        raise SpecError("sweep kind must be one of eps, n, k, all")
    spec = make_problem(cfg.fixture, cfg.params)
    rows: list = []
    checks: dict = {}
    try:
        if kind in ("eps", "all"):
            eps_vals = [cfg.eps, cfg.eps / 2.0, cfg.eps / 4.0]
            lowers = []
            for e in eps_vals:
                g = GameGrid.from_spec(spec, e, max(cfg.budgets))
                s = dpp_backward(spec, g, cfg.backend, seed=cfg.seed,
                                 n_paths=cfg.n_paths, root_budgets=[max(cfg.budgets)])
                rows.append(("eps", e, "n_steps", float(g.n_steps)))
                rows.append(("eps", e, "lower_value", s.lower_value))
                lowers.append(s.lower_value)
            diffs = [abs(b - a) for a, b in zip(lowers, lowers[1:])]
            checks["eps_refinement"] = {"pass": bool(all(np.isfinite(lowers))), "diffs": diffs}
        if kind in ("n", "all"):
            lat = ScenarioLattice(spec, cfg.steps, include_jumps=True)
            ys = []
            for n in cfg.penalties:
                y = solve_penalized(BsdeSpec.from_problem(spec, n), lat).value
                rows.append(("n", float(n), "penalized_y0", y))
                ys.append(y)
            mono = all(b <= a + 1e-12 for a, b in zip(ys, ys[1:]))
            checks["n_monotone"] = {"pass": bool(mono), "values": ys}
        if kind in ("k", "all"):
            grid = GameGrid.from_spec(spec, cfg.eps, max(cfg.budgets))
            sw = truncation_sweep(spec, grid, cfg.budgets, cfg.backend,
                                  seed=cfg.seed, n_paths=cfg.n_paths)
            for k, v in sw.values:
                rows.append(("k", float(k), "lower_value", v))
            rows.append(("k_fit", 0.0, "c_over_sqrt_k", sw.fit_c))
            rows.append(("k_fit", 0.0, "max_fit_residual", sw.fit_residual))
            vals = [v for _, v in sw.values]
            mono = all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
            checks["k_monotone"] = {"pass": bool(mono), "values": vals}
    except CapacityError as exc:
        return rows, _capacity_verdict(cfg, exc), 2
    ok = all(c["pass"] for c in checks.values()) if checks else True
    verdict = {"pass": bool(ok), "checks": checks, "record": _record(cfg, {"kind": kind})}
    return rows, verdict, 0 if ok else 1


# ---------------------------------------------------------------------------
# single-solver runs
# ---------------------------------------------------------------------------


def run_solve_game(
    cfg: ExperimentConfig, eps: float | None = None, k: int | None = None,
    backend: str | None = None,
) -> tuple[list, dict, int]:
    spec = make_problem(cfg.fixture, cfg.params)
    eps = cfg.eps if eps is None else float(eps)
    k = max(cfg.budgets) if k is None else int(k)
    backend = cfg.backend if backend is None else backend
    t0 = time.perf_counter()
    try:
        grid = GameGrid.from_spec(spec, eps, k)
        sol = dpp_backward(spec, grid, backend, seed=cfg.seed, n_paths=cfg.n_paths)
        lower = sol.lower_value
        upper, se = upper_value(sol, n_paths=cfg.n_paths, seed=cfg.seed + 1)
    except CapacityError as exc:
        return [], _capacity_verdict(cfg, exc), 2
    ms = 1e3 * (time.perf_counter() - t0)
    rows = [(eps, k, grid.n_steps, lower, upper, upper - lower, ms, cfg.seed)]
    tol = cfg.tol_order if backend == "tree" else cfg.tol_order + 3.0 * se
    ok = lower <= upper + tol
    verdict = {
        "pass": bool(ok),
        "checks": {"order_lower_le_upper": {"pass": bool(ok), "gap": upper - lower, "tol": tol}},
        "runtimes_ms": {"total_ms": ms},
        "record": _record(cfg, {"lower_value": lower, "upper_value": upper}),
    }
    return rows, verdict, 0 if ok else 1


def run_solve_bsde(
    cfg: ExperimentConfig, n_arg: str | int = "sweep", backend: str | None = None
) -> tuple[list, dict, int]:
    spec = make_problem(cfg.fixture, cfg.params)
    backend = cfg.backend if backend is None else backend
    if isinstance(n_arg, str) and n_arg != "sweep":
        raise SpecError("--n takes an integer or 'sweep'")
    ns = list(cfg.penalties) if n_arg == "sweep" else [int(n_arg)]
    rows: list = []
    worst = 0.0
    ys: list[float] = []
    try:
        lat = ScenarioLattice(spec, cfg.steps, include_jumps=True) if backend == "tree" else None
        for n in ns:
            bspec = BsdeSpec.from_problem(spec, n)
            t0 = time.perf_counter()
            if backend == "tree":
                s = solve_penalized(bspec, lat)
                row = (n, s.value, s.K_minus_total, s.K_plus_total, s.max_violation())
                worst = max(worst, s.max_violation())
                ys.append(s.value)
            else:
                s = solve_penalized_lsmc(bspec, cfg.steps, cfg.n_paths, cfg.seed)
                row = (n, s.value, s.k_minus_total, s.k_plus_total, s.max_barrier_violation)
                worst = max(worst, s.max_barrier_violation)
                ys.append(s.value)
            ms = 1e3 * (time.perf_counter() - t0)
            rows.append(row + (ms,))
    except CapacityError as exc:
        return [], _capacity_verdict(cfg, exc), 2
    mono = all(b <= a + 1e-12 for a, b in zip(ys, ys[1:]))
    tol = 1e-12 if backend == "tree" else 1e-9
    checks = {
        "reflection_clean": {"pass": bool(worst <= tol), "worst": worst, "tol": tol},
        "penalized_monotone": {"pass": bool(mono or backend == "lsmc" or len(ys) < 2),
                               "values": ys},
    }
    ok = all(c["pass"] for c in checks.values())
    verdict = {
        "pass": bool(ok),
        "checks": checks,
        "record": _record(cfg, {"Y0_last": ys[-1] if ys else float("nan")}),
    }
    return rows, verdict, 0 if ok else 1


def run_verify_saddle(
    cfg: ExperimentConfig, n: int | None = None, probes: int | None = None
) -> tuple[list, dict, int]:
    spec = make_problem(cfg.fixture, cfg.params)
    dt = spec.horizon / cfg.steps
    if n is None:
        feasible = [m for m in cfg.penalties if m * spec.lam_total * dt <= 1.0 + 1e-12]
        n = max(feasible) if feasible else min(cfg.penalties)
    probes = cfg.probes if probes is None else int(probes)
    try:
        report = verify_saddle(spec, cfg.steps, int(n), probes, cfg.seed)
    except CapacityError as exc:
        return [], _capacity_verdict(cfg, exc), 2
    rows = list(report.rows)
    ok = report.worst_violation <= cfg.tol_saddle and report.identity_gap <= cfg.tol_saddle
    verdict = {
        "pass": bool(ok),
        "checks": {
            "saddle_chain": {"pass": bool(report.worst_violation <= cfg.tol_saddle),
                             "worst_violation": report.worst_violation},
            "identity": {"pass": bool(report.identity_gap <= cfg.tol_saddle),
                         "gap": report.identity_gap, "y0": report.y0},
            "simplex": {"pass": True, "simplex_ok": report.simplex_ok},
        },
        "record": _record(cfg, {"worst_violation": report.worst_violation, "y0": report.y0}),
    }
    return rows, verdict, 0 if ok else 1


def run_simulate(
    cfg: ExperimentConfig, n_paths: int | None = None, dump: bool = True
) -> tuple[list, dict, int]:
    """Simulate impulse-free bundles with exogenous jumps; dump breakpoints.

    Rows: (path, time, state, jump flag, mark index); post-jump rows carry the
    flag, left limits appear as the preceding duplicated time.
    """
    spec = make_problem(cfg.fixture, cfg.params)
    count = min(cfg.n_paths, 16) if n_paths is None else int(n_paths)
    dt = spec.horizon / cfg.steps
    rows: list = []
    finite = True
    for p in range(count):
        noise = DriverNoise.gaussian(spec, dt, cfg.seed, index=p)
        path = simulate_bundle(spec, ImpulseControl(()), spec.horizon, noise).final
        finite = finite and bool(np.all(np.isfinite(path.values)))
        if not dump:
            continue
        jump_iter = list(path.jumps)
        jp = 0
        prev_t = None
        for t, x in zip(path.grid_times, path.values):
            flag, mark = 0, -1
            if prev_t is not None and t == prev_t and jp < len(jump_iter):
                flag, mark = 1, jump_iter[jp].mark
                jp += 1
            rows.append((p, float(t), float(x), flag, mark))
            prev_t = t
    verdict = {
        "pass": bool(finite),
        "checks": {"all_finite": {"pass": bool(finite)}},
        "record": _record(cfg, {"paths": count}),
    }
    return rows, verdict, 0 if finite else 1
