"""Acceptance gate: the nine shipping criteria, one pass/fail line each.

Each test prints ``criterion N: PASS|FAIL - <summary>`` so a plain pytest run
documents the gate line by line.  Tolerances are pinned here on purpose —
loosening them is a spec change, not a test fix.
"""

from __future__ import annotations

import math
import os
import time

import numpy as np

from snellgame import (
    BsdeSpec,
    Density,
    GameGrid,
    ScenarioLattice,
    dpp_backward,
    optimal_stopping_time,
    saddle_density,
    sample_girsanov_weights,
    snell_limit,
    solve_penalized,
    solve_penalized_lsmc,
    randomized_value,
    upper_value,
    verify_saddle,
)
from snellgame.harness import ExperimentConfig, make_problem
from snellgame.harness import runner

from oracles import snell_classical


def _verdict(num: int, desc: str, ok: bool, detail: str = "") -> None:
    tail = f" [{detail}]" if detail else ""
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} - {desc}{tail}")
    assert ok, f"criterion {num} failed: {desc}{tail}"


def test_criterion_1_value_coincidence():
    t0 = time.perf_counter()
    spec = make_problem("f1")
    sol = dpp_backward(spec, GameGrid.from_spec(spec, 0.25, 3))
    lower = sol.lower_value
    up, _ = upper_value(sol)
    report = snell_limit(spec, 4, schedule=(1, 2, 4, 8, 16, 32), tol=0.0)
    gaps = [abs(lower - y) for _, y in report.values]
    elapsed = time.perf_counter() - t0
    shrinking = all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    ok = gaps[-1] <= 0.05 and shrinking and lower <= up + 1e-12 and elapsed < 60.0
    _verdict(
        1,
        "game value meets the penalized limit on the reference fixture",
        ok,
        f"|lower - Y^32| = {gaps[-1]:.2e}, shrinking={shrinking}, {elapsed:.1f}s",
    )


def test_criterion_2_penalization_monotone():
    t0 = time.perf_counter()
    tree_violations = 0
    for name in ("f1", "f2", "drift"):
        spec = make_problem(name)
        lat = ScenarioLattice(spec, 4, include_jumps=True)
        sols = [solve_penalized(BsdeSpec.from_problem(spec, n), lat) for n in (1, 2, 4, 8, 16, 32)]
        for lo, hi in zip(sols, sols[1:]):
            tree_violations += sum(int(np.sum(h > l)) for l, h in zip(lo.Y, hi.Y))
    N = 10**4
    mc_ok = True
    mc_worst = -math.inf
    for name in ("f1", "f2", "drift"):
        spec = make_problem(name)
        ls = [solve_penalized_lsmc(BsdeSpec.from_problem(spec, n), 4, N, seed=31) for n in (1, 2, 4, 8)]
        for a, b in zip(ls, ls[1:]):
            se = float(np.std(b.y_paths[:, 1] - a.y_paths[:, 1], ddof=1)) / math.sqrt(N)
            excess = (b.value - a.value) - 3.0 * se
            mc_worst = max(mc_worst, excess)
            mc_ok = mc_ok and excess <= 1e-12
    elapsed = time.perf_counter() - t0
    ok = tree_violations == 0 and mc_ok and elapsed < 120.0
    _verdict(
        2,
        "penalized values are non-increasing in n (exact on tree, 3-sigma on lsmc)",
        ok,
        f"tree violations={tree_violations}, lsmc worst excess={mc_worst:.2e}, {elapsed:.1f}s",
    )


def test_criterion_3_barrier_and_skorokhod():
    worst_barrier = -math.inf
    worst_skorokhod = -math.inf
    for name in ("f1", "drift", "clipped"):
        spec = make_problem(name)
        sol = solve_penalized(BsdeSpec.from_problem(spec, 8), ScenarioLattice(spec, 4))
        worst_barrier = max(worst_barrier, sol.max_barrier_violation())
        worst_skorokhod = max(worst_skorokhod, sol.max_skorokhod_violation())
    ok = worst_barrier <= 0.0 and worst_skorokhod <= 1e-12
    _verdict(
        3,
        "Y dominates the barrier and the reflection push is minimal at every node",
        ok,
        f"barrier={worst_barrier:.1e}, skorokhod={worst_skorokhod:.1e}",
    )


def test_criterion_4_order_of_values():
    t0 = time.perf_counter()
    worst = -math.inf
    combos = 0
    for name in ("f1", "drift", "clipped"):
        spec = make_problem(name)
        for eps in (0.25, 0.125):
            for k in (1, 2):
                sol = dpp_backward(spec, GameGrid.from_spec(spec, eps, k))
                up, _ = upper_value(sol)
                worst = max(worst, sol.lower_value - up)
                combos += 1
    elapsed = time.perf_counter() - t0
    ok = combos == 12 and worst <= 1e-12 and elapsed < 300.0
    _verdict(
        4,
        "lower value never exceeds the upper value on the 12-combination matrix",
        ok,
        f"worst lower-upper={worst:.1e}, {elapsed:.1f}s",
    )


def test_criterion_5_truncation_decay():
    spec = make_problem("clipped")  # chi = 0.3, payoff range 1.7: 6 impulses cost 1.8
    grid = GameGrid.from_spec(spec, 0.25, 8)
    sol = dpp_backward(spec, grid, root_budgets=range(9))
    ladder = [sol.field.lower_value(k) for k in range(9)]
    monotone = all(b <= a + 1e-12 for a, b in zip(ladder, ladder[1:]))
    tail_gap = abs(ladder[6] - ladder[8])
    ok = monotone and tail_gap <= 1e-6
    _verdict(
        5,
        "budget ladder is non-increasing and saturates where impulses cannot pay",
        ok,
        f"|Y^6 - Y^8| = {tail_gap:.1e}",
    )


def test_criterion_6_girsanov_normalization():
    t0 = time.perf_counter()
    spec = make_problem("f1")
    N = 10**5
    ones = sample_girsanov_weights(spec, Density.constant(1.0, m=2), N, seed=2024)
    exact = bool(np.all(ones == 1.0))
    bands = []
    for nu in (0.5, 2.0):
        w = sample_girsanov_weights(spec, Density.constant(nu, m=2), N, seed=2024)
        bands.append(abs(float(w.mean()) - 1.0) <= 3.0 * float(w.std(ddof=1)) / math.sqrt(N))
    elapsed = time.perf_counter() - t0
    ok = exact and all(bands) and elapsed < 10.0
    _verdict(
        6,
        "reweighting has unit mean (bit-exact at nu=1, 3-sigma at nu=0.5 and 2)",
        ok,
        f"nu=1 exact={exact}, bands={bands}, {elapsed:.1f}s",
    )


def test_criterion_7_saddle_chain():
    rep = verify_saddle(make_problem("f1"), steps=4, penalty=4, probes=50, seed=2024)
    ok = len(rep.rows) == 50 and rep.worst_violation <= 1e-10 and rep.identity_gap <= 1e-10
    _verdict(
        7,
        "50 probes respect the saddle chain and the bang-bang identity",
        ok,
        f"worst violation={rep.worst_violation:.1e}, identity gap={rep.identity_gap:.1e}",
    )


def test_criterion_8_degenerate_oracles():
    # (a) prohibitive intervention cost: every route equals classical stopping
    spec_a = make_problem("f1", {"chi_scale": 1000.0})
    oracle = snell_classical(spec_a, 4)
    game_a = dpp_backward(spec_a, GameGrid.from_spec(spec_a, 0.25, 3)).lower_value
    lat_a = ScenarioLattice(spec_a, 4)
    bsde_a = solve_penalized(BsdeSpec.from_problem(spec_a, 8), lat_a)
    limit_a = snell_limit(spec_a, 4, schedule=(1, 2, 4, 8), lattice=lat_a).limit
    dual_a = randomized_value(lat_a, saddle_density(bsde_a), optimal_stopping_time(bsde_a))
    part_a = max(abs(v - oracle) for v in (game_a, bsde_a.value, limit_a, dual_a)) <= 1e-10

    # (b) constant payoff: value is the constant and nobody intervenes
    spec_b = make_problem("const")
    sol_b = dpp_backward(spec_b, GameGrid.from_spec(spec_b, 0.25, 3))
    bsde_b = solve_penalized(BsdeSpec.from_problem(spec_b, 4), ScenarioLattice(spec_b, 4))
    part_b = (
        sol_b.lower_value == 1.25
        and all(e.best_batch == () for e in sol_b.field.entries.values())
        and abs(bsde_b.value - 1.25) <= 1e-12
    )

    # (c) zero budget: the game is plain optimal stopping
    part_c = True
    for name in ("f1", "drift", "clipped"):
        spec_c = make_problem(name)
        v = dpp_backward(spec_c, GameGrid.from_spec(spec_c, 0.25, 0)).lower_value
        part_c = part_c and abs(v - snell_classical(spec_c, 4)) <= 1e-12

    ok = part_a and part_b and part_c
    _verdict(
        8,
        "degenerate regimes hit their oracles (huge cost / constant payoff / zero budget)",
        ok,
        f"a={part_a}, b={part_b}, c={part_c}",
    )


def test_criterion_9_thread_count_determinism(tmp_path):
    cfg = ExperimentConfig()
    saved = os.environ.get("SNELL_THREADS")
    blobs = []
    try:
        for threads in ("1", "4"):
            os.environ["SNELL_THREADS"] = threads
            rows, verdict, code = runner.run_compare(cfg)
            out = tmp_path / f"compare_t{threads}.csv"
            runner.write_csv(out, runner.COMPARE_CSV_HEADER, rows)
            blobs.append(out.read_bytes())
            assert code == 0
    finally:
        if saved is None:
            os.environ.pop("SNELL_THREADS", None)
        else:
            os.environ["SNELL_THREADS"] = saved
    ok = blobs[0] == blobs[1]
    _verdict(
        9,
        "compare pipeline is byte-identical for SNELL_THREADS in {1, 4}",
        ok,
        f"{len(blobs[0])} bytes each",
    )
