"""Penalized reflected scheme, its monotone limit, and the stopped equation."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from snellgame import (
    BsdeSpec,
    DivergenceError,
    LatticeStoppingRule,
    ScenarioLattice,
    SpecError,
    optimal_stopping_time,
    simulate_jump_paths,
    snell_limit,
    solve_penalized,
    solve_penalized_lsmc,
    stopped_bsde_solve,
)
from snellgame.harness import make_problem

from oracles import (
    reweighted_forward_enumeration,
    snell_classical,
    stopped_game_enumeration,
)


def _lattice(spec, steps, jumps=True):
    return ScenarioLattice(spec, steps, include_jumps=jumps)


def _count_increases(lo, hi):
    """Entries where the higher-penalty solution exceeds the lower one."""
    return sum(int(np.sum(h > l)) for l, h in zip(lo.Y, hi.Y))


# ---------------------------------------------------------------------------
# scheme vs classical stopping
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name,expected", [("f1", 0.0), ("drift", 0.8), ("clipped", 0.1)])
def test_no_jump_unpenalized_scheme_is_classical_snell(name, expected):
    spec = make_problem(name)
    lat = _lattice(spec, 4, jumps=False)
    sol = solve_penalized(BsdeSpec.from_problem(spec, 0), lat)
    assert abs(sol.value - snell_classical(spec, 4)) <= 1e-12
    assert abs(sol.value - expected) <= 1e-12  # frozen oracle values


def test_prohibitive_cost_removes_the_penalization():
    # with chi far above the payoff range the constraint never binds: the
    # value is penalty-independent and collapses to the classical envelope
    spec = make_problem("f1", {"chi_scale": 1000.0})
    lat = _lattice(spec, 4)
    v1 = solve_penalized(BsdeSpec.from_problem(spec, 1), lat)
    v32 = solve_penalized(BsdeSpec.from_problem(spec, 32), lat)
    assert v1.value == v32.value
    assert all(np.array_equal(a, b) for a, b in zip(v1.Y, v32.Y))
    assert abs(v1.value - snell_classical(spec, 4)) <= 1e-10
    assert v1.K_minus_total == 0.0


# ---------------------------------------------------------------------------
# monotonicity and reflection invariants
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["f1", "f2", "drift"])
def test_penalized_values_decrease_in_n_at_every_node(name):
    spec = make_problem(name)
    lat = _lattice(spec, 4)
    sols = [solve_penalized(BsdeSpec.from_problem(spec, n), lat) for n in (1, 2, 4, 8)]
    for lo, hi in zip(sols, sols[1:]):
        assert _count_increases(lo, hi) == 0


def test_solution_lives_between_barrier_and_unpenalized_value():
    spec = make_problem("f1")
    lat = _lattice(spec, 4)
    top = solve_penalized(BsdeSpec.from_problem(spec, 0), lat)
    sol = solve_penalized(BsdeSpec.from_problem(spec, 8), lat)
    assert sol.max_barrier_violation() <= 0.0
    for y, y0 in zip(sol.Y, top.Y):
        assert np.all(y <= y0 + 1e-12)


@pytest.mark.parametrize("name", ["f1", "drift", "clipped"])
def test_reflection_push_is_minimal_at_every_node(name):
    spec = make_problem(name)
    sol = solve_penalized(BsdeSpec.from_problem(spec, 8), _lattice(spec, 4))
    assert sol.max_skorokhod_violation() <= 1e-12
    assert sol.max_violation() <= 1e-12


def test_no_push_strictly_before_the_hit_of_the_barrier():
    spec = make_problem("drift")
    sol = solve_penalized(BsdeSpec.from_problem(spec, 4), _lattice(spec, 4))
    rule = optimal_stopping_time(sol)
    for dk, stop in zip(sol.dK_plus, rule.stop):
        assert np.all(dk[~stop] == 0.0)


def test_raising_the_driver_raises_the_solution_everywhere():
    base = make_problem("f1")
    rich = make_problem("f1", {"f_const": 0.5})
    a = solve_penalized(BsdeSpec.from_problem(base, 4), _lattice(base, 4))
    b = solve_penalized(BsdeSpec.from_problem(rich, 4), _lattice(rich, 4))
    for ya, yb in zip(a.Y, b.Y):
        assert np.all(yb >= ya - 1e-15)


def test_stop_regions_grow_with_the_penalization_level():
    spec = make_problem("drift")
    lat = _lattice(spec, 4)
    rules = [
        optimal_stopping_time(solve_penalized(BsdeSpec.from_problem(spec, n), lat))
        for n in (1, 2, 4)
    ]
    assert rules[0].entrywise_subset_of(rules[1])
    assert rules[1].entrywise_subset_of(rules[2])


def test_stopping_rule_must_stop_at_the_horizon():
    with pytest.raises(SpecError):
        LatticeStoppingRule([np.zeros(1, bool), np.zeros(2, bool)])


# ---------------------------------------------------------------------------
# monotone limit ladder
# ---------------------------------------------------------------------------


def test_limit_ladder_on_the_ramp_fixture():
    spec = make_problem("ramp")
    rep = snell_limit(spec, 4, schedule=(0, 1, 2, 4, 8))
    assert [v for _, v in rep.values] == pytest.approx([1.0, 0.5, 0.0, 0.0], abs=1e-12)
    assert rep.monotone and not rep.violations
    assert rep.converged and rep.n_converged == 4
    assert rep.limit == pytest.approx(0.0, abs=1e-12)
    assert np.isfinite(rep.richardson)


def test_limit_ladder_stalls_immediately_when_cost_is_prohibitive():
    spec = make_problem("f1", {"chi_scale": 1000.0})
    rep = snell_limit(spec, 4, schedule=(1, 2, 4, 8))
    assert rep.converged and rep.n_converged == 2
    assert len(rep.values) == 2
    assert abs(rep.limit - snell_classical(spec, 4)) <= 1e-10


def test_limit_reuses_a_caller_supplied_lattice():
    spec = make_problem("f1")
    lat = _lattice(spec, 3)
    a = snell_limit(spec, 3, schedule=(1, 2), tol=0.0, lattice=lat)
    b = snell_limit(spec, 3, schedule=(1, 2), tol=0.0)
    assert a.values == b.values


def test_picard_refinement_is_a_no_op_for_state_drivers():
    # the game driver never reads y, so one Picard sweep changes nothing
    spec = make_problem("drift")
    lat = _lattice(spec, 4)
    a = solve_penalized(BsdeSpec.from_problem(spec, 4), lat, picard=0)
    b = solve_penalized(BsdeSpec.from_problem(spec, 4), lat, picard=1)
    assert a.value == b.value
    assert all(np.array_equal(x, y) for x, y in zip(a.Y, b.Y))
    with pytest.raises(SpecError):
        solve_penalized(BsdeSpec.from_problem(spec, 4), lat, picard=2)


def test_blowup_is_reported_not_returned():
    spec = make_problem("f1")
    lat = _lattice(spec, 4)
    bad = dataclasses.replace(
        BsdeSpec.from_problem(spec, 0), driver=lambda t, view, y, z, v: 1e10
    )
    with pytest.raises(DivergenceError):
        solve_penalized(bad, lat)


def test_lattice_must_match_the_problem():
    a, b = make_problem("f1"), make_problem("f2")
    with pytest.raises(SpecError):
        solve_penalized(BsdeSpec.from_problem(a, 1), _lattice(b, 2))


def test_terminal_value_must_dominate_the_barrier():
    spec = make_problem("f1")
    bad = dataclasses.replace(BsdeSpec.from_problem(spec, 0), terminal=lambda view: -10.0)
    with pytest.raises(SpecError):
        solve_penalized(bad, _lattice(spec, 2))


# ---------------------------------------------------------------------------
# stopped (unreflected) equation
# ---------------------------------------------------------------------------


def _random_rule(lat, rng, p=0.3):
    masks = [rng.random(lat.n_nodes(i)) < p for i in range(lat.steps)]
    masks.append(np.ones(lat.n_nodes(lat.steps), dtype=bool))
    return LatticeStoppingRule(masks), masks


def test_stopped_equation_at_unit_density_is_a_plain_expectation():
    spec = make_problem("drift")
    lat = _lattice(spec, 3)
    rule, masks = _random_rule(lat, np.random.default_rng(9))
    got = stopped_bsde_solve(BsdeSpec.from_problem(spec, 0), lat, 1.0, rule).value
    want = stopped_game_enumeration(lat, masks)
    assert abs(got - want) <= 1e-12


def test_stopped_equation_matches_forward_reweighting_for_any_density():
    spec = make_problem("drift")
    lat = _lattice(spec, 3)
    rng = np.random.default_rng(9)
    rule, masks = _random_rule(lat, rng)
    for _ in range(5):
        nus = [rng.uniform(0.0, 2.0, size=(lat.n_nodes(i), 2)) for i in range(3)]
        got = stopped_bsde_solve(BsdeSpec.from_problem(spec, 0), lat, nus, rule).value
        want = reweighted_forward_enumeration(lat, nus, masks)
        assert abs(got - want) <= 1e-12


def test_zero_density_silences_the_jump_channel():
    # under nu = 0 the recursion propagates the no-jump branch only, so a
    # deterministic stop date gives x0 + a*t exactly
    spec = make_problem("drift")
    lat = _lattice(spec, 4)
    masks = [
        np.zeros(lat.n_nodes(i), bool) if i < 2 else np.ones(lat.n_nodes(i), bool)
        for i in range(5)
    ]
    sol = stopped_bsde_solve(BsdeSpec.from_problem(spec, 0), lat, 0.0, LatticeStoppingRule(masks))
    assert abs(sol.value - 0.4) <= 1e-12


def test_reflected_variant_dominates_every_stopped_value():
    spec = make_problem("f1")
    lat = _lattice(spec, 3)
    rng = np.random.default_rng(4)
    bspec = BsdeSpec.from_problem(spec, 0)
    for _ in range(5):
        rule, _ = _random_rule(lat, rng, p=rng.uniform(0.1, 0.9))
        nu = float(rng.uniform(0.0, 2.0))
        stopped = stopped_bsde_solve(bspec, lat, nu, rule).value
        reflected = stopped_bsde_solve(bspec, lat, nu, rule, reflect=True).value
        assert stopped <= reflected + 1e-12


def test_negative_density_rejected():
    spec = make_problem("f1")
    lat = _lattice(spec, 2)
    rule, _ = _random_rule(lat, np.random.default_rng(0))
    with pytest.raises(SpecError):
        stopped_bsde_solve(BsdeSpec.from_problem(spec, 0), lat, -0.5, rule)


def test_saddle_point_recovers_the_penalized_value():
    # nu* = n on {V + chi < 0} together with the first hit of {Y = S}
    # reproduces Y^n_0 through the stopped equation
    for name, n in [("f1", 4), ("drift", 2), ("drift", 8)]:
        spec = make_problem(name)
        lat = _lattice(spec, 4)
        sol = solve_penalized(BsdeSpec.from_problem(spec, n), lat)
        rule = optimal_stopping_time(sol)
        nu_star = [n * (sol.V[i] + sol.chi[i] < 0) for i in range(lat.steps)]
        got = stopped_bsde_solve(sol.bspec, lat, nu_star, rule).value
        assert abs(got - sol.value) <= 1e-10


# ---------------------------------------------------------------------------
# regression (Monte Carlo) variant
# ---------------------------------------------------------------------------


def test_jump_path_simulation_shapes_and_rates():
    spec = make_problem("f1")
    X, dW, jump = simulate_jump_paths(spec, 4, 20000, seed=3)
    assert X.shape == (20000, 5) and dW.shape == (20000, 4) and jump.shape == (20000, 4)
    lam = np.asarray(spec.mark_weights)
    dt = spec.horizon / 4
    for e in range(2):
        freq = float((jump == e).mean())
        # binomial 3-sigma band around lam_e * dt
        sd = np.sqrt(lam[e] * dt * (1 - lam[e] * dt) / jump.size)
        assert abs(freq - lam[e] * dt) <= 3 * sd


def test_jump_path_simulation_rejects_overloaded_steps():
    spec = dataclasses.replace(make_problem("f1"), mark_weights=(3.0, 3.0))
    with pytest.raises(SpecError):
        simulate_jump_paths(spec, 4, 10, seed=0)


def test_lsmc_scheme_tracks_the_lattice_and_stays_monotone():
    spec = make_problem("f1")
    lat = _lattice(spec, 4)
    tree = solve_penalized(BsdeSpec.from_problem(spec, 4), lat)
    ls4 = solve_penalized_lsmc(BsdeSpec.from_problem(spec, 4), 4, 10000, seed=21)
    ls8 = solve_penalized_lsmc(BsdeSpec.from_problem(spec, 8), 4, 10000, seed=21)
    assert abs(ls4.value - tree.value) <= 0.05
    # common random numbers: the ladder stays monotone up to regression noise
    assert ls8.value <= ls4.value + 0.02
    assert ls4.max_barrier_violation == 0.0
    assert ls4.k_plus_total >= 0.0 and ls4.k_minus_total >= 0.0


def test_lsmc_is_deterministic_for_fixed_seed():
    spec = make_problem("f2")
    a = solve_penalized_lsmc(BsdeSpec.from_problem(spec, 2), 3, 2000, seed=5)
    b = solve_penalized_lsmc(BsdeSpec.from_problem(spec, 2), 3, 2000, seed=5)
    assert a.value == b.value
    assert np.array_equal(a.y_paths, b.y_paths)
