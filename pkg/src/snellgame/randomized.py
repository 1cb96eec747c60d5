"""Control randomization: density-reweighted jump intensities and the dual
representation of the penalized value.

Under a bounded predictable density ``nu`` the jump intensity of mark ``e``
becomes ``nu(e) lam(e)``; the Radon-Nikodym weight over ``[0, T]`` is

    kappa = exp( sum_e int_0^T (1 - nu_s(e)) lam(e) ds ) * prod_atoms nu_atom .

On the exact lattice the corresponding reweighting of branch masses is
``q_e = nu_e lam_e dt`` for the jump branches and ``1 - sum_e q_e`` for the
no-jump branch, which makes the reweighted objective *identical* in algebra to
the penalized recursion at the bang-bang density ``nu* = n 1{V < -chi}`` — the
identity holds for every penalization level.  The saddle *inequalities*
additionally need the reweighted masses to stay a probability
(``n lam_total dt <= 1``); outside that regime the verifier warns.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._parallel import parallel_map
from .model import MarkedPointMeasure, ProblemSpec, SpecError
from .model import _PointView as PointView
from .paths import PURPOSE_PROBE, ScenarioLattice, substream
from .bsde import (
    BsdeSpec,
    LatticeStoppingRule,
    PenalizedSolution,
    optimal_stopping_time,
    solve_penalized,
)

__all__ = [
    "Density",
    "girsanov_weight",
    "sample_girsanov_weights",
    "randomized_value",
    "randomized_value_mc",
    "saddle_density",
    "verify_saddle",
    "SaddleReport",
    "atom_counts",
]


def atom_counts(lat: ScenarioLattice) -> list[np.ndarray]:
    """Number of exogenous jumps in each node's history, per level."""
    counts = [np.zeros(1, dtype=int)]
    is_jump = (lat.branch_jump >= 0).astype(int)
    for i in range(lat.steps):
        counts.append(np.repeat(counts[i], lat.branching) + np.tile(is_jump, lat.n_nodes(i)))
    return counts


@dataclass(frozen=True)
class Density:
    """Bounded randomization density ``0 <= nu <= bound``.

    ``table`` (per-level node-by-mark arrays) drives lattice computations;
    ``time_fn(t, count) -> (m,)`` drives measure/Monte-Carlo computations.
    ``truncate_after`` clamps the density to at most 1 once the running atom
    count reaches that value (the truncated class used to align the dual
    representation with a finite intervention budget).
    """

    bound: float
    m: int
    table: tuple = ()
    time_fn: Callable | None = None
    floor: float = 0.0
    truncate_after: int | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if self.bound < 0:
            raise SpecError("density bound must be >= 0")
        if self.floor < 0:
            raise SpecError("density floor must be >= 0")
        for arr in self.table:
            a = np.asarray(arr, dtype=float)
            if np.any(a < -1e-15):
                raise SpecError("density values must be non-negative")
            if np.any(a > self.bound + 1e-12):
                raise SpecError("density exceeds its bound")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(values, bound: float | None = None, m: int | None = None) -> "Density":
        v = np.atleast_1d(np.asarray(values, dtype=float))
        if m is not None and v.size == 1:
            v = np.full(m, v[0])
        if np.any(v < 0):
            raise SpecError("density values must be non-negative")
        b = float(v.max()) if bound is None else float(bound)
        if np.any(v > b + 1e-12):
            raise SpecError("density exceeds its bound")
        return Density(bound=b, m=v.size, time_fn=lambda t, count: v, label="constant")

    @staticmethod
    def from_table(arrays: Sequence[np.ndarray], bound: float, label: str = "table") -> "Density":
        tab = tuple(np.asarray(a, dtype=float) for a in arrays)
        return Density(bound=float(bound), m=tab[0].shape[1], table=tab, label=label)

    def truncated(self, k: int) -> "Density":
        if k < 0:
            raise SpecError("truncation count must be >= 0")
        return Density(self.bound, self.m, self.table, self.time_fn, self.floor, k, self.label + "-trunc")

    # -- evaluation ---------------------------------------------------------

    def values_at(self, t: float, count: int) -> np.ndarray:
        if self.time_fn is None:
            raise SpecError("this density has no time/count form (lattice table only)")
        v = np.maximum(np.asarray(self.time_fn(t, count), dtype=float), self.floor)
        if np.any(v < 0):
            raise SpecError("density values must be non-negative")
        if np.any(v > self.bound + 1e-12):
            raise SpecError("density exceeds its bound")
        if self.truncate_after is not None and count >= self.truncate_after:
            v = np.minimum(v, 1.0)
        return v

    def on_lattice(self, lat: ScenarioLattice) -> list[np.ndarray]:
        m = lat.spec.n_marks
        if m != self.m:
            raise SpecError("density mark dimension mismatch")
        out: list[np.ndarray] = []
        if self.table:
            if len(self.table) < lat.steps:
                raise SpecError("density table shorter than the lattice")
            for i in range(lat.steps):
                arr = np.broadcast_to(self.table[i], (lat.n_nodes(i), m)).astype(float)
                out.append(np.maximum(arr, self.floor))
        else:
            counts = atom_counts(lat)
            for i in range(lat.steps):
                t = lat.time_of(i)
                arr = np.empty((lat.n_nodes(i), m))
                uniq = np.unique(counts[i])
                for c in uniq:
                    arr[counts[i] == c] = self.values_at(t, int(c))
                out.append(arr)
            return out
        if self.truncate_after is not None:
            counts = atom_counts(lat)
            for i in range(lat.steps):
                clip = counts[i] >= self.truncate_after
                out[i] = np.where(clip[:, None], np.minimum(out[i], 1.0), out[i])
        return out


# ---------------------------------------------------------------------------
# Girsanov weights
# ---------------------------------------------------------------------------


def girsanov_weight(
    spec: ProblemSpec, density: Density, measure: MarkedPointMeasure, horizon: float | None = None
) -> float:
    """Exponential weight of one atom configuration, accumulated in log space.

    A density that vanishes at a realized atom gives weight exactly 0 (a valid
    zero of the reweighting).  Negative densities and densities above the bound
    are spec errors, raised by the density's own evaluation.
    """
    T = spec.horizon if horizon is None else float(horizon)
    lam = np.asarray(spec.mark_weights, dtype=float)
    seg_starts = [0.0] + [t for t, _ in measure.atoms if t <= T]
    seg_ends = seg_starts[1:] + [T]
    log_w = 0.0
    for j, (a, b) in enumerate(zip(seg_starts, seg_ends)):
        if b < a:
            raise SpecError("atom beyond the horizon")
        nu = density.values_at(a, count=j)
        log_w += float((1.0 - nu) @ lam) * (b - a)
    for j, (t, mark) in enumerate(m for m in measure.atoms if m[0] <= T):
        nu = density.values_at(t, count=j)  # evaluated with the pre-atom count
        v = float(nu[mark])
        if v == 0.0:
            return 0.0
        log_w += math.log(v)
    return math.exp(log_w)


def sample_girsanov_weights(
    spec: ProblemSpec, density: Density, n_samples: int, seed: int
) -> np.ndarray:
    """Vectorized weights for constant-in-time densities: per-mark Poisson
    counts are a sufficient statistic, so kappa = exp(sum (1-nu) lam T) *
    prod nu^count.  Used by the mean-one diagnostics at large sample counts."""
    T = spec.horizon
    lam = np.asarray(spec.mark_weights, dtype=float)
    nu = density.values_at(0.0, 0)
    probe = density.values_at(0.37 * T, 3)
    if not np.array_equal(nu, probe):
        raise SpecError("vectorized sampling needs a time/count-constant density")
    rng = substream(seed, PURPOSE_PROBE, 0)
    counts = rng.poisson(lam * T, size=(n_samples, lam.size))
    base = math.exp(float((1.0 - nu) @ lam) * T)
    w = np.full(n_samples, base)
    for e in range(lam.size):
        if nu[e] == 0.0:
            w = np.where(counts[:, e] > 0, 0.0, w)
        elif nu[e] != 1.0:
            w = w * nu[e] ** counts[:, e]
    return w


# ---------------------------------------------------------------------------
# randomized objective
# ---------------------------------------------------------------------------


def randomized_value(
    lat: ScenarioLattice,
    density: Density,
    rule: LatticeStoppingRule,
) -> float:
    """Exact reweighted expectation of the randomized objective on a lattice.

    Backward pass: at a stopped node the stopper banks psi; at a continuation
    node the value is ``f dt`` plus the nu-reweighted branch average, where
    each jump branch carries its intervention transfer chi.  Emits a warning
    when the reweighted no-jump mass goes negative (the saddle inequalities
    are then no longer covered by the discrete comparison argument)."""
    if not lat.include_jumps:
        raise SpecError("randomized objective needs the jump lattice")
    nu = density.on_lattice(lat)
    lam = np.asarray(lat.spec.mark_weights, dtype=float)
    dt = lat.dt
    m = lat.spec.n_marks
    W = lat.psi[lat.steps].copy()
    warned = False
    for i in range(lat.steps - 1, -1, -1):
        q = nu[i] * lam * dt                       # (nodes, m)
        mass_nj = 1.0 - q.sum(axis=1)
        if not warned and float(mass_nj.min()) < -1e-12:
            warnings.warn(
                "reweighted no-jump mass negative (n*lam_total*dt > 1): "
                "signed weights; saddle inequalities not guaranteed",
                RuntimeWarning,
            )
            warned = True
        pair = W.reshape(-1, 1 + m, 2).mean(axis=2)
        cont = lat.f[i] * dt + mass_nj * pair[:, 0] + (q * (pair[:, 1:] + lat.chi[i])).sum(axis=1)
        W = np.where(rule.stop[i], lat.psi[i], cont)
    return float(W[0])


def randomized_value_mc(
    spec: ProblemSpec,
    density: Density,
    rule_fn: Callable[[int, np.ndarray], np.ndarray],
    steps: int,
    n_paths: int,
    seed: int,
) -> tuple[float, float]:
    """Importance-sampling estimate of the randomized objective.

    Paths follow the base per-step jump model; the discrete change of measure
    multiplies ``nu_e`` at a jump of mark ``e`` and
    ``(1 - sum nu lam dt) / (1 - sum lam dt)`` on no-jump steps, and the weight
    stops accruing at the stopping date.  Returns (estimate, standard error);
    warns when the effective sample size drops below 5%."""
    from .bsde import simulate_jump_paths

    dt = spec.horizon / steps
    lam = np.asarray(spec.mark_weights, dtype=float)
    X, _, jump = simulate_jump_paths(spec, steps, n_paths, seed)
    kappa = np.ones(n_paths)
    J = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=bool)
    base_nj = 1.0 - float(lam.sum()) * dt
    if base_nj <= 0:
        raise SpecError("per-step jump model needs lam_total*dt < 1 for MC reweighting")
    for i in range(steps):
        t = i * dt
        x = X[:, i]
        stop_now = alive & np.asarray(rule_fn(i, x), dtype=bool)
        psi = np.broadcast_to(np.asarray(spec.payoff(t, PointView(t, x)), float), x.shape)
        J[stop_now] += psi[stop_now]
        alive &= ~stop_now
        if not alive.any():
            break
        nu = density.values_at(t, 0)
        f = np.broadcast_to(np.asarray(spec.running(t, PointView(t, x)), float), x.shape)
        J[alive] += f[alive] * dt
        nj_factor = (1.0 - float((nu * lam).sum()) * dt) / base_nj
        for e, mv in enumerate(spec.mark_space):
            hit = alive & (jump[:, i] == e)
            if not hit.any():
                continue
            chi = np.broadcast_to(np.asarray(spec.cost(t, PointView(t, x), mv), float), x.shape)
            J[hit] += chi[hit]
            kappa[hit] *= float(nu[e])
        nj = alive & (jump[:, i] < 0)
        kappa[nj] *= nj_factor
    if alive.any():
        T = spec.horizon
        psi = np.broadcast_to(np.asarray(spec.payoff(T, PointView(T, X[:, steps])), float), (n_paths,))
        J[alive] += psi[alive]
    contrib = kappa * J
    est = float(contrib.mean())
    se = float(contrib.std(ddof=1) / math.sqrt(n_paths))
    wsum = float(kappa.sum())
    ess = wsum * wsum / float((kappa * kappa).sum()) if wsum > 0 else 0.0
    if ess < 0.05 * n_paths:
        warnings.warn(
            f"effective sample size {ess:.0f} below 5% of {n_paths}; "
            "importance weights are degenerate",
            RuntimeWarning,
        )
    return est, se


# ---------------------------------------------------------------------------
# saddle point
# ---------------------------------------------------------------------------


def saddle_density(sol: PenalizedSolution, floor: float = 0.0) -> Density:
    """Bang-bang maximizing density ``nu* = n 1{V(e) < -chi(e)}`` (then floored).

    V and chi live on pre-jump nodes, so the density is predictable by
    construction."""
    n = sol.bspec.penalty
    tables = []
    for i in range(sol.lattice.steps):
        base = np.where(sol.V[i] < -sol.chi[i], float(n), 0.0)
        tables.append(np.maximum(base, floor))
    return Density.from_table(tables, bound=max(float(n), floor), label="saddle")


@dataclass
class SaddleReport:
    penalty: int
    y0: float
    identity_gap: float              # |J(nu*, tau_n) - Y^n_0|
    rows: list[tuple[int, float, float, float, float]]
    worst_violation: float
    simplex_ok: bool

    @property
    def ok(self) -> bool:
        return self.worst_violation <= 1e-10


def _random_rule(lat: ScenarioLattice, rng: np.random.Generator) -> LatticeStoppingRule:
    stops = []
    for i in range(lat.steps):
        p = (i + 1) / (lat.steps + 1)
        stops.append(rng.random(lat.n_nodes(i)) < p)
    stops.append(np.ones(lat.n_nodes(lat.steps), dtype=bool))
    return LatticeStoppingRule(stops)


def _random_density(lat: ScenarioLattice, bound: float, rng: np.random.Generator) -> Density:
    tables = [
        rng.uniform(0.0, bound, size=(lat.n_nodes(i), lat.spec.n_marks)) for i in range(lat.steps)
    ]
    return Density.from_table(tables, bound=bound, label="probe")


def verify_saddle(
    spec: ProblemSpec,
    steps: int,
    penalty: int,
    probes: int,
    seed: int,
    floor: float = 0.0,
) -> SaddleReport:
    """Probe the saddle chain J(nu*, tau) <= J(nu*, tau_n) <= J(nu, tau_n).

    ``tau`` ranges over random adapted grid rules, ``nu`` over random bounded
    densities (0 <= nu <= n).  All three objectives are exact reweighted tree
    expectations; the middle one must coincide with the penalized Y^n_0."""
    lat = ScenarioLattice(spec, steps, include_jumps=True)
    sol = solve_penalized(BsdeSpec.from_problem(spec, penalty), lat)
    tau_n = optimal_stopping_time(sol)
    nu_star = saddle_density(sol, floor=floor)
    mid = randomized_value(lat, nu_star, tau_n)
    identity_gap = abs(mid - sol.value)
    simplex_ok = penalty * spec.lam_total * lat.dt <= 1.0 + 1e-12
    if not simplex_ok:
        warnings.warn(
            "penalty level exceeds the probability-simplex bound n*lam_total*dt <= 1; "
            "saddle inequalities may fail on the lattice",
            RuntimeWarning,
        )
    def probe(p: int) -> tuple[int, float, float, float, float]:
        rng = substream(seed, PURPOSE_PROBE, 1 + p)
        tau_p = _random_rule(lat, rng)
        nu_p = _random_density(lat, float(penalty), rng)
        lhs = randomized_value(lat, nu_star, tau_p)
        rhs = randomized_value(lat, nu_p, tau_n)
        return (p, lhs, mid, rhs, max(lhs - mid, mid - rhs, 0.0))

    # probes draw from disjoint substreams and are collected in index order,
    # so the report is bit-identical for any thread budget
    rows = parallel_map(probe, list(range(probes)))
    worst = max((r[4] for r in rows), default=0.0)
    return SaddleReport(penalty, sol.value, identity_gap, rows, worst, simplex_ok)
