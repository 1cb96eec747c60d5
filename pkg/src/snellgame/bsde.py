"""Penalized reflected BSDE with jumps, solved backward on exact lattices or
by least-squares Monte Carlo.

The discrete scheme is the compensated-measure transcription: with

    E_i      = E[Y_{i+1} | node]                      (full one-step expectation)
    Z_i      = E[Y_{i+1} ΔW | node] / dt
    V_i(e)   = (jump-e branch average) - (no-jump branch average)

the candidate value is

    y_hat = E_i + driver(t_i, y=E_i, z=Z_i, v=V_i) * dt
                - n * dt * sum_e (V_i(e) + chi_i(e))^- lam(e)

and reflection gives Y_i = max(S_i, y_hat), dK+ = Y_i - y_hat,
dK- = the penalty term.  The one-step expectation of the compensated jump
integral vanishes exactly on the lattice, so drivers must be stated against
the compensated measure: an equation written with the raw jump measure
contributes an extra ``- sum_e v(e) lam(e)`` to the driver (this is what
``BsdeSpec.from_problem`` does for the linear game case).

The scheme is explicit; ``picard`` re-evaluates the driver and costs at the
refined candidate a fixed number of times (one refinement is enough for the
Lipschitz drivers used here, and is a no-op for drivers that ignore ``y``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import DivergenceError, ProblemSpec, SpecError
from .model import _PointView as PointView
from .paths import PURPOSE_LSMC, ScenarioLattice, substream, _LevelView

__all__ = [
    "BsdeSpec",
    "PenalizedSolution",
    "solve_penalized",
    "solve_penalized_lsmc",
    "snell_limit",
    "SnellLimitReport",
    "LatticeStoppingRule",
    "optimal_stopping_time",
    "stopped_bsde_solve",
]

_BLOWUP = 1e8


@dataclass(frozen=True)
class BsdeSpec:
    """Reflected-BSDE data on top of a driving ``ProblemSpec``.

    ``driver(t, view, y, z, v)`` — ``v`` is the per-mark jump coefficient array
    — must be stated in the compensated-measure convention (see module doc).
    ``cost(t, view, y, z, mark_value)`` is the non-negative penalty offset chi.
    ``terminal(view)`` gives xi at the horizon; ``barrier(t, view)`` gives S
    and must satisfy S_T <= xi.
    """

    problem: ProblemSpec
    terminal: Callable
    barrier: Callable
    driver: Callable
    cost: Callable
    penalty: int

    def __post_init__(self) -> None:
        if self.penalty < 0:
            raise SpecError("penalization level must be >= 0")

    @staticmethod
    def from_problem(spec: ProblemSpec, penalty: int) -> "BsdeSpec":
        """Linear game case: S = psi, xi = psi(T, .), chi from the problem, and
        the running reward as driver — compensated, hence the -v·lam term."""
        lam = np.asarray(spec.mark_weights, dtype=float)

        def driver(t, view, y, z, v):
            base = np.asarray(spec.running(t, view), dtype=float)
            return base - np.asarray(v, dtype=float) @ lam

        def cost(t, view, y, z, mark_value):
            return np.asarray(spec.cost(t, view, mark_value), dtype=float)

        return BsdeSpec(
            problem=spec,
            terminal=lambda view: spec.payoff(spec.horizon, view),
            barrier=spec.payoff,
            driver=driver,
            cost=cost,
            penalty=penalty,
        )

    def with_penalty(self, n: int) -> "BsdeSpec":
        return BsdeSpec(self.problem, self.terminal, self.barrier, self.driver, self.cost, n)


# ---------------------------------------------------------------------------
# lattice solver
# ---------------------------------------------------------------------------


@dataclass
class PenalizedSolution:
    """Backward-scheme output on a lattice: per-level node arrays."""

    bspec: BsdeSpec
    lattice: ScenarioLattice
    Y: list[np.ndarray]
    Z: list[np.ndarray]
    V: list[np.ndarray]        # (n_nodes, n_marks); zeros on no-jump lattices
    S: list[np.ndarray]
    chi: list[np.ndarray]      # costs as used by the scheme, per (node, mark)
    dK_plus: list[np.ndarray]
    dK_minus: list[np.ndarray]

    @property
    def value(self) -> float:
        return float(self.Y[0][0])

    def _expected_total(self, increments: list[np.ndarray]) -> float:
        lat = self.lattice
        total = 0.0
        for i, inc in enumerate(increments):
            level_mass = np.ones(1)
            for _ in range(i):
                level_mass = np.repeat(level_mass, lat.branching) * np.tile(
                    lat.branch_prob, level_mass.size
                )
            total += float(level_mass @ inc)
        return total

    @property
    def K_plus_total(self) -> float:
        """E[K+_T]: probability-weighted total reflection push."""
        return self._expected_total(self.dK_plus)

    @property
    def K_minus_total(self) -> float:
        return self._expected_total(self.dK_minus)

    def max_barrier_violation(self) -> float:
        return max(float(np.max(s - y)) for y, s in zip(self.Y, self.S))

    def max_skorokhod_violation(self) -> float:
        """max over nodes of |dK+ * (Y - S)| — minimality of the push."""
        worst = 0.0
        for y, s, dk in zip(self.Y, self.S, self.dK_plus):
            worst = max(worst, float(np.max(np.abs(dk * (y - s)))))
        return worst

    def max_violation(self) -> float:
        return max(self.max_barrier_violation(), self.max_skorokhod_violation())


def _split_branches(lat: ScenarioLattice, nxt: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(E_i, Z_i, V_i) from the next level's values."""
    B = lat.branching
    y1 = nxt.reshape(-1, B)
    e_full = y1 @ lat.branch_prob
    z = (y1 @ (lat.branch_prob * lat.branch_sign)) * math.sqrt(lat.dt) / lat.dt
    m = lat.spec.n_marks
    if lat.include_jumps:
        pair = y1.reshape(-1, 1 + m, 2).mean(axis=2)    # per-jump-branch average
        v = pair[:, 1:] - pair[:, :1]
    else:
        v = np.zeros((y1.shape[0], m))
    return e_full, z, v


def solve_penalized(bspec: BsdeSpec, lattice: ScenarioLattice, picard: int = 0) -> PenalizedSolution:
    """Exact backward pass of the penalized scheme on a scenario lattice."""
    if lattice.spec is not bspec.problem:
        raise SpecError("lattice was built for a different problem")
    if picard not in (0, 1):
        raise SpecError("at most one Picard refinement is supported")
    lat = lattice
    n = bspec.penalty
    lam = np.asarray(lat.spec.mark_weights, dtype=float)
    M = lat.steps
    T = lat.spec.horizon

    S = [lat.eval_on_level(bspec.barrier, i) for i in range(M + 1)]
    xi = np.broadcast_to(
        np.asarray(bspec.terminal(_LevelView(T, lat.states[M])), dtype=float), lat.states[M].shape
    ).copy()
    if float(np.max(S[M] - xi)) > 1e-12:
        raise SpecError("terminal value must dominate the barrier at the horizon")

    Y = [None] * (M + 1)
    Z = [None] * (M + 1)
    V = [None] * (M + 1)
    CHI = [None] * (M + 1)
    dKp = [None] * (M + 1)
    dKm = [None] * (M + 1)
    Y[M] = xi
    Z[M] = np.zeros_like(xi)
    V[M] = np.zeros((xi.size, lat.spec.n_marks))
    CHI[M] = np.zeros((xi.size, lat.spec.n_marks))
    dKp[M] = np.zeros_like(xi)
    dKm[M] = np.zeros_like(xi)

    for i in range(M - 1, -1, -1):
        t = lat.time_of(i)
        view = _LevelView(t, lat.states[i])
        e_full, z, v = _split_branches(lat, Y[i + 1])

        def candidate(y_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            chi = np.stack(
                [
                    np.broadcast_to(
                        np.asarray(bspec.cost(t, view, y_ref, z, mv), dtype=float), e_full.shape
                    )
                    for mv in lat.spec.mark_space
                ],
                axis=1,
            )
            if np.any(chi < 0):
                raise SpecError("cost chi must be non-negative")
            fval = np.broadcast_to(
                np.asarray(bspec.driver(t, view, y_ref, z, v), dtype=float), e_full.shape
            )
            pen = n * lat.dt * (np.maximum(-(v + chi), 0.0) @ lam)
            return e_full + fval * lat.dt - pen, chi, pen

        y_hat, chi, pen = candidate(e_full)
        for _ in range(picard):
            y_hat, chi, pen = candidate(y_hat)
        y_new = np.maximum(S[i], y_hat)
        if float(np.max(np.abs(y_new))) > _BLOWUP:
            raise DivergenceError(
                f"penalized scheme blew up at level {i} (|Y| > {_BLOWUP:.0e}); "
                "refine the grid or lower the penalization level"
            )
        Y[i] = y_new
        Z[i] = z
        V[i] = v
        CHI[i] = chi
        dKp[i] = y_new - y_hat
        dKm[i] = pen
    return PenalizedSolution(bspec, lat, Y, Z, V, S, CHI, dKp, dKm)


# ---------------------------------------------------------------------------
# monotone limit
# ---------------------------------------------------------------------------


@dataclass
class SnellLimitReport:
    values: list[tuple[int, float]]
    limit: float
    converged: bool
    n_converged: int | None
    richardson: float
    monotone: bool
    violations: list[tuple[int, int, float]]   # (n_prev, n_next, increase)


def snell_limit(
    spec: ProblemSpec,
    steps: int,
    schedule: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024),
    tol: float = 1e-4,
    picard: int = 0,
    lattice: ScenarioLattice | None = None,
) -> SnellLimitReport:
    """Run the penalization ladder until the decrement stalls below ``tol``.

    The Y^n are non-increasing in n (monotone convergence to the non-linear
    Snell envelope); any observed increase is recorded and flagged, never
    silently accepted.  The Richardson value ``2 Y^{2m} - Y^m`` is a
    diagnostic only.
    """
    lat = lattice if lattice is not None else ScenarioLattice(spec, steps, include_jumps=True)
    values: list[tuple[int, float]] = []
    violations: list[tuple[int, int, float]] = []
    converged_at = None
    prev: tuple[int, float] | None = None
    for n in schedule:
        y0 = solve_penalized(BsdeSpec.from_problem(spec, n), lat, picard=picard).value
        values.append((n, y0))
        if prev is not None:
            dec = prev[1] - y0
            if dec < -1e-12:
                violations.append((prev[0], n, -dec))
            if abs(dec) < tol and converged_at is None:
                converged_at = n
        prev = (n, y0)
        if converged_at is not None:
            break
    limit = values[-1][1]
    rich = 2 * values[-1][1] - values[-2][1] if len(values) >= 2 else limit
    return SnellLimitReport(
        values=values,
        limit=limit,
        converged=converged_at is not None,
        n_converged=converged_at,
        richardson=rich,
        monotone=not violations,
        violations=violations,
    )


# ---------------------------------------------------------------------------
# optimal stopping and the stopped (unreflected) equation
# ---------------------------------------------------------------------------


@dataclass
class LatticeStoppingRule:
    """Adapted stop/continue decision per lattice node (forced stop at T)."""

    stop: list[np.ndarray]

    def __post_init__(self) -> None:
        if not self.stop or not bool(np.all(self.stop[-1])):
            raise SpecError("stopping rule must stop everywhere at the horizon")

    def entrywise_subset_of(self, other: "LatticeStoppingRule") -> bool:
        """True when this rule's stop set is contained in the other's."""
        return all(bool(np.all(b | ~a)) for a, b in zip(self.stop, other.stop))


def optimal_stopping_time(sol: PenalizedSolution) -> LatticeStoppingRule:
    """First hitting rule of {Y = S} (exact equality holds on the lattice by
    construction of the reflection step); the horizon always stops."""
    stops = [y <= s for y, s in zip(sol.Y, sol.S)]
    stops[-1] = np.ones_like(stops[-1], dtype=bool)
    return LatticeStoppingRule(stops)


def _as_density_arrays(nu, lat: ScenarioLattice) -> list[np.ndarray]:
    m = lat.spec.n_marks
    out = []
    for i in range(lat.steps):
        size = lat.n_nodes(i)
        if callable(nu):
            arr = np.asarray(nu(i), dtype=float)
        elif isinstance(nu, (int, float)):
            arr = np.full((size, m), float(nu))
        else:
            arr = np.asarray(nu[i], dtype=float)
        arr = np.broadcast_to(arr, (size, m)).copy()
        if np.any(arr < 0):
            raise SpecError("density values must be non-negative")
        out.append(arr)
    return out


def stopped_bsde_solve(
    bspec: BsdeSpec,
    lattice: ScenarioLattice,
    nu,
    rule: LatticeStoppingRule,
    reflect: bool = False,
) -> PenalizedSolution:
    """Unreflected BSDE stopped at ``rule`` under the reward driver

        f^nu = driver + sum_e (v(e) + chi(e)) nu(e) lam(e),

    with terminal value S at the stop date (xi at the horizon).  With
    ``reflect=True`` the reflection max(S, .) is kept and the rule argument is
    ignored — that variant computes the nu-reward *reflected* value used in
    comparison tests.
    """
    lat = lattice
    lam = np.asarray(lat.spec.mark_weights, dtype=float)
    M = lat.steps
    nu_arrays = _as_density_arrays(nu, lat)
    S = [lat.eval_on_level(bspec.barrier, i) for i in range(M + 1)]
    xi = np.broadcast_to(
        np.asarray(bspec.terminal(_LevelView(lat.spec.horizon, lat.states[M])), dtype=float),
        lat.states[M].shape,
    ).copy()

    Y = [None] * (M + 1)
    Y[M] = xi
    for i in range(M - 1, -1, -1):
        t = lat.time_of(i)
        view = _LevelView(t, lat.states[i])
        e_full, z, v = _split_branches(lat, Y[i + 1])
        chi = np.stack(
            [
                np.broadcast_to(
                    np.asarray(bspec.cost(t, view, e_full, z, mv), dtype=float), e_full.shape
                )
                for mv in lat.spec.mark_space
            ],
            axis=1,
        )
        fval = np.broadcast_to(
            np.asarray(bspec.driver(t, view, e_full, z, v), dtype=float), e_full.shape
        )
        reward = ((v + chi) * nu_arrays[i]) @ lam
        y_cont = e_full + (fval + reward) * lat.dt
        if reflect:
            Y[i] = np.maximum(S[i], y_cont)
        else:
            Y[i] = np.where(rule.stop[i], S[i], y_cont)
        if float(np.max(np.abs(Y[i]))) > _BLOWUP:
            raise DivergenceError("stopped scheme blew up; check the density bound")
    zeros = [np.zeros_like(y) for y in Y]
    zmat = [np.zeros((y.size, lat.spec.n_marks)) for y in Y]
    return PenalizedSolution(bspec, lat, Y, zeros, zmat, S, zmat, zeros, zeros)


# ---------------------------------------------------------------------------
# least-squares Monte Carlo solver
# ---------------------------------------------------------------------------

_POLY_DEGREE = 3


def _basis(x: np.ndarray) -> np.ndarray:
    return np.vander(np.asarray(x, dtype=float), _POLY_DEGREE + 1, increasing=True)


def _regress(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(_basis(x), y, rcond=None)
    return coef


@dataclass
class LsmcPenalizedSolution:
    bspec: BsdeSpec
    steps: int
    n_paths: int
    seed: int
    value: float
    y_paths: np.ndarray         # realized Y along each path, (n_paths, steps+1)
    barrier_paths: np.ndarray
    k_plus_total: float = 0.0   # path-mean of the accumulated reflection push
    k_minus_total: float = 0.0  # path-mean of the accumulated penalty charge

    @property
    def max_barrier_violation(self) -> float:
        return float(np.maximum(self.barrier_paths - self.y_paths, 0.0).max())


def simulate_jump_paths(
    spec: ProblemSpec, steps: int, n_paths: int, seed: int, index: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-step jump model matching the lattice: one substream drives all paths.

    Returns (X, dW, jump) with X of shape (n_paths, steps+1), dW of shape
    (n_paths, steps), and jump of shape (n_paths, steps) holding the mark index
    or -1.  Jumps arrive at most once per step with probability lam(e) dt and
    shift the state by gamma evaluated at the step's left endpoint.
    """
    dt = spec.horizon / steps
    lam = np.asarray(spec.mark_weights, dtype=float)
    if lam.sum() * dt > 1.0 + 1e-12:
        raise SpecError("lam_total*dt must be <= 1 for the per-step jump model")
    rng = substream(seed, PURPOSE_LSMC, 100 + index)
    dW = rng.normal(0.0, math.sqrt(dt), size=(n_paths, steps))
    U = rng.random((n_paths, steps))
    edges = np.concatenate([[0.0], np.cumsum(lam * dt)])
    jump = np.searchsorted(edges, U, side="right") - 1
    jump[jump >= spec.n_marks] = -1            # mass above sum(lam)dt = no jump
    X = np.empty((n_paths, steps + 1))
    X[:, 0] = float(spec.x0)
    for i in range(steps):
        t = i * dt
        view = PointView(t, X[:, i])
        a = np.asarray(spec.drift(t, view), float)
        s = np.asarray(spec.vol(t, view), float)
        x_next = X[:, i] + a * dt + s * dW[:, i]
        for e, mv in enumerate(spec.mark_space):
            hit = jump[:, i] == e
            if hit.any():
                g = np.broadcast_to(
                    np.asarray(spec.gamma(t, view, mv), float), X[:, i].shape
                )
                x_next = x_next + np.where(hit, g, 0.0)
        X[:, i + 1] = x_next
    return X, dW, jump


def solve_penalized_lsmc(
    bspec: BsdeSpec,
    steps: int,
    n_paths: int,
    seed: int,
    picard: int = 0,
) -> LsmcPenalizedSolution:
    """Penalized scheme with conditional expectations replaced by degree-3
    polynomial regressions (indicator regressions for the jump coefficients).

    Reusing a seed reuses the exact same path bundle, so penalization ladders
    run on common random numbers.
    """
    spec = bspec.problem
    dt = spec.horizon / steps
    lam = np.asarray(spec.mark_weights, dtype=float)
    n = bspec.penalty
    X, dW, jump = simulate_jump_paths(spec, steps, n_paths, seed)

    T = spec.horizon
    Y = np.broadcast_to(
        np.asarray(bspec.terminal(PointView(T, X[:, steps])), float), (n_paths,)
    ).copy()
    y_paths = np.empty((n_paths, steps + 1))
    barrier_paths = np.empty((n_paths, steps + 1))
    k_plus = 0.0
    k_minus = 0.0
    y_paths[:, steps] = Y
    barrier_paths[:, steps] = np.broadcast_to(
        np.asarray(bspec.barrier(T, PointView(T, X[:, steps])), float), (n_paths,)
    )

    for i in range(steps - 1, -1, -1):
        t = i * dt
        x = X[:, i]
        view = PointView(t, x)
        if i == 0:
            e_full = np.full(n_paths, float(Y.mean()))
            z = np.full(n_paths, float((Y * dW[:, 0]).mean()) / dt)
            v = np.stack(
                [
                    np.full(
                        n_paths,
                        float((Y * (jump[:, 0] == e)).mean()) / (lam[e] * dt) - float(Y.mean()),
                    )
                    for e in range(spec.n_marks)
                ],
                axis=1,
            )
        else:
            b = _basis(x)
            coef_y = np.linalg.lstsq(b, Y, rcond=None)[0]
            e_full = b @ coef_y
            z = b @ np.linalg.lstsq(b, Y * dW[:, i] / dt, rcond=None)[0]
            v = np.stack(
                [
                    b @ np.linalg.lstsq(b, Y * (jump[:, i] == e), rcond=None)[0] / (lam[e] * dt)
                    - e_full
                    for e in range(spec.n_marks)
                ],
                axis=1,
            )

        def candidate(y_ref):
            chi = np.stack(
                [
                    np.broadcast_to(np.asarray(bspec.cost(t, view, y_ref, z, mv), float), (n_paths,))
                    for mv in spec.mark_space
                ],
                axis=1,
            )
            fval = np.broadcast_to(np.asarray(bspec.driver(t, view, y_ref, z, v), float), (n_paths,))
            pen = n * dt * (np.maximum(-(v + chi), 0.0) @ lam)
            return e_full + fval * dt - pen, pen

        y_hat, pen = candidate(e_full)
        for _ in range(picard):
            y_hat, pen = candidate(y_hat)
        s_here = np.broadcast_to(np.asarray(bspec.barrier(t, view), float), (n_paths,))
        Y = np.maximum(s_here, y_hat)
        if float(np.max(np.abs(Y))) > _BLOWUP:
            raise DivergenceError("penalized LSMC scheme blew up")
        k_plus += float((Y - y_hat).mean())
        k_minus += float(pen.mean())
        y_paths[:, i] = Y
        barrier_paths[:, i] = s_here
    return LsmcPenalizedSolution(
        bspec, steps, n_paths, seed, float(Y.mean()), y_paths, barrier_paths, k_plus, k_minus
    )
