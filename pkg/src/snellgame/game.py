"""Discretized dynamic programming for the impulse-vs-stopping game.

The lower value solves, on a dyadic time grid and a finite mark set, the
recursion

    R(T)   = payoff(T)
    R(t_i) = max( payoff(t_i),
                  min over batches b of  [ sequential cost of b
                    + running(t_i, post-batch) * dt
                    + E[ R(t_{i+1}) | scenario at t_i, batch applied ] ] )

with an intervention budget that shrinks by the batch size.  The stopper moves
first at every date: stopping at t_i discards any batch placed there, so the
empty batch is always a candidate and interventions at or after the stop date
are never charged.  The exogenous driving scenario of the game started at time
zero is the Brownian walk alone — jump marks enter only through interventions
(the randomized/BSDE route is where exogenous jump branches live).

Ties between batch candidates resolve to the empty batch, then to the
shortest, then lexicographically smallest mark tuple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .model import CapacityError, ProblemSpec, SpecError, ImpulseControl
from .model import _PointView as PointView
from .paths import substream, PURPOSE_LSMC

__all__ = [
    "MarkCell",
    "GameGrid",
    "discretize_control",
    "ValueField",
    "GameSolution",
    "dpp_backward",
    "extract_stopping_strategy",
    "StoppingStrategy",
    "upper_value",
    "roll_forward_value",
    "truncation_sweep",
    "SweepResult",
]

_MAX_ENTRIES = 2_000_000
_STATE_DECIMALS = 12


@dataclass(frozen=True)
class MarkCell:
    """One cell of the mark-space partition with its representative.

    Degenerate cells (lo == hi) match by equality; proper cells are half-open
    ``[lo, hi)``.
    """

    lo: float
    hi: float
    rep: float

    def contains(self, b: float) -> bool:
        if self.lo == self.hi:
            return b == self.lo
        return self.lo <= b < self.hi


@dataclass(frozen=True)
class GameGrid:
    """Dyadic time grid + mark cells + intervention budget.

    ``iota`` is the smallest integer >= 0 with ``2^-iota * horizon <= eps``;
    grid dates are ``t_j = j * horizon / 2^iota``.
    """

    horizon: float
    eps: float
    iota: int
    budget: int
    cells: tuple[MarkCell, ...]
    max_batch: int

    @staticmethod
    def from_spec(
        spec: ProblemSpec,
        eps: float,
        budget: int,
        cells: Sequence[MarkCell] | None = None,
        max_batch: int | None = None,
    ) -> "GameGrid":
        if eps <= 0:
            raise SpecError("eps must be positive")
        if budget < 0:
            raise SpecError("intervention budget must be >= 0")
        iota = 0
        while spec.horizon / (1 << iota) > eps + 1e-15:
            iota += 1
        if cells is None:
            cells = tuple(MarkCell(v, v, v) for v in spec.mark_space)
        mb = budget if max_batch is None else max_batch
        return GameGrid(spec.horizon, eps, iota, budget, tuple(cells), mb)

    @property
    def n_steps(self) -> int:
        return 1 << self.iota

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(j * self.dt for j in range(self.n_steps + 1))


def discretize_control(grid: GameGrid, u: ImpulseControl) -> ImpulseControl:
    """Round each intervention up to the next grid date and its mark to the
    representative of its cell; marks outside every cell are an error."""
    items = []
    for eta, beta in u:
        if eta > grid.horizon + 1e-12:
            raise SpecError("intervention after the horizon")
        j = math.ceil(eta / grid.dt - 1e-9)
        t_grid = min(j * grid.dt, grid.horizon)
        for cell in grid.cells:
            if cell.contains(beta):
                items.append((t_grid, cell.rep))
                break
        else:
            raise SpecError(f"mark {beta} lies outside the cell partition")
    return ImpulseControl(tuple(items))


# ---------------------------------------------------------------------------
# value field
# ---------------------------------------------------------------------------


@dataclass
class _Entry:
    value: float
    stop_value: float
    cont_empty: float | None       # None at the terminal level
    best_batch: tuple[int, ...]    # cell indices, () = no intervention
    best_value: float | None


@dataclass
class ValueField:
    """Backward-induction output: one entry per (level, scenario key, budget).

    In Markov mode the scenario key is the (canonicalized) current state; in
    history mode it is the pair (Brownian sign tuple, intervention history).
    Budgets 0..budget are all populated, so truncation sweeps read one field.
    """

    grid: GameGrid
    markov: bool
    entries: dict = field(default_factory=dict)
    root_keys: dict = field(default_factory=dict)  # budget -> key
    states: dict = field(default_factory=dict)     # key -> float state (markov)

    def entry(self, key) -> _Entry:
        return self.entries[key]

    def value(self, key) -> float:
        return self.entries[key].value

    def lower_value(self, budget: int | None = None) -> float:
        b = self.grid.budget if budget is None else int(budget)
        if b not in self.root_keys:
            raise SpecError(f"no root entry for budget {budget}")
        return self.entries[self.root_keys[b]].value


def _state_key(x: float) -> float:
    return round(x, _STATE_DECIMALS) + 0.0  # normalize -0.0


def _batches(n_cells: int, max_len: int) -> list[tuple[int, ...]]:
    """All mark-index tuples in canonical order: by length, then lexicographic."""
    out: list[tuple[int, ...]] = [()]
    frontier: list[tuple[int, ...]] = [()]
    for _ in range(max_len):
        frontier = [b + (m,) for b in frontier for m in range(n_cells)]
        out.extend(frontier)
    return out


# ---------------------------------------------------------------------------
# tree backend (exact)
# ---------------------------------------------------------------------------


def _coef(fn, t: float, x: float, *extra) -> float:
    return float(fn(t, PointView(t, x), *extra))


def _apply_batch(
    spec: ProblemSpec, grid: GameGrid, t: float, x: float, batch: tuple[int, ...]
) -> tuple[float, float]:
    """Sequentially apply a batch; return (post state, total cost charged)."""
    cost = 0.0
    for m in batch:
        rep = grid.cells[m].rep
        cost += _coef(spec.cost, t, x, rep)
        x = x + _coef(spec.gamma, t, x, rep)
    return x, cost


def _children(spec: ProblemSpec, t: float, dt: float, x: float) -> tuple[float, float]:
    a = _coef(spec.drift, t, x)
    s = _coef(spec.vol, t, x)
    root = math.sqrt(dt)
    return (x + a * dt + s * root, x + a * dt - s * root)


def _solve_tree_markov(
    spec: ProblemSpec, grid: GameGrid, root_budgets: Iterable[int]
) -> ValueField:
    n, dt = grid.n_steps, grid.dt
    batches = _batches(len(grid.cells), grid.max_batch)
    fld = ValueField(grid, markov=True)
    x0 = _state_key(float(spec.x0))

    # forward closure of reachable (state, budget) pairs, level by level
    levels: list[dict[tuple[float, int], float]] = [dict() for _ in range(n + 1)]
    for b in sorted(set(root_budgets)):
        if b < 0:
            raise SpecError("intervention budget must be >= 0")
        levels[0][(x0, b)] = float(spec.x0)
        fld.root_keys[b] = (0, x0, b)
    total = 0
    for i in range(n):
        t = i * dt
        for (xk, k), x in levels[i].items():
            for batch in batches:
                if len(batch) > min(k, grid.max_batch):
                    continue
                x_post, _ = _apply_batch(spec, grid, t, x, batch)
                k_next = k - len(batch)
                for child in _children(spec, t, dt, x_post):
                    ck = (_state_key(child), k_next)
                    levels[i + 1].setdefault(ck, child)
        total += len(levels[i + 1])
        if total > _MAX_ENTRIES:
            raise CapacityError(
                f"game closure exceeded {_MAX_ENTRIES:,} states at level {i + 1}; "
                f"largest feasible grid at this budget has about {i} steps"
            )

    # backward induction over the closure
    for (xk, k), x in levels[n].items():
        psi = _coef(spec.payoff, grid.horizon, x)
        fld.entries[(n, xk, k)] = _Entry(psi, psi, None, (), None)
        fld.states[(n, xk, k)] = x
    for i in range(n - 1, -1, -1):
        t = i * dt
        for (xk, k), x in levels[i].items():
            psi = _coef(spec.payoff, t, x)
            best = math.inf
            best_batch: tuple[int, ...] = ()
            cont_empty = None
            for batch in batches:
                if len(batch) > min(k, grid.max_batch):
                    continue
                x_post, cost = _apply_batch(spec, grid, t, x, batch)
                k_next = k - len(batch)
                up, dn = _children(spec, t, dt, x_post)
                cont = 0.5 * (
                    fld.entries[(i + 1, _state_key(up), k_next)].value
                    + fld.entries[(i + 1, _state_key(dn), k_next)].value
                )
                cand = cost + _coef(spec.running, t, x_post) * dt + cont
                if not batch:
                    cont_empty = cand
                if cand < best:
                    best = cand
                    best_batch = batch
            value = max(psi, best)
            fld.entries[(i, xk, k)] = _Entry(value, psi, cont_empty, best_batch, best)
            fld.states[(i, xk, k)] = x
    return fld


def _solve_tree_history(
    spec: ProblemSpec, grid: GameGrid, root_budgets: Iterable[int]
) -> ValueField:
    """History-keyed variant for path-dependent coefficients (small grids).

    Scenario key: (tuple of Brownian signs so far, intervention history as
    ((level, cell_index), ...)).  States are recovered by re-integration with
    the shared-noise machinery, so path-dependent coefficients see genuine
    path prefixes.
    """
    from .model import MarkedPointMeasure, _PrefixView
    from .paths import DriverNoise, simulate_bundle

    n, dt = grid.n_steps, grid.dt
    if (2 * (1 + len(grid.cells))) ** n > 200_000:
        raise CapacityError("history-mode game grid too deep; use a Markov fixture")
    batches = _batches(len(grid.cells), grid.max_batch)
    fld = ValueField(grid, markov=False)

    def bundle_for(signs: tuple[int, ...], hist: tuple[tuple[int, int], ...]):
        inc = np.array([s * math.sqrt(dt) for s in signs] + [math.sqrt(dt)] * (n - len(signs)))
        noise = DriverNoise(dt, grid.horizon, inc, atoms=MarkedPointMeasure(), kind="gaussian")
        u = ImpulseControl(tuple((lvl * dt, grid.cells[m].rep) for lvl, m in hist))
        return simulate_bundle(spec, u, 0.0, noise)

    memo: dict = {}

    def value(i: int, signs: tuple[int, ...], hist: tuple[tuple[int, int], ...], k: int) -> float:
        key = (i, signs, hist, k)
        if key in memo:
            return memo[key].value
        if len(memo) > _MAX_ENTRIES:
            raise CapacityError("history-mode game closure exceeded the entry budget")
        t = i * dt
        bundle = bundle_for(signs, hist)
        psi = float(spec.payoff(t, _PrefixView(bundle.final, t)))
        if i == n:
            e = _Entry(psi, psi, None, (), None)
            memo[key] = e
            fld.entries[key] = e
            return psi
        best, best_batch, cont_empty = math.inf, (), None
        for batch in batches:
            if len(batch) > min(k, grid.max_batch):
                continue
            hist2 = hist + tuple((i, m) for m in batch)
            b2 = bundle_for(signs, hist2)
            cost = 0.0
            off = len(hist)
            for j, m in enumerate(batch):
                stage = b2.stages[off + j]
                cost += float(spec.cost(t, _PrefixView(stage, t), grid.cells[m].rep))
            fval = float(spec.running(t, _PrefixView(b2.final, t)))
            cont = 0.5 * (
                value(i + 1, signs + (1,), hist2, k - len(batch))
                + value(i + 1, signs + (-1,), hist2, k - len(batch))
            )
            cand = cost + fval * dt + cont
            if not batch:
                cont_empty = cand
            if cand < best:
                best, best_batch = cand, batch
        v = max(psi, best)
        e = _Entry(v, psi, cont_empty, best_batch, best)
        memo[key] = e
        fld.entries[key] = e
        return v

    for b in sorted(set(root_budgets)):
        if b < 0:
            raise SpecError("intervention budget must be >= 0")
        value(0, (), (), b)
        fld.root_keys[b] = (0, (), (), b)
    return fld


# ---------------------------------------------------------------------------
# LSMC backend
# ---------------------------------------------------------------------------

_POLY_DEGREE = 3


def _basis(x: np.ndarray) -> np.ndarray:
    return np.vander(np.asarray(x, dtype=float), _POLY_DEGREE + 1, increasing=True)


def _fit(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(_basis(x), y, rcond=None)
    return coef


def _poly_eval(coef: np.ndarray, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return _basis(x) @ coef


def _gauss_poly_expect(coef: np.ndarray, mu: float, s: float) -> float:
    """E[poly(mu + s Z)] for Z ~ N(0,1), cubic polynomials."""
    c0, c1, c2, c3 = (list(coef) + [0.0] * 4)[:4]
    return c0 + c1 * mu + c2 * (mu * mu + s * s) + c3 * (mu**3 + 3 * mu * s * s)


@dataclass
class LsmcSolution:
    grid: GameGrid
    lower: float
    value_coefs: dict            # (level, budget) -> poly coefficients of R
    cont_coefs: dict             # (level, budget) -> poly coefficients of E[R_{i+1}|X_i]
    n_paths: int
    seed: int


def _solve_lsmc(spec: ProblemSpec, grid: GameGrid, n_paths: int, seed: int) -> LsmcSolution:
    n, dt, K = grid.n_steps, grid.dt, grid.budget
    rng = substream(seed, PURPOSE_LSMC, 0)
    Z = rng.standard_normal((n_paths, n))
    X = np.empty((n_paths, n + 1))
    X[:, 0] = float(spec.x0)
    root = math.sqrt(dt)
    for i in range(n):
        t = i * dt
        view = PointView(t, X[:, i])
        X[:, i + 1] = X[:, i] + np.asarray(spec.drift(t, view), float) * dt + np.asarray(
            spec.vol(t, view), float
        ) * root * Z[:, i]

    batches = _batches(len(grid.cells), grid.max_batch)
    value_coefs: dict = {}
    cont_coefs: dict = {}
    T = grid.horizon
    psi_T = np.asarray(spec.payoff(T, PointView(T, X[:, n])), float) + np.zeros(n_paths)
    R = {k: psi_T.copy() for k in range(K + 1)}
    for k in range(K + 1):
        value_coefs[(n, k)] = _fit(X[:, n], R[k])

    for i in range(n - 1, -1, -1):
        t = i * dt
        x = X[:, i]
        for k in range(K + 1):
            cont_coefs[(i, k)] = _fit(x, R[k])
        psi = np.asarray(spec.payoff(t, PointView(t, x)), float) + np.zeros(n_paths)
        R_new: dict[int, np.ndarray] = {}
        for k in range(K + 1):
            best = None
            for batch in batches:
                if len(batch) > min(k, grid.max_batch):
                    continue
                x_post = x
                cost = np.zeros(n_paths)
                for m in batch:
                    rep = grid.cells[m].rep
                    cost = cost + np.asarray(spec.cost(t, PointView(t, x_post), rep), float)
                    x_post = x_post + np.asarray(spec.gamma(t, PointView(t, x_post), rep), float)
                fval = np.asarray(spec.running(t, PointView(t, x_post)), float)
                if i == 0:
                    # degenerate regression at the deterministic root: integrate
                    # the level-1 value surface against the transition kernel
                    mu = x_post + np.asarray(spec.drift(t, PointView(t, x_post)), float) * dt
                    sd = np.abs(np.asarray(spec.vol(t, PointView(t, x_post)), float)) * root
                    rho = value_coefs[(1, k - len(batch))]
                    cont = np.array(
                        [_gauss_poly_expect(rho, float(m_), float(s_)) for m_, s_ in
                         zip(np.atleast_1d(mu + np.zeros(n_paths)), np.atleast_1d(sd + np.zeros(n_paths)))]
                    )
                else:
                    cont = _poly_eval(cont_coefs[(i, k - len(batch))], x_post) + np.zeros(n_paths)
                cand = cost + fval * dt + cont
                best = cand if best is None else np.minimum(best, cand)
            R_new[k] = np.maximum(psi, best)
        R = R_new
        for k in range(K + 1):
            value_coefs[(i, k)] = _fit(x, R[k]) if i > 0 else np.array([float(R[k].mean()), 0, 0, 0])

    lower = float(R[K].mean())
    return LsmcSolution(grid, lower, value_coefs, cont_coefs, n_paths, seed)


# ---------------------------------------------------------------------------
# public driver
# ---------------------------------------------------------------------------


@dataclass
class GameSolution:
    spec: ProblemSpec
    grid: GameGrid
    backend: str
    field: ValueField | None
    lsmc: LsmcSolution | None
    seed: int = 0

    @property
    def lower_value(self) -> float:
        if self.backend == "tree":
            return self.field.lower_value(self.grid.budget)
        return self.lsmc.lower


def dpp_backward(
    spec: ProblemSpec,
    grid: GameGrid,
    backend: str = "tree",
    *,
    seed: int = 0,
    n_paths: int = 5000,
    root_budgets: Iterable[int] | None = None,
) -> GameSolution:
    """Solve the discretized game; see the module docstring for the recursion.

    ``root_budgets`` seeds extra budget levels at the root so one solve serves
    a whole truncation sweep (the tree backend populates every budget <= k at
    interior nodes regardless).
    """
    if grid.budget < 0:
        raise SpecError("intervention budget must be >= 0")
    roots = list(root_budgets) if root_budgets is not None else [grid.budget]
    if grid.budget not in roots:
        roots.append(grid.budget)
    if backend == "tree":
        if spec.markov:
            fld = _solve_tree_markov(spec, grid, roots)
        else:
            fld = _solve_tree_history(spec, grid, roots)
        return GameSolution(spec, grid, "tree", fld, None, seed)
    if backend == "lsmc":
        return GameSolution(spec, grid, "lsmc", None, _solve_lsmc(spec, grid, n_paths, seed), seed)
    raise SpecError(f"unknown backend {backend!r}")


@dataclass
class StoppingStrategy:
    """Grid stopping rule read off a value field: stop where R equals the
    stopping payoff (within ``tol``; identically zero on the tree backend).

    The decision at a date depends only on the scenario key at that date and
    the remaining budget — by construction it cannot see the future.
    """

    solution: GameSolution
    tol: float = 0.0

    def decide(self, level: int, key, budget: int) -> bool:
        if level >= self.solution.grid.n_steps:
            return True
        if self.solution.backend == "tree":
            e = self.solution.field.entries[(level, key, budget)]
            return e.value <= e.stop_value + self.tol
        t = level * self.solution.grid.dt
        psi = float(self.solution.spec.payoff(t, PointView(t, float(key))))
        rhat = float(_poly_eval(self.solution.lsmc.value_coefs[(level, budget)], [key])[0])
        return psi >= rhat - max(self.tol, 1e-9)

    def first_stop_level(self, keys_by_level: Sequence, budgets: Sequence[int]) -> int:
        for i, (key, b) in enumerate(zip(keys_by_level, budgets)):
            if self.decide(i, key, b):
                return i
        return self.solution.grid.n_steps


def extract_stopping_strategy(sol: GameSolution, tol: float | None = None) -> StoppingStrategy:
    if tol is None:
        tol = 0.0 if sol.backend == "tree" else 1e-9
    return StoppingStrategy(sol, tol)


def _best_response(
    spec: ProblemSpec,
    grid: GameGrid,
    fld: ValueField,
    strategy: StoppingStrategy,
    follow_stored: bool,
) -> float:
    """Value of the game when the stopper plays ``strategy`` and the minimizer
    either re-optimizes against it (best response) or replays the stored
    batches (roll-forward identity check)."""
    if not fld.markov:
        raise SpecError("responses on the history backend are not implemented")
    n, dt = grid.n_steps, grid.dt
    batches = _batches(len(grid.cells), grid.max_batch)
    memo: dict = {}

    def value(i: int, x: float, k: int) -> float:
        key = (i, _state_key(x), k)
        if key in memo:
            return memo[key]
        t = i * dt
        if i == n or strategy.decide(i, _state_key(x), k):
            out = _coef(spec.payoff, t, x)
            memo[key] = out
            return out
        if follow_stored:
            cand_batches = [fld.entries[key].best_batch]
        else:
            cand_batches = [b for b in batches if len(b) <= min(k, grid.max_batch)]
        best = math.inf
        for batch in cand_batches:
            x_post, cost = _apply_batch(spec, grid, t, x, batch)
            up, dn = _children(spec, t, dt, x_post)
            cont = 0.5 * (value(i + 1, up, k - len(batch)) + value(i + 1, dn, k - len(batch)))
            cand = cost + _coef(spec.running, t, x_post) * dt + cont
            best = min(best, cand)
        memo[key] = best
        return best

    return value(0, float(spec.x0), grid.budget)


def roll_forward_value(sol: GameSolution) -> float:
    """Replay the extracted rule and stored batches; must reproduce R_0."""
    return _best_response(sol.spec, sol.grid, sol.field, extract_stopping_strategy(sol), True)


def upper_value(sol: GameSolution, *, n_paths: int = 20000, seed: int = 1) -> tuple[float, float]:
    """Upper bound: minimizer best-responds to the extracted stopping rule.

    Tree backend: exact best-response DP, standard error 0.  LSMC backend:
    greedy policy from the regressed continuations, evaluated by fresh Monte
    Carlo; returns (estimate, standard error).
    """
    if sol.backend == "tree":
        v = _best_response(sol.spec, sol.grid, sol.field, extract_stopping_strategy(sol), False)
        return v, 0.0
    return _lsmc_upper(sol, n_paths, seed)


def _lsmc_upper(sol: GameSolution, n_paths: int, seed: int) -> tuple[float, float]:
    spec, grid, ls = sol.spec, sol.grid, sol.lsmc
    n, dt, root = grid.n_steps, grid.dt, math.sqrt(grid.dt)
    batches = _batches(len(grid.cells), grid.max_batch)
    rng = substream(seed, PURPOSE_LSMC, 1)
    Z = rng.standard_normal((n_paths, n))
    x = np.full(n_paths, float(spec.x0))
    k = np.full(n_paths, grid.budget)
    alive = np.ones(n_paths, dtype=bool)
    J = np.zeros(n_paths)
    for i in range(n):
        t = i * dt
        psi = np.asarray(spec.payoff(t, PointView(t, x)), float) + np.zeros(n_paths)
        rhat = np.stack([_poly_eval(ls.value_coefs[(i, kk)], x) for kk in range(grid.budget + 1)])
        rhat_here = rhat[k, np.arange(n_paths)]
        stop_now = alive & (psi >= rhat_here - 1e-9)
        J[stop_now] += psi[stop_now]
        alive &= ~stop_now
        if not alive.any():
            break
        # greedy minimizer move on surviving paths
        best_val = np.full(n_paths, np.inf)
        best_cost = np.zeros(n_paths)
        best_post = x.copy()
        best_used = np.zeros(n_paths, dtype=int)
        for batch in batches:
            L = len(batch)
            x_post = x.copy()
            cost = np.zeros(n_paths)
            for m in batch:
                rep = grid.cells[m].rep
                cost = cost + np.asarray(spec.cost(t, PointView(t, x_post), rep), float)
                x_post = x_post + np.asarray(spec.gamma(t, PointView(t, x_post), rep), float)
            feasible = alive & (k >= L)
            if not feasible.any():
                continue
            fval = np.asarray(spec.running(t, PointView(t, x_post)), float) + np.zeros(n_paths)
            k_next = np.maximum(k - L, 0)
            if i == 0:
                # the time-0 regression is degenerate (deterministic root):
                # integrate the level-1 value surface against the transition
                mu = x_post + np.asarray(spec.drift(t, PointView(t, x_post)), float) * dt
                sd = np.abs(np.asarray(spec.vol(t, PointView(t, x_post)), float)) * root
                mu = mu + np.zeros(n_paths)
                sd = sd + np.zeros(n_paths)
                cont_here = np.array(
                    [
                        _gauss_poly_expect(ls.value_coefs[(1, kn)], float(m_), float(s_))
                        for kn, m_, s_ in zip(k_next, mu, sd)
                    ]
                )
            else:
                cont = np.stack(
                    [_poly_eval(ls.cont_coefs[(i, kk)], x_post) for kk in range(grid.budget + 1)]
                )
                cont_here = cont[k_next, np.arange(n_paths)]
            cand = cost + fval * dt + cont_here
            take = feasible & (cand < best_val)
            best_val[take] = cand[take]
            best_cost[take] = cost[take]
            best_post[take] = x_post[take]
            best_used[take] = L
        fpost = np.asarray(spec.running(t, PointView(t, best_post)), float) + np.zeros(n_paths)
        J[alive] += best_cost[alive] + fpost[alive] * dt
        k[alive] -= best_used[alive]
        drift = np.asarray(spec.drift(t, PointView(t, best_post)), float) + np.zeros(n_paths)
        vol = np.asarray(spec.vol(t, PointView(t, best_post)), float) + np.zeros(n_paths)
        x = np.where(alive, best_post + drift * dt + vol * root * Z[:, i], x)
    if alive.any():
        T = grid.horizon
        psi = np.asarray(spec.payoff(T, PointView(T, x)), float) + np.zeros(n_paths)
        J[alive] += psi[alive]
    return float(J.mean()), float(J.std(ddof=1) / math.sqrt(n_paths))


@dataclass
class SweepResult:
    values: list[tuple[int, float]]
    fit_c: float
    fit_residual: float


def truncation_sweep(
    spec: ProblemSpec, grid: GameGrid, budgets: Sequence[int], backend: str = "tree", **kw
) -> SweepResult:
    """Lower values along an intervention-budget sweep plus a C/sqrt(k) fit.

    One backward pass populates every budget level.  The fit regresses the gap
    to the largest-budget value against 1/sqrt(k) (k >= 1) — reported for
    diagnostics, not asserted.
    """
    budgets = sorted(set(int(b) for b in budgets))
    kmax = max(budgets)
    g = GameGrid(grid.horizon, grid.eps, grid.iota, kmax, grid.cells, max(grid.max_batch, kmax))
    sol = dpp_backward(spec, g, backend, root_budgets=budgets, **kw)
    if backend == "tree":
        vals = [(b, sol.field.lower_value(b)) for b in budgets]
    else:
        vals = []
        for b in budgets:
            gb = GameGrid(grid.horizon, grid.eps, grid.iota, b, grid.cells, min(grid.max_batch, max(b, 1)))
            vals.append((b, dpp_backward(spec, gb, "lsmc", **kw).lower_value))
    v_ref = vals[-1][1]
    xs = np.array([1.0 / math.sqrt(b) for b, _ in vals if b >= 1])
    ys = np.array([v - v_ref for b, v in vals if b >= 1])
    if xs.size:
        c = float(xs @ ys / (xs @ xs)) if float(xs @ xs) > 0 else 0.0
        resid = float(np.max(np.abs(ys - c * xs)))
    else:
        c, resid = 0.0, 0.0
    return SweepResult(vals, c, resid)
