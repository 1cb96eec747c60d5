"""Problem data and path algebra for the impulse-control-vs-stopping game.

Conventions used throughout the package:

* Coefficients are callables ``(t, path) -> value`` (``gamma`` and ``chi`` take a
  trailing ``mark`` argument).  ``path`` is a read-only view exposing at least
  ``.state`` (the current value).  In vectorized (Markov) mode ``.state`` is an
  ndarray of states and the coefficient must broadcast; path-dependent accessors
  raise on vectorized views.
* Cadlag paths are stored as sampled values on a non-decreasing time grid with
  *duplicated* time points at discontinuities: the first occurrence carries the
  left limit, the last the right-continuous value.  Between distinct grid times
  the path is linearly interpolated.  Jump events (including zero-size ones —
  they matter for the path semi-metric) are recorded exactly once each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "SpecError",
    "CapacityError",
    "DivergenceError",
    "JumpEvent",
    "CadlagPath",
    "ImpulseControl",
    "MarkedPointMeasure",
    "PathBundle",
    "ProblemSpec",
    "concat",
    "path_distance",
    "cost_functional",
]


class SpecError(ValueError):
    """A problem/solver input violates its documented contract."""


class CapacityError(RuntimeError):
    """A requested exact computation exceeds the configured size budget."""


class DivergenceError(RuntimeError):
    """A numerical scheme produced values outside its stability bound."""


# ---------------------------------------------------------------------------
# paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JumpEvent:
    """One recorded discontinuity: left limit ``pre``, new value ``post``.

    ``mark`` is the index of the triggering mark in the ambient mark space
    (-1 when not applicable).  ``source`` tags the origin ("impulse" or "noise").
    """

    time: float
    pre: float
    post: float
    mark: int = -1
    source: str = "impulse"

    @property
    def size(self) -> float:
        return self.post - self.pre


@dataclass(frozen=True)
class CadlagPath:
    """Sampled cadlag path with explicit jump bookkeeping (scalar state).

    Invariants (checked on construction): times non-decreasing, each jump's
    time appears duplicated in the grid with matching pre/post values, and the
    jump list is sorted by time (application order within ties).
    """

    grid_times: np.ndarray
    values: np.ndarray
    jumps: tuple[JumpEvent, ...] = ()

    def __post_init__(self) -> None:
        t = np.asarray(self.grid_times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid_times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or v.shape != t.shape:
            raise SpecError("grid_times and values must be 1-d arrays of equal length")
        if t.size == 0:
            raise SpecError("a path needs at least one sample")
        if np.any(np.diff(t) < 0):
            raise SpecError("grid_times must be non-decreasing")
        last = -math.inf
        for j in self.jumps:
            if j.time < last:
                raise SpecError("jump events must be sorted by time")
            last = j.time
            idx = np.searchsorted(t, j.time)
            if idx >= t.size or t[idx] != j.time or np.count_nonzero(t == j.time) < 2:
                raise SpecError(f"jump at {j.time} has no duplicated grid point")

    # -- evaluation --------------------------------------------------------

    @property
    def t0(self) -> float:
        return float(self.grid_times[0])

    @property
    def horizon(self) -> float:
        return float(self.grid_times[-1])

    @property
    def state(self) -> float:
        """Right-most (current) value."""
        return float(self.values[-1])

    def value_at(self, s: float) -> float:
        """Right-continuous evaluation; linear between distinct grid times."""
        t, v = self.grid_times, self.values
        if s <= t[0]:
            # right-continuity: a jump at the very start duplicates t[0]
            last = int(np.searchsorted(t, t[0], side="right")) - 1
            return float(v[last])
        if s >= t[-1]:
            return float(v[-1])
        hi = int(np.searchsorted(t, s, side="right"))  # first index with t > s
        lo = hi - 1
        if t[hi] == t[lo]:
            return float(v[hi])
        w = (s - t[lo]) / (t[hi] - t[lo])
        return float(v[lo] + w * (v[hi] - v[lo]))

    def left_limit_at(self, s: float) -> float:
        t, v = self.grid_times, self.values
        lo = int(np.searchsorted(t, s, side="left"))
        if lo == 0:
            return float(v[0])
        if lo >= t.size or t[lo] != s:
            return self.value_at(s)
        return float(v[lo])  # first occurrence of a duplicated time = left limit

    def sup_norm(self, s: float | None = None) -> float:
        """``sup_{r <= s} |x(r)|`` — non-decreasing in ``s`` by construction."""
        if s is None:
            return float(np.max(np.abs(self.values)))
        mask = self.grid_times <= s
        if not mask.any():
            return abs(float(self.values[0]))
        head = float(np.max(np.abs(self.values[mask])))
        return max(head, abs(self.value_at(s)))

    def jumps_at_or_before(self, s: float) -> tuple[JumpEvent, ...]:
        return tuple(j for j in self.jumps if j.time <= s)

    def continuous_value_at(self, s: float) -> float:
        """Path value minus accumulated jump sizes up to ``s``."""
        acc = sum(j.size for j in self.jumps if j.time <= s)
        return self.value_at(s) - acc


def _continuous_breakpoints(x: CadlagPath, cut: float) -> np.ndarray:
    ts = x.grid_times[x.grid_times <= cut]
    return np.unique(np.concatenate([ts, [cut]]))


def path_distance(t: float, x: CadlagPath, tp: float, xp: CadlagPath) -> float:
    """Semi-metric on time/path pairs.

    ``|t - t'|`` plus the uniform distance of the continuous parts (each frozen
    after its own cut time) plus a jump-by-jump comparison: the i-th recorded
    jumps of the two paths are paired in time order, and a jump only counts when
    it happens at or before its path's cut time; unmatched indices compare
    against zero.  Zero-size jumps still carry their timestamp into the sum.
    """
    for cut, p in ((t, x), (tp, xp)):
        if cut < p.t0 - 1e-12:
            raise SpecError("cut time precedes path start")
    d = abs(t - tp)

    # continuous parts: both C_x(. ∧ t) and C_xp(. ∧ tp) are piecewise linear,
    # so the sup of their difference is attained on the union of breakpoints.
    pts = np.unique(np.concatenate([_continuous_breakpoints(x, t), _continuous_breakpoints(xp, tp)]))
    cx = np.array([x.continuous_value_at(min(s, t)) for s in pts])
    cxp = np.array([xp.continuous_value_at(min(s, tp)) for s in pts])
    d += float(np.max(np.abs(cx - cxp))) if pts.size else 0.0

    jx = x.jumps_at_or_before(t)
    jxp = xp.jumps_at_or_before(tp)
    for i in range(max(len(jx), len(jxp))):
        ti, si = (jx[i].time, jx[i].size) if i < len(jx) else (0.0, 0.0)
        tpi, spi = (jxp[i].time, jxp[i].size) if i < len(jxp) else (0.0, 0.0)
        d += abs(ti - tpi) + abs(si - spi)
    return d


# ---------------------------------------------------------------------------
# impulse controls and point measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImpulseControl:
    """Finite list of interventions ``(time, mark)``, sorted by time.

    Construction stable-sorts by time, so the relative order of a same-time
    batch is the order in which items were given — batch members are applied
    and charged sequentially in that order.
    """

    items: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        norm = tuple(sorted(((float(a), float(b)) for a, b in self.items), key=lambda ab: ab[0]))
        object.__setattr__(self, "items", norm)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(a for a, _ in self.items)

    @property
    def marks(self) -> tuple[float, ...]:
        return tuple(b for _, b in self.items)

    def restrict_before(self, tau: float) -> "ImpulseControl":
        """Keep interventions strictly before ``tau`` (the pre-stopping part)."""
        return ImpulseControl(tuple(ab for ab in self.items if ab[0] < tau))

    def restrict_at_or_before(self, tau: float) -> "ImpulseControl":
        return ImpulseControl(tuple(ab for ab in self.items if ab[0] <= tau))

    def truncate(self, k: int) -> "ImpulseControl":
        """First ``k`` interventions in time order."""
        if k < 0:
            raise SpecError("truncation budget must be >= 0")
        return ImpulseControl(self.items[:k])

    def count_at_or_before(self, tau: float) -> int:
        return sum(1 for a, _ in self.items if a <= tau)


def concat(u: ImpulseControl, t: float, v: ImpulseControl) -> ImpulseControl:
    """Splice: interventions of ``u`` at or before ``t`` followed by ``v``.

    ``v`` must live on ``[t, ∞)``; same-time items of ``u`` (at ``t``) are kept
    ahead of ``v``'s, preserving batch application order.
    """
    if any(a < t for a, _ in v.items):
        raise SpecError("second control has interventions before the splice time")
    head = tuple(ab for ab in u.items if ab[0] <= t)
    return ImpulseControl(head + v.items)


@dataclass(frozen=True)
class MarkedPointMeasure:
    """Finitely many atoms ``(time, mark_index)`` with strictly increasing times."""

    atoms: tuple[tuple[float, int], ...] = ()

    def __post_init__(self) -> None:
        norm = tuple((float(a), int(b)) for a, b in self.atoms)
        object.__setattr__(self, "atoms", norm)
        times = [a for a, _ in norm]
        for prev, nxt in zip(times, times[1:]):
            if nxt <= prev:
                raise SpecError("atom times must be strictly increasing (ties rejected)")

    def __len__(self) -> int:
        return len(self.atoms)

    def count(self, s: float, t: float) -> int:
        """Number of atoms in the half-open window ``(s, t]``."""
        return sum(1 for a, _ in self.atoms if s < a <= t)

    def restrict_at_or_before(self, t: float) -> "MarkedPointMeasure":
        return MarkedPointMeasure(tuple(ab for ab in self.atoms if ab[0] <= t))


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------

Coefficient = Callable[..., float]


@dataclass(frozen=True)
class ProblemSpec:
    """Data of one game instance.

    The controller (minimizer) pays ``chi`` to the stopper at each intervention
    and shifts the state by ``gamma``; the stopper (maximizer) collects
    ``psi(tau, X)`` plus the running reward ``f``.  ``mark_space`` doubles as
    the jump-mark space of the exogenous noise (weights ``mark_weights``) and
    as the impulse-mark space.
    """

    horizon: float
    x0: float
    drift: Coefficient
    vol: Coefficient
    gamma: Coefficient           # (t, path, mark) -> state shift
    running: Coefficient         # f(t, path)
    payoff: Coefficient          # psi(t, path)
    cost: Coefficient            # chi(t, path, mark) >= 0
    mark_space: tuple[float, ...]
    mark_weights: tuple[float, ...]
    dim: int = 1
    markov: bool = True
    name: str = ""

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise SpecError("horizon must be positive")
        if self.dim != 1:
            raise SpecError("only scalar state dynamics are implemented")
        if len(self.mark_space) != len(self.mark_weights) or not self.mark_space:
            raise SpecError("mark_space and mark_weights must be non-empty and aligned")
        if any(w <= 0 for w in self.mark_weights):
            raise SpecError("every mark needs strictly positive intensity weight")

    @property
    def lam_total(self) -> float:
        return float(sum(self.mark_weights))

    @property
    def n_marks(self) -> int:
        return len(self.mark_space)

    def check_assumptions(self, rng: np.random.Generator, samples: int = 200) -> list[str]:
        """Sampled diagnostic of the standing assumptions; returns violation notes.

        Checks, on random (t, x, mark) probes: chi >= 0, and the
        no-profitable-terminal-intervention inequality
        ``psi(t,x) <= psi(t, x + gamma) + chi``.  A non-empty report flags the
        fixture as outside the value-coincidence assumptions (the solvers still
        run; the discrete protocol does not need the inequality).
        """
        notes: list[str] = []
        ts = rng.uniform(0.0, self.horizon, size=samples)
        xs = self.x0 + rng.normal(0.0, 1.0 + abs(self.x0), size=samples)
        for t, xval in zip(ts, xs):
            view = _PointView(float(t), float(xval))
            for m, mark in enumerate(self.mark_space):
                c = float(self.cost(t, view, mark))
                if c < 0:
                    notes.append(f"chi<0 at (t={t:.3f}, x={xval:.3f}, mark={m})")
                    continue
                shifted = _PointView(float(t), float(xval) + float(self.gamma(t, view, mark)))
                gap = float(self.payoff(t, shifted)) + c - float(self.payoff(t, view))
                if gap < -1e-12:
                    notes.append(
                        f"terminal intervention profitable by {-gap:.4g} at "
                        f"(t={t:.3f}, x={xval:.3f}, mark={m})"
                    )
        return notes


class _PointView:
    """Minimal Markov path view: a single (t, x) point."""

    __slots__ = ("time", "state")

    def __init__(self, time: float, state: float):
        self.time = time
        self.state = state

    def value_at(self, s: float) -> float:
        return self.state

    def sup_norm(self, s: float | None = None) -> float:
        return abs(self.state)


# ---------------------------------------------------------------------------
# cost functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathBundle:
    """A control together with its ladder of partially-controlled paths.

    ``stages[j]`` is the state path under the first ``j`` interventions (so
    ``stages[0]`` is impulse-free and ``stages[-1]`` is the fully controlled
    path).  Intervention ``j`` (1-based) is charged on ``stages[j-1]``.
    """

    control: ImpulseControl
    stages: tuple[CadlagPath, ...]

    def __post_init__(self) -> None:
        if len(self.stages) != len(self.control) + 1:
            raise SpecError("need exactly one stage path per impulse prefix")

    @property
    def final(self) -> CadlagPath:
        return self.stages[-1]


def _running_integral(spec: ProblemSpec, path: CadlagPath, start: float, stop: float) -> float:
    """Left-endpoint quadrature of ``f`` along ``path`` over ``[start, stop]``."""
    total = 0.0
    t = path.grid_times
    for lo, hi in zip(t[:-1], t[1:]):
        a = max(float(lo), start)
        b = min(float(hi), stop)
        if b <= a:
            continue
        total += float(spec.running(a, _PrefixView(path, a))) * (b - a)
    return total


class _PrefixView:
    """Read-only view of a path frozen at a cut time (non-anticipative access)."""

    __slots__ = ("_path", "time")

    def __init__(self, path: CadlagPath, time: float):
        self._path = path
        self.time = time

    @property
    def state(self) -> float:
        return self._path.value_at(self.time)

    def value_at(self, s: float) -> float:
        if s > self.time + 1e-12:
            raise SpecError("anticipative path access")
        return self._path.value_at(s)

    def left_limit_at(self, s: float) -> float:
        if s > self.time + 1e-12:
            raise SpecError("anticipative path access")
        return self._path.left_limit_at(s)

    def sup_norm(self, s: float | None = None) -> float:
        return self._path.sup_norm(self.time if s is None else min(s, self.time))


def cost_functional(
    spec: ProblemSpec,
    bundle: PathBundle,
    tau: float,
    start: float = 0.0,
) -> float:
    """Realized payoff to the stopper for one simulated scenario.

    ``psi(tau, X)`` on the fully controlled path, plus the running reward from
    ``start`` to ``tau`` (left endpoints), plus one ``chi`` per intervention at
    or before ``tau`` — intervention ``j`` is evaluated on the stage path that
    carries the previous ``j-1`` interventions, matching sequential batch
    charging.
    """
    if not (start - 1e-12 <= tau <= spec.horizon + 1e-12):
        raise SpecError(f"stopping time {tau} outside [{start}, {spec.horizon}]")
    x = bundle.final
    total = float(spec.payoff(tau, _PrefixView(x, tau)))
    total += _running_integral(spec, x, start, tau)
    for j, (eta, beta) in enumerate(bundle.control):
        if eta <= tau:
            stage = bundle.stages[j]
            total += float(spec.cost(eta, _PrefixView(stage, eta), beta))
    return total
