"""Fixture registry: named Markovian problems with data-only parameter knobs.

Coefficients are code (registered here, vectorizable over level state arrays);
parameters are data (plain floats validated against declared ranges).  Config
files therefore never carry function expressions — they name a fixture and set
its knobs.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..model import ProblemSpec, SpecError

__all__ = ["Fixture", "REGISTRY", "make_problem", "fixture_names", "fixture_source"]


@dataclass(frozen=True)
class Fixture:
    name: str
    build: Callable[..., ProblemSpec]
    defaults: dict = field(default_factory=dict)
    ranges: dict = field(default_factory=dict)
    default_eps: float = 0.25
    default_budget: int = 2
    note: str = ""


def _const(c: float):
    return lambda t, v: c


def _const3(c: float):
    return lambda t, v, e: c


def _identity_payoff(t, v):
    return v.state


# -- base family: unit horizon, unit vol, identity payoff, two marks ---------
#
# The jump shift is the same for exogenous jumps and interventions (the
# randomized representation identifies the two), so a single gamma serves both
# routes.


def _build_base(
    *,
    name: str,
    chi: float,
    chi_scale: float = 1.0,
    drift: float = 0.0,
    sigma: float = 1.0,
    x0: float = 0.0,
    jump: float = -0.5,
    f_const: float = 0.0,
    payoff: Callable = _identity_payoff,
    marks: tuple[float, ...] = (0.0, 1.0),
    weights: tuple[float, ...] = (0.5, 0.5),
) -> ProblemSpec:
    return ProblemSpec(
        horizon=1.0,
        x0=x0,
        drift=_const(drift),
        vol=_const(sigma),
        gamma=_const3(jump),
        running=_const(f_const),
        payoff=payoff,
        cost=_const3(chi * chi_scale),
        mark_space=marks,
        mark_weights=weights,
        name=name,
    )


def _f1(chi_scale=1.0, drift=0.0, sigma=1.0, x0=0.0, jump=-0.5, f_const=0.0):
    return _build_base(
        name="f1", chi=0.3, chi_scale=chi_scale, drift=drift, sigma=sigma,
        x0=x0, jump=jump, f_const=f_const,
    )


def _f2(drift=0.0, sigma=1.0, x0=0.0, jump=-0.5, f_const=0.0):
    return _build_base(
        name="f2", chi=0.0, drift=drift, sigma=sigma, x0=x0, jump=jump, f_const=f_const,
    )


def _ramp(drift=0.0, sigma=1.0, x0=0.0, jump=-0.5, f_const=1.0):
    return _build_base(
        name="ramp", chi=0.0, drift=drift, sigma=sigma, x0=x0, jump=jump, f_const=f_const,
    )


def _drift(chi_scale=1.0, drift=0.8, sigma=1.0, x0=0.0, jump=-0.5, f_const=0.0):
    return _build_base(
        name="drift", chi=0.3, chi_scale=chi_scale, drift=drift, sigma=sigma,
        x0=x0, jump=jump, f_const=f_const,
    )


def _clipped(chi_scale=1.0, clip_lo=-0.85, clip_hi=0.85, sigma=1.0, x0=0.0, jump=-0.5):
    if clip_lo > clip_hi:
        raise SpecError("clip_lo must not exceed clip_hi")
    return _build_base(
        name="clipped", chi=0.3, chi_scale=chi_scale, sigma=sigma, x0=x0, jump=jump,
        payoff=lambda t, v: np.clip(v.state, clip_lo, clip_hi),
        marks=(0.0,), weights=(1.0,),
    )


def _const_payoff(psi_const=1.25, chi_scale=1.0, sigma=1.0, x0=0.0, jump=-0.5):
    return _build_base(
        name="const", chi=0.3, chi_scale=chi_scale, sigma=sigma, x0=x0, jump=jump,
        payoff=_const(psi_const),
    )


def _one_step(chi_scale=1.0, sigma=1.0, x0=0.0, jump=-1.0):
    return ProblemSpec(
        horizon=1.0,
        x0=x0,
        drift=_const(0.0),
        vol=_const(sigma),
        gamma=_const3(jump),
        running=_const(0.0),
        payoff=_identity_payoff,
        cost=_const3(0.1 * chi_scale),
        mark_space=(0.0,),
        mark_weights=(0.25,),
        name="one-step",
    )


_COMMON_RANGES = {
    "chi_scale": (0.0, 1e6),
    "drift": (-5.0, 5.0),
    "sigma": (1e-6, 10.0),
    "x0": (-10.0, 10.0),
    "jump": (-5.0, 5.0),
    "f_const": (-10.0, 10.0),
}

REGISTRY: dict[str, Fixture] = {
    f.name: f
    for f in (
        Fixture(
            "f1", _f1,
            defaults=dict(chi_scale=1.0, drift=0.0, sigma=1.0, x0=0.0, jump=-0.5, f_const=0.0),
            ranges=_COMMON_RANGES,
            default_eps=0.25, default_budget=2,
            note="two symmetric marks, intensity 1, cost 0.3",
        ),
        Fixture(
            "f2", _f2,
            defaults=dict(drift=0.0, sigma=1.0, x0=0.0, jump=-0.5, f_const=0.0),
            ranges={k: v for k, v in _COMMON_RANGES.items() if k != "chi_scale"},
            default_eps=0.25, default_budget=2,
            note="free interventions (zero cost)",
        ),
        Fixture(
            "ramp", _ramp,
            defaults=dict(drift=0.0, sigma=1.0, x0=0.0, jump=-0.5, f_const=1.0),
            ranges={k: v for k, v in _COMMON_RANGES.items() if k != "chi_scale"},
            default_eps=0.25, default_budget=2,
            note="unit running reward, free interventions",
        ),
        Fixture(
            "drift", _drift,
            defaults=dict(chi_scale=1.0, drift=0.8, sigma=1.0, x0=0.0, jump=-0.5, f_const=0.0),
            ranges=_COMMON_RANGES,
            default_eps=0.25, default_budget=2,
            note="upward drift makes waiting expensive for the minimizer",
        ),
        Fixture(
            "clipped", _clipped,
            defaults=dict(chi_scale=1.0, clip_lo=-0.85, clip_hi=0.85, sigma=1.0, x0=0.0, jump=-0.5),
            ranges={
                "chi_scale": (0.0, 1e6), "clip_lo": (-10.0, 10.0), "clip_hi": (-10.0, 10.0),
                "sigma": (1e-6, 10.0), "x0": (-10.0, 10.0), "jump": (-5.0, 5.0),
            },
            default_eps=0.25, default_budget=8,
            note="bounded payoff: > 5 interventions provably unprofitable at cost 0.3",
        ),
        Fixture(
            "const", _const_payoff,
            defaults=dict(psi_const=1.25, chi_scale=1.0, sigma=1.0, x0=0.0, jump=-0.5),
            ranges={
                "psi_const": (-1e6, 1e6), "chi_scale": (0.0, 1e6),
                "sigma": (1e-6, 10.0), "x0": (-10.0, 10.0), "jump": (-5.0, 5.0),
            },
            default_eps=0.25, default_budget=2,
            note="state-independent payoff: value = constant, empty batches",
        ),
        Fixture(
            "one-step", _one_step,
            defaults=dict(chi_scale=1.0, sigma=1.0, x0=0.0, jump=-1.0),
            ranges={
                "chi_scale": (0.0, 1e6), "sigma": (1e-6, 10.0),
                "x0": (-10.0, 10.0), "jump": (-5.0, 5.0),
            },
            default_eps=1.0, default_budget=1,
            note="single grid date; hand-checkable",
        ),
    )
}


def fixture_names() -> list[str]:
    return sorted(REGISTRY)


def make_problem(name: str, params: dict | None = None) -> ProblemSpec:
    """Build a registered fixture, validating every parameter override."""
    if name not in REGISTRY:
        raise SpecError(f"unknown fixture {name!r}; known: {', '.join(fixture_names())}")
    fx = REGISTRY[name]
    params = dict(params or {})
    for key, val in params.items():
        if key not in fx.defaults:
            raise SpecError(f"fixture {name!r} has no parameter {key!r}")
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise SpecError(f"parameter {key!r} must be numeric")
        lo, hi = fx.ranges[key]
        if not (lo <= float(val) <= hi):
            raise SpecError(f"parameter {key!r}={val} outside range [{lo}, {hi}]")
    merged = {**fx.defaults, **{k: float(v) for k, v in params.items()}}
    return fx.build(**merged)


def fixture_source(name: str) -> str:
    """Source text of the fixture's builder (content-hashed into run records)."""
    if name not in REGISTRY:
        raise SpecError(f"unknown fixture {name!r}")
    return inspect.getsource(REGISTRY[name].build)
