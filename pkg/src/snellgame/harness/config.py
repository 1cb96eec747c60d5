"""Experiment configuration: JSON on disk, strict schema, lossless round-trip.

The schema is deliberately flat: a fixture name, its numeric parameter
overrides, grid/budget/penalty settings, backend, seed, sample counts, and
tolerances.  Canonical serialization (sorted keys, no whitespace) makes the
config hash stable across platforms.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..model import SpecError
from .registry import REGISTRY, make_problem

__all__ = ["ExperimentConfig", "canonical_json"]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _as_int_tuple(name: str, val) -> tuple[int, ...]:
    if not isinstance(val, (list, tuple)) or not val:
        raise SpecError(f"{name} must be a non-empty list of integers")
    out = []
    for v in val:
        if isinstance(v, bool) or not isinstance(v, int):
            raise SpecError(f"{name} entries must be integers, got {v!r}")
        if v < 0:
            raise SpecError(f"{name} entries must be >= 0")
        out.append(v)
    if any(b > a for a, b in zip(out[1:], out)):
        raise SpecError(f"{name} must be non-decreasing")
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: fixture + numeric knobs + solver settings + tolerances.

    ``eps`` drives the game grid; ``steps`` the jump lattice of the penalized
    route (keep ``2^ceil(log2(T/eps)) == steps`` when the two routes should
    discretize the same dates, as the default does).  All randomness descends
    from the single ``seed`` via the documented (seed, purpose, index)
    splitting.
    """

    fixture: str = "f1"
    params: dict = field(default_factory=dict)
    eps: float = 0.25
    steps: int = 4
    budgets: tuple[int, ...] = (0, 1, 2, 3)
    penalties: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    backend: str = "tree"
    seed: int = 2024
    n_paths: int = 10_000
    probes: int = 50
    tol_value: float = 0.05
    tol_order: float = 1e-12
    tol_saddle: float = 1e-10

    def __post_init__(self) -> None:
        if self.fixture not in REGISTRY:
            raise SpecError(f"unknown fixture {self.fixture!r}")
        make_problem(self.fixture, self.params)  # validates parameter ranges
        if isinstance(self.eps, bool) or not isinstance(self.eps, (int, float)) or self.eps <= 0:
            raise SpecError("eps must be a positive number")
        object.__setattr__(self, "eps", float(self.eps))
        if isinstance(self.steps, bool) or not isinstance(self.steps, int) or self.steps < 1:
            raise SpecError("steps must be a positive integer")
        object.__setattr__(self, "budgets", _as_int_tuple("budgets", list(self.budgets)))
        object.__setattr__(self, "penalties", _as_int_tuple("penalties", list(self.penalties)))
        if self.backend not in ("tree", "lsmc"):
            raise SpecError("backend must be 'tree' or 'lsmc'")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise SpecError("seed must be a non-negative integer")
        if not isinstance(self.n_paths, int) or self.n_paths < 1:
            raise SpecError("n_paths must be a positive integer")
        if not isinstance(self.probes, int) or self.probes < 0:
            raise SpecError("probes must be >= 0")
        for nm in ("tol_value", "tol_order", "tol_saddle"):
            v = getattr(self, nm)
            if not (isinstance(v, (int, float)) and v >= 0):
                raise SpecError(f"{nm} must be a non-negative number")

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "fixture": self.fixture,
            "params": dict(self.params),
            "eps": self.eps,
            "steps": self.steps,
            "budgets": list(self.budgets),
            "penalties": list(self.penalties),
            "backend": self.backend,
            "seed": self.seed,
            "n_paths": self.n_paths,
            "probes": self.probes,
            "tol_value": self.tol_value,
            "tol_order": self.tol_order,
            "tol_saddle": self.tol_saddle,
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise SpecError("config must be a JSON object")
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "eps" in kw:
            if isinstance(kw["eps"], bool) or not isinstance(kw["eps"], (int, float)):
                raise SpecError("eps must be a number")
            kw["eps"] = float(kw["eps"])
        for name in ("budgets", "penalties"):
            if name in kw:
                kw[name] = _as_int_tuple(name, kw[name])
        if "params" in kw and not isinstance(kw["params"], dict):
            raise SpecError("params must be an object of numeric overrides")
        return ExperimentConfig(**kw)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"config is not valid JSON: {exc}") from exc
        return ExperimentConfig.from_dict(d)

    @staticmethod
    def from_file(path: str | Path) -> "ExperimentConfig":
        return ExperimentConfig.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    # -- identity ------------------------------------------------------------

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()
