"""Configuration, fixture registry, experiment orchestration, CLI."""

from .config import ExperimentConfig, canonical_json
from .registry import REGISTRY, Fixture, fixture_names, make_problem
from .runner import (
    ResultRecord,
    env_stamp,
    input_hash,
    run_compare,
    run_simulate,
    run_solve_bsde,
    run_solve_game,
    run_sweep,
    run_verify_saddle,
    write_csv,
)
from .cli import build_parser, main

__all__ = [
    "ExperimentConfig",
    "canonical_json",
    "REGISTRY",
    "Fixture",
    "fixture_names",
    "make_problem",
    "ResultRecord",
    "env_stamp",
    "input_hash",
    "run_compare",
    "run_simulate",
    "run_solve_bsde",
    "run_solve_game",
    "run_sweep",
    "run_verify_saddle",
    "write_csv",
    "build_parser",
    "main",
]
