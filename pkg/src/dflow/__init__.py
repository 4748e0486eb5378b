"""Numerical verification of the D-condition and its equivalent characterizations on model flows."""

from .geometry import FlowSpec, GeometrySnapshot, evaluate_D, minimize_D, snapshot
from .harness import CheckReport, Resolution
from .lagrangian import CostFamily, cost_table
from .pde import DiscreteMeasure, ScalarField, SpaceTimeGrid
from .scenarios import SEEDED, seeded_flow

__version__ = "0.1.0"

__all__ = [
    "FlowSpec",
    "GeometrySnapshot",
    "evaluate_D",
    "minimize_D",
    "snapshot",
    "CheckReport",
    "Resolution",
    "CostFamily",
    "cost_table",
    "DiscreteMeasure",
    "ScalarField",
    "SpaceTimeGrid",
    "SEEDED",
    "seeded_flow",
]
