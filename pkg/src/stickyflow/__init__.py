"""Sticky flows on the circle, realized on a grid.

Exchangeable partition combinatorics, the stationary random measure, grid
sticky Dirichlet forms with their semigroups, and a battery of checks of the
compatibility structure.
"""
from .forms import FormOperator, GridMeasure, assemble_mn
from .paintbox import AtomicMeasure, WeightSequence, sample_gem, sample_mn_urn, sample_mu
from .partition import SetPartition, StickyParam, eppf, eppf_closed_form, enumerate_partitions
from .spectral_levy import LevySymbol, grid_generator

__version__ = "0.1.0"

__all__ = [
    "AtomicMeasure",
    "FormOperator",
    "GridMeasure",
    "LevySymbol",
    "SetPartition",
    "StickyParam",
    "WeightSequence",
    "assemble_mn",
    "enumerate_partitions",
    "eppf",
    "eppf_closed_form",
    "grid_generator",
    "sample_gem",
    "sample_mn_urn",
    "sample_mu",
]
