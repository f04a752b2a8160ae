"""Bubble dynamics driven by directed random matching of heterogeneous investors."""

from .core import (
    ExtendedTypeDistribution,
    ProbabilityTable,
    TimeGrid,
    TypeFractions,
    TypeSpace,
    fractions,
    validate_distribution,
    validate_table,
)
from .drivers import BinomialDriverSpec, ScenarioPath, SeedScheme, TwoStateSpec, lattice_params

__version__ = "0.1.0"
