"""Carnot-Caratheodory geometry and a Levi-parametrix solver for
nonsmooth Hormander operators L = sum X_i^2 + X_0."""

from .fields import (HormanderSystem, MultiIndex, VectorFieldSpec,
                     apply_field, commutator, enumerate_brackets,
                     hormander_rank, hormander_rank_batch, lambda_det,
                     multiindex)
from .families import make_system

__all__ = [
    "HormanderSystem", "MultiIndex", "VectorFieldSpec", "apply_field",
    "commutator", "enumerate_brackets", "hormander_rank",
    "hormander_rank_batch", "lambda_det", "multiindex", "make_system",
]

__version__ = "0.1.0"
