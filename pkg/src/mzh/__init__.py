"""Morrey-space operators: norms, potentials, extension, divergence and Helmholtz solvers."""

from .grid import (Ball, Box, BoxMinusBall, Grid, HalfSpace, LipschitzGraph, MaskDomain, ScalarField, StarShaped,
                   StarUnion, VectorField, build_field, build_vector_field)
from .helmholtz import DecompositionResult, decompose
from .norms import BallSampler, MorreyParams, block_norm_bounds, morrey_norm

__all__ = [
    "Ball", "Box", "BoxMinusBall", "Grid", "HalfSpace", "LipschitzGraph", "MaskDomain", "ScalarField",
    "StarShaped", "StarUnion", "VectorField", "build_field", "build_vector_field",
    "DecompositionResult", "decompose", "BallSampler", "MorreyParams", "block_norm_bounds", "morrey_norm",
]
__version__ = "0.1.0"
