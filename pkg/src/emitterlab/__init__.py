"""Markovian and non-Markovian reduced dynamics of a finite-level emitter coupled to a photon field."""

from .errors import EmitterLabError
from .generator import BlockOperator, DissipativeGenerator, apply_generator, assemble_generator, check_hypotheses
from .matter_model import CutoffProfile, Level, MatterModel, build_model, default_model, two_level_model
from .quadrature import QuadConfig

__version__ = "0.1.0"

__all__ = [
    "BlockOperator",
    "CutoffProfile",
    "DissipativeGenerator",
    "EmitterLabError",
    "Level",
    "MatterModel",
    "QuadConfig",
    "apply_generator",
    "assemble_generator",
    "build_model",
    "check_hypotheses",
    "default_model",
    "two_level_model",
]
