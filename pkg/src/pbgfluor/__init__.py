"""Emission and fluorescence spectra of a two-level atom in a structured reservoir."""

from .algebra import (
    BASIS,
    IDENTITY,
    R3,
    R11,
    R12,
    R21,
    R22,
    DressedAtom,
    SystemOperator,
    bare_from_dressed,
    commutator,
    coupling_operator,
    dressed_parameters,
    heisenberg_rotate,
)
from .grid import GridResolutionWarning, TimeGrid

__version__ = "0.1.0"
