"""Piecewise flat Ricci flow on compact triangulated 3-manifolds."""

from .complexes import (
    BlockSpec,
    GridSpec,
    SimplicialComplex3,
    build_block,
    tile_and_identify,
    covering_duplicate,
    validate,
    mesh_to_json,
)

__version__ = "0.1.0"
