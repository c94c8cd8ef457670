"""Algebraic hybridization and static condensation for H(div) systems."""
from .errors import (
    CapExceeded,
    DimensionMismatch,
    FormatError,
    HybridSolveError,
    NotConverged,
    SingularBlock,
    ValidationError,
)
from .mesh import CellCoefficients, build_mesh, soft_hard_coefficients, unit_cube_mesh
from .reduction import (
    ReductionInputs,
    assemble,
    eliminate_essential,
    hybridize,
    recover_condensed,
    recover_hybrid,
    rt_inputs,
    static_condense,
)
from .rt import RtSpace, build_space, element_matrices
from .solvers import amg_setup, pcg
from .sparse import CsrMatrix, ElementBlockOperator

__version__ = "0.1.0"

__all__ = [
    "CapExceeded", "CellCoefficients", "CsrMatrix", "DimensionMismatch", "ElementBlockOperator",
    "FormatError", "HybridSolveError", "NotConverged", "ReductionInputs", "RtSpace", "SingularBlock",
    "ValidationError", "amg_setup", "assemble", "build_mesh", "build_space", "element_matrices",
    "eliminate_essential", "hybridize", "pcg", "recover_condensed", "recover_hybrid", "rt_inputs",
    "soft_hard_coefficients", "static_condense", "unit_cube_mesh",
]
