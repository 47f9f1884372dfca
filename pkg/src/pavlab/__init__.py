"""Paving of matrices over maximal abelian subalgebras, at desk scale."""

from .finite_vn import (
    MasaFrame,
    NormTriple,
    TracedMatrix,
    absolute_value,
    conditional_expectation,
    l1_norm,
    l2_norm,
    norm_triple,
    normalized_trace,
    op_norm,
    perpendicular_frame,
)
from .paving import (
    Partition,
    PavingReport,
    arc_partition,
    compress,
    dixmier_average,
    pave_search,
    paving_defect,
    paving_number_exact,
    refine,
    roots_of_unity_tuple,
    sign_split,
    spectral_tail_mass,
)

__version__ = "0.1.0"
