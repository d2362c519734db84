"""Spectral analysis of locally twisted tubes with Dirichlet walls.

Fiber (Bloch) band structure of the uniformly twisted tube, trial-function
certificates for bound states created by a local slowdown of the twist, and a
truncated-waveguide solver that checks them.
"""
__version__ = "0.1.0"

from .band_structure import (BandData, GroundState, band_diagnostics, compute_bands,
                             ground_state, with_refinement_tolerance)
from .certifier import Certificate, certify, rayleigh_critical, rayleigh_main
from .eigensolve import EigenError, EigenResult, solve_lowest
from .fiber_assembly import FiberMatrices, assemble_matrices, fiber_matrix
from .geometry import CrossSectionSpec, Mesh, refine, triangulate, validate_spec
from .twist_profile import (TwistProfile, critical_solve, make_profile, twist_deficit,
                            validate_profile)
from .waveguide import (BoundStateReport, StripDiscretization, assemble_waveguide,
                        convergence_study, solve_bound_states)

__all__ = [
    "BandData", "BoundStateReport", "Certificate", "CrossSectionSpec", "EigenError",
    "EigenResult", "FiberMatrices", "GroundState", "Mesh", "StripDiscretization",
    "TwistProfile", "assemble_matrices", "assemble_waveguide", "band_diagnostics",
    "certify", "compute_bands", "convergence_study", "critical_solve", "fiber_matrix",
    "ground_state", "make_profile", "rayleigh_critical", "rayleigh_main", "refine",
    "solve_bound_states", "solve_lowest", "triangulate", "twist_deficit",
    "validate_profile", "validate_spec", "with_refinement_tolerance",
]
