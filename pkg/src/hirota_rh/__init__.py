"""N-soliton solutions of multi-component Hirota equations by Riemann-Hilbert dressing,
with residual and direct-scattering verification."""
from .core import (Convention, DressingOverflow, FieldGrid, GridSpec, GridTooCoarse, HirotaError,
                   HirotaParams, SolitonSpec, SpecError, SpectralPoint, load_spec, make_spec,
                   theta, validate_spec)
from .dressing import (blaschke, evaluate_Pplus, nsoliton_at, nsoliton_eval, one_soliton_closed,
                       one_soliton_csch, reconstruct_potential, two_soliton_closed)
from .laxpair import (Ordering, ResidualReport, focusing_params, pde_residual, refinement_study,
                      zero_curvature_residual)
from .scattering import (DecayViolation, Potential, Side, evolve_scattering, find_s11_zeros,
                         jost_solve, s11_zeros, scattering_matrix, scattering_sweep, symmetry_check)

__all__ = [name for name in dir() if not name.startswith("_")]
