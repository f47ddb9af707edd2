"""Optimal transport through truncated moment relaxations.

Wasserstein distances and barycenters, Gromov-Wasserstein discrepancies
and barycenters, solved as semidefinite relaxations of generalized moment
problems, with Christoffel-function post-processing of the computed
moments.
"""

from .polyalg import (AffineMap, MultiIndex, Polynomial, ProductStructure,
                      SemialgebraicSet, basis_size, enumerate_indices,
                      expand_abs_power_even, format_polynomial,
                      parse_polynomial, product_set)
from .moments import (ClosedForm, Empirical, MomentMatrix,
                      TruncatedMomentSequence, UniformMask,
                      descriptor_moments, embed_marginal_index,
                      localizing_matrix, moment_matrix, riesz)
from .formulations import (GeneralizedMomentProblem, LinearMomentFunctional,
                           MeasureVariable, QuadraticMomentFunctional,
                           barycenter_sequence, build_barycenter_wp,
                           build_gw_barycenter, build_gw_even,
                           build_multimarginal, build_piecewise,
                           build_wp_even, build_wp_odd, coupling_init,
                           gw_barycenter_fixed_point, gw_fixed_point,
                           gw_linearize, identity_coupling, plan_sequence,
                           to_natural)
from .relaxation import (RelaxationOrder, RelaxationResult, assemble,
                         hierarchy, min_order, monotone_flags, solve_order)
from .conic import (ConeBlock, ConicProgram, SolveReport, SolverFailure,
                    export_sdpa, solve)
from .postprocess import (ChristoffelModel, SupportEstimate,
                          christoffel_model, christoffel_value, density_fit,
                          kernel_diag, kernel_diag_grid, make_grid,
                          qoi_estimate, qoi_estimate_approx, support_estimate)

__version__ = "0.1.0"
