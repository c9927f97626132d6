"""Pixel-image microstructures to finite elements, homogenization and error analysis."""

from .coarsen import (CoarseningReport, adaptive_mesh, coarsen_uniform, coarsen_variant_a,
                      coarsen_variant_b, interface_mask, quadtree_coarsen)
from .errors import (ErrorBreakdown, EstimateReport, decompose_micro_error, efficiency_index,
                     elasticity_error, isolated_elements, macro_error, project_to_reference,
                     recover_nodal_stress, true_error, zz_estimate)
from .exceptions import *  # noqa: F401,F403
from .fem import SaddleSolution, assemble, element_stiffness, energy_norm_sq, solve_saddle
from .homogenize import (RVE, MacroProblem, fehmm_solve, homogenized_tensor, laminate_tensor,
                         micro_recover, reuss_bound, solve_single_scale, timoshenko_tip_deflection,
                         transformation_matrix, unit_strain_states, voigt_bound)
from .mesh import ConstraintSet, QuadtreeMesh, build_quadtree_mesh, build_uniform_mesh, extract_constraints
from .phase import (Checkerboard, CircularInclusions, Laminate, MaterialTable, Phase, PhaseGrid,
                    blend_tensor, default_two_phase_table, load_grid, plane_strain_tensor,
                    synth_microstructure, volume_fractions)

__version__ = "0.1.0"
