"""Adaptive P1 finite elements for solution-dependent diffusion problems
-div(kappa(u) grad u) = f on the unit square, solved by a damped and
regularized Newton iteration with adaptively controlled parameters."""

from .assembly import (AssemblyError, FeSpace, assemble_A, assemble_A1p,
                       assemble_A2p, assemble_fQ, assemble_R,
                       assemble_stiffness_like, build_space, residual)
from .controller import (AssembledOperators, ExitReason, IterationRecord,
                         LevelResult, RegParams, assemble_operators,
                         build_system_matrix, check_exit, compute_itmax,
                         estimate_fl, linearization_error_direct,
                         linearization_error_representation, newton_step,
                         predict_gamma_decrease, solve_level, update_alpha,
                         update_delta, update_gamma10, update_sigma01)
from .driver import (ConfigError, RunConfig, RunSummary, get_problem, run,
                     write_outputs)
from .estimator import IndicatorField, element_indicators, error_norms, global_estimator
from .mesh import (MeshError, MeshPartition, crisscross_mesh, element_geometry,
                   interpolate_p1, mark_dorfler, min_angle_deg, refine,
                   uniform_initial_mesh, validate_mesh)
from .problems import (DiffusionLaw, ExactSolution, LawReport, ProblemSpec,
                       constant_diffusion, example1, example2, scalar_law,
                       validate_law)
from .quadrature import TriangleRule, edge_rule, triangle_rule
from .vtk_io import write_vtk

__version__ = "0.1.0"
