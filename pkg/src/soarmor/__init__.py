"""Krylov-subspace model order reduction for second-order Helmholtz FEM
systems, with consecutive-ROM error estimators and convergence studies."""

from . import errors
from .fem import (BoundarySpec, MeasurementSet, Mesh, assemble,
                  build_unit_square_mesh, classify_boundary,
                  default_measurement_points, measurement_matrix)
from .linalg import (factorize, from_triplets, orthonormalize_against,
                     shifted_damping, shifted_stiffness, solve_block)
from .mmio import read_matrix_market, write_matrix_market
from .rom import (ErrorSample, MomentSequence, ReducedSystem, TransferSample,
                  block_norm, error_sample, eval_fom, eval_rom, moments,
                  project, truncate)
from .soar import (ColumnTag, ExpansionPlan, ProjectionBasis, SoarState,
                   extend, extend_to, init_state, raw_krylov_blocks)
from .study import (OrderFit, StudyConfig, StudyResult, emit_csv,
                    emit_stopping_csv, emit_svg, run_study,
                    stopping_decision, verify_order)
from .system import SecondOrderSystem

__version__ = "0.1.0"
