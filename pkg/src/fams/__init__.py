"""Algebraic multiscale pressure solver for heterogeneous porous media with
embedded discrete fractures."""

from .assembly import FineSystem, TRatioReport, assemble, t_ratio, tpfa_transmissibility
from .coarsen import (
    CoarseHierarchy,
    MergedDuals,
    build_hierarchy,
    coarsen_fractures,
    coarsen_matrix,
    distance_coarsen,
    merge_duals,
    wirebasket_permutation,
)
from .mesh import (
    FractureNetwork,
    FracturePlate,
    Overlap,
    Perforation,
    StructuredGrid,
    Well,
    build_grid,
    embed_fractures,
    network_graph,
)
from .multiscale import (
    Prolongation,
    Restriction,
    add_well_columns,
    build_prolongation,
    build_restriction,
    coarse_system,
    truncate_rescale,
)
from .scenario import Scenario, build_scenario, build_system, load_scenario
from .solver import (
    SolveReport,
    SolverConfig,
    fams_precondition,
    fams_solve,
    reconstruct_flux,
    single_pass_error,
)

__version__ = "0.1.0"
