"""Space-time multigrid for implicit-Euler edge-element eddy-current problems."""
from .fem import MaterialField, SpatialOperators, assemble_operators, build_transfers, discrete_gradient
from .linalg import SolverOptions, SpatialSolver
from .mesh import MeshHierarchy, TetMesh, build_base_mesh, build_hierarchy, refine_uniform
from .multigrid import CoarseningRule, SpaceTimeMultigrid, plan_hierarchy, time_transfers
from .parallel import SlabPool
from .spacetime import SmootherSpec, apply_L, assemble_rhs, correction_A, hybrid_smooth, smoother_S

__version__ = "0.1.0"
