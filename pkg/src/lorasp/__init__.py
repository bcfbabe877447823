"""Hierarchical compression-extension-elimination solver for sparse SPD systems."""
from .errors import (DepthTooLargeError, InvalidPartitionError, MatrixMarketError, NotSPDError,
                     ResourceError, SolverError, StructureError, UnsupportedError)
from .factor import HFactorization, SolverConfig, factorize
from .krylov import IterationReport, gmres_solve, stationary_solve
from .hierarchy import ClusterHierarchy, build_hierarchy, recursive_bisection
from .solve import BACKEND, apply_inverse, as_linear_operator
from .sparse import ClusterPartition, SparseSymMatrix
from .problems import load_problem

__version__ = "0.1.0"
