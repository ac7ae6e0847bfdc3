"""Feature-splitting proximal point solver for penalized quantile regression."""
from .design import (BlockedDesign, StandardizationMap, block_matvec, block_rmatvec, partition,
                     standardize, top_eigenvalue)
from .estimator import FSQuantileRegressor, FSQuantileRegressorPath
from .errors import ConfigurationError, DataError, FSQRError, NumericalError, PathError
from .path import PathConfig, PathResult, hbic, path_fit, pivotal_lambda_grid
from .oracle import KKTReport, kkt_check, reference_solve
from .penalties import PenaltySpec, lla_fit, mcp_derivative, scad_derivative
from .prediction import CoverageReport, QuantilePair, coverage, predict_quantile
from .simulation import (DenseDGPConfig, SparseDGPConfig, StudySpec, gen_dense, gen_sparse,
                         run_study)
from .solver import (ConvergenceTrace, FitResult, SolverConfig, SolverState, dual_update, fit,
                     objective, pinball, prox_beta_block, prox_z)

__version__ = "0.1.0"
