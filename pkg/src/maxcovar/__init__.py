"""Chance-constrained covariance steering and maximal-covariance backward reachable trees."""

from .brt import Brt, BrtNode, TreeIntegrityError, audit_tree, build_tree, create_root
from .core import (
    AffineFeedbackLaw,
    GaussianBelief,
    HalfspaceChanceConstraint,
    InvalidArgumentError,
    LinearGaussianSystem,
    PlanningScene,
    SteeringWeights,
)
from .moments import check_maneuver, propagate
from .montecarlo import rollout
from .planner import QueryResult, query
from .scenes import bundled_config, load_config
from .steering import (
    RecoveryFailedError,
    RelaxationGapError,
    SteeringSolution,
    feasible,
    max_covar,
    opt_steer,
)

__version__ = "0.1.0"

__all__ = [
    "AffineFeedbackLaw", "GaussianBelief", "HalfspaceChanceConstraint", "InvalidArgumentError",
    "LinearGaussianSystem", "PlanningScene", "SteeringWeights",
    "propagate", "check_maneuver", "rollout",
    "opt_steer", "max_covar", "feasible", "SteeringSolution", "RelaxationGapError", "RecoveryFailedError",
    "Brt", "BrtNode", "TreeIntegrityError", "create_root", "build_tree", "audit_tree",
    "query", "QueryResult", "bundled_config", "load_config",
]
