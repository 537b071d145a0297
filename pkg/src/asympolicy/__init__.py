"""Minimax-regret policy learning under asymmetric, partially identified utilities."""
from .core import (
    Comparator,
    ConstraintSpec,
    Dataset,
    FeatureMap,
    GroundTruth,
    LinearPolicy,
    ScoreMethod,
    ScoreTable,
    UtilitySpec,
    WeightTriple,
    dataset_from_csv,
    policy_decide,
)
from .errors import AsymPolicyError, ConfigError, DataError, SolverError
from .minimax import ComparatorContext, PolicyClasses, algorithm1, algorithm2, build_weights, corollary_policy
from .simulate import DgpSpec, ReplicationConfig, generate, replicate
from .solvers import SolverConfig, SolverKind

__version__ = "0.1.0"
