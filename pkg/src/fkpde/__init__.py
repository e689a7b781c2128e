"""Unbiased Feynman-Kac estimates of parabolic PDE solutions."""
from .bench import BenchmarkReport, ReferenceCase, builtin_problem, oracle_estimate, run_benchmark
from .debias import EulerConfig, HaltingDistribution, estimate_debiased, estimate_euler, expected_work
from .errors import (
    BoundViolationError,
    ContractError,
    DomainError,
    EaInapplicableError,
    FkpdeError,
    PotentialError,
    ResourceError,
    SamplerError,
    UnsupportedTransformError,
)
from .estimator import EstimatorResult, estimate_ea, path_functional
from .forms import Coef, coef
from .lea import LeaConfig, simulate_skeleton
from .problem import Hyperrectangle, PdeProblem, complementary_sde, lamperti_transform, transform
from .problem_file import load_problem, parse_problem
from .rng import RngStream

__version__ = "0.1.0"
