"""Deterministic epsilon-global optimisation of biconvex variational objectives."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .core import BiconvexProblem, GopError, VariableSpace
from .gop import GopResult, GopStatus, IterationLimits, gop_solve
from .models import Dataset, ModelKind, ModelVariant, build_problem, minimal_dataset
from .oracle import OracleConfig, certify_optimum
from .vem import VemConfig, restart_experiment, vem_run

__all__ = [
    "__version__",
    "BiconvexProblem",
    "GopError",
    "VariableSpace",
    "GopResult",
    "GopStatus",
    "IterationLimits",
    "gop_solve",
    "Dataset",
    "ModelKind",
    "ModelVariant",
    "build_problem",
    "minimal_dataset",
    "OracleConfig",
    "certify_optimum",
    "VemConfig",
    "restart_experiment",
    "vem_run",
]
