"""Learning-based safety filters for control-affine systems with unknown noise statistics."""

from .bounds import BoundKind, build_set
from .errors import (
    BoundNotValidYet,
    ConfigError,
    ContractViolation,
    NotEnoughSamples,
    OutOfDomain,
    SafeLearnError,
    SolverError,
)
from .estimation import EstimationMode, MomentEstimate
from .filter import FilterConfig, FilterMode, filter_control
from .model import (
    ConfidenceConfig,
    ControlAffineModel,
    SafeControlOutcome,
    SafetySpec,
    Status,
    UncertaintySet,
)
from .qp import solve_qp
from .tightening import tighten, tightening_vector

__version__ = "0.1.0"
