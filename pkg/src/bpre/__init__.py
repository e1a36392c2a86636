"""Ancestral inference for replicated branching processes in random environments."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BPREError,
    CountOverflowError,
    DataValidationError,
    EstimationError,
    OracleSizeError,
    ParameterError,
)
from .laws import (  # noqa: F401
    AncestorMoments,
    BetaBernoulli,
    Constant,
    DegenerateGW,
    GammaPoisson,
    ShiftedNegBinomial,
    ShiftedPoisson,
    TheoreticalMoments,
    ZeroTruncPoisson,
    ancestor_moments,
    offspring_moments,
)
from .panel import Panel  # noqa: F401
from .simulate import SimConfig, simulate_panel  # noqa: F401
from .estimators import (  # noqa: F401
    EstimateSet,
    SplitWindow,
    Window,
    estimate_last_two,
    estimate_ratio,
    estimate_split,
    estimate_weighted_m,
    estimate_window,
)
