"""First-hitting-time law of Brownian motion with drift plus compound Poisson jumps."""
from .closed_form import bm_defect, f_zero, ftilde, ig_cdf, smoothed_ftilde
from .errors import (
    DegenerateGrid,
    DomainError,
    InvalidParameter,
    NotApplicable,
    NotSpectrallyNegative,
    UnsupportedJumpKind,
)
from .estimator import (
    CdfEstimate,
    DefectEstimate,
    DensityEstimate,
    estimate_cdf,
    estimate_defect,
    estimate_density,
    integrate_density,
)
from .model import (
    DoubleExponential,
    Exponential,
    FiniteMixture,
    Gaussian,
    JumpDiffusionModel,
    PointMass,
    model_from_dict,
    validate_model,
)

__version__ = "0.1.0"
