"""Star-finite coverings of finite-dimensional sup-norm truncations by smooth
convex bodies: exact inf-convolution norm engine, net builders, staged
covering constructions, and a post-hoc certification harness."""

from .norms import (
    DualFunctional,
    InfConvNorm,
    MNorm,
    ParameterError,
    ScaledMNorm,
    SparseVector,
    SupNorm,
    UndefinedGradientError,
    eval_dual_norm,
    eval_norm,
    fenchel_conjugate_numeric,
    gauge,
    norming_functional,
)

__version__ = "0.1.0"

__all__ = [
    "SparseVector",
    "DualFunctional",
    "SupNorm",
    "MNorm",
    "ScaledMNorm",
    "InfConvNorm",
    "ParameterError",
    "UndefinedGradientError",
    "eval_norm",
    "eval_dual_norm",
    "gauge",
    "norming_functional",
    "fenchel_conjugate_numeric",
    "__version__",
]
