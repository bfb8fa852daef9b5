"""Energy shaping for simple underactuated Hamiltonian systems.

Given a model triple (inverse mass matrix, potential, actuation rows)
the package solves the kinetic and potential matching conditions up to
quadratures and certifies positive-definiteness of the shaped potential
at the equilibrium.  The numeric core has a compiled and a pure-Python
twin; set ``ENERSHAPE_PURE=1`` to force the fallback.
"""

from ._kernel import get_backend
from .expr import (
    DomainError,
    ParseError,
    UnboundNameError,
    UnknownFunctionError,
    differentiate,
    evaluate,
    free_names,
    parse,
    to_text,
)
from .frame import (
    FrameEngine,
    FramePoint,
    OutsideDomainError,
    frame_at,
    transport_scalar,
    transport_tensor,
)
from .kinetic import (
    KineticSolution,
    SingularSegmentError,
    kinetic_from_expressions,
    kinetic_residual,
    kinetic_residual_scalar,
    solve_kinetic,
)
from .model import (
    AffineChart,
    ChartAdaptation,
    InvariantViolation,
    ModelError,
    ModelFormatError,
    ModelSpec,
    adapt_chart,
    apply_affine,
    apply_permutation,
    center_at_equilibrium,
    load_model,
    parse_model_text,
)
from .numerics import (
    NonFiniteSampleError,
    QuadratureError,
    QuadSpec,
    SingularMatrixError,
    fd_grad,
    fd_hess,
    min_eigen_sym,
    quad,
    solve_linear,
)
from .potential import (
    IntegrabilityError,
    PositivityCertificate,
    ShapedPotential,
    build_shaped_potential,
    integrability_residual,
    positivity_certificate,
    prescribed_gradient,
)

__version__ = "0.1.0"

__all__ = [
    "AffineChart",
    "ChartAdaptation",
    "DomainError",
    "FrameEngine",
    "FramePoint",
    "IntegrabilityError",
    "InvariantViolation",
    "KineticSolution",
    "ModelError",
    "ModelFormatError",
    "ModelSpec",
    "NonFiniteSampleError",
    "OutsideDomainError",
    "ParseError",
    "PositivityCertificate",
    "QuadratureError",
    "QuadSpec",
    "ShapedPotential",
    "SingularMatrixError",
    "SingularSegmentError",
    "UnboundNameError",
    "UnknownFunctionError",
    "adapt_chart",
    "apply_affine",
    "apply_permutation",
    "build_shaped_potential",
    "center_at_equilibrium",
    "differentiate",
    "evaluate",
    "fd_grad",
    "fd_hess",
    "frame_at",
    "free_names",
    "get_backend",
    "integrability_residual",
    "kinetic_from_expressions",
    "kinetic_residual",
    "kinetic_residual_scalar",
    "load_model",
    "min_eigen_sym",
    "parse",
    "parse_model_text",
    "positivity_certificate",
    "prescribed_gradient",
    "quad",
    "solve_kinetic",
    "solve_linear",
    "to_text",
    "transport_scalar",
    "transport_tensor",
    "__version__",
]
