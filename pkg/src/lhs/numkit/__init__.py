"""Dense kernels, SVDs and the reverse-mode tape used by every LHS loss."""
from . import tape as ops
from .gradcheck import check_gradients, numeric_grad, relative_error
from .linalg import (
    GRAM_EIGH_LIMIT,
    NumericError,
    SvdFactors,
    laplacian_step_residual,
    normalized_laplacian,
    randomized_svd,
    spectral_radius,
    svd_truncated,
    sym_normalize,
)
from .optim import Adam
from .tape import Node, Tape, backward

__all__ = [
    "Adam", "GRAM_EIGH_LIMIT", "Node", "NumericError", "SvdFactors", "Tape", "backward",
    "check_gradients", "laplacian_step_residual", "normalized_laplacian", "numeric_grad",
    "ops", "randomized_svd", "relative_error", "spectral_radius", "svd_truncated",
    "sym_normalize",
]
