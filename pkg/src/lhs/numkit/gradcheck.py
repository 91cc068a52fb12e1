"""Central finite-difference checks against tape gradients."""
from __future__ import annotations

import numpy as np

from .tape import Node, Tape


def numeric_grad(tape: Tape, loss: Node, name: str, eps: float = 1e-5) -> np.ndarray:
    base = {k: p.value for k, p in tape.params.items()}
    x = base[name]
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        hi = x.copy()
        lo = x.copy()
        hi[i] += eps
        lo[i] -= eps
        f_hi = tape.evaluate(loss, {**base, name: hi})
        f_lo = tape.evaluate(loss, {**base, name: lo})
        g[i] = (float(f_hi) - float(f_lo)) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(tape: Tape, loss: Node, eps: float = 1e-5) -> dict[str, float]:
    """Relative error ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||) per parameter."""
    analytic = tape.backward(loss)
    return {name: relative_error(analytic[name], numeric_grad(tape, loss, name, eps))
            for name in tape.params}
