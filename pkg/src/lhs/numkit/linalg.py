"""Truncated / randomized SVD and graph normalization kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRAM_EIGH_LIMIT = 2048


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SvdFactors:
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray
    method: str = "gram-eigh"

    @property
    def r(self) -> int:
        return len(self.S)

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.Vt


def _check_rank(m: np.ndarray, r: int) -> None:
    if m.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    if not 1 <= r <= min(m.shape):
        raise ValueError(f"rank {r} outside [1, {min(m.shape)}]")
    if not np.isfinite(m).all():
        raise NumericError("matrix has non-finite entries")


def _polish(mv: np.ndarray) -> np.ndarray:
    """Orthonormal basis for the columns of ``mv``, signs aligned with them."""
    q, rr = np.linalg.qr(mv)
    signs = np.sign(np.diag(rr))
    signs[signs == 0] = 1.0
    return q * signs


def _eigh(g: np.ndarray):
    try:
        return np.linalg.eigh(g)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"symmetric eigensolve did not converge ({exc})") from exc


def svd_truncated(m, r: int) -> SvdFactors:
    """Top-``r`` SVD.

    Small matrices go through a symmetric eigensolve of the smaller Gram
    matrix; above ``GRAM_EIGH_LIMIT`` the randomized path is used.
    """
    m = np.asarray(m, dtype=np.float64)
    _check_rank(m, r)
    if min(m.shape) > GRAM_EIGH_LIMIT:
        return randomized_svd(m, r)
    rows, cols = m.shape
    tall = rows >= cols
    gram = m.T @ m if tall else m @ m.T
    gram = 0.5 * (gram + gram.T)
    evals, evecs = _eigh(gram)
    order = np.argsort(evals)[::-1][:r]
    sv = np.sqrt(np.clip(evals[order], 0.0, None))
    vecs = evecs[:, order]
    if tall:
        v, u = vecs, _polish(m @ vecs)
    else:
        u, v = vecs, _polish(m.T @ vecs)
    return SvdFactors(u, sv, v.T, "gram-eigh")


def _orth(y: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(y)
    return q


def randomized_svd(m, r: int, oversample: int = 8, power_iters: int = 2,
                   rng=None) -> SvdFactors:
    """Halko-style randomized range finder followed by a small exact SVD."""
    m = np.asarray(m, dtype=np.float64)
    _check_rank(m, r)
    width = r + oversample
    if width > min(m.shape):
        raise ValueError(f"rank + oversample = {width} exceeds {min(m.shape)}")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(0 if rng is None else int(rng))
    omega = rng.standard_normal((m.shape[1], width))
    q = _orth(m @ omega)
    for _ in range(power_iters):
        q = _orth(m.T @ q)
        q = _orth(m @ q)
    b = q.T @ m
    try:
        ub, s, vt = np.linalg.svd(b, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"small SVD did not converge ({exc})") from exc
    return SvdFactors(q @ ub[:, :r], s[:r], vt[:r], "randomized")


def sym_normalize(s) -> np.ndarray:
    """D^-1/2 (S + I) D^-1/2 with D the row sums of S + I."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("structure must be square")
    if not np.allclose(s, s.T, atol=1e-9):
        raise ValueError("structure must be symmetric")
    if (s < 0).any():
        raise ValueError("structure must be non-negative")
    st = s + np.eye(len(s))
    dinv = 1.0 / np.sqrt(st.sum(axis=1))
    return st * dinv[:, None] * dinv[None, :]


def normalized_laplacian(adj) -> np.ndarray:
    return np.eye(len(adj)) - sym_normalize(adj)


def laplacian_step_residual(x, graph, lam: float = 0.5) -> float:
    """Residual between one gradient step on the Laplacian-regularized
    objective and a GCN propagation step.

    With g(Z) = ||Z - X||^2 + lam * tr(X^T L X), one unit-rate step from X is
    X - 2 lam L X; at lam = 1/2 this should coincide with A_hat X.
    """
    adj = graph.adjacency() if hasattr(graph, "adjacency") else np.asarray(graph, dtype=float)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    a_hat = sym_normalize(adj)
    lap = np.eye(len(adj)) - a_hat
    # the data-fit term contributes 2(Z - X), evaluated at Z = X
    grad = 2.0 * (x - x) + 2.0 * lam * (lap @ x)
    step = x - grad
    return float(np.linalg.norm(step - a_hat @ x))


def spectral_radius(m, iters: int = 500, seed: int = 0) -> float:
    """Power-iteration estimate of the largest |eigenvalue| of a symmetric matrix."""
    m = np.asarray(m, dtype=np.float64)
    v = np.random.default_rng(seed).standard_normal(len(m))
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        est = nw
        v = w / nw
    return float(est)
