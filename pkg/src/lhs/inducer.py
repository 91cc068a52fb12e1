"""Latent homophilic structure induction.

Self-expressive coefficients Q (ridge with a zero diagonal), the low-rank
similarity construction that turns Q into a structure S*, blending with the
observed adjacency, and truncation to high-confidence soft edges.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Graph, GraphError, edge_homophily_ratio
from .numkit import ops, randomized_svd, svd_truncated
from .numkit.linalg import GRAM_EIGH_LIMIT

EXACT_SOLVER_LIMIT = 4096


@dataclass(frozen=True)
class Coefficients:
    q: np.ndarray
    lambda1: float
    solver: str = "exact-reduced-ridge"
    objective: float = float("nan")
    epochs: int = 0
    converged: bool = True
    history: tuple = ()


@dataclass(frozen=True)
class LatentStructure:
    s: np.ndarray
    round_index: int = 0
    config_hash: str = ""
    svd_method: str = ""

    @property
    def n(self) -> int:
        return self.s.shape[0]


@dataclass(frozen=True)
class InducerConfig:
    lambda1: float = 0.8
    subspace_dim_K: int = 4
    zeta: float | None = None
    sigma: float = 0.8
    solver: str = "auto"
    rounds: int = 2
    svd: str = "auto"
    round2_input: str = "z"

    def __post_init__(self):
        if self.lambda1 <= 0:
            raise ValueError("lambda1 must be > 0")
        if self.zeta is not None and not 0.0 <= self.zeta <= 1.0:
            raise ValueError("zeta must lie in [0, 1]")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [0, 1]")
        if self.solver not in ("auto", "exact-reduced-ridge", "projected-gradient"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.svd not in ("auto", "truncated", "randomized"):
            raise ValueError(f"unknown svd {self.svd!r}")
        if self.round2_input not in ("z", "z+x"):
            raise ValueError(f"unknown round2_input {self.round2_input!r}")
        if self.rounds < 1 or self.subspace_dim_K < 1:
            raise ValueError("rounds and subspace_dim_K must be >= 1")

    def rank(self, n_classes: int) -> int:
        return self.subspace_dim_K * n_classes + 1

    def digest(self) -> str:
        return config_hash(asdict(self))


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- self-expressive fit ------------------------------------------------------

def self_expressive_objective(x, q, lambda1: float) -> float:
    x = np.asarray(x, dtype=np.float64)
    resid = x - q @ x
    return float(np.sum(resid * resid) + lambda1 * np.sum(q * q))


def self_expressive_loss(x, q_node, lambda1: float):
    """Tape version of the relaxed objective with the diagonal masked to zero."""
    x = np.asarray(x, dtype=np.float64)
    offdiag = 1.0 - np.eye(len(x))
    q = ops.mul(q_node, offdiag)
    resid = ops.sub(x, ops.matmul(q, x))
    return ops.add(ops.sum(ops.mul(resid, resid)), ops.scale(ops.sum(ops.mul(q, q)), lambda1))


def _ridge_inverse(x: np.ndarray, lambda1: float) -> np.ndarray:
    n, f = x.shape
    if f < n:
        # Woodbury: (XX^T + lam I)^-1 = (I - X (lam I + X^T X)^-1 X^T) / lam
        inner = np.linalg.solve(lambda1 * np.eye(f) + x.T @ x, x.T)
        return (np.eye(n) - x @ inner) / lambda1
    return np.linalg.inv(x @ x.T + lambda1 * np.eye(n))


def _exact_reduced_ridge(x: np.ndarray, lambda1: float) -> np.ndarray:
    # Row i solves min ||x_i - q X||^2 + lam ||q||^2 with q_i = 0. With
    # P = (XX^T + lam I)^-1 the KKT solution is q = e_i - P_i / P_ii.
    p = _ridge_inverse(x, lambda1)
    p = 0.5 * (p + p.T)
    q = np.eye(len(x)) - p / np.diag(p)[:, None]
    np.fill_diagonal(q, 0.0)
    return q


def _projected_gradient(x, lambda1, max_epochs, tol):
    gram = x @ x.T
    hess = gram + lambda1 * np.eye(len(x))
    lip = 2.0 * (np.linalg.eigvalsh(hess)[-1])
    step = 1.0 / lip
    q = np.zeros_like(gram)
    obj = self_expressive_objective(x, q, lambda1)
    history = [obj]
    converged = False
    stalled = False
    for epoch in range(1, max_epochs + 1):
        grad = 2.0 * (q @ hess - gram)
        q = q - step * grad
        np.fill_diagonal(q, 0.0)
        new = self_expressive_objective(x, q, lambda1)
        history.append(new)
        if new > obj:
            stalled = True
        if obj - new <= tol * max(abs(obj), 1e-300):
            converged = True
            obj = new
            break
        obj = new
    return q, obj, epoch, converged and not stalled, tuple(history)


def fit_self_expressive(x, lambda1: float = 0.8, solver: str = "auto",
                        max_epochs: int = 20000, tol: float = 1e-12) -> Coefficients:
    """Coefficients Q minimising ||X - QX||_F^2 + lambda1 ||Q||_F^2 with diag(Q) = 0."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.size == 0:
        raise ValueError("features must be a non-empty N x F matrix")
    if len(x) < 2:
        raise ValueError("need at least two nodes")
    if lambda1 <= 0:
        raise ValueError("lambda1 must be > 0")
    if solver == "auto":
        solver = "exact-reduced-ridge" if len(x) <= EXACT_SOLVER_LIMIT else "projected-gradient"
    if solver == "exact-reduced-ridge":
        q = _exact_reduced_ridge(x, lambda1)
        return Coefficients(q, lambda1, solver, self_expressive_objective(x, q, lambda1))
    if solver == "projected-gradient":
        q, obj, epochs, converged, hist = _projected_gradient(x, lambda1, max_epochs, tol)
        if not converged:
            warnings.warn(f"projected-gradient solver did not converge in {epochs} epochs",
                          RuntimeWarning, stacklevel=2)
        return Coefficients(q, lambda1, solver, obj, epochs, converged, hist)
    raise ValueError(f"unknown solver {solver!r}")


# -- structure generation -------------------------------------------------------

def generate_structure(q, d: int, K: int = 4, svd: str = "auto", round_index: int = 0,
                       config_hash: str = "", rng=0) -> LatentStructure:
    """Turn coefficients into a symmetric structure with entries in [0, 1].

    Q' = (Q + Q^T)/2 is reduced to rank r = K d + 1; the embedding U sqrt(S)
    is row-normalised and the similarity between embeddings, with negative
    values zeroed, becomes S* after symmetrisation and scaling by its largest
    entry. The diagonal is zeroed; self-loops are added at propagation time.
    """
    qm = np.asarray(getattr(q, "q", q), dtype=np.float64)
    n = qm.shape[0]
    r = K * d + 1
    if r > n:
        raise ValueError(f"rank r = K*d + 1 = {r} exceeds N = {n}")
    sym = 0.5 * (qm + qm.T)
    if svd == "auto":
        svd = "truncated" if n <= GRAM_EIGH_LIMIT else "randomized"
    if svd == "truncated":
        factors = svd_truncated(sym, r)
    elif svd == "randomized":
        oversample = min(8, n - r)
        factors = randomized_svd(sym, r, oversample=oversample, power_iters=2, rng=rng)
    else:
        raise ValueError(f"unknown svd {svd!r}")
    emb = factors.U * np.sqrt(factors.S)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = np.divide(emb, norms, out=np.zeros_like(emb), where=norms > 1e-12)
    sim = np.maximum(emb @ emb.T, 0.0)
    total = sim + sim.T
    top = np.max(np.abs(total))
    s = np.clip(total / top, 0.0, 1.0) if top > 0 else np.zeros_like(total)
    np.fill_diagonal(s, 0.0)
    return LatentStructure(s, round_index, config_hash, factors.method)


def bootstrap(s, a, zeta: float) -> LatentStructure:
    """Blend the latent structure with the observed adjacency: zeta A + (1 - zeta) S*."""
    if not 0.0 <= zeta <= 1.0:
        raise ValueError("zeta must lie in [0, 1]")
    sm = np.asarray(getattr(s, "s", s), dtype=np.float64)
    am = a.adjacency() if isinstance(a, Graph) else np.asarray(a, dtype=np.float64)
    if sm.shape != am.shape:
        raise ValueError("structure and adjacency shapes differ")
    out = np.clip(zeta * am + (1.0 - zeta) * sm, 0.0, 1.0)
    if isinstance(s, LatentStructure):
        return LatentStructure(out, s.round_index, s.config_hash, s.svd_method)
    return LatentStructure(out)


def threshold(s, sigma: float) -> np.ndarray:
    """Keep off-diagonal entries >= sigma at their continuous values; drop the rest."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    sm = np.asarray(getattr(s, "s", s), dtype=np.float64)
    out = np.where(sm >= sigma, sm, 0.0)
    np.fill_diagonal(out, np.diag(sm))
    return out


def estimate_zeta(graph: Graph, default: float = 0.5) -> float:
    """Homophily of the observed edges whose endpoints are both training nodes.

    Only training labels are used, so the estimate does not peek at val/test.
    """
    e = graph.edges
    if len(e) == 0:
        return default
    tr = graph.train_mask
    both = tr[e[:, 0]] & tr[e[:, 1]]
    if not both.any():
        return default
    y = graph.labels
    return float(np.mean(y[e[both, 0]] == y[e[both, 1]]))


def knn_similarity_structure(x, k: int) -> np.ndarray:
    """Cosine k-nearest-neighbour graph, symmetrised by union, weights = similarity."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if not 1 <= k < n:
        raise ValueError("need 1 <= k < N")
    norms = np.linalg.norm(x, axis=1)
    ok = norms > 1e-12
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} zero-norm feature rows excluded from kNN",
                      RuntimeWarning, stacklevel=2)
    xn = np.zeros_like(x)
    xn[ok] = x[ok] / norms[ok, None]
    sim = xn @ xn.T
    sim[~ok, :] = -np.inf
    sim[:, ~ok] = -np.inf
    np.fill_diagonal(sim, -np.inf)
    out = np.zeros((n, n))
    for i in np.flatnonzero(ok):
        kk = min(k, int(ok.sum()) - 1)
        if kk <= 0:
            continue
        nbrs = np.argsort(-sim[i], kind="stable")[:kk]
        out[i, nbrs] = np.maximum(sim[i, nbrs], 0.0)
    return np.maximum(out, out.T)


@dataclass
class InducedStructure:
    """Result of one inducer pass (self-expressive fit, generation, bootstrap)."""

    coefficients: Coefficients
    generated: LatentStructure
    blended: LatentStructure
    zeta: float
    stats: dict = field(default_factory=dict)


def induce(features, graph: Graph, cfg: InducerConfig, round_index: int = 0,
           zeta: float | None = None) -> InducedStructure:
    coeffs = fit_self_expressive(features, cfg.lambda1, cfg.solver)
    gen = generate_structure(coeffs, graph.n_classes, cfg.subspace_dim_K, cfg.svd,
                             round_index, cfg.digest())
    if zeta is None:
        zeta = cfg.zeta if cfg.zeta is not None else estimate_zeta(graph)
    blended = bootstrap(gen, graph, zeta)
    stats = {"round": round_index, "zeta": zeta, "svd": gen.svd_method,
             "solver": coeffs.solver, "objective": coeffs.objective}
    kept = threshold(blended, cfg.sigma)
    try:
        stats["thresholded_homophily"] = edge_homophily_ratio(kept, graph.labels)
    except GraphError:
        stats["thresholded_homophily"] = float("nan")
    stats["thresholded_edges"] = int(np.count_nonzero(np.triu(kept, 1)))
    return InducedStructure(coeffs, gen, blended, zeta, stats)
