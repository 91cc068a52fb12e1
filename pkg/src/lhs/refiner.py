"""Dual-view contrastive refinement over a truncated latent structure."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .graph import Graph, GraphError
from .inducer import threshold
from .numkit import Adam, NumericError, Tape, ops, sym_normalize
from .rng import stream

SPARSE_DENSITY = 0.1


@dataclass(frozen=True)
class CorruptionConfig:
    edge_drop_rate: float = 0.2
    feature_mask_rate: float = 0.4
    seed: int = 0

    def __post_init__(self):
        for name in ("edge_drop_rate", "feature_mask_rate"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")


@dataclass
class GcnWeights:
    w0: np.ndarray
    w1: np.ndarray
    prelu_slope: float = 0.25

    @classmethod
    def glorot(cls, f_in, hidden, f_out, rng, prelu_slope=0.25) -> GcnWeights:
        def g(a, b):
            lim = np.sqrt(6.0 / (a + b))
            return rng.uniform(-lim, lim, size=(a, b))
        return cls(g(f_in, hidden), g(hidden, f_out), prelu_slope)


@dataclass(frozen=True)
class PairBatch:
    positives: np.ndarray
    negatives: np.ndarray

    @classmethod
    def empty(cls) -> PairBatch:
        z = np.zeros((0, 2), dtype=np.int64)
        return cls(z, z)


@dataclass(frozen=True)
class RefineConfig:
    sigma: float = 0.8
    hidden: int = 64
    out_dim: int = 64
    tau: float = 0.5
    lambda2: float = 0.5
    n_pos: int = 256
    n_neg: int = 256
    lr: float = 0.001
    epochs: int = 1000
    patience: int = 40
    activation: str = "relu"
    printed_sign: bool = False
    weight_decay: float = 0.0
    corruption: CorruptionConfig = field(default_factory=CorruptionConfig)
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.activation not in ("relu", "prelu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class RefineResult:
    z: np.ndarray
    weights: GcnWeights
    history: list
    best_epoch: int


def propagation_matrix(s):
    """Normalised propagation matrix, stored sparse when the structure is sparse."""
    a_hat = sym_normalize(s)
    if np.count_nonzero(a_hat) <= SPARSE_DENSITY * a_hat.size:
        return sparse.csr_matrix(a_hat)
    return a_hat


def propagate(a_hat, x):
    """Tape op: constant propagation matrix (dense or CSR) times a node."""
    a_t = a_hat.T

    def fwd(v):
        return np.asarray(a_hat @ v)

    return ops._apply("propagate", (x,), fwd, lambda g, v, out: (np.asarray(a_t @ g),))


def activation(h, kind: str, slope=None):
    if kind == "relu":
        return ops.relu(h)
    if kind == "prelu":
        return ops.prelu(h, slope)
    return ops.identity(h)


def _edge_list(s: np.ndarray):
    iu, ju = np.nonzero(np.triu(s, 1))
    return iu, ju, s[iu, ju]


def _draw_views(n_edges, feat_shape, cfg: CorruptionConfig, rng):
    out = []
    for _ in range(2):
        keep = rng.random(n_edges) >= cfg.edge_drop_rate
        fmask = rng.random(feat_shape) >= cfg.feature_mask_rate
        out.append((keep, fmask))
    return out


def corrupt(graph: Graph, structure, cfg: CorruptionConfig, rng=None):
    """Two independently corrupted (structure, features) views.

    Each kept off-diagonal entry of ``structure`` survives with probability
    1 - edge_drop_rate in each view; each feature entry is zeroed with
    probability feature_mask_rate.
    """
    s = np.asarray(getattr(structure, "s", structure), dtype=np.float64)
    x = graph.features
    if rng is None:
        rng = stream(cfg.seed, "corrupt")
    iu, ju, vals = _edge_list(s)
    views = []
    for keep, fmask in _draw_views(len(iu), x.shape, cfg, rng):
        sv = np.zeros_like(s)
        sv[iu[keep], ju[keep]] = vals[keep]
        sv = sv + sv.T
        np.fill_diagonal(sv, np.diag(s))
        views.append((sv, x * fmask))
    return views[0], views[1]


def sparse_propagation(n, iu, ju, vals, diag=None):
    """CSR form of D^-1/2 (S + I) D^-1/2 from an upper-triangle edge list."""
    self_w = 1.0 + (np.zeros(n) if diag is None else diag)
    deg = self_w + np.bincount(iu, weights=vals, minlength=n) + np.bincount(ju, weights=vals, minlength=n)
    dinv = 1.0 / np.sqrt(deg)
    rows = np.concatenate([iu, ju, np.arange(n)])
    cols = np.concatenate([ju, iu, np.arange(n)])
    data = np.concatenate([vals, vals, self_w]) * dinv[rows] * dinv[cols]
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def truncated_gcn_forward(x, s_sigma, w: GcnWeights, activation_kind: str = "relu") -> np.ndarray:
    """Z = A_hat act(A_hat X W0) W1 with A_hat the normalised truncated structure."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != w.w0.shape[0] or w.w0.shape[1] != w.w1.shape[0]:
        raise ValueError(f"shape mismatch: X {x.shape}, W0 {w.w0.shape}, W1 {w.w1.shape}")
    s = np.asarray(getattr(s_sigma, "s", s_sigma), dtype=np.float64)
    if s.shape != (len(x), len(x)):
        raise ValueError("structure does not match the node count")
    a_hat = sym_normalize(s)
    h = a_hat @ x @ w.w0
    if activation_kind == "relu":
        h = np.maximum(h, 0.0)
    elif activation_kind == "prelu":
        h = np.where(h > 0, h, w.prelu_slope * h)
    return a_hat @ h @ w.w1


def gcn_tape(a_hat, x, w0, w1, kind="relu", slope=None):
    h = propagate(a_hat, ops.matmul(x, w0))
    return propagate(a_hat, ops.matmul(activation(h, kind, slope), w1))


_PAIR_CACHE: dict = {}


def _valid_pairs(graph: Graph):
    key = id(graph)
    hit = _PAIR_CACHE.get(key)
    if hit is not None and hit[0] is graph:
        return hit[1]
    tr = np.flatnonzero(graph.train_mask)
    iu, ju = np.triu_indices(len(tr), k=1)
    u, v = tr[iu], tr[ju]
    same = graph.labels[u] == graph.labels[v]
    out = np.stack([u[same], v[same]], 1), np.stack([u[~same], v[~same]], 1)
    _PAIR_CACHE.clear()
    _PAIR_CACHE[key] = (graph, out)
    return out


def sample_pairs(graph: Graph, n_pos: int, n_neg: int, seed=0, rng=None) -> PairBatch:
    """Uniform sample (without replacement) of labelled same/different-class training pairs."""
    if n_pos == 0 and n_neg == 0:
        return PairBatch.empty()
    pos, neg = _valid_pairs(graph)
    if n_pos > 0 and len(pos) == 0:
        raise GraphError("insufficient labels: no same-class training pair")
    if n_neg > 0 and len(neg) == 0:
        raise GraphError("insufficient labels: no cross-class training pair")
    rng = rng if rng is not None else stream(seed, "pairs")
    none = np.zeros(0, dtype=np.int64)
    pi = rng.choice(len(pos), size=min(n_pos, len(pos)), replace=False) if n_pos else none
    ni = rng.choice(len(neg), size=min(n_neg, len(neg)), replace=False) if n_neg else none
    return PairBatch(pos[np.sort(pi)].reshape(-1, 2), neg[np.sort(ni)].reshape(-1, 2))


def contrastive_terms(z1, z2, tau: float):
    """Alignment (term 1) and uniformity (term 2) summed over nodes."""
    n = z1.shape[0]
    align = ops.scale(ops.sum(ops.row_cosine(z1, z2)), -1.0 / tau)
    if n < 2:
        warnings.warn("single node: negative set is empty, term 2 set to 0", RuntimeWarning, stacklevel=3)
        return align, None
    c11 = ops.scale(ops.cosine_matrix(z1, z1), 1.0 / tau)
    c12 = ops.scale(ops.cosine_matrix(z1, z2), 1.0 / tau)
    off = ~np.eye(n, dtype=bool)
    lse = ops.masked_logsumexp(ops.concat_cols(c11, c12), np.concatenate([off, off], axis=1))
    return align, ops.sum(lse)


def pairwise_term(z, pairs: PairBatch, printed_sign: bool = False):
    """Label-pair constraint: -[sum log s(z_u.z_v) + sum log s(-z_u.z_vn)].

    With ``printed_sign`` the negative-pair sum enters with a minus sign instead.
    """
    parts = []
    if len(pairs.positives):
        d = ops.row_dot(ops.take_rows(z, pairs.positives[:, 0]), ops.take_rows(z, pairs.positives[:, 1]))
        parts.append(ops.sum(ops.log_sigmoid(d)))
    if len(pairs.negatives):
        d = ops.row_dot(ops.take_rows(z, pairs.negatives[:, 0]), ops.take_rows(z, pairs.negatives[:, 1]))
        neg = ops.sum(ops.log_sigmoid(ops.scale(d, -1.0)))
        parts.append(ops.scale(neg, -1.0) if printed_sign else neg)
    if not parts:
        return None
    total = parts[0] if len(parts) == 1 else ops.add(parts[0], parts[1])
    return ops.scale(total, -1.0)


def refine_loss(z1, z2, z, pairs: PairBatch, tau: float, lambda2: float, printed_sign: bool = False):
    """Contrastive refinement loss on tape nodes; returns a scalar node."""
    align, uniform = contrastive_terms(z1, z2, tau)
    loss = align if uniform is None else ops.add(align, uniform)
    if lambda2 != 0.0:
        pw = pairwise_term(z, pairs, printed_sign)
        if pw is not None:
            loss = ops.add(loss, ops.scale(pw, lambda2))
    return loss


def refine_loss_value(z1, z2, z, pairs, tau, lambda2, printed_sign=False) -> float:
    tape = Tape()
    out = refine_loss(tape.const(z1), tape.const(z2), tape.const(z), pairs, tau, lambda2, printed_sign)
    return float(out.value)


def refine(graph: Graph, structure, cfg: RefineConfig = RefineConfig()) -> RefineResult:
    """Train the shared truncated GCN on the contrastive loss; return Z from the clean view."""
    s_sigma = threshold(structure, cfg.sigma)
    x = graph.features
    rng_init = stream(cfg.seed, "refine", "init")
    w = GcnWeights.glorot(x.shape[1], cfg.hidden, cfg.out_dim, rng_init)
    params = {"w0": w.w0, "w1": w.w1, "slope": np.array([[w.prelu_slope]])}
    a_clean = propagation_matrix(s_sigma)
    iu, ju, vals = _edge_list(s_sigma)
    diag = np.diag(s_sigma).copy()

    def embed(p, a_hat, feats):
        return truncated_forward_dense(a_hat, feats, p, cfg.activation)

    history = []
    if cfg.epochs == 0:
        return RefineResult(embed(params, a_clean, x), w, history, 0)
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay, no_decay=("slope",))
    best = (np.inf, dict(params), 0)
    wait = 0
    need_pairs = cfg.lambda2 != 0.0 and (cfg.n_pos or cfg.n_neg)
    for epoch in range(1, cfg.epochs + 1):
        rng = stream(cfg.seed, "refine", "epoch", epoch)
        (k1, m1), (k2, m2) = _draw_views(len(iu), x.shape, cfg.corruption, rng)
        a1 = sparse_propagation(len(x), iu[k1], ju[k1], vals[k1], diag)
        a2 = sparse_propagation(len(x), iu[k2], ju[k2], vals[k2], diag)
        pairs = sample_pairs(graph, cfg.n_pos, cfg.n_neg, rng=rng) if need_pairs else PairBatch.empty()
        tape = Tape()
        w0 = tape.param("w0", opt.params["w0"])
        w1 = tape.param("w1", opt.params["w1"])
        slope = tape.param("slope", opt.params["slope"])
        z = gcn_tape(a_clean, x, w0, w1, cfg.activation, slope)
        z1 = gcn_tape(a1, x * m1, w0, w1, cfg.activation, slope)
        z2 = gcn_tape(a2, x * m2, w0, w1, cfg.activation, slope)
        loss = refine_loss(z1, z2, z, pairs, cfg.tau, cfg.lambda2, cfg.printed_sign)
        val = float(loss.value)
        if not np.isfinite(val):
            raise NumericError(f"refinement loss diverged at epoch {epoch} (loss={val})")
        history.append({"epoch": epoch, "loss": val})
        if val < best[0]:
            best = (val, {k: v.copy() for k, v in opt.params.items()}, epoch)
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
        opt.step(tape.backward(loss))
    params = best[1]
    out_w = GcnWeights(params["w0"], params["w1"], float(params["slope"][0, 0]))
    return RefineResult(embed(params, a_clean, x), out_w, history, best[2])


def truncated_forward_dense(a_hat, x, params, kind="relu") -> np.ndarray:
    h = np.asarray(a_hat @ (x @ params["w0"]))
    if kind == "relu":
        h = np.maximum(h, 0.0)
    elif kind == "prelu":
        s = float(np.asarray(params["slope"]).reshape(-1)[0])
        h = np.where(h > 0, h, s * h)
    return np.asarray(a_hat @ (h @ params["w1"]))
