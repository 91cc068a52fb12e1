"""Masked-feature graph autoencoder with a softmax head, trained jointly.

The encoder is a two-layer GCN over a fixed structure. During training a
random subset of node rows is replaced by a learned feature token, the
encoder output for those rows is replaced again by a learned latent token,
and a one-layer GCN decoder reconstructs the features. Classification reads
the encoder output of the unmasked features.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .graph import Graph
from .inducer import LatentStructure, config_hash
from .numkit import Adam, NumericError, Tape, ops
from .refiner import propagate, propagation_matrix
from .rng import stream


@dataclass(frozen=True)
class MaskPlan:
    masked_nodes: np.ndarray
    mask_rate: float
    mask_token: np.ndarray
    seed: int = 0

    @property
    def size(self) -> int:
        return len(self.masked_nodes)

    def indicator(self, n: int) -> np.ndarray:
        col = np.zeros((n, 1))
        col[self.masked_nodes] = 1.0
        return col


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 1.0
    gamma: float = 2.0
    lr: float = 0.001
    epochs: int = 1000
    patience: int = 40
    hidden: int = 64
    mask_rate: float = 0.5
    mask_mode: str = "learned"
    activation: str = "relu"
    weight_decay: float = 0.0
    rounds: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be >= 1")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError("mask_rate must lie in (0, 1)")
        if self.beta < 0 or self.lr <= 0 or self.hidden < 1:
            raise ValueError("beta >= 0, lr > 0 and hidden >= 1 are required")
        if self.epochs < 0 or self.patience < 1:
            raise ValueError("epochs >= 0 and patience >= 1 are required")
        if self.mask_mode not in ("learned", "zero"):
            raise ValueError(f"unknown mask_mode {self.mask_mode!r}")
        if self.activation not in ("relu", "prelu", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


WEIGHT_NAMES = ("enc0", "enc1", "dec", "feat_token", "latent_token", "head_w", "head_b", "slope")


@dataclass(frozen=True)
class EncoderWeights:
    enc0: np.ndarray
    enc1: np.ndarray
    dec: np.ndarray
    feat_token: np.ndarray
    latent_token: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    slope: np.ndarray

    @classmethod
    def init(cls, n_features: int, hidden: int, n_classes: int, rng) -> EncoderWeights:
        def glorot(a, b):
            lim = np.sqrt(6.0 / (a + b))
            return rng.uniform(-lim, lim, size=(a, b))
        return cls(glorot(n_features, hidden), glorot(hidden, hidden), glorot(hidden, n_features),
                   np.zeros((1, n_features)), np.zeros((1, hidden)),
                   glorot(hidden, n_classes), np.zeros((1, n_classes)), np.array([[0.25]]))

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in WEIGHT_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> EncoderWeights:
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in WEIGHT_NAMES})


class TrainingDiverged(NumericError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


# -- masking -------------------------------------------------------------------

def mask_features(x, theta: float, seed: int = 0, token=None, rng=None):
    """Replace round(theta * N) uniformly chosen rows of ``x`` by ``token``."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    x = np.asarray(x, dtype=np.float64)
    n, f = x.shape
    token = np.zeros(f) if token is None else np.asarray(token, dtype=np.float64).reshape(f)
    rng = rng if rng is not None else stream(seed, "mask")
    k = int(round(theta * n))
    nodes = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    out = x.copy()
    out[nodes] = token
    return out, MaskPlan(nodes.astype(np.int64), theta, token, seed)


def _mask_rows(node, indicator, token):
    """Tape op: rows with indicator 1 become ``token`` (1 x F), others pass through."""
    return ops.add(ops.mul(node, 1.0 - indicator), ops.matmul(indicator, token))


# -- forward pieces --------------------------------------------------------------

def _act(h, kind, slope):
    if kind == "relu":
        return ops.relu(h)
    if kind == "prelu":
        return ops.prelu(h, slope)
    return ops.identity(h)


def encode_tape(a_hat, x, p, kind="relu"):
    h = _act(propagate(a_hat, ops.matmul(x, p["enc0"])), kind, p["slope"])
    return propagate(a_hat, ops.matmul(h, p["enc1"]))


def decode_tape(a_hat, h, p):
    return propagate(a_hat, ops.matmul(h, p["dec"]))


def _as_propagation(structure):
    if hasattr(structure, "shape") and not isinstance(structure, np.ndarray):
        return structure  # already a (sparse) propagation matrix
    if isinstance(structure, Graph):
        s = structure.adjacency()
    else:
        s = np.asarray(getattr(structure, "s", structure), dtype=np.float64)
    return propagation_matrix(s)


def _check_dims(x, w: EncoderWeights):
    if x.shape[1] != w.enc0.shape[0] or w.dec.shape[1] != x.shape[1]:
        raise ValueError(f"feature dim {x.shape[1]} does not match encoder {w.enc0.shape} / decoder {w.dec.shape}")


def reconstruct(x_masked, structure, weights: EncoderWeights, masked_nodes=(), activation: str = "relu"):
    """Encoder GCN, latent re-mask of ``masked_nodes``, decoder GCN. Returns X_hat (N x F)."""
    x = np.asarray(x_masked, dtype=np.float64)
    _check_dims(x, weights)
    a_hat = _as_propagation(structure)
    if a_hat.shape != (len(x), len(x)):
        raise ValueError("structure does not match the node count")
    tape = Tape()
    p = {k: tape.const(v) for k, v in weights.as_dict().items()}
    ind = np.zeros((len(x), 1))
    ind[np.asarray(masked_nodes, dtype=np.int64)] = 1.0
    h = _mask_rows(encode_tape(a_hat, tape.const(x), p, activation), ind, p["latent_token"])
    return decode_tape(a_hat, h, p).value


def embed(x, structure, weights: EncoderWeights, activation: str = "relu") -> np.ndarray:
    tape = Tape()
    p = {k: tape.const(v) for k, v in weights.as_dict().items()}
    return encode_tape(_as_propagation(structure), tape.const(np.asarray(x, dtype=np.float64)), p, activation).value


# -- losses ----------------------------------------------------------------------

def _valid_rows(x, x_hat, masked, eps=1e-12, warn=True):
    masked = np.asarray(masked, dtype=np.int64)
    ok = (np.linalg.norm(x[masked], axis=1) > eps) & (np.linalg.norm(x_hat[masked], axis=1) > eps)
    if warn and not ok.all():
        warnings.warn(f"{int((~ok).sum())} zero-norm rows excluded from the cosine error",
                      RuntimeWarning, stacklevel=3)
    return masked[ok]


def scaled_cosine_error(x, x_hat, masked, gamma: float) -> float:
    """Mean over the masked rows of (1 - cos(x_i, x_hat_i)) ** gamma."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if len(masked) == 0:
        raise ValueError("masked node set is empty")
    rows = _valid_rows(x, x_hat, masked)
    if len(rows) == 0:
        return 0.0
    a, b = x[rows], x_hat[rows]
    cos = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return float(np.mean(np.clip(1.0 - cos, 0.0, None) ** gamma))


def scaled_cosine_error_tape(x, x_hat, masked, gamma: float, warn: bool = True):
    """Tape form; ``x`` is a constant array, ``x_hat`` a node."""
    rows = _valid_rows(np.asarray(x), x_hat.value, masked, warn=warn)
    if len(rows) == 0:
        return ops.scale(ops.sum(x_hat), 0.0)
    cos = ops.row_cosine(ops.take_rows(x_hat.tape.const(x), rows), ops.take_rows(x_hat, rows))
    err = ops.power(ops.relu(ops.sub(1.0, cos)), gamma)
    return ops.scale(ops.sum(err), 1.0 / len(rows))


def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def classify(h, head) -> np.ndarray:
    """Row-stochastic class probabilities softmax(h W + b); ``head`` is (W, b) or EncoderWeights."""
    if isinstance(head, EncoderWeights):
        w, b = head.head_w, head.head_b
    else:
        w, b = head
    h = np.asarray(h, dtype=np.float64)
    if h.shape[1] != np.shape(w)[0]:
        raise ValueError(f"embedding dim {h.shape[1]} does not match head {np.shape(w)}")
    return _softmax(h @ w + np.reshape(b, (1, -1)))


def joint_loss(tape, a_hat, x, labels, train_idx, params, plan_indicator, masked, cfg: TrainConfig,
               warn: bool = True):
    """Returns (total, ce, sce, logits) nodes for one full-graph step."""
    x_in = _mask_rows(tape.const(x), plan_indicator, params["feat_token"])
    h_masked = encode_tape(a_hat, x_in, params, cfg.activation)
    x_hat = decode_tape(a_hat, _mask_rows(h_masked, plan_indicator, params["latent_token"]), params)
    sce = scaled_cosine_error_tape(x, x_hat, masked, cfg.gamma, warn)
    h = encode_tape(a_hat, tape.const(x), params, cfg.activation)
    logits = ops.add(ops.matmul(h, params["head_w"]), params["head_b"])
    ce = ops.cross_entropy(logits, labels, train_idx)
    total = ce if cfg.beta == 0 else ops.add(ce, ops.scale(sce, cfg.beta))
    return total, ce, sce, logits


# -- training --------------------------------------------------------------------

@dataclass(frozen=True)
class ModelBundle:
    weights: EncoderWeights
    structure: LatentStructure
    train_config: TrainConfig
    history: tuple
    best_epoch: int
    best_val_accuracy: float
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    rounds: tuple = ()
    refiner: dict = field(default_factory=dict)
    zeta: float = float("nan")

    def predict_proba(self, graph: Graph, structure=None) -> np.ndarray:
        s = self.structure if structure is None else structure
        return classify(embed(graph.features, s, self.weights, self.train_config.activation), self.weights)

    def predict(self, graph: Graph, structure=None) -> np.ndarray:
        return np.argmax(self.predict_proba(graph, structure), axis=1)

    def accuracy(self, graph: Graph, mask=None, structure=None) -> float:
        mask = graph.test_mask if mask is None else mask
        if not mask.any():
            return float("nan")
        return float(np.mean(self.predict(graph, structure)[mask] == graph.labels[mask]))


def _acc(logits, labels, mask):
    if not mask.any():
        return float("nan")
    return float(np.mean(np.argmax(logits[mask], axis=1) == labels[mask]))


def joint_train(graph: Graph, structure, cfg: TrainConfig = TrainConfig()) -> ModelBundle:
    """Minimise mean train cross-entropy + beta * masked reconstruction error.

    Early stopping watches validation accuracy; the returned weights are the
    ones that achieved the best value (first occurrence on ties).
    """
    if not graph.train_mask.any():
        raise ValueError("train mask is empty")
    x = graph.features
    n = graph.n_nodes
    a_hat = _as_propagation(structure)
    ls = structure if isinstance(structure, LatentStructure) else LatentStructure(
        np.asarray(getattr(structure, "s", structure), dtype=np.float64))
    w = EncoderWeights.init(x.shape[1], cfg.hidden, graph.n_classes, stream(cfg.seed, "encoder", "init"))
    params = w.as_dict()
    frozen = {"slope"} if cfg.activation != "prelu" else set()
    if cfg.mask_mode == "zero":
        frozen |= {"feat_token", "latent_token"}
    train_idx = np.flatnonzero(graph.train_mask)
    val_mask = graph.val_mask if graph.val_mask.any() else graph.train_mask
    opt = Adam({k: v for k, v in params.items() if k not in frozen}, lr=cfg.lr,
               weight_decay=cfg.weight_decay, no_decay=("feat_token", "latent_token", "head_b", "slope"))
    history = []
    best = (-np.inf, dict(params), 0)
    wait = 0
    for epoch in range(1, cfg.epochs + 1):
        rng = stream(cfg.seed, "encoder", "mask", epoch)
        k = int(round(cfg.mask_rate * n))
        masked = np.sort(rng.choice(n, size=k, replace=False))
        if len(masked) == 0:
            masked = np.array([int(rng.integers(n))])
        ind = np.zeros((n, 1))
        ind[masked] = 1.0
        current = {**params, **opt.params}
        tape = Tape()
        p = {name: (tape.const(v) if name in frozen else tape.param(name, v)) for name, v in current.items()}
        # zero-norm reconstructions are common at initialisation; warn once per run
        total, ce, sce, logits = joint_loss(tape, a_hat, x, graph.labels, train_idx, p, ind, masked, cfg,
                                            warn=epoch == 1)
        val = float(total.value)
        row = {"epoch": epoch, "loss": val, "ce": float(ce.value), "sce": float(sce.value),
               "train_acc": _acc(logits.value, graph.labels, graph.train_mask),
               "val_acc": _acc(logits.value, graph.labels, val_mask)}
        history.append(row)
        if not np.isfinite(val):
            raise TrainingDiverged(f"joint loss diverged at epoch {epoch} (loss={val})", tuple(history))
        if row["val_acc"] > best[0]:
            best = (row["val_acc"], {kk: vv.copy() for kk, vv in current.items()}, epoch)
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
        opt.step({kk: g for kk, g in tape.backward(total).items() if kk not in frozen})
    if cfg.epochs == 0:
        best = (float("nan"), params, 0)
    return ModelBundle(EncoderWeights.from_dict(best[1]), ls, cfg, tuple(history), best[2], float(best[0]),
                       {"train": cfg.to_dict()}, config_hash({"train": cfg.to_dict()}))
