"""Plain two-layer GCN on the observed adjacency, used as the reference model."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .graph import Graph
from .numkit import Adam, NumericError, Tape, ops
from .refiner import propagate, propagation_matrix
from .rng import stream


@dataclass(frozen=True)
class GcnConfig:
    hidden: int = 64
    lr: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 200
    patience: int = 40
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GcnModel:
    w0: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    best_epoch: int
    best_val_accuracy: float
    history: tuple
    config: GcnConfig = GcnConfig()

    def logits(self, graph: Graph, structure=None) -> np.ndarray:
        a_hat = propagation_matrix(graph.adjacency() if structure is None else
                                   np.asarray(getattr(structure, "s", structure)))
        h = np.maximum(np.asarray(a_hat @ (graph.features @ self.w0)), 0.0)
        return np.asarray(a_hat @ (h @ self.w1)) + self.b1

    def predict(self, graph: Graph, structure=None) -> np.ndarray:
        return np.argmax(self.logits(graph, structure), axis=1)

    def accuracy(self, graph: Graph, mask=None, structure=None) -> float:
        mask = graph.test_mask if mask is None else mask
        return float(np.mean(self.predict(graph, structure)[mask] == graph.labels[mask]))


def train_gcn(graph: Graph, cfg: GcnConfig = GcnConfig()) -> GcnModel:
    """Full-graph training with early stopping on validation accuracy."""
    if not graph.train_mask.any():
        raise ValueError("train mask is empty")
    rng = stream(cfg.seed, "gcn", "init")
    f, d = graph.features.shape[1], graph.n_classes

    def glorot(a, b):
        lim = np.sqrt(6.0 / (a + b))
        return rng.uniform(-lim, lim, size=(a, b))

    params = {"w0": glorot(f, cfg.hidden), "w1": glorot(cfg.hidden, d), "b1": np.zeros((1, d))}
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay, no_decay=("b1",))
    a_hat = propagation_matrix(graph.adjacency())
    x = graph.features
    train_idx = np.flatnonzero(graph.train_mask)
    val = graph.val_mask if graph.val_mask.any() else graph.train_mask
    best = (-np.inf, dict(params), 0)
    wait = 0
    history = []
    for epoch in range(1, cfg.epochs + 1):
        tape = Tape()
        p = {k: tape.param(k, v) for k, v in opt.params.items()}
        h = ops.relu(propagate(a_hat, ops.matmul(tape.const(x), p["w0"])))
        logits = ops.add(propagate(a_hat, ops.matmul(h, p["w1"])), p["b1"])
        loss = ops.cross_entropy(logits, graph.labels, train_idx)
        lv = float(loss.value)
        if not np.isfinite(lv):
            raise NumericError(f"GCN loss diverged at epoch {epoch}")
        acc = float(np.mean(np.argmax(logits.value[val], axis=1) == graph.labels[val]))
        history.append({"epoch": epoch, "loss": lv, "val_acc": acc})
        if acc > best[0]:
            best = (acc, {k: v.copy() for k, v in opt.params.items()}, epoch)
            wait = 0
        else:
            wait += 1
            if wait >= cfg.patience:
                break
        opt.step(tape.backward(loss))
    b = best[1]
    return GcnModel(b["w0"], b["w1"], b["b1"], best[2], float(best[0]), tuple(history), cfg)
