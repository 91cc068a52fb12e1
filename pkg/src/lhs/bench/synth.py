"""Planted-partition graphs with an exact edge homophily and class-Gaussian features."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..graph import Graph
from ..rng import stream


@dataclass(frozen=True)
class SynthSpec:
    n_nodes: int = 800
    n_classes: int = 4
    feature_dim: int = 32
    target_homophily: float = 0.25
    mean_degree: float = 10.0
    separation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 2 or self.n_classes < 1 or self.feature_dim < 1:
            raise ValueError("n_nodes >= 2, n_classes >= 1 and feature_dim >= 1 are required")
        if not 0.0 <= self.target_homophily <= 1.0:
            raise ValueError("target_homophily must lie in [0, 1]")
        if self.mean_degree < 0 or self.separation < 0:
            raise ValueError("mean_degree and separation must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def balanced_labels(n: int, d: int, rng) -> np.ndarray:
    return rng.permutation(np.arange(n) % d)


def stratified_split(labels, rng, fractions=(0.6, 0.2, 0.2)):
    """Per-class shuffled 60/20/20 split into train/val/test boolean masks."""
    labels = np.asarray(labels)
    n = len(labels)
    masks = [np.zeros(n, bool) for _ in range(3)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        masks[0][idx[:n_tr]] = True
        masks[1][idx[n_tr:n_tr + n_va]] = True
        masks[2][idx[n_tr + n_va:]] = True
    return tuple(masks)


def _intra_pairs_available(labels) -> int:
    counts = np.bincount(labels)
    return int(np.sum(counts * (counts - 1) // 2))


def planted_edges(labels, n_edges: int, homophily: float, rng) -> np.ndarray:
    """Uniformly sample ``n_edges`` distinct pairs, round(homophily * n_edges) of them intra-class."""
    labels = np.asarray(labels)
    n = len(labels)
    n_intra = int(round(homophily * n_edges))
    n_cross = n_edges - n_intra
    intra_cap = _intra_pairs_available(labels)
    cross_cap = n * (n - 1) // 2 - intra_cap
    if n_intra > intra_cap or n_cross > cross_cap:
        raise ValueError(
            f"infeasible: need {n_intra} intra / {n_cross} cross edges, "
            f"only {intra_cap} / {cross_cap} pairs exist")
    members = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    sizes = np.array([len(m) for m in members])
    class_w = sizes * (sizes - 1) / 2.0
    chosen: set = set()
    out = []

    intra = set()
    while len(intra) < n_intra:
        batch = 2 * (n_intra - len(intra)) + 16
        cs = rng.choice(len(members), size=batch, p=class_w / class_w.sum())
        for c in cs:
            a, b = rng.choice(sizes[c], size=2, replace=False)
            u, v = sorted((int(members[c][a]), int(members[c][b])))
            if (u, v) not in intra:
                intra.add((u, v))
                out.append((u, v))
                if len(intra) == n_intra:
                    break
    chosen |= intra
    cross = 0
    while cross < n_cross:
        batch = 2 * (n_cross - cross) + 16
        us = rng.integers(0, n, size=batch)
        vs = rng.integers(0, n, size=batch)
        for u, v in zip(us, vs):
            if labels[u] == labels[v]:
                continue
            pair = (int(min(u, v)), int(max(u, v)))
            if pair in chosen:
                continue
            chosen.add(pair)
            out.append(pair)
            cross += 1
            if cross == n_cross:
                break
    return np.array(sorted(out), dtype=np.int64).reshape(-1, 2)


def class_gaussian_features(labels, dim: int, separation: float, rng) -> np.ndarray:
    d = int(np.max(labels)) + 1
    means = rng.standard_normal((d, dim))
    return separation * means[labels] + rng.standard_normal((len(labels), dim))


def synth_graph(spec: SynthSpec):
    """Generate a DatasetBundle for ``spec``; every draw comes from ``spec.seed``."""
    from .data import DatasetBundle

    labels = balanced_labels(spec.n_nodes, spec.n_classes, stream(spec.seed, "synth", "labels"))
    n_edges = int(round(spec.n_nodes * spec.mean_degree / 2.0))
    edges = planted_edges(labels, n_edges, spec.target_homophily,
                          stream(spec.seed, "synth", "edges"))
    feats = class_gaussian_features(labels, spec.feature_dim, spec.separation,
                                    stream(spec.seed, "synth", "features"))
    tr, va, te = stratified_split(labels, stream(spec.seed, "synth", "split"))
    g = Graph(spec.n_nodes, edges, feats, labels, spec.n_classes, tr, va, te)
    return DatasetBundle(g, f"synth-h{spec.target_homophily:g}-s{spec.seed}",
                         {"synth_spec": spec.to_dict()})


def restructure(graph: Graph, homophily: float, seed: int, n_edges: int | None = None) -> Graph:
    """Same nodes, features, labels and splits; a fresh planted edge set."""
    m = graph.n_edges if n_edges is None else n_edges
    edges = planted_edges(graph.labels, m, homophily, stream(seed, "restructure", homophily))
    return graph.with_edges(edges)
