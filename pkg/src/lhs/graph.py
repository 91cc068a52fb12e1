"""Labeled graphs, node-level heterophily and H-distribution analytics."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    """Raised when a graph or a structure statistic is ill-defined."""


def _canonical_edges(edges, n_nodes: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if (e < 0).any() or (e >= n_nodes).any():
        raise GraphError("edge endpoint out of range")
    if (e[:, 0] == e[:, 1]).any():
        raise GraphError("self-loops are not allowed")
    e = np.sort(e, axis=1)
    uniq = np.unique(e, axis=0)
    if len(uniq) != len(e):
        raise GraphError("duplicate edges")
    return uniq


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with node features, labels and split masks.

    ``edges`` is stored canonically (u < v, lexicographically sorted), so two
    graphs with the same edge set compare equal edge-for-edge.
    """

    n_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    neighbor_index: tuple = field(init=False, repr=False)

    def __post_init__(self):
        n = int(self.n_nodes)
        object.__setattr__(self, "n_nodes", n)
        object.__setattr__(self, "edges", _canonical_edges(self.edges, n))
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise GraphError(f"features have {feats.shape[0] if feats.ndim else 0} rows, expected {n}")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (n,):
            raise GraphError(f"labels cover {labels.size} nodes, expected {n}")
        if n and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise GraphError("label outside [0, n_classes)")
        masks = []
        for name in ("train_mask", "val_mask", "test_mask"):
            m = np.asarray(getattr(self, name), dtype=bool)
            if m.shape != (n,):
                raise GraphError(f"{name} has wrong length")
            masks.append(m)
            object.__setattr__(self, name, m)
        if (masks[0] & masks[1]).any() or (masks[0] & masks[2]).any() or (masks[1] & masks[2]).any():
            raise GraphError("train/val/test masks overlap")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_classes", int(self.n_classes))

        nbrs = [[] for _ in range(n)]
        for u, v in self.edges:
            nbrs[u].append(int(v))
            nbrs[v].append(int(u))
        object.__setattr__(self, "neighbor_index", tuple(tuple(sorted(x)) for x in nbrs))
        for arr in (self.edges, self.features, self.labels, *masks):
            arr.setflags(write=False)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.array([len(x) for x in self.neighbor_index], dtype=np.int64)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        if self.n_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def edge_set(self) -> set:
        return {(int(u), int(v)) for u, v in self.edges}

    def with_edges(self, edges) -> Graph:
        return Graph(self.n_nodes, edges, self.features, self.labels, self.n_classes,
                     self.train_mask, self.val_mask, self.test_mask)

    def with_masks(self, train, val, test) -> Graph:
        return Graph(self.n_nodes, self.edges, self.features, self.labels, self.n_classes,
                     train, val, test)

    def same_as(self, other: Graph) -> bool:
        return (self.n_nodes == other.n_nodes and self.n_classes == other.n_classes
                and np.array_equal(self.edges, other.edges)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.train_mask, other.train_mask)
                and np.array_equal(self.val_mask, other.val_mask)
                and np.array_equal(self.test_mask, other.test_mask))


@dataclass(frozen=True)
class HistogramH:
    bin_edges: np.ndarray
    counts: np.ndarray
    sample_mean: float
    sample_count: int
    excluded: int = 0

    def density(self) -> np.ndarray:
        return self.counts / max(self.sample_count, 1)


@dataclass(frozen=True)
class EgoGraph:
    center: int
    hops: int
    nodes_per_hop: tuple
    local_edges: tuple


def _as_weights(structure) -> np.ndarray:
    if isinstance(structure, Graph):
        return structure.adjacency()
    w = np.asarray(getattr(structure, "s", structure), dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise GraphError("structure must be a square matrix")
    return w


def node_heterophily(graph: Graph, node: int) -> float:
    """Fraction of ``node``'s neighbours whose label differs from its own."""
    nbrs = graph.neighbor_index[node]
    if not nbrs:
        raise GraphError(f"no edges at node {node}")
    y = graph.labels
    return float(np.count_nonzero(y[list(nbrs)] != y[node])) / len(nbrs)


def node_heterophily_all(structure, labels) -> np.ndarray:
    """Per-node heterophily for every node, NaN where the node is isolated.

    Works on a Graph or on a weighted symmetric matrix, in which case the
    fraction is weighted by edge weight. The diagonal is ignored.
    """
    w = _as_weights(structure).copy()
    np.fill_diagonal(w, 0.0)
    y = np.asarray(labels)
    cross = (y[:, None] != y[None, :])
    total = w.sum(axis=1)
    het = (w * cross).sum(axis=1)
    out = np.full(len(y), np.nan)
    ok = total > 0
    out[ok] = het[ok] / total[ok]
    return out


def histogram(values, bins: int = 20, excluded: int = 0) -> HistogramH:
    """Right-closed uniform histogram over [0, 1]; bin 0 also holds exact zeros."""
    if bins < 1:
        raise GraphError("bins must be >= 1")
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise GraphError("empty distribution")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.ceil(vals * bins - 1e-12).astype(np.int64) - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return HistogramH(edges, counts, float(vals.mean()), int(vals.size), excluded)


def h_distribution(graph, nodes=None, bins: int = 20, labels=None) -> HistogramH:
    """Histogram of node heterophily over ``nodes``; isolated nodes are excluded.

    ``graph`` may also be a weighted structure, in which case ``labels`` must
    be given. ``nodes`` is an index array, a boolean mask, or None for all.
    """
    if labels is None:
        labels = graph.labels
    vals = node_heterophily_all(graph, labels)
    if nodes is not None:
        nodes = np.asarray(nodes)
        vals = vals[nodes] if nodes.dtype != bool else vals[nodes]
    keep = ~np.isnan(vals)
    return histogram(vals[keep], bins=bins, excluded=int((~keep).sum()))


def _bfs_layers(graph: Graph, center: int, k: int) -> list:
    seen = {center}
    frontier = [center]
    layers = []
    for _ in range(k):
        nxt = set()
        for u in frontier:
            for v in graph.neighbor_index[u]:
                if v not in seen:
                    nxt.add(v)
        seen |= nxt
        layers.append(frozenset(nxt))
        frontier = sorted(nxt)
    return layers


def ego_graph(graph: Graph, center: int, k: int) -> EgoGraph:
    if k < 1:
        raise GraphError("k must be >= 1")
    layers = _bfs_layers(graph, center, k)
    local = []
    for layer in layers:
        es = {(u, v) for u in layer for v in graph.neighbor_index[u] if v in layer and u < v}
        local.append(frozenset(es))
    return EgoGraph(center, k, tuple(layers), tuple(local))


def hop_distances(graph: Graph, center: int) -> np.ndarray:
    dist = np.full(graph.n_nodes, -1, dtype=np.int64)
    dist[center] = 0
    q = deque([center])
    while q:
        u = q.popleft()
        for v in graph.neighbor_index[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def layer_heterophily(graph: Graph, k: int) -> np.ndarray:
    """Per node: fraction of its exactly-k-hop nodes with a different label (NaN if none)."""
    if k < 1:
        raise GraphError("k must be >= 1")
    y = graph.labels
    out = np.full(graph.n_nodes, np.nan)
    for v in range(graph.n_nodes):
        if k == 1:
            layer = graph.neighbor_index[v]
        else:
            layer = _bfs_layers(graph, v, k)[-1]
        if layer:
            idx = np.fromiter(layer, dtype=np.int64)
            out[v] = np.count_nonzero(y[idx] != y[v]) / len(idx)
    return out


def layer_h_distribution(graph: Graph, k: int, bins: int = 20, nodes=None) -> HistogramH:
    vals = layer_heterophily(graph, k)
    if nodes is not None:
        vals = vals[np.asarray(nodes)]
    keep = ~np.isnan(vals)
    if not keep.any():
        raise GraphError(f"empty distribution: no node has a non-empty hop-{k} set")
    return histogram(vals[keep], bins=bins, excluded=int((~keep).sum()))


def product_h_distribution(graph: Graph, k: int, bins: int = 20) -> np.ndarray:
    """Joint H density over hops 1..k under per-layer independence.

    Returns an array with ``k`` axes of length ``bins`` each; it is the outer
    product of the per-layer marginal densities.
    """
    joint = np.ones(())
    for hop in range(1, k + 1):
        joint = np.multiply.outer(joint, layer_h_distribution(graph, hop, bins).density())
    return joint


def right_shift(reference: HistogramH, target: HistogramH) -> dict:
    """Mean shift and signed 1-Wasserstein distance from reference to target."""
    if reference.bin_edges.shape != target.bin_edges.shape or not np.allclose(
            reference.bin_edges, target.bin_edges):
        raise GraphError("incompatible histograms")
    widths = np.diff(reference.bin_edges)
    cdf_gap = np.cumsum(reference.density()) - np.cumsum(target.density())
    w1 = float(np.sum(np.abs(cdf_gap[:-1]) * widths[:-1])) if len(widths) > 1 else 0.0
    mean_shift = target.sample_mean - reference.sample_mean
    return {"mean_shift": float(mean_shift), "w1": float(np.copysign(w1, mean_shift)) if w1 else 0.0}


def edge_homophily_ratio(structure, labels=None) -> float:
    """Weighted fraction of (upper-triangle) edge mass joining same-label nodes."""
    if labels is None:
        labels = structure.labels
    y = np.asarray(labels)
    w = np.triu(_as_weights(structure), k=1)
    total = w.sum()
    if total <= 0:
        raise GraphError("no edges")
    same = (y[:, None] == y[None, :])
    return float((w * same).sum() / total)
