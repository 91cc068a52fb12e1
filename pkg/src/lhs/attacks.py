"""Structural attacks (poisoning and evasion proxies) and their evaluation.

Reports pair the accuracy drop with the right-shift of the node heterophily
distribution of the attacked nodes relative to the clean training nodes.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .baseline import GcnModel, train_gcn
from .encoder import ModelBundle, joint_train
from .graph import Graph, HistogramH, h_distribution, node_heterophily_all, right_shift
from .rng import stream

KINDS = ("poisoning-random", "poisoning-greedy", "evasion-injected", "evasion-ood")
OOD_TOLERANCE = 0.02


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    rate: float = 0.0
    inject_prob: float = 0.9
    per_node_budget: int = 5
    target_shift: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; choose from {KINDS}")
        if not 0.0 <= self.rate <= 0.5:
            raise ValueError("rate must lie in [0, 0.5]")
        if not 0.0 <= self.inject_prob <= 1.0:
            raise ValueError("inject_prob must lie in [0, 1]")
        if self.target_shift < 0 or self.per_node_budget < 0:
            raise ValueError("target_shift and per_node_budget must be non-negative")

    @property
    def poisoning(self) -> bool:
        return self.kind.startswith("poisoning")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PerturbedGraph:
    graph: Graph
    original: Graph
    added: np.ndarray
    removed: np.ndarray
    spec: AttackSpec
    attacked_nodes: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def n_flips(self) -> int:
        return len(self.added) + len(self.removed)


def _pairs(edges) -> np.ndarray:
    return np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)


def _apply(graph: Graph, added, removed, spec, attacked, info=None) -> PerturbedGraph:
    es = graph.edge_set()
    es -= set(removed)
    es |= set(added)
    new = graph.with_edges(_pairs(es))
    return PerturbedGraph(new, graph, _pairs(added), _pairs(removed), spec,
                          np.asarray(sorted(attacked), dtype=np.int64), info or {})


def _touched(added, removed) -> set:
    return {u for e in list(added) + list(removed) for u in e}


def flip_budget(graph: Graph, rate: float) -> int:
    return int(round(rate * graph.n_edges))


def poison_random(graph: Graph, rate: float, seed: int = 0) -> PerturbedGraph:
    """Flip round(rate * |E|) distinct node-pair slots chosen uniformly."""
    spec = AttackSpec("poisoning-random", rate=rate, seed=seed)
    budget = flip_budget(graph, rate)
    n = graph.n_nodes
    slots = n * (n - 1) // 2
    if budget > slots:
        raise ValueError(f"flip budget {budget} exceeds the {slots} node pairs")
    rng = stream(seed, "attack", "poison-random")
    chosen: list = []
    seen: set = set()
    while len(chosen) < budget:
        u, v = rng.integers(0, n, size=2)
        if u == v:
            continue
        key = (int(min(u, v)), int(max(u, v)))
        if key not in seen:
            seen.add(key)
            chosen.append(key)
    es = graph.edge_set()
    removed = [e for e in chosen if e in es]
    added = [e for e in chosen if e not in es]
    return _apply(graph, added, removed, spec, _touched(added, removed))


def attacker_labels(graph: Graph) -> np.ndarray:
    """Train labels where known, nearest-train-centroid pseudo-labels elsewhere."""
    tr = graph.train_mask
    y = graph.labels.copy()
    classes = np.unique(graph.labels[tr])
    cent = np.stack([graph.features[tr & (graph.labels == c)].mean(axis=0) for c in classes])
    d2 = ((graph.features[:, None, :] - cent[None, :, :]) ** 2).sum(axis=2)
    y[~tr] = classes[np.argmin(d2[~tr], axis=1)]
    return y


def _sample_pairs(pool, y, n_wanted, exclude, rng, same: bool):
    """Up to ``n_wanted`` distinct pairs within ``pool`` whose labels (dis)agree, avoiding ``exclude``."""
    pool = np.asarray(pool)
    counts = np.bincount(y[pool])
    intra = int(np.sum(counts * (counts - 1) // 2))
    total = len(pool) * (len(pool) - 1) // 2
    in_pool = np.zeros(len(y), bool)
    in_pool[pool] = True
    taken = sum(1 for u, v in exclude if in_pool[u] and in_pool[v] and (y[u] == y[v]) == same)
    available = (intra if same else total - intra) - taken
    if n_wanted >= available:
        iu, ju = np.triu_indices(len(pool), k=1)
        u, v = pool[iu], pool[ju]
        keep = (y[u] == y[v]) == same
        out = [(int(min(a, b)), int(max(a, b))) for a, b in zip(u[keep], v[keep])]
        return sorted(set(out) - exclude)
    chosen: set = set()
    while len(chosen) < n_wanted:
        a, b = rng.choice(pool, size=2, replace=False)
        if (y[a] == y[b]) != same:
            continue
        key = (int(min(a, b)), int(max(a, b)))
        if key not in exclude:
            chosen.add(key)
    return sorted(chosen)


def poison_greedy(graph: Graph, rate: float, seed: int = 0, scope: str = "train") -> PerturbedGraph:
    """Label-greedy poisoning: spend the flip budget on cross-class additions, then intra-class removals.

    The attacker sees training labels only. ``scope="train"`` restricts every
    flip to pairs of training nodes and their true labels; with
    ``scope="unlabeled"`` it pseudo-labels the remaining nodes from
    training-class centroids and attacks pairs of unlabeled nodes instead. When the budget exceeds the candidate
    pairs the attack is applied partially with a warning.
    """
    if scope not in ("unlabeled", "train"):
        raise ValueError(f"unknown scope {scope!r}")
    spec = AttackSpec("poisoning-greedy", rate=rate, seed=seed)
    budget = flip_budget(graph, rate)
    rng = stream(seed, "attack", "poison-greedy", scope)
    if scope == "train":
        y = graph.labels
        pool = np.flatnonzero(graph.train_mask)
    else:
        y = attacker_labels(graph)
        pool = np.flatnonzero(~graph.train_mask)
    es = graph.edge_set()
    added = _sample_pairs(pool, y, budget, es, rng, same=False) if budget else []
    removed = []
    need = budget - len(added)
    if need > 0:
        in_pool = np.zeros(graph.n_nodes, bool)
        in_pool[pool] = True
        e = graph.edges
        intra = e[in_pool[e[:, 0]] & in_pool[e[:, 1]] & (y[e[:, 0]] == y[e[:, 1]])]
        pick = np.sort(rng.permutation(len(intra))[:need])
        removed = [tuple(map(int, r)) for r in intra[pick]]
        if len(added) + len(removed) < budget:
            warnings.warn(f"greedy poisoning: budget {budget} exceeds available candidates; "
                          f"applying {len(added) + len(removed)} flips", RuntimeWarning, stacklevel=2)
    info = {"budget": budget, "applied": len(added) + len(removed), "scope": scope}
    return _apply(graph, added, removed, spec, _touched(added, removed), info)


def _targets(graph: Graph, test_nodes):
    if test_nodes is None:
        return np.flatnonzero(graph.test_mask)
    return np.unique(np.asarray(test_nodes, dtype=np.int64))


def evade_injected(graph: Graph, test_nodes=None, budget: int = 5, p: float = 0.9,
                   seed: int = 0) -> PerturbedGraph:
    """Give each target node up to ``budget`` cross-class edges, each kept with probability ``p``.

    Partners are drawn uniformly from non-target nodes of a different class that
    are not already adjacent, so each target gains exactly its own injected edges.
    """
    spec = AttackSpec("evasion-injected", inject_prob=p, per_node_budget=budget, seed=seed)
    rng = stream(seed, "attack", "inject")
    targets = _targets(graph, test_nodes)
    is_target = np.zeros(graph.n_nodes, bool)
    is_target[targets] = True
    y = graph.labels
    nbrs = graph.neighbor_index
    added = []
    skipped = 0
    for t in targets:
        pool = np.flatnonzero((y != y[t]) & ~is_target)
        pool = np.setdiff1d(pool, nbrs[t], assume_unique=False)
        if len(pool) == 0:
            skipped += 1
            continue
        cand = rng.choice(pool, size=min(budget, len(pool)), replace=False)
        keep = rng.random(len(cand)) < p
        added.extend((int(min(t, c)), int(max(t, c))) for c in cand[keep])
    return _apply(graph, added, [], spec, targets, {"skipped_nodes": skipped})


def _mean_h(diff, deg, nodes):
    ok = deg[nodes] > 0
    return float(np.mean(diff[nodes][ok] / deg[nodes][ok])) if ok.any() else float("nan")


def evade_ood(graph: Graph, test_nodes=None, delta: float = 0.1, seed: int = 0,
              max_attempts: int | None = None) -> PerturbedGraph:
    """Degree-preserving double-edge swaps that raise the target-set mean H by ``delta``.

    A swap replaces an intra-class edge (a, b) at a target node a and another
    edge (c, d) with (a, d) and (c, b), where d has a different class from a.
    Swaps are accepted when they raise the mean without overshooting
    target + 0.02. When the target cannot be reached, the best effort is
    returned with the achieved shift recorded in ``info``.
    """
    spec = AttackSpec("evasion-ood", target_shift=delta, seed=seed)
    if delta < 0:
        raise ValueError("delta must be >= 0")
    rng = stream(seed, "attack", "ood")
    targets = _targets(graph, test_nodes)
    y = graph.labels
    adj = [set(map(int, nb)) for nb in graph.neighbor_index]
    deg = np.array([len(a) for a in adj], dtype=np.float64)
    diff = np.array([sum(y[j] != y[i] for j in adj[i]) for i in range(graph.n_nodes)], dtype=np.float64)
    is_target = np.zeros(graph.n_nodes, bool)
    is_target[targets] = True
    n_t = int(np.sum(deg[targets] > 0))
    start = _mean_h(diff, deg, targets)
    goal = start + delta
    info = {"start_mean_h": start, "goal_mean_h": goal}
    if delta == 0 or n_t == 0:
        return _apply(graph, [], [], spec, targets, {**info, "achieved_mean_h": start, "swaps": 0})
    edges = [tuple(map(int, e)) for e in graph.edges]
    edge_pos = {e: i for i, e in enumerate(edges)}
    current = start
    attempts = 0
    swaps = 0
    max_attempts = max_attempts or 200 * len(edges)
    tgt_list = [int(t) for t in targets if deg[t] > 0]

    def contrib(i, ci):
        return ci / deg[i] / n_t if is_target[i] and deg[i] > 0 else 0.0

    while current < goal - OOD_TOLERANCE / 2 and attempts < max_attempts:
        attempts += 1
        a = tgt_list[int(rng.integers(len(tgt_list)))]
        same = [b for b in adj[a] if y[b] == y[a]]
        if not same:
            continue
        b = same[int(rng.integers(len(same)))]
        c, d = edges[int(rng.integers(len(edges)))]
        if rng.random() < 0.5:
            c, d = d, c
        if len({a, b, c, d}) < 4 or y[d] == y[a] or d in adj[a] or b in adj[c]:
            continue
        # label-disagreement count changes for the four endpoints
        new = {a: diff[a] - (y[b] != y[a]) + (y[d] != y[a]),
               b: diff[b] - (y[a] != y[b]) + (y[c] != y[b]),
               c: diff[c] - (y[d] != y[c]) + (y[b] != y[c]),
               d: diff[d] - (y[c] != y[d]) + (y[a] != y[d])}
        gain = sum(contrib(i, new[i]) - contrib(i, diff[i]) for i in new)
        if gain <= 0 or current + gain > goal + OOD_TOLERANCE:
            continue
        for i, v in new.items():
            diff[i] = v
        adj[a].remove(b); adj[b].remove(a); adj[c].remove(d); adj[d].remove(c)
        adj[a].add(d); adj[d].add(a); adj[c].add(b); adj[b].add(c)
        for old, rep in (((min(a, b), max(a, b)), (min(a, d), max(a, d))),
                         ((min(c, d), max(c, d)), (min(c, b), max(c, b)))):
            i = edge_pos.pop(old)
            edges[i] = rep
            edge_pos[rep] = i
        current += gain
        swaps += 1
    orig = graph.edge_set()
    final = set(edges)
    added = final - orig
    removed = orig - final
    info.update({"achieved_mean_h": current, "swaps": swaps, "attempts": attempts,
                 "reached": bool(abs(current - goal) <= OOD_TOLERANCE)})
    if not info["reached"]:
        warnings.warn(f"OOD target mean H {goal:.3f} not reached; achieved {current:.3f}",
                      RuntimeWarning, stacklevel=2)
    return _apply(graph, list(added), list(removed), spec, targets, info)


def run_attack(graph: Graph, spec: AttackSpec, test_nodes=None) -> PerturbedGraph:
    if spec.kind == "poisoning-random":
        return poison_random(graph, spec.rate, spec.seed)
    if spec.kind == "poisoning-greedy":
        return poison_greedy(graph, spec.rate, spec.seed)
    if spec.kind == "evasion-injected":
        return evade_injected(graph, test_nodes, spec.per_node_budget, spec.inject_prob, spec.seed)
    return evade_ood(graph, test_nodes, spec.target_shift, spec.seed)


# -- evaluation ------------------------------------------------------------------

@dataclass(frozen=True)
class AttackReport:
    spec: AttackSpec
    model: str
    mode: str
    clean_accuracy: float
    attacked_accuracy: float
    h_before: HistogramH
    h_after: HistogramH
    right_shift: dict
    edges_added: int
    edges_removed: int
    structure_mean_h: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def degradation(self) -> float:
        return self.clean_accuracy - self.attacked_accuracy

    def to_dict(self) -> dict:
        def hist(h):
            return {"bin_edges": h.bin_edges.tolist(), "counts": h.counts.tolist(),
                    "sample_mean": h.sample_mean, "sample_count": h.sample_count, "excluded": h.excluded}
        return {"spec": self.spec.to_dict(), "model": self.model, "mode": self.mode,
                "proxy": self.spec.kind.startswith("poisoning"),
                "clean_accuracy": self.clean_accuracy, "attacked_accuracy": self.attacked_accuracy,
                "degradation": self.degradation, "h_before": hist(self.h_before),
                "h_after": hist(self.h_after), "right_shift": dict(self.right_shift),
                "edges_added": self.edges_added, "edges_removed": self.edges_removed,
                "structure_mean_h": self.structure_mean_h, "info": _jsonable(self.info)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _jsonable(d):
    if isinstance(d, dict):
        return {str(k): _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    if isinstance(d, np.generic):
        return d.item()
    return d


def shift_histograms(perturbed: PerturbedGraph):
    """Reference: train-node H on the graph the model is trained on.

    Target: the evaluated nodes (the evasion targets, or the test set under
    poisoning) on the graph seen at inference. Poisoning moves the reference,
    evasion moves the target.
    """
    g0 = perturbed.original
    trained_on = perturbed.graph if perturbed.spec.poisoning else g0
    before = h_distribution(trained_on, np.flatnonzero(g0.train_mask))
    if perturbed.spec.poisoning or len(perturbed.attacked_nodes) == 0:
        nodes = np.flatnonzero(g0.test_mask)
    else:
        nodes = perturbed.attacked_nodes
    after = h_distribution(perturbed.graph, nodes)
    return before, after


def frozen_structure(s, perturbed: PerturbedGraph) -> np.ndarray:
    """Trained structure with added pairs set to weight 1 and removed pairs cleared."""
    out = np.array(getattr(s, "s", s), dtype=np.float64, copy=True)
    for arr, w in ((perturbed.removed, 0.0), (perturbed.added, 1.0)):
        if len(arr):
            out[arr[:, 0], arr[:, 1]] = w
            out[arr[:, 1], arr[:, 0]] = w
    return out


def _mean_test_h(structure, graph: Graph) -> float:
    h = node_heterophily_all(structure, graph.labels)[graph.test_mask]
    h = h[~np.isnan(h)]
    return float(h.mean()) if len(h) else float("nan")


def evaluate_under_attack(model, perturbed: PerturbedGraph, pipeline_mode: str = "refresh-structure",
                          clean_accuracy: float | None = None) -> AttackReport:
    """Accuracy before/after the attack plus the right-shift of the attacked nodes.

    ``model`` is a ModelBundle (the structure-learning pipeline) or a GcnModel
    (the observed structure is used as is). Poisoning retrains the model on the
    poisoned graph with its own configuration; evasion reuses the trained weights.
    """
    from .pipeline import infer_structure, lhs_pipeline, pipeline_config_of

    if pipeline_mode not in ("refresh-structure", "frozen-structure"):
        raise ValueError(f"unknown pipeline_mode {pipeline_mode!r}")
    g0, g1 = perturbed.original, perturbed.graph
    if g0.features.shape != g1.features.shape:
        raise ValueError("model and perturbed graph are dimensionally incompatible")
    spec = perturbed.spec
    untouched = perturbed.n_flips == 0
    info = dict(perturbed.info)
    if isinstance(model, GcnModel):
        kind = "gcn"
        clean = model.accuracy(g0) if clean_accuracy is None else clean_accuracy
        if untouched:
            attacked, s_used = clean, g0.adjacency()
        elif spec.poisoning:
            retrained = train_gcn(g1, model.config)
            attacked, s_used = retrained.accuracy(g1), g1.adjacency()
        else:
            attacked, s_used = model.accuracy(g1), g1.adjacency()
    elif isinstance(model, ModelBundle):
        kind = "lhs"
        clean = model.accuracy(g0) if clean_accuracy is None else clean_accuracy
        if untouched:
            attacked, s_used = clean, model.structure.s
        elif pipeline_mode == "refresh-structure":
            if spec.poisoning:
                retrained = lhs_pipeline(g1, pipeline_config_of(model))
                attacked, s_used = retrained.accuracy(g1), retrained.structure.s
                info["rounds"] = list(retrained.rounds)
            else:
                s_new = infer_structure(model, g1)
                attacked, s_used = model.accuracy(g1, structure=s_new), s_new.s
        else:
            s_frozen = frozen_structure(model.structure, perturbed)
            if spec.poisoning:
                retrained = joint_train(g1, s_frozen, model.train_config)
                attacked = retrained.accuracy(g1, structure=s_frozen)
            else:
                attacked = model.accuracy(g1, structure=s_frozen)
            s_used = s_frozen
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    before, after = shift_histograms(perturbed)
    shift = right_shift(before, after)
    return AttackReport(spec, kind, pipeline_mode, float(clean), float(attacked), before, after,
                        dict(shift), len(perturbed.added), len(perturbed.removed),
                        _mean_test_h(s_used, g1), info)


def spearman(x, y) -> float:
    """Spearman rank correlation with average ranks for ties."""
    def ranks(a):
        a = np.asarray(a, dtype=np.float64)
        order = np.argsort(a, kind="stable")
        r = np.empty(len(a))
        r[order] = np.arange(1, len(a) + 1)
        for v in np.unique(a):
            m = a == v
            r[m] = r[m].mean()
        return r
    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    den = np.sqrt(np.sum(rx * rx) * np.sum(ry * ry))
    return float(np.sum(rx * ry) / den) if den > 0 else 0.0
