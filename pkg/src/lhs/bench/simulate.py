"""Structure simulation: swap in planted structures of chosen homophily and retrain a GCN."""
from __future__ import annotations

from dataclasses import replace

from ..baseline import GcnConfig, train_gcn
from ..graph import edge_homophily_ratio
from .synth import restructure


def structure_simulation(dataset, h_grid, seed: int = 0, gcn: GcnConfig = GcnConfig()) -> list[dict]:
    """For each h in ``h_grid``: same nodes and edge count, planted homophily h, vanilla GCN test accuracy."""
    graph = getattr(dataset, "graph", dataset)
    rows = []
    for h in h_grid:
        if not 0.0 <= h <= 1.0:
            raise ValueError(f"homophily {h} outside [0, 1]")
        g = restructure(graph, h, seed)
        model = train_gcn(g, replace(gcn, seed=seed))
        rows.append({"h": float(h), "realized_h": edge_homophily_ratio(g), "seed": seed,
                     "accuracy": model.accuracy(g)})
    return rows
