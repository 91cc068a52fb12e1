import numpy as np
import pytest

from lhs.bench.synth import SynthSpec, synth_graph
from lhs.graph import Graph


def make_graph(edges, labels, n_classes=None, features=None, train=None, val=None, test=None):
    labels = np.asarray(labels)
    n = len(labels)
    feats = np.eye(n) if features is None else features
    full = np.ones(n, bool)
    none = np.zeros(n, bool)
    return Graph(n, edges, feats, labels, n_classes or int(labels.max()) + 1,
                 full if train is None else train, none if val is None else val,
                 none if test is None else test)


@pytest.fixture(scope="session")
def small_bundle():
    return synth_graph(SynthSpec(n_nodes=120, n_classes=3, feature_dim=12, target_homophily=0.3,
                                 mean_degree=6, seed=1))


@pytest.fixture(scope="session")
def small_graph(small_bundle):
    return small_bundle.graph


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
