import json
import warnings
from dataclasses import replace

import numpy as np
import pytest

from lhs.attacks import (
    AttackSpec,
    attacker_labels,
    evade_injected,
    evade_ood,
    evaluate_under_attack,
    frozen_structure,
    poison_greedy,
    poison_random,
    run_attack,
    spearman,
)
from lhs.baseline import GcnConfig, train_gcn
from lhs.bench.synth import SynthSpec, synth_graph
from lhs.graph import edge_homophily_ratio, h_distribution
from lhs.pipeline import lhs_pipeline, preset

from conftest import make_graph

pytestmark = pytest.mark.filterwarnings("ignore:.*zero-norm rows:RuntimeWarning")


@pytest.fixture(scope="module")
def sbm():
    return synth_graph(SynthSpec(n_nodes=200, target_homophily=0.25, mean_degree=6, seed=2)).graph


def mean_test_h(graph):
    return h_distribution(graph, np.flatnonzero(graph.test_mask)).sample_mean


def assert_simple(g):
    e = g.edges
    assert (e[:, 0] < e[:, 1]).all()
    assert len(np.unique(e, axis=0)) == len(e)


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(kind="nope"), dict(kind="poisoning-random", rate=0.6),
                                    dict(kind="evasion-injected", inject_prob=1.5),
                                    dict(kind="evasion-ood", target_shift=-0.1)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            AttackSpec(**kw)

    def test_poisoning_flag(self):
        assert AttackSpec("poisoning-greedy").poisoning and not AttackSpec("evasion-ood").poisoning


class TestPoisonRandom:
    def test_rate_zero(self, sbm):
        assert poison_random(sbm, 0.0).graph.same_as(sbm)

    def test_exact_flip_count(self):
        g = synth_graph(SynthSpec(n_nodes=80, mean_degree=5, seed=0)).graph
        assert g.n_edges == 200
        pg = poison_random(g, 0.25, seed=3)
        assert pg.n_flips == 50
        assert len(g.edge_set() ^ pg.graph.edge_set()) == 50

    def test_reproducible(self, sbm):
        a, b = poison_random(sbm, 0.1, seed=5), poison_random(sbm, 0.1, seed=5)
        assert a.graph.same_as(b.graph)
        assert not a.graph.same_as(poison_random(sbm, 0.1, seed=6).graph)

    def test_graph_invariants(self, sbm):
        assert_simple(poison_random(sbm, 0.5, seed=1).graph)


class TestPoisonGreedy:
    def test_rate_zero(self, sbm):
        assert poison_greedy(sbm, 0.0).graph.same_as(sbm)

    def test_more_damaging_than_random(self, sbm):
        greedy = np.mean([edge_homophily_ratio(poison_greedy(sbm, 0.2, seed=s).graph) for s in range(10)])
        rand = np.mean([edge_homophily_ratio(poison_random(sbm, 0.2, seed=s).graph) for s in range(10)])
        assert greedy <= rand

    def test_train_scope_respects_labels(self, sbm):
        pg = poison_greedy(sbm, 0.25, seed=0)
        y = sbm.labels
        assert pg.n_flips == round(0.25 * sbm.n_edges)
        assert sbm.train_mask[pg.added].all()
        assert (y[pg.added[:, 0]] != y[pg.added[:, 1]]).all()
        assert_simple(pg.graph)

    def test_unlabeled_scope(self, sbm):
        pg = poison_greedy(sbm, 0.1, seed=0, scope="unlabeled")
        assert not sbm.train_mask[pg.added].any()
        assert pg.info["scope"] == "unlabeled"

    def test_partial_application_warns(self):
        labels = np.array([0, 1, 0, 1, 0])
        train = np.array([1, 1, 0, 0, 0], bool)
        g = make_graph([(0, 2), (1, 3), (2, 4), (3, 4), (0, 4), (1, 4)], labels, train=train,
                       test=~train)
        with pytest.warns(RuntimeWarning, match="exceeds available"):
            pg = poison_greedy(g, 0.5)
        assert pg.info["applied"] < pg.info["budget"]

    def test_attacker_labels_keep_train(self, sbm):
        y = attacker_labels(sbm)
        assert np.array_equal(y[sbm.train_mask], sbm.labels[sbm.train_mask])

    def test_unknown_scope(self, sbm):
        with pytest.raises(ValueError):
            poison_greedy(sbm, 0.1, scope="all")


class TestInjected:
    def test_p_zero(self, sbm):
        assert evade_injected(sbm, p=0.0).graph.same_as(sbm)

    def test_p_one_exact_budget(self, sbm):
        pg = evade_injected(sbm, budget=3, p=1.0)
        targets = np.flatnonzero(sbm.test_mask)
        gained = pg.graph.degrees()[targets] - sbm.degrees()[targets]
        assert (gained == 3).all()
        y = sbm.labels
        assert (y[pg.added[:, 0]] != y[pg.added[:, 1]]).all()

    def test_training_structure_untouched(self, sbm):
        pg = evade_injected(sbm)
        tr = sbm.train_mask
        assert all(not (tr[u] and tr[v]) for u, v in pg.added)
        assert len(pg.removed) == 0

    def test_right_shift_positive(self, sbm):
        pg = evade_injected(sbm, seed=1)
        assert mean_test_h(pg.graph) > mean_test_h(sbm)
        rep = evaluate_under_attack(train_gcn(sbm, GcnConfig(epochs=30)), pg)
        assert rep.right_shift["mean_shift"] > 0

    def test_single_member_class_skipped(self):
        labels = np.array([0, 0, 1])
        test = np.array([0, 0, 1], bool)
        g = make_graph([(0, 1)], labels, train=~test, test=test)
        pg = evade_injected(g, test_nodes=[0, 1], budget=2, p=1.0)
        assert pg.info["skipped_nodes"] == 0 and pg.n_flips == 2
        pg = evade_injected(g, test_nodes=[0, 1, 2], budget=2, p=1.0)
        assert pg.info["skipped_nodes"] == 3


class TestOod:
    def test_delta_zero(self, sbm):
        assert evade_ood(sbm, delta=0.0).graph.same_as(sbm)

    def test_reaches_target_and_preserves_degrees(self):
        g = synth_graph(SynthSpec(n_nodes=400, n_classes=2, target_homophily=0.5, seed=1)).graph
        start = mean_test_h(g)
        assert abs(start - 0.5) < 0.1
        pg = evade_ood(g, delta=0.2, seed=0)
        assert abs(mean_test_h(pg.graph) - (start + 0.2)) <= 0.02
        assert np.array_equal(pg.graph.degrees(), g.degrees())
        assert pg.info["reached"]
        assert mean_test_h(pg.graph) == pytest.approx(pg.info["achieved_mean_h"])

    def test_unreachable_best_effort(self, sbm):
        with pytest.warns(RuntimeWarning, match="not reached"):
            pg = evade_ood(sbm, delta=0.9, seed=0, max_attempts=2000)
        assert not pg.info["reached"] and pg.info["achieved_mean_h"] >= pg.info["start_mean_h"]
        assert_simple(pg.graph)


class TestDirection:
    @pytest.mark.parametrize("spec", [AttackSpec("poisoning-random", rate=0.2),
                                      AttackSpec("poisoning-greedy", rate=0.2),
                                      AttackSpec("evasion-injected"),
                                      AttackSpec("evasion-ood", target_shift=0.1)])
    def test_test_mean_h_not_lower(self, sbm, spec):
        means = []
        for s in range(5):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                pg = run_attack(sbm, replace(spec, seed=s))
            means.append(mean_test_h(pg.graph))
        assert np.mean(means) >= mean_test_h(sbm) - 1e-12


@pytest.fixture(scope="module")
def models(sbm):
    cfg = preset("desk")
    cfg = replace(cfg, refine=replace(cfg.refine, epochs=10), train=replace(cfg.train, epochs=30))
    return train_gcn(sbm, GcnConfig(epochs=50)), lhs_pipeline(sbm, cfg)


class TestEvaluate:
    def test_unperturbed(self, sbm, models):
        pg = evade_injected(sbm, p=0.0)
        for m in models:
            rep = evaluate_under_attack(m, pg)
            assert rep.attacked_accuracy == rep.clean_accuracy
            assert abs(rep.right_shift["mean_shift"]) < 0.1

    def test_report_consistency_and_json(self, sbm, models):
        pg = evade_injected(sbm, seed=3)
        for m in models:
            for mode in ("refresh-structure", "frozen-structure"):
                rep = evaluate_under_attack(m, pg, mode)
                assert 0 <= rep.attacked_accuracy <= 1 and 0 <= rep.clean_accuracy <= 1
                assert rep.edges_added == len(pg.graph.edge_set() - sbm.edge_set())
                d = json.loads(rep.to_json())
                assert d["degradation"] == pytest.approx(rep.clean_accuracy - rep.attacked_accuracy)
                assert d["proxy"] is False

    def test_poisoning_marked_proxy(self, sbm, models):
        rep = evaluate_under_attack(models[0], poison_greedy(sbm, 0.1))
        assert rep.to_dict()["proxy"] is True

    def test_bad_mode(self, sbm, models):
        with pytest.raises(ValueError):
            evaluate_under_attack(models[1], evade_injected(sbm), "melt")

    def test_frozen_structure(self, sbm):
        pg = evade_injected(sbm, budget=2, p=1.0)
        s = np.full((sbm.n_nodes, sbm.n_nodes), 0.5)
        out = frozen_structure(s, pg)
        u, v = pg.added[0]
        assert out[u, v] == 1.0 and out[v, u] == 1.0 and s[u, v] == 0.5


class TestSpearman:
    def test_values(self):
        assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
        assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
        assert spearman([1, 1, 1], [1, 2, 3]) == 0.0

    def test_matches_scipy(self):
        from scipy import stats
        rng = np.random.default_rng(0)
        x, y = rng.integers(0, 5, 30), rng.standard_normal(30)
        assert spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic)
