import json

import numpy as np
import pytest

from lhs.bench import cli
from lhs.bench.config import ConfigError, load_run_config, parse_run_config
from lhs.bench.data import DatasetError, load_dataset, save_dataset
from lhs.bench.simulate import structure_simulation
from lhs.bench.synth import SynthSpec, planted_edges, restructure, synth_graph
from lhs.graph import edge_homophily_ratio, h_distribution
from lhs.numkit import NumericError
from lhs.rng import stream

pytestmark = pytest.mark.filterwarnings("ignore:.*zero-norm rows:RuntimeWarning")

SMALL = {"synth": {"n_nodes": 120, "n_classes": 3, "feature_dim": 8, "mean_degree": 6, "seed": 1},
         "refine": {"epochs": 5}, "train": {"epochs": 10}, "seeds": [0]}


def write_cfg(tmp_path, **over):
    cfg = {**SMALL, "output_dir": "out", **over}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p


def write_dataset(d, edges="0\t1\n", feats="1.0,0.0\n0.0,1.0\n", labels="0\n1\n", splits="train\ntest\n"):
    d.mkdir(parents=True, exist_ok=True)
    (d / "edges.tsv").write_text(edges)
    (d / "features.csv").write_text(feats)
    (d / "labels.csv").write_text(labels)
    if splits is not None:
        (d / "splits.csv").write_text(splits)
    return d


class TestSynth:
    def test_h_one(self):
        assert edge_homophily_ratio(synth_graph(SynthSpec(n_nodes=200, target_homophily=1.0)).graph) == 1.0

    def test_h_zero_two_classes(self):
        g = synth_graph(SynthSpec(n_nodes=200, n_classes=2, target_homophily=0.0)).graph
        assert edge_homophily_ratio(g) == 0.0

    @pytest.mark.parametrize("h", [0.1, 0.25, 0.5, 0.8])
    def test_tolerance(self, h):
        g = synth_graph(SynthSpec(n_nodes=1000, target_homophily=h, seed=3)).graph
        assert abs(edge_homophily_ratio(g) - h) <= 0.03

    def test_balanced_and_split(self):
        g = synth_graph(SynthSpec(n_nodes=400, n_classes=4)).graph
        assert np.bincount(g.labels).tolist() == [100] * 4
        assert g.train_mask.sum() == 240 and g.val_mask.sum() == 80 and g.test_mask.sum() == 80

    def test_infeasible(self):
        with pytest.raises(ValueError, match="infeasible"):
            planted_edges(np.array([0, 1, 2, 3]), 3, 1.0, stream(0, "x"))

    def test_restructure_keeps_nodes(self):
        g = synth_graph(SynthSpec(n_nodes=300, seed=0)).graph
        r = restructure(g, 0.7, seed=1)
        assert r.n_edges == g.n_edges and np.array_equal(r.features, g.features)
        assert abs(edge_homophily_ratio(r) - 0.7) <= 0.03

    def test_validation(self):
        with pytest.raises(ValueError):
            SynthSpec(target_homophily=1.2)


class TestData:
    def test_round_trip(self, tmp_path):
        b = load_dataset(write_dataset(tmp_path / "d"))
        out = save_dataset(b, tmp_path / "e")
        again = load_dataset(out)
        assert again.graph.same_as(b.graph)
        for f in ("edges.tsv", "features.csv", "labels.csv", "splits.csv"):
            assert (tmp_path / "d" / f).read_bytes() == (out / f).read_bytes()

    def test_synth_round_trip_bytes(self, tmp_path):
        b = synth_graph(SynthSpec(n_nodes=60, seed=2))
        a = save_dataset(b, tmp_path / "a")
        c = save_dataset(load_dataset(a), tmp_path / "c")
        for f in ("edges.tsv", "features.csv", "labels.csv", "splits.csv"):
            assert (a / f).read_bytes() == (c / f).read_bytes()

    def test_self_loop_line(self, tmp_path):
        d = write_dataset(tmp_path / "d", edges="0\t1\n1\t1\n")
        with pytest.raises(DatasetError, match="edges.tsv:2: self-loop"):
            load_dataset(d)

    def test_duplicate_line(self, tmp_path):
        d = write_dataset(tmp_path / "d", edges="0 1\n1 0\n")
        with pytest.raises(DatasetError, match="edges.tsv:2: duplicate"):
            load_dataset(d)

    def test_row_count_mismatch(self, tmp_path):
        d = write_dataset(tmp_path / "d", labels="0\n1\n0\n")
        with pytest.raises(DatasetError, match="2 rows.*3 labels"):
            load_dataset(d)

    def test_bad_node_id(self, tmp_path):
        with pytest.raises(DatasetError, match="outside"):
            load_dataset(write_dataset(tmp_path / "d", edges="0 5\n"))

    def test_malformed(self, tmp_path):
        with pytest.raises(DatasetError, match="features.csv:2"):
            load_dataset(write_dataset(tmp_path / "d", feats="1,0\n1,x\n"))
        with pytest.raises(DatasetError, match="splits.csv:2"):
            load_dataset(write_dataset(tmp_path / "e", splits="train\nholdout\n"))
        with pytest.raises(DatasetError, match="missing"):
            load_dataset(tmp_path / "nowhere")

    def test_default_split_60_20_20(self, tmp_path):
        b = synth_graph(SynthSpec(n_nodes=100, n_classes=2, seed=0))
        d = save_dataset(b, tmp_path / "d")
        (d / "splits.csv").unlink()
        g = load_dataset(d, seed=3).graph
        assert (g.train_mask.sum(), g.val_mask.sum(), g.test_mask.sum()) == (60, 20, 20)
        assert np.array_equal(g.train_mask, load_dataset(d, seed=3).graph.train_mask)

    def test_provenance_hashes(self, tmp_path):
        b = load_dataset(write_dataset(tmp_path / "d"))
        assert set(b.provenance) == {"edges.tsv", "features.csv", "labels.csv", "splits.csv"}


class TestConfig:
    def test_defaults(self):
        cfg = parse_run_config({"synth": {}})
        assert cfg.pipeline.inducer.sigma == 0.6 and cfg.seeds == (0,)

    @pytest.mark.parametrize("bad,msg", [
        ({"synth": {}, "colour": 1}, "unknown key"),
        ({"synth": {}, "train": {"lrr": 1}}, "train: unknown key"),
        ({"synth": {}, "attacks": [{"kind": "evasion-ood", "delta": 1}]}, r"attacks\[0\]"),
        ({}, "exactly one"),
        ({"synth": {}, "dataset": "x"}, "exactly one"),
        ({"synth": {}, "modes": ["melt"]}, "modes"),
        ({"synth": {}, "seeds": []}, "seeds"),
        ({"synth": {}, "seeds": [-1]}, "seeds"),
        ({"synth": {}, "preset": "huge"}, "preset"),
        ({"synth": {}, "train": {"gamma": 0.1}}, "train: gamma"),
        ({"synth": {}, "inducer": "x"}, "expected an object"),
    ])
    def test_rejects(self, bad, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_run_config(bad)

    def test_section_overrides_preset(self):
        cfg = parse_run_config({"synth": {}, "preset": "appendix", "train": {"beta": 1.2}})
        assert cfg.pipeline.train.beta == 1.2 and cfg.pipeline.train.hidden == 512

    def test_dataset_relative_to_config(self, tmp_path):
        p = tmp_path / "sub" / "c.json"
        p.parent.mkdir()
        p.write_text(json.dumps({"dataset": "../data"}))
        assert load_run_config(p).dataset == str((tmp_path / "data").resolve())

    def test_digest_ignores_seeds(self):
        a = parse_run_config({"synth": {}, "seeds": [0]})
        b = parse_run_config({"synth": {}, "seeds": [0, 1]})
        assert a.digest() == b.digest()


class TestSimulation:
    def test_rows(self):
        g = synth_graph(SynthSpec(n_nodes=200, seed=0))
        rows = structure_simulation(g, [0.2, 0.9], seed=0)
        assert [r["h"] for r in rows] == [0.2, 0.9]
        assert rows[1]["accuracy"] >= 0.95 and rows[0]["accuracy"] < rows[1]["accuracy"]

    def test_grid_validated(self):
        with pytest.raises(ValueError):
            structure_simulation(synth_graph(SynthSpec(n_nodes=50)), [1.5])


class TestCli:
    def test_train_deterministic(self, tmp_path, monkeypatch):
        cfg = write_cfg(tmp_path)
        outs = []
        for run in ("a", "b"):
            monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path / run))
            assert cli.main(["train", "--config", str(cfg)]) == 0
            outs.append(tmp_path / run / "out" / "train" / "seed0")
        for f in ("checkpoint.json", "history.csv", "summary.json"):
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
        head = (outs[0] / "history.csv").read_text().splitlines()[0]
        assert head.startswith("# config_hash=") and head.endswith("seed=0")

    def test_attack_three_specs(self, tmp_path, monkeypatch):
        attacks = [{"kind": "poisoning-greedy", "rate": 0.1}, {"kind": "evasion-injected"},
                   {"kind": "evasion-ood", "target_shift": 0.05}]
        cfg = write_cfg(tmp_path, attacks=attacks)
        monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
        assert cli.main(["train", "--config", str(cfg)]) == 0
        ck = tmp_path / "out" / "train" / "seed0" / "checkpoint.json"
        assert cli.main(["attack", "--config", str(cfg), "--checkpoint", str(ck)]) == 0
        root = tmp_path / "out" / "attack" / "seed0"
        reports = sorted(root.glob("report_*.json"))
        assert len(reports) == 6
        body = json.loads(reports[0].read_text())
        assert {"config_hash", "seed", "right_shift", "degradation"} <= set(body)
        rows = (root / "shift_vs_degradation.csv").read_text().splitlines()
        assert rows[0].startswith("# config_hash=") and len(rows) == 2 + 6

    def test_analyze_matches_generator(self, tmp_path, monkeypatch):
        b = synth_graph(SynthSpec(n_nodes=150, seed=4))
        d = save_dataset(b, tmp_path / "ds")
        monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
        assert cli.main(["analyze", "--dataset", str(d), "--hops", "2", "--out", "an"]) == 0
        lines = (tmp_path / "an" / "h_all.csv").read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        counts = [int(r.split(",")[2]) for r in lines[2:]]
        assert counts == h_distribution(b.graph).counts.tolist()
        assert (tmp_path / "an" / "h_test_hop2.csv").exists()
        shift = json.loads((tmp_path / "an" / "right_shift.json").read_text())
        assert set(shift["shifts"]) == {"all", "val", "test"}

    def test_synth_command(self, tmp_path, monkeypatch):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"n_nodes": 80, "target_homophily": 0.4}))
        monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
        assert cli.main(["synth", "--spec", str(spec), "--out", "gen"]) == 0
        meta = json.loads((tmp_path / "gen" / "synth.json").read_text())
        assert meta["spec"]["n_nodes"] == 80 and "config_hash" in meta
        assert load_dataset(tmp_path / "gen").graph.n_nodes == 80

    def test_user_errors_exit_1(self, tmp_path, capsys):
        assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 1
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["exit_code"] == 1 and err["error"] == "ConfigError"
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"synth": {}, "extra": 1}))
        assert cli.main(["train", "--config", str(bad)]) == 1
        assert cli.main(["attack", "--config", str(write_cfg(tmp_path)), "--checkpoint", "nope.json"]) == 1
        assert cli.main(["analyze", "--dataset", str(tmp_path), "--hops", "0"]) == 1
        with pytest.raises(SystemExit) as info:
            cli.main(["frobnicate"])
        assert info.value.code == 1

    def test_numeric_failure_exit_2(self, tmp_path, monkeypatch, capsys):
        def boom(*a, **k):
            raise NumericError("loss diverged")
        monkeypatch.setattr(cli, "lhs_pipeline", boom)
        assert cli.main(["train", "--config", str(write_cfg(tmp_path))]) == 2
        assert json.loads(capsys.readouterr().err.strip())["exit_code"] == 2

    def test_attack_without_specs(self, tmp_path, monkeypatch):
        cfg = write_cfg(tmp_path)
        monkeypatch.setenv(cli.ENV_OUTPUT_ROOT, str(tmp_path))
        assert cli.main(["attack", "--config", str(cfg), "--checkpoint", str(cfg)]) == 1
