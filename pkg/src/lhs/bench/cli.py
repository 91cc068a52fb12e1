"""Command-line entry point: train, attack, analyze, synth.

Relative output paths are resolved under $LHS_OUTPUT_ROOT (default: the
current directory). Exit status: 0 success, 1 user error, 2 numeric failure;
failures print a JSON error record on stderr.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..attacks import evaluate_under_attack, run_attack
from ..baseline import train_gcn
from ..graph import GraphError, edge_homophily_ratio, h_distribution, layer_h_distribution, right_shift
from ..inducer import config_hash
from ..numkit import NumericError
from ..pipeline import checkpoint_json, history_csv, lhs_pipeline, load_checkpoint
from .config import ConfigError, RunConfig, build_section, load_run_config
from .data import DatasetBundle, DatasetError, atomic_write_text, load_dataset, save_dataset
from .synth import SynthSpec, synth_graph

ENV_OUTPUT_ROOT = "LHS_OUTPUT_ROOT"


def output_path(p) -> Path:
    p = Path(p)
    if p.is_absolute():
        return p
    return Path(os.environ.get(ENV_OUTPUT_ROOT, ".")) / p


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _dataset(cfg: RunConfig, seed: int) -> DatasetBundle:
    if cfg.synth is not None:
        return synth_graph(cfg.synth)
    return load_dataset(cfg.dataset, seed=seed)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    root = output_path(cfg.output_dir) / "train"
    for seed in cfg.seeds:
        bundle = _dataset(cfg, seed)
        model = lhs_pipeline(bundle.graph, cfg.for_seed(seed))
        d = root / f"seed{seed}"
        atomic_write_text(d / "checkpoint.json", checkpoint_json(model))
        atomic_write_text(d / "history.csv", history_csv(model))
        summary = {"config_hash": model.config_hash, "run_config_hash": cfg.digest(), "seed": seed,
                   "dataset": bundle.name, "provenance": bundle.provenance,
                   "test_accuracy": model.accuracy(bundle.graph), "best_epoch": model.best_epoch,
                   "best_val_accuracy": model.best_val_accuracy, "rounds": list(model.rounds)}
        atomic_write_text(d / "summary.json", _dumps(summary))
        print(f"seed {seed}: test accuracy {summary['test_accuracy']:.4f} -> {d}")
    return 0


def cmd_attack(args) -> int:
    cfg = load_run_config(args.config)
    if not cfg.attacks:
        raise ConfigError("attacks: the config lists no attack specs")
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    model = load_checkpoint(ckpt.read_text())
    seed = int(model.config.get("seed", 0))
    graph = _dataset(cfg, seed).graph
    baseline = train_gcn(graph, replace(cfg.baseline, seed=seed))
    root = output_path(cfg.output_dir) / "attack" / f"seed{seed}"
    rows = ["kind,model,mode,mean_shift,w1,degradation,clean_accuracy,attacked_accuracy"]
    for i, spec in enumerate(cfg.attacks):
        spec = replace(spec, seed=spec.seed + seed)
        perturbed = run_attack(graph, spec)
        reports = [evaluate_under_attack(baseline, perturbed)]
        reports += [evaluate_under_attack(model, perturbed, mode) for mode in cfg.modes]
        for rep in reports:
            body = rep.to_dict()
            body.update({"config_hash": model.config_hash, "run_config_hash": cfg.digest(), "seed": seed})
            name = f"report_{i:02d}_{spec.kind}_{rep.model}_{rep.mode}.json"
            atomic_write_text(root / name, _dumps(body))
            rows.append(",".join([spec.kind, rep.model, rep.mode, repr(rep.right_shift["mean_shift"]),
                                  repr(rep.right_shift["w1"]), repr(rep.degradation),
                                  repr(rep.clean_accuracy), repr(rep.attacked_accuracy)]))
            print(f"{spec.kind:18s} {rep.model:3s} {rep.mode:17s} shift {rep.right_shift['mean_shift']:+.3f} "
                  f"drop {rep.degradation:+.3f}")
    header = f"# config_hash={model.config_hash} seed={seed}\n"
    atomic_write_text(root / "shift_vs_degradation.csv", header + "\n".join(rows) + "\n")
    return 0


def _hist_csv(h, header: str) -> str:
    buf = io.StringIO()
    buf.write(header)
    buf.write("bin_lo,bin_hi,count,density\n")
    dens = h.density()
    for lo, hi, c, p in zip(h.bin_edges[:-1], h.bin_edges[1:], h.counts, dens):
        buf.write(f"{lo!r},{hi!r},{int(c)},{float(p)!r}\n")
    return buf.getvalue()


def cmd_analyze(args) -> int:
    bundle = load_dataset(args.dataset, seed=args.seed)
    g = bundle.graph
    meta = {"dataset": str(Path(args.dataset).resolve().name), "provenance": bundle.provenance,
            "hops": args.hops, "bins": args.bins}
    digest = config_hash(meta)
    header = f"# config_hash={digest} seed={args.seed}\n"
    out = output_path(args.out or f"analyze/{bundle.name}")
    splits = {"all": None, "train": np.flatnonzero(g.train_mask), "val": np.flatnonzero(g.val_mask),
              "test": np.flatnonzero(g.test_mask)}
    hists = {}
    for name, nodes in splits.items():
        if nodes is not None and len(nodes) == 0:
            continue
        try:
            hists[name] = h_distribution(g, nodes, bins=args.bins)
        except GraphError:
            continue
        atomic_write_text(out / f"h_{name}.csv", _hist_csv(hists[name], header))
        for k in range(2, args.hops + 1):
            try:
                hk = layer_h_distribution(g, k, bins=args.bins, nodes=nodes)
            except GraphError:
                continue
            atomic_write_text(out / f"h_{name}_hop{k}.csv", _hist_csv(hk, header))
    shifts = {name: right_shift(hists["train"], h) for name, h in hists.items()
              if "train" in hists and name != "train"}
    atomic_write_text(out / "right_shift.json", _dumps({"config_hash": digest, "seed": args.seed,
                                                         "reference": "train", **meta, "shifts": shifts}))
    print(f"wrote {len(hists)} distributions to {out}")
    return 0


def cmd_synth(args) -> int:
    path = Path(args.spec)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path.name}: invalid JSON ({exc})") from None
    spec = build_section("synth", SynthSpec, raw)
    bundle = synth_graph(spec)
    out = output_path(args.out)
    save_dataset(bundle, out)
    meta = {"config_hash": config_hash(spec.to_dict()), "seed": spec.seed, "spec": spec.to_dict(),
            "realized_homophily": edge_homophily_ratio(bundle.graph)}
    atomic_write_text(out / "synth.json", _dumps(meta))
    print(f"wrote {bundle.name} ({bundle.graph.n_nodes} nodes, {bundle.graph.n_edges} edges) to {out}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.exit(_fail(ConfigError(message), 1))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lhs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)
    t = sub.add_parser("train", help="run the structure-learning pipeline and save checkpoints")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_train)
    a = sub.add_parser("attack", help="attack a trained checkpoint and write reports")
    a.add_argument("--config", required=True)
    a.add_argument("--checkpoint", required=True)
    a.set_defaults(func=cmd_attack)
    z = sub.add_parser("analyze", help="write node-heterophily histograms and right-shift statistics")
    z.add_argument("--dataset", required=True)
    z.add_argument("--hops", type=int, default=1)
    z.add_argument("--bins", type=int, default=20)
    z.add_argument("--seed", type=int, default=0)
    z.add_argument("--out")
    z.set_defaults(func=cmd_analyze)
    s = sub.add_parser("synth", help="generate a planted-partition dataset directory")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def _fail(exc: BaseException, code: int) -> int:
    record = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "hops", 1) < 1:
        return _fail(ConfigError("--hops must be >= 1"), 1)
    try:
        return args.func(args)
    except NumericError as exc:
        return _fail(exc, 2)
    except (ConfigError, DatasetError, GraphError, ValueError, OSError) as exc:
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())
