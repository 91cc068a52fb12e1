"""JSON run configuration, validated before any computation.

Schema (every key optional except one of ``dataset`` / ``synth``):

    {
      "dataset": "path/to/dir",            # or
      "synth": {SynthSpec fields},
      "preset": "desk" | "settings" | "appendix",
      "inducer": {InducerConfig fields},
      "refine": {RefineConfig fields except corruption},
      "corruption": {CorruptionConfig fields},
      "train": {TrainConfig fields},
      "baseline": {GcnConfig fields},
      "attacks": [{AttackSpec fields}, ...],
      "modes": ["refresh-structure", "frozen-structure"],
      "output_dir": "runs/example",
      "seeds": [0, 1]
    }

Unknown keys are rejected at every level. Section values override the preset.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..attacks import AttackSpec
from ..baseline import GcnConfig
from ..encoder import TrainConfig
from ..inducer import InducerConfig, config_hash
from ..pipeline import PipelineConfig, preset
from ..refiner import CorruptionConfig, RefineConfig
from .synth import SynthSpec

TOP_KEYS = {"dataset", "synth", "preset", "inducer", "refine", "corruption", "train", "baseline",
            "attacks", "modes", "output_dir", "seeds"}
MODES = ("refresh-structure", "frozen-structure")


class ConfigError(ValueError):
    pass


def _check_keys(section: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"{section}: expected an object, got {type(given).__name__}")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {unknown}")


def build_section(section: str, cls, values: dict, base=None, skip=()):
    allowed = [f.name for f in fields(cls) if f.name not in skip]
    _check_keys(section, values, allowed)
    try:
        return replace(base, **values) if base is not None else cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineConfig
    baseline: GcnConfig = field(default_factory=GcnConfig)
    dataset: str | None = None
    synth: SynthSpec | None = None
    attacks: tuple = ()
    modes: tuple = ("refresh-structure",)
    output_dir: str = "runs"
    seeds: tuple = (0,)
    raw: dict = field(default_factory=dict, compare=False)

    def digest(self) -> str:
        """Hash of everything except the seed list and output location."""
        d = {"pipeline": asdict(replace(self.pipeline, seed=0)), "baseline": asdict(self.baseline),
             "dataset": self.dataset, "synth": self.synth and asdict(self.synth),
             "attacks": [a.to_dict() for a in self.attacks], "modes": list(self.modes)}
        return config_hash(d)

    def for_seed(self, seed: int) -> PipelineConfig:
        return replace(self.pipeline, seed=seed)


def parse_run_config(d: dict) -> RunConfig:
    _check_keys("config", d, TOP_KEYS)
    if ("dataset" in d) == ("synth" in d):
        raise ConfigError("config: exactly one of 'dataset' or 'synth' is required")
    name = d.get("preset", "desk")
    try:
        base = preset(name)
    except ValueError as exc:
        raise ConfigError(f"preset: {exc}") from None
    inducer = build_section("inducer", InducerConfig, d.get("inducer", {}), base.inducer)
    corruption = build_section("corruption", CorruptionConfig, d.get("corruption", {}), base.refine.corruption)
    refine = build_section("refine", RefineConfig, d.get("refine", {}), base.refine, skip=("corruption",))
    refine = replace(refine, corruption=corruption)
    train = build_section("train", TrainConfig, d.get("train", {}), base.train)
    baseline = build_section("baseline", GcnConfig, d.get("baseline", {}))
    synth = build_section("synth", SynthSpec, d["synth"]) if "synth" in d else None
    attacks = d.get("attacks", [])
    if not isinstance(attacks, list):
        raise ConfigError("attacks: expected a list")
    specs = tuple(build_section(f"attacks[{i}]", AttackSpec, a) for i, a in enumerate(attacks))
    modes = tuple(d.get("modes", ["refresh-structure"]))
    bad = [m for m in modes if m not in MODES]
    if bad:
        raise ConfigError(f"modes: unknown mode(s) {bad}; choose from {list(MODES)}")
    seeds = d.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds: expected a non-empty list of non-negative integers")
    out = d.get("output_dir", "runs")
    if not isinstance(out, str):
        raise ConfigError("output_dir: expected a string")
    dataset = d.get("dataset")
    if dataset is not None and not isinstance(dataset, str):
        raise ConfigError("dataset: expected a path string")
    return RunConfig(PipelineConfig(inducer, refine, train), baseline, dataset, synth, specs, modes,
                     out, tuple(seeds), d)


def load_run_config(path) -> RunConfig:
    p = Path(path)
    try:
        d = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p.name}: invalid JSON ({exc})") from None
    cfg = parse_run_config(d)
    if cfg.dataset is not None and not Path(cfg.dataset).is_absolute():
        cfg = replace(cfg, dataset=str((p.parent / cfg.dataset).resolve()))
    return cfg
