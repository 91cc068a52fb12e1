"""Dataset directories: edges.tsv, features.csv, labels.csv and optional splits.csv."""
from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..graph import Graph
from ..rng import stream
from .synth import stratified_split

SPLIT_NAMES = ("train", "val", "test")


class DatasetError(ValueError):
    pass


@dataclass
class DatasetBundle:
    graph: Graph
    name: str = "dataset"
    provenance: dict = field(default_factory=dict)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_edges(path: Path):
    edges = []
    seen = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DatasetError(f"{path.name}:{lineno}: expected two node ids, got {line!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise DatasetError(f"{path.name}:{lineno}: non-integer node id in {line!r}") from None
        if u == v:
            raise DatasetError(f"{path.name}:{lineno}: self-loop on node {u}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DatasetError(f"{path.name}:{lineno}: duplicate edge {key} (first at line {seen[key]})")
        seen[key] = lineno
        edges.append(key)
    return edges


def _parse_features(path: Path) -> np.ndarray:
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(t) for t in line.split(",")])
        except ValueError:
            raise DatasetError(f"{path.name}:{lineno}: non-numeric feature value") from None
        if len(rows[-1]) != len(rows[0]):
            raise DatasetError(f"{path.name}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        raise DatasetError(f"{path.name}: no feature rows")
    arr = np.array(rows)
    if not np.isfinite(arr).all():
        raise DatasetError(f"{path.name}: non-finite feature value")
    return arr


def _parse_lines(path: Path, conv, what: str) -> list:
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        tok = line.strip()
        if not tok:
            continue
        try:
            out.append(conv(tok))
        except (ValueError, KeyError):
            raise DatasetError(f"{path.name}:{lineno}: bad {what} {tok!r}") from None
    return out


def _split_token(tok: str) -> str:
    if tok not in SPLIT_NAMES:
        raise ValueError(tok)
    return tok


def load_dataset(directory, seed: int = 0, name: str | None = None) -> DatasetBundle:
    d = Path(directory)
    files = {k: d / f for k, f in (("edges", "edges.tsv"), ("features", "features.csv"),
                                   ("labels", "labels.csv"), ("splits", "splits.csv"))}
    for key in ("edges", "features", "labels"):
        if not files[key].exists():
            raise DatasetError(f"missing {files[key].name} in {d}")
    feats = _parse_features(files["features"])
    labels = np.array(_parse_lines(files["labels"], int, "label"), dtype=np.int64)
    n = len(feats)
    if len(labels) != n:
        raise DatasetError(f"schema: features.csv has {n} rows but labels.csv has {len(labels)} labels")
    if (labels < 0).any():
        raise DatasetError("schema: negative class id in labels.csv")
    edges = _parse_edges(files["edges"])
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise DatasetError(f"schema: edge ({u}, {v}) references a node outside [0, {n})")
    n_classes = int(labels.max()) + 1 if n else 0
    if files["splits"].exists():
        tokens = _parse_lines(files["splits"], _split_token, "split")
        if len(tokens) != n:
            raise DatasetError(f"schema: splits.csv has {len(tokens)} rows but there are {n} nodes")
        tok = np.array(tokens)
        masks = tuple(tok == s for s in SPLIT_NAMES)
    else:
        masks = stratified_split(labels, stream(seed, "split"))
    g = Graph(n, edges, feats, labels, n_classes, *masks)
    provenance = {f.name: _sha(f) for f in files.values() if f.exists()}
    return DatasetBundle(g, name or d.name, provenance)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(bundle_or_graph, directory) -> Path:
    g = getattr(bundle_or_graph, "graph", bundle_or_graph)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    atomic_write_text(d / "edges.tsv", "".join(f"{u}\t{v}\n" for u, v in g.edges))
    atomic_write_text(d / "features.csv",
                      "".join(",".join(_fmt(x) for x in row) + "\n" for row in g.features))
    atomic_write_text(d / "labels.csv", "".join(f"{int(y)}\n" for y in g.labels))
    split = np.full(g.n_nodes, "", dtype=object)
    for name, m in zip(SPLIT_NAMES, (g.train_mask, g.val_mask, g.test_mask)):
        split[m] = name
    if (split == "").any():
        raise DatasetError("every node needs a split to be saved")
    atomic_write_text(d / "splits.csv", "".join(f"{s}\n" for s in split))
    return d
