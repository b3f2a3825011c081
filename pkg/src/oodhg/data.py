"""Dataset ingestion, split construction, and a synthetic benchmark generator.

Directory format:
    schema.json   node_types: [{name, count, feature_dim}], edge_types:
                  [{name, src, dst}], target_type, plus optional metapaths
                  (explicit type-name sequences) and max_hops (used for
                  enumeration when metapaths is absent).
    edges/<edge_type>.tsv      one "src<TAB>dst" pair of 0-based ids per line.
    features/<node_type>.csv   count x feature_dim decimal floats, or
             <node_type>.f32   raw little-endian float32, row major.
    labels.tsv                 one "node_id<TAB>label" per target node.
    splits.json (optional)     {train, val, test, ood_class}.

Splits follow the transductive protocol: every node of the held-out class
goes to the test set; the remaining nodes are shuffled by a seeded Philox
generator with an explicit Fisher-Yates pass (stated so the permutation can
be reproduced in any language) and cut at fractions of the total target
count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    FractionOverflow,
    MissingFile,
    OodClassMissing,
    ParseError,
    ValidationError,
)
from .hetgraph import EdgeTypeSchema, HeteroGraph, NodeTypeSchema, build_graph

# distance of each in-distribution class mean from the origin (one-hot axis
# per class); the held-out class is pulled back toward the origin by
# ood_shift, so shift 0 makes it indistinguishable from its hidden class
CLASS_SEP = 3.0


@dataclass(frozen=True)
class Splits:
    """Disjoint train/val/test node ids plus the held-out class label."""

    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray
    ood_class: int

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=np.int64))


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic heterogeneous benchmark."""

    n_id_classes: int = 3
    nodes_per_class: int = 150
    n_aux_types: int = 2
    feature_dim: int = 16
    intra_edge_prob: float = 0.07
    inter_edge_prob: float = 0.0035
    ood_shift: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_id_classes < 2:
            raise ValueError(f"n_id_classes must be >= 2, got {self.n_id_classes}")
        if self.nodes_per_class < 1 or self.n_aux_types < 1 or self.feature_dim < 1:
            raise ValueError("nodes_per_class, n_aux_types, feature_dim must be >= 1")
        for p in (self.intra_edge_prob, self.inter_edge_prob):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"edge probability {p} outside [0, 1]")
        if self.ood_shift < 0:
            raise ValueError(f"ood_shift must be >= 0, got {self.ood_shift}")


def _fisher_yates(rng: np.random.Generator, arr: np.ndarray) -> np.ndarray:
    """Classic Fisher-Yates shuffle driven by rng.integers, back to front."""
    out = arr.copy()
    for i in range(out.size - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def make_splits(labels: np.ndarray, ood_class: int, train_frac: float = 0.24,
                val_frac: float = 0.06, seed: int = 0) -> Splits:
    """Deterministic splits with every held-out-class node in the test set.

    Cut sizes are floor(fraction * total node count), so the fractions are
    taken against all target nodes, not just the in-distribution ones.

    Raises OodClassMissing when ood_class never occurs, FractionOverflow
    when the non-held-out nodes cannot fill the train and val quotas.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if train_frac <= 0 or val_frac <= 0 or train_frac + val_frac >= 1:
        raise FractionOverflow(
            f"fractions train={train_frac}, val={val_frac} must be positive "
            "and sum below 1")
    if not np.any(labels == ood_class):
        raise OodClassMissing(f"class {ood_class} does not occur in the labels")
    n_train = int(n * train_frac + 1e-9)
    n_val = int(n * val_frac + 1e-9)
    non_ood = np.flatnonzero(labels != ood_class)
    if n_train + n_val > non_ood.size:
        raise FractionOverflow(
            f"need {n_train + n_val} non-held-out nodes for train+val, "
            f"only {non_ood.size} available")
    rng = np.random.Generator(np.random.Philox(seed))
    perm = _fisher_yates(rng, non_ood)
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:n_train + n_val])
    rest = perm[n_train + n_val:]
    test = np.sort(np.concatenate([rest, np.flatnonzero(labels == ood_class)]))
    return Splits(train, val, test, int(ood_class))


def generate_synthetic(cfg: SynthConfig) -> tuple[HeteroGraph, np.ndarray]:
    """Planted-community heterogeneous graph with one held-out class.

    Target nodes come in K+1 equal blocks: classes 0..K-1 are ID, class K is
    held out. Features are unit-variance Gaussians; class c centers on
    CLASS_SEP * e_c, while each held-out node picks a hidden ID class and
    centers on (CLASS_SEP - ood_shift) * e_hidden, drifting toward the
    origin as the shift grows. Each auxiliary type carries one community per
    class; a target-aux edge appears with intra_edge_prob when the target's
    class matches the aux community and inter_edge_prob otherwise, and every
    relation is declared in both directions. Two-hop target neighbourhoods
    are therefore class-aligned, including among held-out nodes.

    Draw order from the single Philox(seed) stream: hidden classes, feature
    noise, then edge coins per auxiliary type. Equal seeds give identical
    datasets byte for byte.
    """
    k = cfg.n_id_classes
    npc = cfg.nodes_per_class
    n_target = (k + 1) * npc
    labels = np.repeat(np.arange(k + 1, dtype=np.int64), npc)
    rng = np.random.Generator(np.random.Philox(cfg.seed))

    hidden = rng.integers(0, k, size=npc)
    axis = labels % cfg.feature_dim
    scale = np.full(n_target, CLASS_SEP)
    axis[labels == k] = hidden % cfg.feature_dim
    scale[labels == k] = CLASS_SEP - cfg.ood_shift
    means = np.zeros((n_target, cfg.feature_dim))
    means[np.arange(n_target), axis] = scale
    features = means + rng.standard_normal((n_target, cfg.feature_dim))

    aux_per_comm = max(npc // 3, 1)
    n_aux = (k + 1) * aux_per_comm
    communities = np.repeat(np.arange(k + 1), aux_per_comm)

    node_types = [NodeTypeSchema("target", n_target, cfg.feature_dim)]
    edge_types = []
    edges = {}
    for a in range(cfg.n_aux_types):
        aux_name = f"aux{a}"
        node_types.append(NodeTypeSchema(aux_name, n_aux, 0))
        prob = np.where(labels[:, None] == communities[None, :],
                        cfg.intra_edge_prob, cfg.inter_edge_prob)
        draw = rng.random((n_target, n_aux)) < prob
        pairs = np.argwhere(draw).astype(np.int64)
        fwd = f"target_{aux_name}"
        rev = f"{aux_name}_target"
        edge_types.append(EdgeTypeSchema(fwd, "target", aux_name))
        edge_types.append(EdgeTypeSchema(rev, aux_name, "target"))
        edges[fwd] = pairs
        edges[rev] = pairs[:, ::-1]
    graph = build_graph(node_types, edge_types, edges,
                        {"target": features}, "target")
    return graph, labels


# ----------------------------------------------------------------------
# directory io

def save_dataset(dir_path, graph: HeteroGraph, labels=None, splits=None,
                 feature_format: str = "csv", schema_extra: dict | None = None) -> Path:
    """Write a dataset directory; the inverse of load_dataset.

    feature_format "csv" stores floats via repr (lossless for float64);
    "f32" stores raw little-endian float32, losing precision beyond 32 bits
    but round-tripping bitwise once loaded and saved again.
    """
    if feature_format not in ("csv", "f32"):
        raise ValueError(f"unknown feature format {feature_format!r}")
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    schema = {
        "node_types": [
            {"name": s.name, "count": s.count, "feature_dim": s.feature_dim}
            for s in graph.node_types],
        "edge_types": [
            {"name": s.name, "src": s.src_type, "dst": s.dst_type}
            for s in graph.edge_types],
        "target_type": graph.target_type,
    }
    if schema_extra:
        schema.update(schema_extra)
    (root / "schema.json").write_text(
        json.dumps(schema, indent=2, sort_keys=True) + "\n")

    edge_dir = root / "edges"
    edge_dir.mkdir(exist_ok=True)
    for s in graph.edge_types:
        pairs = graph.edges[s.name]
        lines = "".join(f"{int(a)}\t{int(b)}\n" for a, b in pairs)
        (edge_dir / f"{s.name}.tsv").write_text(lines)

    feat_dir = root / "features"
    feat_dir.mkdir(exist_ok=True)
    for s in graph.node_types:
        if s.feature_dim == 0:
            continue
        mat = graph.features[s.name]
        if feature_format == "csv":
            text = "".join(",".join(repr(float(v)) for v in row) + "\n"
                           for row in mat)
            (feat_dir / f"{s.name}.csv").write_text(text)
        else:
            (feat_dir / f"{s.name}.f32").write_bytes(
                np.ascontiguousarray(mat, dtype="<f4").tobytes())

    if labels is not None:
        labels = np.asarray(labels, dtype=np.int64)
        (root / "labels.tsv").write_text(
            "".join(f"{i}\t{int(v)}\n" for i, v in enumerate(labels)))
    if splits is not None:
        payload = {
            "train": [int(i) for i in splits.train_ids],
            "val": [int(i) for i in splits.val_ids],
            "test": [int(i) for i in splits.test_ids],
            "ood_class": int(splits.ood_class),
        }
        (root / "splits.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return root


def _read_json(path: Path) -> dict:
    if not path.is_file():
        raise MissingFile(f"{path} not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None


def _parse_int_pair_file(path: Path) -> np.ndarray:
    if not path.is_file():
        raise MissingFile(f"{path} not found")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 tab-separated "
                                 f"fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer field") from None
    return np.asarray(rows, dtype=np.int64).reshape(-1, 2)


def _load_features(feat_dir: Path, name: str, count: int, dim: int) -> np.ndarray:
    csv_path = feat_dir / f"{name}.csv"
    f32_path = feat_dir / f"{name}.f32"
    if csv_path.is_file():
        rows = []
        with csv_path.open() as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != dim:
                    raise ParseError(f"{csv_path}:{lineno}: expected {dim} "
                                     f"columns, got {len(parts)}")
                try:
                    rows.append([float(v) for v in parts])
                except ValueError:
                    raise ParseError(f"{csv_path}:{lineno}: non-numeric field") from None
        mat = np.asarray(rows, dtype=np.float64).reshape(-1, dim)
        if mat.shape[0] != count:
            raise ValidationError(f"{csv_path}: {mat.shape[0]} rows for "
                                  f"{count} nodes of type {name!r}")
        return mat
    if f32_path.is_file():
        raw = f32_path.read_bytes()
        expected = count * dim * 4
        if len(raw) != expected:
            raise ValidationError(f"{f32_path}: {len(raw)} bytes, expected {expected}")
        # widen 32-bit payloads to the 64-bit working type
        return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(count, dim)
    raise MissingFile(f"no {csv_path.name} or {f32_path.name} in {feat_dir}")


def load_dataset(dir_path) -> tuple[HeteroGraph, np.ndarray, Splits | None]:
    """Load and validate a dataset directory.

    Returns (graph, labels, splits) with splits None when splits.json is
    absent. Every structural problem is reported with the offending file
    (and line where applicable).
    """
    root = Path(dir_path)
    schema_path = root / "schema.json"
    schema = _read_json(schema_path)
    for key in ("node_types", "edge_types", "target_type"):
        if key not in schema:
            raise ValidationError(f"{schema_path}: missing key {key!r}")
    try:
        node_types = [NodeTypeSchema(str(e["name"]), int(e["count"]),
                                     int(e.get("feature_dim", 0)))
                      for e in schema["node_types"]]
        edge_types = [EdgeTypeSchema(str(e["name"]), str(e["src"]), str(e["dst"]))
                      for e in schema["edge_types"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{schema_path}: malformed type entry ({exc})") from None
    declared = {s.name: s for s in node_types}
    for s in edge_types:
        for end in (s.src_type, s.dst_type):
            if end not in declared:
                raise ValidationError(
                    f"{schema_path}: edge type {s.name!r} references "
                    f"unknown node type {end!r}")
    if schema["target_type"] not in declared:
        raise ValidationError(
            f"{schema_path}: target_type {schema['target_type']!r} not declared")

    edges = {}
    for s in edge_types:
        path = root / "edges" / f"{s.name}.tsv"
        pairs = _parse_int_pair_file(path)
        n_src = declared[s.src_type].count
        n_dst = declared[s.dst_type].count
        if pairs.size:
            bad = np.flatnonzero((pairs[:, 0] < 0) | (pairs[:, 0] >= n_src) |
                                 (pairs[:, 1] < 0) | (pairs[:, 1] >= n_dst))
            if bad.size:
                raise ValidationError(
                    f"{path}:{bad[0] + 1}: endpoint {tuple(pairs[bad[0]])} outside "
                    f"[0,{n_src}) x [0,{n_dst})")
        edges[s.name] = pairs

    features = {}
    for s in node_types:
        if s.feature_dim > 0:
            features[s.name] = _load_features(root / "features", s.name,
                                              s.count, s.feature_dim)

    graph = build_graph(node_types, edge_types, edges, features,
                        schema["target_type"])

    labels_path = root / "labels.tsv"
    pairs = _parse_int_pair_file(labels_path)
    n_target = graph.target_count
    labels = np.full(n_target, -1, dtype=np.int64)
    for row, (node_id, value) in enumerate(pairs, start=1):
        if not (0 <= node_id < n_target):
            raise ValidationError(f"{labels_path}:{row}: node id {node_id} "
                                  f"outside [0, {n_target})")
        if labels[node_id] != -1:
            raise ValidationError(f"{labels_path}:{row}: duplicate label for "
                                  f"node {node_id}")
        labels[node_id] = value
    if np.any(labels == -1):
        missing = int(np.flatnonzero(labels == -1)[0])
        raise ValidationError(f"{labels_path}: no label for target node {missing}")

    splits = None
    splits_path = root / "splits.json"
    if splits_path.is_file():
        payload = _read_json(splits_path)
        for key in ("train", "val", "test", "ood_class"):
            if key not in payload:
                raise ValidationError(f"{splits_path}: missing key {key!r}")
        splits = Splits(np.asarray(payload["train"], dtype=np.int64),
                        np.asarray(payload["val"], dtype=np.int64),
                        np.asarray(payload["test"], dtype=np.int64),
                        int(payload["ood_class"]))
        all_ids = np.concatenate([splits.train_ids, splits.val_ids, splits.test_ids])
        if all_ids.size and (all_ids.min() < 0 or all_ids.max() >= n_target):
            raise ValidationError(f"{splits_path}: node id outside [0, {n_target})")
        if np.unique(all_ids).size != all_ids.size:
            raise ValidationError(f"{splits_path}: splits overlap")
    return graph, labels, splits


def load_path_config(dir_path) -> tuple[list[tuple[str, ...]] | None, int | None]:
    """Optional meta-path settings from schema.json: (metapaths, max_hops)."""
    schema = _read_json(Path(dir_path) / "schema.json")
    metapaths = schema.get("metapaths")
    if metapaths is not None:
        metapaths = [tuple(str(t) for t in seq) for seq in metapaths]
    max_hops = schema.get("max_hops")
    return metapaths, None if max_hops is None else int(max_hops)
