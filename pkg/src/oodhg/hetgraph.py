"""Typed heterogeneous graphs and meta-path adjacency composition.

A graph holds typed node sets, one directed edge list per declared edge type,
and optional per-type feature matrices. Meta-paths are node-type sequences;
composing one multiplies the row-normalized per-hop adjacencies left to
right, yielding a row-stochastic matrix between the endpoint types.

Graphs are immutable after construction and safe to share across threads.
Composed matrices are cached on the graph keyed by type sequence, so repeated
propagation reuses them instead of recomputing the chain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    FeaturelessEndType,
    IndexOutOfRange,
    InvalidPath,
    UnknownType,
    ValidationError,
)
from .sparse import SparseRowMatrix


@dataclass(frozen=True)
class NodeTypeSchema:
    """One node type: its name, node count, and feature width (0 = featureless)."""

    name: str
    count: int
    feature_dim: int = 0


@dataclass(frozen=True)
class EdgeTypeSchema:
    """One directed edge type between two declared node types.

    Reverse relations are separate edge types; nothing is mirrored implicitly.
    """

    name: str
    src_type: str
    dst_type: str


@dataclass(frozen=True)
class MetaPath:
    """Ordered node-type sequence of length >= 2; hop count is len - 1."""

    types: tuple[str, ...]

    def __init__(self, types):
        object.__setattr__(self, "types", tuple(types))
        if len(self.types) < 2:
            raise InvalidPath(f"meta-path needs at least 2 types, got {self.types}")

    @property
    def n_hops(self) -> int:
        return len(self.types) - 1

    def hops(self) -> list[tuple[str, str]]:
        return list(zip(self.types[:-1], self.types[1:]))

    def __str__(self) -> str:
        return "->".join(self.types)


class HeteroGraph:
    """Validated, immutable heterogeneous graph.

    Build through build_graph; the constructor trusts its inputs. Edge lists
    are (m, 2) int64 arrays of indices local to each endpoint type. Feature
    matrices are float64 with shape (count, feature_dim).
    """

    def __init__(self, node_types, edge_types, edges, features, target_type):
        self.node_types: tuple[NodeTypeSchema, ...] = tuple(node_types)
        self.edge_types: tuple[EdgeTypeSchema, ...] = tuple(edge_types)
        self.edges: dict[str, np.ndarray] = dict(edges)
        self.features: dict[str, np.ndarray] = dict(features)
        self.target_type: str = target_type
        self._nodes_by_name = {s.name: s for s in self.node_types}
        self._edges_by_name = {s.name: s for s in self.edge_types}
        pair_index: dict[tuple[str, str], list[str]] = {}
        for s in self.edge_types:
            pair_index.setdefault((s.src_type, s.dst_type), []).append(s.name)
        self._pair_index = pair_index
        self._adjacency_cache: dict[str, SparseRowMatrix] = {}
        self._hop_cache: dict[tuple[str, str], SparseRowMatrix] = {}
        self._composed_cache: dict[tuple[str, ...], SparseRowMatrix] = {}

    # -- schema lookups -------------------------------------------------

    def node_schema(self, name: str) -> NodeTypeSchema:
        try:
            return self._nodes_by_name[name]
        except KeyError:
            raise UnknownType(f"unknown node type {name!r}") from None

    def edge_schema(self, name: str) -> EdgeTypeSchema:
        try:
            return self._edges_by_name[name]
        except KeyError:
            raise UnknownType(f"unknown edge type {name!r}") from None

    def node_count(self, name: str) -> int:
        return self.node_schema(name).count

    def feature_dim(self, name: str) -> int:
        return self.node_schema(name).feature_dim

    @property
    def target_count(self) -> int:
        return self.node_count(self.target_type)

    def edge_type_names_between(self, src: str, dst: str) -> list[str]:
        return self._pair_index.get((src, dst), [])

    def clear_caches(self) -> None:
        """Drop cached adjacencies (used by the propagation benchmark)."""
        self._adjacency_cache.clear()
        self._hop_cache.clear()
        self._composed_cache.clear()


def build_graph(node_types, edge_types, edges, features=None,
                target_type=None) -> HeteroGraph:
    """Validate schemas, edges, and features, and assemble a HeteroGraph.

    Args:
        node_types: iterable of NodeTypeSchema.
        edge_types: iterable of EdgeTypeSchema.
        edges: mapping edge-type name -> iterable of (src, dst) index pairs.
        features: mapping node-type name -> (count, feature_dim) matrix.
        target_type: name of the node type under classification.

    Raises:
        UnknownType: an edge schema, edges key, features key, or target_type
            names an undeclared type.
        IndexOutOfRange: an edge endpoint index is >= its type's count.
        DimensionMismatch: a feature matrix has the wrong shape.
        ValidationError: duplicate names, duplicate edge pairs, count < 1,
            missing features for a featured type, or non-finite features.
    """
    node_types = tuple(node_types)
    edge_types = tuple(edge_types)
    features = dict(features or {})
    edges = dict(edges or {})

    names = [s.name for s in node_types]
    if len(set(names)) != len(names):
        raise ValidationError("duplicate node type names")
    for s in node_types:
        if s.count < 1:
            raise ValidationError(f"node type {s.name!r} must have count >= 1")
        if s.feature_dim < 0:
            raise ValidationError(f"node type {s.name!r} has negative feature_dim")
    by_name = {s.name: s for s in node_types}

    edge_names = [s.name for s in edge_types]
    if len(set(edge_names)) != len(edge_names):
        raise ValidationError("duplicate edge type names")
    for s in edge_types:
        for end in (s.src_type, s.dst_type):
            if end not in by_name:
                raise UnknownType(
                    f"edge type {s.name!r} references unknown node type {end!r}")

    if target_type is None or target_type not in by_name:
        raise UnknownType(f"target_type {target_type!r} is not a declared node type")

    declared = set(edge_names)
    for key in edges:
        if key not in declared:
            raise UnknownType(f"edges given for undeclared edge type {key!r}")
    checked_edges: dict[str, np.ndarray] = {}
    for s in edge_types:
        pairs = np.asarray(edges.get(s.name, np.zeros((0, 2))), dtype=np.int64)
        pairs = pairs.reshape(-1, 2)
        n_src = by_name[s.src_type].count
        n_dst = by_name[s.dst_type].count
        if pairs.size:
            if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= n_src:
                bad = pairs[(pairs[:, 0] < 0) | (pairs[:, 0] >= n_src)][0]
                raise IndexOutOfRange(
                    f"edge type {s.name!r}: src index {bad[0]} outside "
                    f"[0, {n_src}) for type {s.src_type!r}")
            if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= n_dst:
                bad = pairs[(pairs[:, 1] < 0) | (pairs[:, 1] >= n_dst)][0]
                raise IndexOutOfRange(
                    f"edge type {s.name!r}: dst index {bad[1]} outside "
                    f"[0, {n_dst}) for type {s.dst_type!r}")
            uniq = np.unique(pairs, axis=0)
            if uniq.shape[0] != pairs.shape[0]:
                raise ValidationError(f"duplicate (src, dst) pair in edge type {s.name!r}")
        checked_edges[s.name] = pairs

    checked_features: dict[str, np.ndarray] = {}
    for key in features:
        if key not in by_name:
            raise UnknownType(f"features given for unknown node type {key!r}")
    for s in node_types:
        if s.feature_dim == 0:
            if s.name in features:
                raise DimensionMismatch(
                    f"node type {s.name!r} is featureless but features were given")
            continue
        if s.name not in features:
            raise ValidationError(f"missing feature matrix for node type {s.name!r}")
        mat = np.asarray(features[s.name], dtype=np.float64)
        if mat.shape != (s.count, s.feature_dim):
            raise DimensionMismatch(
                f"features for {s.name!r} have shape {mat.shape}, "
                f"expected ({s.count}, {s.feature_dim})")
        if not np.all(np.isfinite(mat)):
            raise ValidationError(f"non-finite feature value for node type {s.name!r}")
        checked_features[s.name] = mat

    return HeteroGraph(node_types, edge_types, checked_edges,
                       checked_features, target_type)


def adjacency(graph: HeteroGraph, edge_type: str) -> SparseRowMatrix:
    """Binary adjacency of one edge type, shape count(src) x count(dst)."""
    cached = graph._adjacency_cache.get(edge_type)
    if cached is not None:
        return cached
    schema = graph.edge_schema(edge_type)
    mat = SparseRowMatrix.from_edge_pairs(
        graph.node_count(schema.src_type),
        graph.node_count(schema.dst_type),
        graph.edges[edge_type])
    graph._adjacency_cache[edge_type] = mat
    return mat


def hop_matrix(graph: HeteroGraph, src: str, dst: str) -> SparseRowMatrix:
    """Row-normalized adjacency between two node types.

    When several edge types share the (src, dst) signature their edge sets
    are unioned before normalization: the hop relates the types, not any
    single relation name.
    """
    key = (src, dst)
    cached = graph._hop_cache.get(key)
    if cached is not None:
        return cached
    names = graph.edge_type_names_between(src, dst)
    if not names:
        raise InvalidPath(f"no declared edge type from {src!r} to {dst!r}")
    if len(names) == 1:
        binary = adjacency(graph, names[0])
    else:
        pairs = np.concatenate([graph.edges[n].reshape(-1, 2) for n in names])
        binary = SparseRowMatrix.from_edge_pairs(
            graph.node_count(src), graph.node_count(dst), pairs,
            duplicates="union")
    normalized = binary.row_normalize()
    graph._hop_cache[key] = normalized
    return normalized


def _as_metapath(path) -> MetaPath:
    return path if isinstance(path, MetaPath) else MetaPath(path)


def validate_metapath(graph: HeteroGraph, path) -> MetaPath:
    """Check every node type exists and every hop has a declared edge type."""
    path = _as_metapath(path)
    for t in path.types:
        graph.node_schema(t)
    for src, dst in path.hops():
        if not graph.edge_type_names_between(src, dst):
            raise InvalidPath(
                f"meta-path {path}: no declared edge type from {src!r} to {dst!r}")
    return path


# a composed row whose sum drifts from 1 beyond this lost real mass to a
# dangling intermediate node (float noise stays orders of magnitude below)
LOST_MASS_TOL = 1e-9


def _renormalize_lossy_rows(m: SparseRowMatrix) -> SparseRowMatrix:
    sums = m.row_sums()
    lossy = (sums > 0) & (np.abs(sums - 1.0) > LOST_MASS_TOL)
    if not np.any(lossy):
        return m
    scale = np.where(lossy, 1.0 / np.where(sums > 0, sums, 1.0), 1.0)
    values = m.values * np.repeat(scale, m.row_counts())
    return SparseRowMatrix(m.n_rows, m.n_cols, m.row_offsets, m.col_indices, values)


def compose_metapath(graph: HeteroGraph, path) -> SparseRowMatrix:
    """Left-to-right product of the row-normalized per-hop adjacencies.

    Two repairs keep the output row-stochastic on arbitrary graphs. A row
    that lost mass to a dangling intermediate node (an empty row in a later
    hop) is rescaled to sum 1; rows already summing to 1 are left bitwise
    untouched. Then, when the path starts and ends at the same type, every
    all-zero row i becomes a lone (i, i) = 1 entry so propagation leaves
    isolated nodes unchanged instead of draining them. The result is cached
    on the graph per type sequence.
    """
    path = validate_metapath(graph, path)
    cached = graph._composed_cache.get(path.types)
    if cached is not None:
        return cached
    hops = path.hops()
    product = hop_matrix(graph, *hops[0])
    for hop in hops[1:]:
        product = product.matmul(hop_matrix(graph, *hop))
    product = _renormalize_lossy_rows(product)
    if path.types[0] == path.types[-1]:
        product = product.with_unit_diagonal_on_empty_rows()
    graph._composed_cache[path.types] = product
    return product


def candidate_metapaths(graph: HeteroGraph, max_hops: int) -> list[MetaPath]:
    """All type sequences of <= max_hops hops that start and end at the target.

    Every consecutive pair must be a declared edge-type signature. The result
    is sorted lexicographically by type sequence and is deterministic.
    """
    if max_hops < 2:
        raise ValueError(f"max_hops must be >= 2, got {max_hops}")
    successors: dict[str, list[str]] = {}
    for (src, dst) in graph._pair_index:
        successors.setdefault(src, []).append(dst)
    for src in successors:
        successors[src] = sorted(set(successors[src]))
    target = graph.target_type
    found: list[tuple[str, ...]] = []

    def extend(seq: tuple[str, ...]) -> None:
        if len(seq) >= 2 and seq[-1] == target:
            found.append(seq)
        if len(seq) - 1 >= max_hops:
            return
        for nxt in successors.get(seq[-1], ()):
            extend(seq + (nxt,))

    extend((target,))
    return [MetaPath(seq) for seq in sorted(found)]


def metapath_features(graph: HeteroGraph, path) -> np.ndarray:
    """Features of the path's end type aggregated back to the start type.

    Computes (product of row-normalized hop adjacencies) @ features(end).
    Zero rows are left as zeros here, not self-loop repaired: a node with no
    path instances simply aggregates nothing. Evaluated right to left so only
    sparse-by-dense products are formed.
    """
    path = validate_metapath(graph, path)
    end = path.types[-1]
    if graph.feature_dim(end) == 0:
        raise FeaturelessEndType(
            f"meta-path {path} ends at featureless type {end!r}")
    out = graph.features[end]
    for src, dst in reversed(path.hops()):
        out = hop_matrix(graph, src, dst).matmul_dense(out)
    return out
