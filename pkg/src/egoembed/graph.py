"""Attributed-graph containers and the content/cites text loader.

Datasets arrive as two text files: ``<name>.content`` with one node per
line (``node_id f_1 ... f_d label``) and ``<name>.cites`` with one
citation per line (``citing_id cited_id``). Nodes are indexed densely in
content-file order; citation links become undirected, deduplicated,
unit-weight edges. Everything is immutable after construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class ParseError(ValueError):
    """A dataset line that cannot be parsed; carries the 1-based line number."""

    def __init__(self, source, line_number, message):
        self.source = source
        self.line_number = line_number
        super().__init__(f"{source}, line {line_number}: {message}")


class DimensionError(ValueError):
    pass


def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SparseGraph:
    """Symmetric adjacency in CSR form.

    ``row_offsets`` has length num_nodes+1; ``col_indices`` is strictly
    increasing within each row (no duplicate edges).
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    edge_weights: np.ndarray

    @property
    def nnz(self):
        return len(self.col_indices)

    def neighbors(self, i):
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi]

    def neighbor_weights(self, i):
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.edge_weights[lo:hi]

    def has_edge(self, i, j):
        row = self.neighbors(i)
        pos = np.searchsorted(row, j)
        return pos < len(row) and row[pos] == j

    def degrees(self):
        return np.diff(self.row_offsets)

    def has_self_loops(self):
        return all(self.has_edge(i, i) for i in range(self.num_nodes))

    def undirected_edges(self, include_self_loops=False):
        """Unique undirected edges as an (m, 2) array with i < j (or i <= j)."""
        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        cols = self.col_indices
        if include_self_loops:
            mask = rows <= cols
        else:
            mask = rows < cols
        return np.column_stack([rows[mask], cols[mask]])

    def to_dense(self):
        dense = np.zeros((self.num_nodes, self.num_nodes))
        rows = np.repeat(np.arange(self.num_nodes), self.degrees())
        dense[rows, self.col_indices] = self.edge_weights
        return dense

    def validate(self):
        n = self.num_nodes
        if len(self.row_offsets) != n + 1:
            raise ValueError("row_offsets must have length num_nodes + 1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != self.nnz:
            raise ValueError("row_offsets endpoints inconsistent with col_indices")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        for i in range(n):
            row = self.neighbors(i)
            if len(row) > 1 and np.any(np.diff(row) <= 0):
                raise ValueError(f"col_indices not strictly increasing in row {i}")
        if self.nnz and (self.col_indices.min() < 0 or self.col_indices.max() >= n):
            raise ValueError("col_indices out of range")
        dense = self.to_dense()
        if not np.array_equal(dense, dense.T):
            raise ValueError("adjacency is not symmetric")
        return self


def graph_from_edges(num_nodes, edges, weight=1.0, symmetrize=True):
    """Build a SparseGraph from an iterable of (i, j) pairs.

    Duplicates collapse to a single entry with the given weight; the
    reverse direction is added when ``symmetrize`` is set.
    """
    edges = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if len(edges):
        if edges.min() < 0 or edges.max() >= num_nodes:
            raise ValueError("edge endpoint out of range")
        if symmetrize:
            edges = np.concatenate([edges, edges[:, ::-1]], axis=0)
        keys = edges[:, 0] * num_nodes + edges[:, 1]
        keys = np.unique(keys)
        rows, cols = keys // num_nodes, keys % num_nodes
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
    offsets = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(offsets, rows + 1, 1)
    offsets = np.cumsum(offsets)
    return SparseGraph(
        num_nodes=num_nodes,
        row_offsets=_freeze(offsets.astype(np.int64)),
        col_indices=_freeze(cols.astype(np.int64)),
        edge_weights=_freeze(np.full(len(cols), weight, dtype=np.float64)),
    )


def add_self_loops(g, weight=1.0):
    """Return a graph where every node has a self-loop; idempotent.

    Existing diagonal entries are kept as they are.
    """
    missing = [i for i in range(g.num_nodes) if not g.has_edge(i, i)]
    if not missing:
        return g
    degrees = g.degrees()
    rows = np.repeat(np.arange(g.num_nodes), degrees)
    all_rows = np.concatenate([rows, np.array(missing, dtype=np.int64)])
    all_cols = np.concatenate([g.col_indices, np.array(missing, dtype=np.int64)])
    all_w = np.concatenate([g.edge_weights, np.full(len(missing), weight)])
    order = np.lexsort((all_cols, all_rows))
    offsets = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.add.at(offsets, all_rows + 1, 1)
    return SparseGraph(
        num_nodes=g.num_nodes,
        row_offsets=_freeze(np.cumsum(offsets).astype(np.int64)),
        col_indices=_freeze(all_cols[order]),
        edge_weights=_freeze(all_w[order]),
    )


@dataclass(frozen=True)
class AttributeMatrix:
    """Dense node-by-feature matrix; row i is node i's attribute vector."""

    num_nodes: int
    num_features: int
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.num_nodes, self.num_features):
            raise DimensionError(
                f"attribute matrix shape {self.values.shape} does not match "
                f"({self.num_nodes}, {self.num_features})"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("attribute matrix contains non-finite values")

    def row_normalized(self):
        """Copy with each nonzero row scaled to sum 1 (optional preprocessing)."""
        sums = self.values.sum(axis=1, keepdims=True)
        sums[sums == 0.0] = 1.0
        return AttributeMatrix(self.num_nodes, self.num_features, _freeze(self.values / sums))


@dataclass(frozen=True)
class LabelVector:
    labels: np.ndarray
    num_classes: int
    class_names: tuple = field(default=())

    def __post_init__(self):
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label id out of range")


def load_content_cites(content_source, cites_source, normalize_features=False):
    """Parse a content/cites file pair into (SparseGraph, AttributeMatrix, LabelVector).

    Node ids are mapped to dense indices in content-file order. Citations
    referring to unknown ids are dropped (their count is logged), as are
    self-citations. Duplicate citations collapse to a single unit-weight
    undirected edge.
    """
    ids = []
    id_to_index = {}
    feature_rows = []
    raw_labels = []
    num_features = None
    for lineno, line in enumerate(content_source, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) < 3:
            raise ParseError("content", lineno, f"expected 'id features... label', got {len(tokens)} fields")
        node_id, *feats, label = tokens
        if num_features is None:
            num_features = len(feats)
        elif len(feats) != num_features:
            raise DimensionError(
                f"content, line {lineno}: {len(feats)} feature values, expected {num_features}"
            )
        if node_id in id_to_index:
            raise ParseError("content", lineno, f"duplicate node id {node_id!r}")
        try:
            row = np.array([float(tok) for tok in feats], dtype=np.float64)
        except ValueError as exc:
            raise ParseError("content", lineno, f"bad feature value ({exc})") from None
        id_to_index[node_id] = len(ids)
        ids.append(node_id)
        feature_rows.append(row)
        raw_labels.append(label)
    if not ids:
        raise ParseError("content", 0, "no nodes found")

    n = len(ids)
    edges = []
    dangling = 0
    self_cites = 0
    for lineno, line in enumerate(cites_source, start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 2:
            raise ParseError("cites", lineno, f"expected 'citing cited', got {len(tokens)} fields")
        a, b = tokens
        if a not in id_to_index or b not in id_to_index:
            dangling += 1
            continue
        i, j = id_to_index[a], id_to_index[b]
        if i == j:
            self_cites += 1
            continue
        edges.append((i, j))
    if dangling or self_cites:
        logger.info(
            "dropped %d dangling citation(s) and %d self-citation(s)", dangling, self_cites
        )

    graph = graph_from_edges(n, edges, symmetrize=True)
    attrs = AttributeMatrix(n, num_features, _freeze(np.vstack(feature_rows)))
    if normalize_features:
        attrs = attrs.row_normalized()
    class_names = tuple(sorted(set(raw_labels)))
    class_index = {name: k for k, name in enumerate(class_names)}
    labels = LabelVector(
        labels=_freeze(np.array([class_index[lab] for lab in raw_labels], dtype=np.int64)),
        num_classes=len(class_names),
        class_names=class_names,
    )
    return graph, attrs, labels


def load_dataset_dir(path, normalize_features=False):
    """Load the single ``*.content`` / ``*.cites`` pair found under ``path``."""
    path = Path(path)
    content_files = sorted(path.glob("*.content"))
    if len(content_files) != 1:
        raise FileNotFoundError(f"expected exactly one *.content file in {path}, found {len(content_files)}")
    content = content_files[0]
    cites = content.with_suffix(".cites")
    if not cites.exists():
        raise FileNotFoundError(f"missing cites file {cites}")
    with open(content, encoding="utf-8") as fc, open(cites, encoding="utf-8") as fz:
        return load_content_cites(fc, fz, normalize_features=normalize_features)
