"""Graph containers and the symmetric normalized adjacency used by GCN layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
import torch


class GraphError(ValueError):
    """Raised for structurally invalid graphs or batches."""


class EmptyGraphError(GraphError):
    pass


class DimensionMismatchError(GraphError):
    pass


def _canonical_edges(edges, n_nodes: int) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise GraphError(f"edges must be a list of pairs, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() >= n_nodes:
        raise GraphError(f"edge endpoint out of range [0, {n_nodes})")
    if np.any(arr[:, 0] == arr[:, 1]):
        raise GraphError("self-loops are not stored; normalization adds them")
    canon = np.sort(arr, axis=1)
    uniq = np.unique(canon, axis=0)
    if len(uniq) != len(canon):
        raise GraphError("duplicate undirected edge")
    return uniq


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """One undirected graph.

    ``edges`` is stored as sorted unique pairs ``(u, v)`` with ``u < v``.
    """

    node_features: np.ndarray
    edges: np.ndarray
    label: Optional[int] = None
    graph_id: int = 0

    def __post_init__(self):
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim != 2:
            raise GraphError("node_features must be an (n, d) matrix")
        if x.shape[0] == 0:
            raise EmptyGraphError("graph has zero nodes")
        object.__setattr__(self, "node_features", _frozen(x))
        object.__setattr__(self, "edges", _frozen(_canonical_edges(self.edges, x.shape[0])))
        if self.label is not None:
            if int(self.label) < 0:
                raise GraphError(f"label must be a nonnegative class index, got {self.label}")
            object.__setattr__(self, "label", int(self.label))

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_features(self) -> int:
        return self.node_features.shape[1]

    def with_features(self, x: np.ndarray) -> "Graph":
        return Graph(x, self.edges, self.label, self.graph_id)

    def with_edges(self, edges) -> "Graph":
        return Graph(self.node_features, edges, self.label, self.graph_id)

    def same_as(self, other: "Graph") -> bool:
        return (
            self.label == other.label
            and self.graph_id == other.graph_id
            and self.node_features.shape == other.node_features.shape
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edges, other.edges)
        )


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Several graphs packed into one block-diagonal graph.

    Edges are stored in packed (global) node coordinates; ``graph_index``
    maps every node to its graph.
    """

    packed_features: np.ndarray
    edges: np.ndarray
    graph_index: np.ndarray
    labels: Optional[np.ndarray]
    graph_ids: np.ndarray
    n_graphs: int = field(init=False)

    def __post_init__(self):
        x = _frozen(np.asarray(self.packed_features, dtype=np.float64))
        gi = _frozen(np.asarray(self.graph_index, dtype=np.int64))
        if x.ndim != 2 or x.shape[0] != gi.shape[0]:
            raise GraphError("graph_index length must match packed node count")
        if gi.size == 0:
            raise EmptyGraphError("batch has zero nodes")
        if np.any(np.diff(gi) < 0) or gi[0] != 0:
            raise GraphError("graph_index must be nondecreasing from 0")
        n_graphs = int(gi[-1]) + 1
        if len(np.unique(gi)) != n_graphs:
            raise GraphError("every graph must contribute at least one node")
        edges = _canonical_edges(self.edges, x.shape[0])
        if len(edges) and np.any(gi[edges[:, 0]] != gi[edges[:, 1]]):
            raise GraphError("edges may not cross graph boundaries")
        object.__setattr__(self, "packed_features", x)
        object.__setattr__(self, "graph_index", gi)
        object.__setattr__(self, "edges", _frozen(edges))
        if self.labels is not None:
            object.__setattr__(self, "labels", _frozen(np.asarray(self.labels, dtype=np.int64)))
        object.__setattr__(self, "graph_ids", _frozen(np.asarray(self.graph_ids, dtype=np.int64)))
        object.__setattr__(self, "n_graphs", n_graphs)

    @property
    def n_nodes(self) -> int:
        return self.packed_features.shape[0]

    @cached_property
    def node_offsets(self) -> np.ndarray:
        counts = np.bincount(self.graph_index, minlength=self.n_graphs)
        return np.concatenate([[0], np.cumsum(counts)])

    @cached_property
    def block_adjacency(self) -> sp.csr_matrix:
        n = self.n_nodes
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def with_features(self, x: np.ndarray) -> "GraphBatch":
        return GraphBatch(x, self.edges, self.graph_index, self.labels, self.graph_ids)

    def with_edges(self, edges) -> "GraphBatch":
        return GraphBatch(self.packed_features, edges, self.graph_index, self.labels, self.graph_ids)

    def unpack(self) -> list[Graph]:
        off = self.node_offsets
        out = []
        for g in range(self.n_graphs):
            lo, hi = off[g], off[g + 1]
            mask = (self.edges[:, 0] >= lo) & (self.edges[:, 0] < hi)
            label = None if self.labels is None or self.labels[g] < 0 else int(self.labels[g])
            out.append(Graph(self.packed_features[lo:hi], self.edges[mask] - lo, label, int(self.graph_ids[g])))
        return out


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` over all packed nodes."""

    values: sp.csr_matrix

    @property
    def shape(self):
        return self.values.shape

    def dense(self) -> np.ndarray:
        return self.values.toarray()

    @cached_property
    def tensor(self) -> torch.Tensor:
        coo = self.values.tocoo()
        idx = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
        val = torch.from_numpy(coo.data.astype(np.float64))
        return torch.sparse_coo_tensor(idx, val, coo.shape, check_invariants=False).coalesce()


def pack_batch(graphs: Sequence[Graph]) -> GraphBatch:
    if len(graphs) == 0:
        raise EmptyGraphError("cannot pack an empty list of graphs")
    dims = {g.n_features for g in graphs}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mixed feature dimensions {sorted(dims)}")
    sizes = [g.n_nodes for g in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    feats = np.vstack([g.node_features for g in graphs])
    edges = np.vstack([g.edges + o for g, o in zip(graphs, offsets)])
    graph_index = np.repeat(np.arange(len(graphs)), sizes)
    if all(g.label is None for g in graphs):
        labels = None
    else:
        labels = np.array([-1 if g.label is None else g.label for g in graphs])
    return GraphBatch(feats, edges, graph_index, labels, np.array([g.graph_id for g in graphs]))


def normalize_adjacency(g: Union[Graph, GraphBatch]) -> NormalizedAdjacency:
    n = g.n_nodes if isinstance(g, GraphBatch) else g.node_features.shape[0]
    if n == 0:
        raise EmptyGraphError("graph has zero nodes")
    if isinstance(g, GraphBatch):
        a = g.block_adjacency
    else:
        a = pack_batch([g]).block_adjacency
    a_tilde = a + sp.identity(n, format="csr")
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    return NormalizedAdjacency(sp.csr_matrix(d_inv_sqrt @ a_tilde @ d_inv_sqrt))


def permute_nodes(g: Graph, perm) -> Graph:
    """Relabel nodes so that old node ``i`` becomes new node ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    n = g.n_nodes
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise GraphError("perm must be a bijection on [0, n)")
    x = np.empty_like(g.node_features)
    x[perm] = g.node_features
    edges = perm[g.edges] if len(g.edges) else g.edges
    return Graph(x, edges, g.label, g.graph_id)


def inverse_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=np.int64)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv
