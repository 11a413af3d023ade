"""Graph container, normalized Laplacian and graph Fourier transform."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.linalg

SPECTRUM_TOL = 1e-6


class SpectralError(RuntimeError):
    """Raised when a Laplacian cannot be decomposed into a valid spectrum."""


def _canonical_edges(edges, num_nodes: int) -> np.ndarray:
    arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if arr.min() < 0 or arr.max() >= num_nodes:
        raise ValueError(f"edge endpoint out of range [0, {num_nodes})")
    if np.any(arr[:, 0] == arr[:, 1]):
        raise ValueError("self-loops are not allowed")
    arr = np.sort(arr, axis=1)
    arr = np.unique(arr, axis=0)
    return arr


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted graph with a node-feature matrix.

    ``edges`` is normalized on construction to a sorted ``(E, 2)`` integer
    array with ``i < j`` in every row; duplicates are collapsed. Self-loops
    and out-of-range endpoints raise ``ValueError``.
    """

    num_nodes: int
    edges: np.ndarray
    node_features: np.ndarray = field(default=None)
    label: Optional[int] = None

    def __post_init__(self):
        if int(self.num_nodes) < 1:
            raise ValueError("a graph needs at least one node")
        object.__setattr__(self, "num_nodes", int(self.num_nodes))
        object.__setattr__(self, "edges", _canonical_edges(self.edges, self.num_nodes))
        feats = self.node_features
        if feats is None:
            feats = np.zeros((self.num_nodes, 0))
        feats = np.asarray(feats, dtype=float)
        if feats.ndim == 1:
            feats = feats[:, None]
        if feats.shape[0] != self.num_nodes:
            raise ValueError(
                f"node_features has {feats.shape[0]} rows, expected {self.num_nodes}"
            )
        feats.setflags(write=False)
        self.edges.setflags(write=False)
        object.__setattr__(self, "node_features", feats)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_features(self) -> int:
        return self.node_features.shape[1]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes))
        if self.num_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.edges.ravel(), 1)
        return deg

    def with_features(self, node_features) -> "Graph":
        return Graph(self.num_nodes, self.edges, node_features, self.label)

    def relabel(self, perm: Iterable[int]) -> "Graph":
        """Return the isomorphic graph in which old node ``v`` becomes ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        feats = np.empty_like(self.node_features)
        feats[perm] = self.node_features
        return Graph(self.num_nodes, perm[self.edges], feats, self.label)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigenvalues (ascending, clamped to [0, 2]) and orthonormal eigenvectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def size(self) -> int:
        return len(self.eigenvalues)


def build_normalized_laplacian(graph: Graph) -> np.ndarray:
    """Symmetrically normalized Laplacian ``I - D^-1/2 A D^-1/2``.

    Isolated nodes get ``D^-1/2 = 0`` so their row is just the identity.
    """
    adj = graph.adjacency()
    deg = adj.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return np.eye(graph.num_nodes) - inv_sqrt[:, None] * adj * inv_sqrt[None, :]


def eigendecompose(laplacian, graph_index: Optional[int] = None) -> SpectralDecomposition:
    """Dense symmetric eigendecomposition of a normalized Laplacian.

    The input is symmetrized before solving. Eigenvalues are clamped to
    [0, 2]; a value outside that interval by more than ``SPECTRUM_TOL``
    means the input was not a normalized Laplacian and raises
    :class:`SpectralError`.
    """
    lap = np.asarray(laplacian, dtype=float)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {lap.shape}")
    lap = 0.5 * (lap + lap.T)
    where = "" if graph_index is None else f" (graph {graph_index})"
    try:
        evals, evecs = scipy.linalg.eigh(lap)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed to converge{where}: {exc}") from exc
    if evals[0] < -SPECTRUM_TOL or evals[-1] > 2.0 + SPECTRUM_TOL:
        raise SpectralError(
            f"spectrum [{evals[0]:.3g}, {evals[-1]:.3g}] outside [0, 2]{where}"
        )
    evals = np.clip(evals, 0.0, 2.0)
    evals.setflags(write=False)
    evecs.setflags(write=False)
    return SpectralDecomposition(evals, evecs)


def decompose(graph: Graph, graph_index: Optional[int] = None) -> SpectralDecomposition:
    return eigendecompose(build_normalized_laplacian(graph), graph_index)


def graph_fourier_transform(decomp: SpectralDecomposition, signal) -> np.ndarray:
    """Project ``signal`` onto the Laplacian eigenbasis (``U^T x``).

    ``signal`` may be a vector of length N or an ``(N, D)`` matrix, in which
    case every column is transformed.
    """
    x = np.asarray(signal, dtype=float)
    if x.shape[0] != decomp.size:
        raise ValueError(f"signal length {x.shape[0]} != graph size {decomp.size}")
    return decomp.eigenvectors.T @ x
