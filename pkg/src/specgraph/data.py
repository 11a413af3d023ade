"""Graph datasets: TU-format reader/writer and synthetic benchmark generators."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from specgraph.graph import Graph

log = logging.getLogger(__name__)

DATA_DIR_ENV = "SPECGRAPH_DATA_DIR"
SYNTHETIC = ("ring_vs_clique", "sbm")


# --------------------------------------------------------------------------
# Errors
# --------------------------------------------------------------------------


class TUFormatError(ValueError):
    """Malformed TU dataset. Carries the offending file and 1-based line."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if path is not None:
            where = f"{Path(path).name}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingFileError(TUFormatError):
    pass


class NodeIndexError(TUFormatError):
    pass


class RowCountError(TUFormatError):
    pass


class TokenError(TUFormatError):
    pass


# --------------------------------------------------------------------------
# Dataset
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    graphs: tuple
    name: str = ""
    provenance: dict = field(default_factory=lambda: {"kind": "memory"})

    def __post_init__(self):
        graphs = tuple(self.graphs)
        if not graphs:
            raise ValueError("a dataset needs at least one graph")
        dims = {g.num_features for g in graphs}
        if len(dims) != 1:
            raise ValueError(f"graphs disagree on feature dimension: {sorted(dims)}")
        if any(g.label is None for g in graphs):
            raise ValueError("every graph in a dataset must be labeled")
        object.__setattr__(self, "graphs", graphs)

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def num_features(self) -> int:
        return self.graphs[0].num_features

    def stats(self) -> dict:
        counts = np.bincount(self.labels, minlength=self.num_classes)
        return {
            "name": self.name,
            "num_graphs": len(self),
            "num_classes": self.num_classes,
            "class_counts": [int(c) for c in counts],
            "mean_nodes": float(np.mean([g.num_nodes for g in self.graphs])),
            "mean_edges": float(np.mean([g.num_edges for g in self.graphs])),
            "num_features": self.num_features,
        }


# --------------------------------------------------------------------------
# TU format
# --------------------------------------------------------------------------


def _read_lines(path: Path) -> list:
    with open(path, "r", newline=None) as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def _parse_row(text: str, conv, path: Path, lineno: int) -> list:
    toks = [t.strip() for t in text.split(",")]
    try:
        return [conv(t) for t in toks]
    except ValueError:
        raise TokenError(f"non-numeric token in {text.strip()!r}", path, lineno) from None


def _read_column(path: Path, conv=int) -> list:
    out = []
    for n, ln in enumerate(_read_lines(path), start=1):
        row = _parse_row(ln, conv, path, n)
        if len(row) != 1:
            raise TokenError(f"expected one value, got {len(row)}", path, n)
        out.append(row[0])
    return out


def parse_tu_dataset(directory, name: str) -> Dataset:
    """Read a dataset in the TU multi-file text format.

    Node attributes (if present) become features; integer node labels (if
    present) are one-hot encoded over the sorted set of values seen in the
    dataset and appended after the attributes. Graph labels are remapped
    to ``0..C-1`` in ascending order of the raw value.
    """
    root = Path(directory)
    paths = {k: root / f"{name}_{k}.txt" for k in
             ("A", "graph_indicator", "graph_labels", "node_attributes", "node_labels")}
    for key in ("A", "graph_indicator", "graph_labels"):
        if not paths[key].is_file():
            raise MissingFileError(f"missing mandatory file {paths[key]}", paths[key])

    raw_labels = _read_column(paths["graph_labels"])
    num_graphs = len(raw_labels)
    indicator = _read_column(paths["graph_indicator"])
    num_nodes = len(indicator)
    for n, gid in enumerate(indicator, start=1):
        if not 1 <= gid <= num_graphs:
            raise NodeIndexError(f"graph id {gid} outside 1..{num_graphs}", paths["graph_indicator"], n)
    owner = np.asarray(indicator, dtype=np.int64) - 1

    # local index of every global node within its graph
    counts = np.bincount(owner, minlength=num_graphs)
    local = np.empty(num_nodes, dtype=np.int64)
    seen = np.zeros(num_graphs, dtype=np.int64)
    for v, g in enumerate(owner):
        local[v] = seen[g]
        seen[g] += 1

    edges = [[] for _ in range(num_graphs)]
    self_loops = 0
    path_a = paths["A"]
    for n, ln in enumerate(_read_lines(path_a), start=1):
        row = _parse_row(ln, int, path_a, n)
        if len(row) != 2:
            raise TokenError(f"expected 'i, j', got {ln.strip()!r}", path_a, n)
        i, j = row
        if not (1 <= i <= num_nodes and 1 <= j <= num_nodes):
            raise NodeIndexError(f"node index outside 1..{num_nodes}", path_a, n)
        i, j = i - 1, j - 1
        if owner[i] != owner[j]:
            raise NodeIndexError("edge joins nodes of different graphs", path_a, n)
        if i == j:
            self_loops += 1
            continue
        edges[owner[i]].append((local[i], local[j]))
    if self_loops:
        log.warning("%s: dropped %d self-loop(s)", name, self_loops)

    blocks = []
    if paths["node_attributes"].is_file():
        p = paths["node_attributes"]
        rows = [_parse_row(ln, float, p, n) for n, ln in enumerate(_read_lines(p), start=1)]
        if len(rows) != num_nodes:
            raise RowCountError(f"{len(rows)} attribute rows for {num_nodes} nodes", p, len(rows))
        widths = {len(r) for r in rows}
        if len(widths) != 1:
            bad = next(n for n, r in enumerate(rows, start=1) if len(r) != len(rows[0]))
            raise TokenError("inconsistent attribute row width", p, bad)
        blocks.append(np.asarray(rows, dtype=float))
    if paths["node_labels"].is_file():
        p = paths["node_labels"]
        rows = [_parse_row(ln, int, p, n) for n, ln in enumerate(_read_lines(p), start=1)]
        if len(rows) != num_nodes:
            raise RowCountError(f"{len(rows)} node-label rows for {num_nodes} nodes", p, len(rows))
        # TU node-label files occasionally carry several columns; the first is the label
        node_lab = np.array([r[0] for r in rows])
        values, inverse = np.unique(node_lab, return_inverse=True)
        blocks.append(np.eye(len(values))[inverse])
    feats = np.hstack(blocks) if blocks else np.zeros((num_nodes, 0))

    label_values = sorted(set(raw_labels))
    remap = {v: i for i, v in enumerate(label_values)}
    order = np.argsort(owner, kind="stable")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    graphs = []
    for g in range(num_graphs):
        if counts[g] == 0:
            raise TUFormatError(f"graph {g + 1} has no nodes", paths["graph_indicator"])
        nodes = order[starts[g]:starts[g] + counts[g]]
        graphs.append(Graph(int(counts[g]), edges[g], feats[nodes], remap[raw_labels[g]]))
    return Dataset(graphs, name=name, provenance={"kind": "tu_files", "directory": str(root)})


def write_tu_dataset(dataset: Dataset, directory, name: Optional[str] = None) -> Path:
    """Write ``dataset`` in TU format; features go to ``_node_attributes.txt``."""
    name = name or dataset.name or "dataset"
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    offset = 0
    a_lines, ind_lines, attr_lines, lab_lines = [], [], [], []
    for gid, g in enumerate(dataset.graphs, start=1):
        for i, j in g.edges:
            a_lines.append(f"{i + offset + 1}, {j + offset + 1}")
            a_lines.append(f"{j + offset + 1}, {i + offset + 1}")
        ind_lines.extend([str(gid)] * g.num_nodes)
        for row in g.node_features:
            attr_lines.append(", ".join(format(v, ".17g") for v in row))
        lab_lines.append(str(g.label))
        offset += g.num_nodes

    def dump(suffix, lines):
        with open(root / f"{name}_{suffix}.txt", "w", newline="\n") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))

    dump("A", a_lines)
    dump("graph_indicator", ind_lines)
    dump("graph_labels", lab_lines)
    if dataset.num_features:
        dump("node_attributes", attr_lines)
    return root


# --------------------------------------------------------------------------
# Featurization
# --------------------------------------------------------------------------


def one_hot_degree_features(dataset: Dataset, override: bool = False) -> Dataset:
    """Replace node features with one-hot node degrees.

    The encoding width is the dataset-wide maximum degree plus one, so train
    and test graphs drawn from the same dataset share a layout.
    """
    if dataset.num_features and not override:
        raise ValueError(
            f"dataset {dataset.name!r} already has {dataset.num_features} feature(s); "
            "pass override=True to replace them"
        )
    degrees = [g.degrees() for g in dataset.graphs]
    width = int(max(d.max() for d in degrees)) + 1
    eye = np.eye(width)
    graphs = [g.with_features(eye[d]) for g, d in zip(dataset.graphs, degrees)]
    return Dataset(graphs, dataset.name, dict(dataset.provenance))


# --------------------------------------------------------------------------
# Synthetic generators
# --------------------------------------------------------------------------


def _is_connected(n: int, edges: np.ndarray) -> bool:
    if n == 1:
        return True
    if len(edges) == 0:
        return False
    adj = coo_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n))
    ncomp, _ = connected_components(adj, directed=False)
    return ncomp == 1


def _sample_edges(prob: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = prob.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < prob[iu, ju]
    return np.column_stack([iu[keep], ju[keep]])


def _connected_sample(prob: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    while True:
        edges = _sample_edges(prob, rng)
        if _is_connected(prob.shape[0], edges):
            return edges


def _balanced_labels(num_graphs: int) -> np.ndarray:
    if num_graphs < 2 or num_graphs % 2:
        raise ValueError("num_graphs must be a positive even number")
    return np.arange(num_graphs) % 2


def gen_ring_vs_clique(num_graphs: int = 200, seed: int = 0, edge_prob: float = 0.2,
                       base_sizes=(10, 30), motif_sizes=(5, 10)) -> Dataset:
    """Connected Erdos-Renyi graphs with a ring (class 0) or clique (class 1) attached.

    Base nodes come first (``0..n_base-1``), motif nodes after. One bridge
    edge joins a uniformly chosen base node to a uniformly chosen motif node.
    Node features are one-hot degrees.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for label in _balanced_labels(num_graphs):
        n_base = int(rng.integers(base_sizes[0], base_sizes[1] + 1))
        base = _connected_sample(np.full((n_base, n_base), edge_prob), rng)
        size = int(rng.integers(motif_sizes[0], motif_sizes[1] + 1))
        motif_nodes = n_base + np.arange(size)
        if label == 0:
            motif = np.column_stack([motif_nodes, np.roll(motif_nodes, -1)])
        else:
            iu, ju = np.triu_indices(size, k=1)
            motif = np.column_stack([motif_nodes[iu], motif_nodes[ju]])
        bridge = [[int(rng.integers(n_base)), int(rng.choice(motif_nodes))]]
        edges = np.vstack([base.reshape(-1, 2), motif, bridge])
        graphs.append(Graph(n_base + size, edges, None, int(label)))
    ds = Dataset(graphs, "ring_vs_clique",
                 {"kind": "synthetic", "generator": "ring_vs_clique", "seed": seed,
                  "num_graphs": num_graphs, "edge_prob": edge_prob})
    return one_hot_degree_features(ds)


def block_sizes(n: int, num_blocks: int) -> list:
    q, r = divmod(n, num_blocks)
    return [q + (1 if b < r else 0) for b in range(num_blocks)]


def gen_sbm(num_graphs: int = 200, seed: int = 0, p_in: float = 0.8, p_out: float = 0.1,
            sizes=(10, 30)) -> Dataset:
    """Stochastic block model graphs: 2 blocks (class 0) vs 3 blocks (class 1).

    Node features are one-hot degrees. Nodes are ordered block by block.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for label in _balanced_labels(num_graphs):
        n = int(rng.integers(sizes[0], sizes[1] + 1))
        blocks = np.repeat(np.arange(2 + label), block_sizes(n, 2 + label))
        prob = np.where(blocks[:, None] == blocks[None, :], p_in, p_out)
        edges = _connected_sample(prob, rng)
        graphs.append(Graph(n, edges, None, int(label)))
    ds = Dataset(graphs, "sbm",
                 {"kind": "synthetic", "generator": "sbm", "seed": seed,
                  "num_graphs": num_graphs, "p_in": p_in, "p_out": p_out})
    return one_hot_degree_features(ds)


GENERATORS = {"ring_vs_clique": gen_ring_vs_clique, "sbm": gen_sbm}


def load_dataset(source: str, data_dir=None, seed: int = 0, num_graphs: int = 200) -> Dataset:
    """Resolve a dataset by name or path.

    ``ring_vs_clique`` and ``sbm`` are generated. Anything else is a TU
    dataset: ``source`` may be a directory (its basename is the dataset
    name, or else the prefix of its only ``*_A.txt`` file) or a bare name looked up under ``data_dir`` or ``$SPECGRAPH_DATA_DIR``.
    Unattributed datasets receive one-hot degree features.
    """
    if source in GENERATORS:
        return GENERATORS[source](num_graphs=num_graphs, seed=seed)
    path = Path(source)
    if path.is_dir():
        directory, name = path, path.name
        if not (path / f"{name}_A.txt").is_file():
            # fall back to the prefix of a lone *_A.txt, e.g. synth output in a renamed directory
            found = sorted(path.glob("*_A.txt"))
            if len(found) == 1:
                name = found[0].name[: -len("_A.txt")]
    else:
        root = data_dir or os.environ.get(DATA_DIR_ENV)
        if root is None:
            raise MissingFileError(
                f"dataset {source!r} not found; pass a directory or set {DATA_DIR_ENV}")
        directory, name = Path(root) / source, source
        if not directory.is_dir():
            raise MissingFileError(f"dataset directory {directory} does not exist", directory)
    ds = parse_tu_dataset(directory, name)
    if ds.num_features == 0:
        ds = one_hot_degree_features(ds)
    return ds
