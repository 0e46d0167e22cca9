"""TUDataset ingestion, stratified k-fold split plans and labeled subsampling."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import Graph

FEATURE_MODES = ("node_labels_onehot", "node_attributes", "degree_onehot")
DEFAULT_MAX_DEGREE = 400
DATA_ROOT_ENV = "SSCDL_DATA_ROOT"


class DatasetError(Exception):
    """Base class for ingestion failures."""


class ParseError(DatasetError):
    pass


class IntegrityError(DatasetError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    n_graphs: int
    n_classes: int
    feature_mode: str
    max_degree: int = DEFAULT_MAX_DEGREE
    n_features: int = 0
    class_values: tuple = ()
    node_label_values: tuple = ()

    def __post_init__(self):
        if self.n_graphs < 1:
            raise DatasetError("dataset has no graphs")
        if self.n_classes < 2:
            raise DatasetError(f"need at least 2 classes, got {self.n_classes}")
        if self.feature_mode not in FEATURE_MODES:
            raise DatasetError(f"unknown feature_mode {self.feature_mode!r}")

    def summary(self) -> str:
        return f"{self.n_graphs} graphs, {self.n_classes} classes"


def default_data_root() -> Path:
    env = os.environ.get(DATA_ROOT_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data"


def _read_lines(path: Path) -> list[str]:
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip()]


def _parse_number(tok: str, path: Path, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"{path.name}:{lineno}: cannot parse {tok!r}") from None


def _parse_ints(path: Path) -> np.ndarray:
    vals = []
    for i, ln in enumerate(_read_lines(path), 1):
        v = _parse_number(ln, path, i)
        if v != int(v):
            raise ParseError(f"{path.name}:{i}: expected an integer, got {ln!r}")
        vals.append(int(v))
    return np.array(vals, dtype=np.int64)


def _resolve_dir(root_path, name: str) -> Path:
    root = Path(root_path)
    if (root / f"{name}_A.txt").exists() or not (root / name).is_dir():
        return root
    return root / name


def load_tudataset(
    root_path,
    name: str,
    feature_mode: Optional[str] = None,
    max_degree: int = DEFAULT_MAX_DEGREE,
) -> tuple[DatasetManifest, list[Graph]]:
    """Parse ``<name>_*.txt`` files under ``root_path`` (or ``root_path/name``).

    Without an explicit ``feature_mode`` the first available of node labels,
    node attributes and node degree is used.
    """
    d = _resolve_dir(root_path, name)
    required = {k: d / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "graph_labels")}
    for key, path in required.items():
        if not path.exists():
            raise ParseError(f"missing mandatory file {path.name} in {d}")
    node_labels_path = d / f"{name}_node_labels.txt"
    node_attr_path = d / f"{name}_node_attributes.txt"

    indicator = _parse_ints(required["graph_indicator"])
    graph_labels_raw = _parse_ints(required["graph_labels"])
    n_nodes = len(indicator)
    gids = np.unique(indicator)
    if len(gids) != len(graph_labels_raw) or gids[0] != 1 or gids[-1] != len(graph_labels_raw):
        raise IntegrityError(
            f"{name}_graph_indicator.txt references {len(gids)} graphs but "
            f"{name}_graph_labels.txt has {len(graph_labels_raw)} lines"
        )
    if np.any(np.diff(indicator) < 0):
        raise IntegrityError(f"{name}_graph_indicator.txt: nodes are not grouped by graph")

    pairs = []
    for i, ln in enumerate(_read_lines(required["A"]), 1):
        toks = [t.strip() for t in ln.split(",")]
        if len(toks) != 2:
            raise ParseError(f"{required['A'].name}:{i}: expected 'row, col', got {ln!r}")
        u, v = (int(_parse_number(t, required["A"], i)) for t in toks)
        if not (1 <= u <= n_nodes and 1 <= v <= n_nodes):
            raise IntegrityError(f"{required['A'].name}:{i}: edge references unknown node")
        pairs.append((u - 1, v - 1))
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    directed = {tuple(p) for p in pairs.tolist()}
    for u, v in directed:
        if (v, u) not in directed:
            raise IntegrityError(f"{name}_A.txt: edge ({u + 1}, {v + 1}) has no reverse; directed input rejected")
    if len(pairs) and np.any(indicator[pairs[:, 0]] != indicator[pairs[:, 1]]):
        raise IntegrityError(f"{name}_A.txt: edge connects nodes of different graphs")
    und = np.unique(np.sort(pairs, axis=1), axis=0) if len(pairs) else pairs

    node_label_values: tuple = ()
    if feature_mode is None:
        if node_labels_path.exists():
            feature_mode = "node_labels_onehot"
        elif node_attr_path.exists():
            feature_mode = "node_attributes"
        else:
            feature_mode = "degree_onehot"
    if feature_mode == "node_labels_onehot":
        if not node_labels_path.exists():
            raise ParseError(f"missing {node_labels_path.name} required by feature_mode")
        raw = _parse_ints(node_labels_path)
        if len(raw) != n_nodes:
            raise IntegrityError(f"{node_labels_path.name} has {len(raw)} lines, expected {n_nodes}")
        values, codes = np.unique(raw, return_inverse=True)
        node_label_values = tuple(int(v) for v in values)
        feats = np.eye(len(values))[codes]
    elif feature_mode == "node_attributes":
        if not node_attr_path.exists():
            raise ParseError(f"missing {node_attr_path.name} required by feature_mode")
        rows = []
        for i, ln in enumerate(_read_lines(node_attr_path), 1):
            rows.append([_parse_number(t.strip(), node_attr_path, i) for t in ln.split(",")])
        feats = np.array(rows, dtype=np.float64)
        if feats.shape[0] != n_nodes:
            raise IntegrityError(f"{node_attr_path.name} has {feats.shape[0]} lines, expected {n_nodes}")
    elif feature_mode == "degree_onehot":
        deg = np.bincount(und.ravel(), minlength=n_nodes) if len(und) else np.zeros(n_nodes, dtype=np.int64)
        cap = int(min(max_degree, deg.max()))
        feats = np.eye(cap + 1)[np.minimum(deg, cap)]
    else:
        raise DatasetError(f"unknown feature_mode {feature_mode!r}")

    class_values, class_codes = np.unique(graph_labels_raw, return_inverse=True)
    starts = np.searchsorted(indicator, gids)
    ends = np.append(starts[1:], n_nodes)
    edge_graph = indicator[und[:, 0]] if len(und) else np.zeros(0, dtype=np.int64)
    order = np.argsort(edge_graph, kind="stable")
    und = und[order]
    edge_graph = edge_graph[order]
    e_starts = np.searchsorted(edge_graph, gids)
    e_ends = np.searchsorted(edge_graph, gids, side="right")
    graphs = []
    for k, gid in enumerate(gids):
        lo, hi = starts[k], ends[k]
        graphs.append(
            Graph(
                feats[lo:hi],
                und[e_starts[k]:e_ends[k]] - lo,
                label=int(class_codes[k]),
                graph_id=int(gid) - 1,
            )
        )
    manifest = DatasetManifest(
        name=name,
        n_graphs=len(graphs),
        n_classes=len(class_values),
        feature_mode=feature_mode,
        max_degree=max_degree,
        n_features=feats.shape[1],
        class_values=tuple(int(v) for v in class_values),
        node_label_values=node_label_values,
    )
    return manifest, graphs


def write_tudataset(root_path, name: str, graphs: Sequence[Graph], manifest: Optional[DatasetManifest] = None) -> Path:
    """Serialize graphs in TUDataset layout (both edge directions, 1-based ids).

    Node features are written as node labels when they are one-hot rows,
    otherwise as node attributes.
    """
    d = Path(root_path)
    d.mkdir(parents=True, exist_ok=True)
    class_values = manifest.class_values if manifest and manifest.class_values else None
    node_values = manifest.node_label_values if manifest and manifest.node_label_values else None
    a_lines, ind_lines, lab_lines, node_lines = [], [], [], []
    offset = 0
    feats_all = np.vstack([g.node_features for g in graphs])
    onehot = bool(np.all((feats_all == 0) | (feats_all == 1)) and np.all(feats_all.sum(axis=1) == 1))
    for k, g in enumerate(graphs):
        e = g.edges
        both = np.vstack([e, e[:, ::-1]]) if len(e) else e
        if len(both):
            both = both[np.lexsort((both[:, 1], both[:, 0]))]
        a_lines += [f"{u + offset + 1}, {v + offset + 1}" for u, v in both.tolist()]
        ind_lines += [str(k + 1)] * g.n_nodes
        label = g.label if g.label is not None else 0
        lab_lines.append(str(class_values[label] if class_values else label))
        if onehot:
            codes = g.node_features.argmax(axis=1)
            node_lines += [str(node_values[c] if node_values else c) for c in codes.tolist()]
        else:
            node_lines += [", ".join(repr(float(x)) for x in row) for row in g.node_features]
        offset += g.n_nodes

    def dump(suffix, lines):
        (d / f"{name}_{suffix}.txt").write_text("".join(ln + "\n" for ln in lines))

    dump("A", a_lines)
    dump("graph_indicator", ind_lines)
    dump("graph_labels", lab_lines)
    dump("node_labels" if onehot else "node_attributes", node_lines)
    return d


def dataset_fingerprint(graphs: Sequence[Graph]) -> str:
    h = hashlib.sha256()
    for g in graphs:
        h.update(np.ascontiguousarray(g.node_features).tobytes())
        h.update(np.ascontiguousarray(g.edges).tobytes())
        h.update(str(g.label).encode())
    return h.hexdigest()[:16]


@dataclass
class SplitPlan:
    fold_count: int
    fold_id: int
    fold_assignments: np.ndarray
    labeled_mask: np.ndarray
    label_ratio: float
    seed: int
    train_mask: np.ndarray = field(repr=False, default=None)

    @property
    def test_fold(self) -> int:
        return self.fold_id

    @property
    def val_fold(self) -> int:
        return (self.fold_id + 1) % self.fold_count if self.fold_count > 1 else self.fold_id

    @property
    def test_idx(self) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments == self.test_fold)

    @property
    def val_idx(self) -> np.ndarray:
        if self.fold_count < 3:
            return np.zeros(0, dtype=np.int64)
        return np.flatnonzero(self.fold_assignments == self.val_fold)

    @property
    def train_idx(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask)

    @property
    def labeled_idx(self) -> np.ndarray:
        return np.flatnonzero(self.labeled_mask)

    @property
    def unlabeled_idx(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask & ~self.labeled_mask)

    def to_json(self) -> str:
        return json.dumps(
            {
                "fold_count": self.fold_count,
                "fold_id": self.fold_id,
                "label_ratio": self.label_ratio,
                "seed": self.seed,
                "fold_assignments": self.fold_assignments.tolist(),
                "labeled_mask": self.labeled_mask.astype(int).tolist(),
                "train_mask": self.train_mask.astype(int).tolist(),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        d = json.loads(text)
        return cls(
            fold_count=d["fold_count"],
            fold_id=d["fold_id"],
            fold_assignments=np.array(d["fold_assignments"], dtype=np.int64),
            labeled_mask=np.array(d["labeled_mask"], dtype=bool),
            label_ratio=d["label_ratio"],
            seed=d["seed"],
            train_mask=np.array(d["train_mask"], dtype=bool),
        )


def stratified_folds(labels: np.ndarray, fold_count: int, seed: int) -> np.ndarray:
    """Shuffle, then deal each class round-robin over the folds.

    Fold sizes differ by at most one.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng([seed, 0])
    order = rng.permutation(len(labels))
    # group by class while keeping the shuffled order inside each class
    order = order[np.argsort(labels[order], kind="stable")]
    folds = np.empty(len(labels), dtype=np.int64)
    folds[order] = np.arange(len(labels)) % fold_count
    return folds


def _stratified_subset(candidates: np.ndarray, labels: np.ndarray, ratio: float, rng) -> np.ndarray:
    """Pick ``round(ratio * len(candidates))`` items, class counts by largest remainder."""
    total = int(round(ratio * len(candidates)))
    classes, counts = np.unique(labels[candidates], return_counts=True)
    quota = ratio * counts
    take = np.floor(quota).astype(int)
    remainder = total - take.sum()
    if remainder > 0:
        frac = quota - take
        # ties resolved by a seeded shuffle so no class is systematically favored
        tiebreak = rng.permutation(len(classes))
        order = np.lexsort((tiebreak, -frac))
        take[order[:remainder]] += 1
    picked = []
    for c, k in zip(classes, take):
        members = candidates[labels[candidates] == c]
        picked.append(rng.choice(members, size=min(k, len(members)), replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)


def make_split_plan(manifest_or_labels, fold_id: int, fold_count: int = 10, label_ratio: float = 0.3, seed: int = 0, labels=None) -> SplitPlan:
    """Build one fold of the cross-validation protocol.

    Fold ``fold_id`` is the test set, fold ``fold_id + 1`` the validation set
    and everything else is training. ``labels`` (per-graph class index) is
    needed for stratification; pass either a label array directly or a
    manifest together with ``labels=``.
    """
    if labels is None:
        labels = manifest_or_labels
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if isinstance(manifest_or_labels, DatasetManifest) and manifest_or_labels.n_graphs != n:
        raise DatasetError("labels length does not match manifest.n_graphs")
    if not 0 <= fold_id < fold_count:
        raise DatasetError(f"fold_id {fold_id} outside [0, {fold_count})")
    if fold_count > n:
        raise DatasetError(f"fold_count {fold_count} exceeds number of graphs {n}")
    if not 0 < label_ratio <= 1:
        raise DatasetError(f"label_ratio {label_ratio} outside (0, 1]")
    folds = stratified_folds(labels, fold_count, seed)
    test = fold_id
    val = (fold_id + 1) % fold_count
    held_out = {test} if fold_count < 3 else {test, val}
    train_mask = ~np.isin(folds, list(held_out))
    if fold_count == 1:
        train_mask = np.ones(n, dtype=bool)
    rng = np.random.default_rng([seed, 1, fold_id])
    candidates = np.flatnonzero(train_mask)
    labeled = np.zeros(n, dtype=bool)
    labeled[_stratified_subset(candidates, labels, label_ratio, rng)] = True
    return SplitPlan(
        fold_count=fold_count,
        fold_id=fold_id,
        fold_assignments=folds,
        labeled_mask=labeled,
        label_ratio=float(label_ratio),
        seed=seed,
        train_mask=train_mask,
    )


def synthetic_fixture() -> list[Graph]:
    """Two small labeled graphs with one-hot node labels, used as a golden file."""
    g0 = Graph(np.eye(3)[[0, 1, 1]], [(0, 1), (1, 2)], label=0, graph_id=0)
    g1 = Graph(np.eye(3)[[2, 0, 1, 2]], [(0, 1), (0, 2), (0, 3), (2, 3)], label=1, graph_id=1)
    return [g0, g1]


def synthetic_dataset(n_graphs: int = 40, seed: int = 0, n_features: int = 4) -> list[Graph]:
    """Two-class toy set: class 0 are paths, class 1 contain triangles.

    Node features are one-hot and carry a weak class signal.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs):
        label = i % 2
        n = int(rng.integers(5, 11))
        edges = [(k, k + 1) for k in range(n - 1)]
        if label == 1:
            for k in range(0, n - 2, 3):
                edges.append((k, k + 2))
        codes = rng.integers(0, n_features - 1, size=n)
        if label == 1:
            codes[rng.random(n) < 0.4] = n_features - 1
        graphs.append(Graph(np.eye(n_features)[codes], edges, label=label, graph_id=i))
    return graphs


def manifest_to_dict(m: DatasetManifest) -> dict:
    return asdict(m)
