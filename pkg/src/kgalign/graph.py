"""Knowledge-graph data model, dataset I/O and synthetic graph pairs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

DATASET_FILES = (
    "ent_ids_1",
    "ent_ids_2",
    "rel_ids_1",
    "rel_ids_2",
    "triples_1",
    "triples_2",
    "ref_ent_ids",
)


class DatasetError(Exception):
    """Raised when a dataset directory cannot be read."""


class ConfigError(ValueError):
    """Raised for invalid configuration values."""


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass(frozen=True)
class KnowledgeGraph:
    entity_count: int
    relation_count: int
    triples: Tuple[Triple, ...] = ()
    entity_ids: Tuple[str, ...] = ()
    entity_names: Tuple[str, ...] = ()
    relation_ids: Tuple[str, ...] = ()
    relation_names: Tuple[str, ...] = ()

    def __post_init__(self):
        for t in self.triples:
            if not (0 <= t.head < self.entity_count and 0 <= t.tail < self.entity_count):
                raise ValueError(f"triple {t} references an entity outside [0, {self.entity_count})")
            if not 0 <= t.relation < self.relation_count:
                raise ValueError(f"triple {t} references a relation outside [0, {self.relation_count})")

    def triple_array(self, unique: bool = False) -> np.ndarray:
        """Triples as an (m, 3) int array of (head, relation, tail)."""
        arr = np.array([(t.head, t.relation, t.tail) for t in self.triples], dtype=np.int64).reshape(-1, 3)
        if unique and len(arr):
            arr = np.unique(arr, axis=0)
        return arr

    def degrees(self) -> np.ndarray:
        """Number of distinct incident triples per entity (in + out, self-loops once)."""
        arr = self.triple_array(unique=True)
        deg = np.zeros(self.entity_count, dtype=np.int64)
        if len(arr):
            np.add.at(deg, arr[:, 0], 1)
            not_loop = arr[:, 0] != arr[:, 2]
            np.add.at(deg, arr[not_loop, 2], 1)
        return deg


@dataclass(frozen=True)
class GraphPair:
    g1: KnowledgeGraph
    g2: KnowledgeGraph
    seed_pairs: Tuple[Tuple[int, int], ...] = ()
    test_pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        seed, test = set(self.seed_pairs), set(self.test_pairs)
        if seed & test:
            raise ValueError("seed and test pairs overlap")
        left = [a for a, _ in self.seed_pairs + self.test_pairs]
        right = [b for _, b in self.seed_pairs + self.test_pairs]
        if len(set(left)) != len(left) or len(set(right)) != len(right):
            raise ValueError("an entity appears in more than one aligned pair")
        for a, b in self.seed_pairs + self.test_pairs:
            if not (0 <= a < self.g1.entity_count and 0 <= b < self.g2.entity_count):
                raise ValueError(f"pair ({a}, {b}) is out of range")

    @property
    def all_pairs(self) -> Tuple[Tuple[int, int], ...]:
        return self.seed_pairs + self.test_pairs


@dataclass(frozen=True)
class AdjacencyIndex:
    """Edges grouped per receiving entity, sorted by (entity, neighbor, relation).

    ``src[e]`` aggregates ``nbr[e]`` through relation ``rel[e]``; ``indptr``
    delimits the edges of each entity in CSR fashion.
    """

    entity_count: int
    relation_count: int
    src: np.ndarray
    nbr: np.ndarray
    rel: np.ndarray
    indptr: np.ndarray
    self_relation: Optional[int] = None

    def edges(self, entity: int) -> List[Tuple[int, int]]:
        lo, hi = self.indptr[entity], self.indptr[entity + 1]
        return list(zip(self.nbr[lo:hi].tolist(), self.rel[lo:hi].tolist()))

    @property
    def edge_count(self) -> int:
        return len(self.src)


@dataclass(frozen=True)
class SynthConfig:
    entity_count: int = 200
    relation_count: int = 10
    mean_degree: float = 6.0
    edge_noise: float = 0.1
    seed_ratio: float = 0.3
    rng_seed: int = 42

    def validate(self) -> None:
        if self.entity_count < 2:
            raise ConfigError("entity_count must be at least 2")
        if self.relation_count < 1:
            raise ConfigError("relation_count must be at least 1")
        if not self.mean_degree > 0:
            raise ConfigError("mean_degree must be positive")
        if not 0 <= self.edge_noise < 1:
            raise ConfigError("edge_noise must lie in [0, 1)")
        if not 0 < self.seed_ratio <= 1:
            raise ConfigError("seed_ratio must lie in (0, 1]")


@dataclass(frozen=True)
class SyntheticPair:
    pair: GraphPair
    # truth[i] is the g2 entity matching g1 entity i
    truth: np.ndarray = field(repr=False)


def build_adjacency(g: KnowledgeGraph, add_inverse: bool = True, add_self: bool = True) -> AdjacencyIndex:
    """Build the aggregation neighborhoods of every entity.

    Forward triple (h, r, t) gives h the edge (t, r). With ``add_inverse`` the
    tail also receives (h, r + |R|). With ``add_self`` each entity gets one
    self-loop through a dedicated relation appended after the others.
    """
    arr = g.triple_array(unique=True)
    n_rel = g.relation_count
    parts = [np.stack([arr[:, 0], arr[:, 2], arr[:, 1]], axis=1)]
    if add_inverse:
        parts.append(np.stack([arr[:, 2], arr[:, 0], arr[:, 1] + g.relation_count], axis=1))
        n_rel += g.relation_count
    self_rel = None
    if add_self:
        self_rel = n_rel
        ids = np.arange(g.entity_count, dtype=np.int64)
        parts.append(np.stack([ids, ids, np.full_like(ids, self_rel)], axis=1))
        n_rel += 1
    edges = np.concatenate(parts, axis=0).reshape(-1, 3)
    if len(edges):
        edges = np.unique(edges, axis=0)  # lexicographic: (src, nbr, rel)
    counts = np.bincount(edges[:, 0], minlength=g.entity_count) if len(edges) else np.zeros(g.entity_count, np.int64)
    indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return AdjacencyIndex(
        entity_count=g.entity_count,
        relation_count=n_rel,
        src=edges[:, 0].copy(),
        nbr=edges[:, 1].copy(),
        rel=edges[:, 2].copy(),
        indptr=indptr,
        self_relation=self_rel,
    )


def merge_adjacency(a1: AdjacencyIndex, a2: AdjacencyIndex) -> AdjacencyIndex:
    """Stack two adjacencies into one index space; g2 entities and relations are offset."""
    n1, r1 = a1.entity_count, a1.relation_count
    return AdjacencyIndex(
        entity_count=n1 + a2.entity_count,
        relation_count=r1 + a2.relation_count,
        src=np.concatenate([a1.src, a2.src + n1]),
        nbr=np.concatenate([a1.nbr, a2.nbr + n1]),
        rel=np.concatenate([a1.rel, a2.rel + r1]),
        indptr=np.concatenate([a1.indptr, a2.indptr[1:] + a1.indptr[-1]]),
        self_relation=None,
    )


def split_seeds(pairs: Sequence[Tuple[int, int]], train_fraction: float, rng_seed: int):
    """Randomly partition aligned pairs into (train, test).

    The train side gets ``floor(train_fraction * len(pairs))`` pairs.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least two pairs to split")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(len(pairs))
    n_train = int(np.floor(train_fraction * len(pairs) + 1e-9))
    train = [tuple(pairs[i]) for i in sorted(order[:n_train])]
    test = [tuple(pairs[i]) for i in sorted(order[n_train:])]
    return train, test


# ---------------------------------------------------------------------------
# dataset directory I/O


def _read_lines(path: Path) -> List[Tuple[int, List[str]]]:
    if not path.is_file():
        raise DatasetError(f"missing dataset file: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            out.append((lineno, line.split("\t")))
    return out


def _read_ids(path: Path) -> Tuple[Dict[str, int], List[str], List[str]]:
    index: Dict[str, int] = {}
    raw, names = [], []
    for lineno, cols in _read_lines(path):
        if len(cols) not in (1, 2) or not cols[0]:
            raise DatasetError(f"{path}:{lineno}: expected '<raw_id>\\t<name>'")
        if cols[0] in index:
            raise DatasetError(f"{path}:{lineno}: duplicate id {cols[0]!r}")
        index[cols[0]] = len(raw)
        raw.append(cols[0])
        names.append(cols[1] if len(cols) == 2 else "")
    return index, raw, names


def _read_graph(root: Path, side: int) -> Tuple[KnowledgeGraph, Dict[str, int]]:
    ent_index, ent_raw, ent_names = _read_ids(root / f"ent_ids_{side}")
    rel_index, rel_raw, rel_names = _read_ids(root / f"rel_ids_{side}")
    path = root / f"triples_{side}"
    triples = []
    for lineno, cols in _read_lines(path):
        if len(cols) != 3:
            raise DatasetError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(cols)}")
        h, r, t = cols
        try:
            triples.append(Triple(ent_index[h], rel_index[r], ent_index[t]))
        except KeyError as exc:
            raise DatasetError(f"{path}:{lineno}: unknown id {exc.args[0]!r}") from None
    g = KnowledgeGraph(
        entity_count=len(ent_raw),
        relation_count=len(rel_raw),
        triples=tuple(triples),
        entity_ids=tuple(ent_raw),
        entity_names=tuple(ent_names),
        relation_ids=tuple(rel_raw),
        relation_names=tuple(rel_names),
    )
    return g, ent_index


def load_pairs_file(path: Path, idx1: Dict[str, int], idx2: Dict[str, int]) -> List[Tuple[int, int]]:
    pairs = []
    for lineno, cols in _read_lines(path):
        if len(cols) != 2:
            raise DatasetError(f"{path}:{lineno}: expected '<g1_id>\\t<g2_id>'")
        if cols[0] not in idx1 or cols[1] not in idx2:
            raise DatasetError(f"{path}:{lineno}: pair ({cols[0]}, {cols[1]}) references an unknown entity")
        pairs.append((idx1[cols[0]], idx2[cols[1]]))
    return pairs


def load_graph_pair(dataset_dir, train_fraction: Optional[float] = 0.3, rng_seed: int = 0,
                    seed_count: Optional[int] = None) -> GraphPair:
    """Load a dataset directory and split its aligned pairs.

    Raw ids are re-mapped to dense 0-based indices in file order; the raw ids
    and names stay on the graphs for reporting. ``train_fraction=None`` keeps
    every pair as a seed pair. ``seed_count`` takes the first that many lines
    of ``ref_ent_ids`` as seeds instead of a random split (the layout
    :func:`write_graph_pair` produces).
    """
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    g1, idx1 = _read_graph(root, 1)
    g2, idx2 = _read_graph(root, 2)
    pairs = load_pairs_file(root / "ref_ent_ids", idx1, idx2)
    if not pairs:
        logger.warning("%s contains no aligned pairs", root / "ref_ent_ids")
        return GraphPair(g1, g2)
    if seed_count is not None:
        if not 0 <= seed_count <= len(pairs):
            raise DatasetError(f"{root / 'ref_ent_ids'}: seed_count {seed_count} outside [0, {len(pairs)}]")
        seed, test = pairs[:seed_count], pairs[seed_count:]
    elif train_fraction is None:
        seed, test = pairs, []
    else:
        seed, test = split_seeds(pairs, train_fraction, rng_seed)
    try:
        return GraphPair(g1, g2, tuple(seed), tuple(test))
    except ValueError as exc:
        raise DatasetError(f"{root / 'ref_ent_ids'}: {exc}") from None


def _write_ids(path: Path, raw: Sequence[str], names: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, r in enumerate(raw):
            fh.write(f"{r}\t{names[i] if i < len(names) else ''}\n")


def write_graph_pair(pair: GraphPair, dataset_dir) -> Path:
    """Write ``pair`` in the standard dataset layout (seed pairs first in ref_ent_ids)."""
    root = Path(dataset_dir)
    root.mkdir(parents=True, exist_ok=True)
    for side, g in ((1, pair.g1), (2, pair.g2)):
        ent_raw = g.entity_ids or tuple(str(i) for i in range(g.entity_count))
        rel_raw = g.relation_ids or tuple(str(i) for i in range(g.relation_count))
        _write_ids(root / f"ent_ids_{side}", ent_raw, g.entity_names)
        _write_ids(root / f"rel_ids_{side}", rel_raw, g.relation_names)
        with open(root / f"triples_{side}", "w", encoding="utf-8", newline="\n") as fh:
            for t in g.triples:
                fh.write(f"{ent_raw[t.head]}\t{rel_raw[t.relation]}\t{ent_raw[t.tail]}\n")
    raw1 = pair.g1.entity_ids or tuple(str(i) for i in range(pair.g1.entity_count))
    raw2 = pair.g2.entity_ids or tuple(str(i) for i in range(pair.g2.entity_count))
    with open(root / "ref_ent_ids", "w", encoding="utf-8", newline="\n") as fh:
        for a, b in pair.all_pairs:
            fh.write(f"{raw1[a]}\t{raw2[b]}\n")
    return root


# ---------------------------------------------------------------------------
# synthetic pairs


def _random_edges(rng: np.random.Generator, n: int, n_rel: int, count: int, taken: set) -> List[Tuple[int, int, int]]:
    out = []
    # bounded retries: a dense request on a tiny graph may not have enough free slots
    for _ in range(50 * max(count, 1)):
        if len(out) == count:
            break
        h, t = rng.integers(0, n, size=2)
        if h == t:
            continue
        r = int(rng.integers(0, n_rel))
        key = (int(h), r, int(t))
        if key in taken:
            continue
        taken.add(key)
        out.append(key)
    return out


def _perturb(rng, edges: List[Tuple[int, int, int]], n: int, n_rel: int, noise: float):
    if noise == 0:
        return list(edges)
    keep = rng.random(len(edges)) >= noise
    kept = [e for e, k in zip(edges, keep) if k]
    taken = set(edges)
    added = _random_edges(rng, n, n_rel, int(round(noise * len(edges))), taken)
    return kept + added


def generate_synthetic_pair(cfg: SynthConfig) -> SyntheticPair:
    """Sample a random graph and a noisy, relabelled copy of it.

    The first graph has ``round(entity_count * mean_degree / 2)`` directed
    edges with uniform endpoints and relations. The copy drops every edge
    with probability ``edge_noise``, gains ``round(edge_noise * m)`` random
    new edges, and is relabelled by a random permutation.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.rng_seed)
    n, n_rel = cfg.entity_count, cfg.relation_count
    m = int(round(n * cfg.mean_degree / 2))
    view1 = _random_edges(rng, n, n_rel, m, set())
    perm = rng.permutation(n)
    view2 = _perturb(rng, view1, n, n_rel, cfg.edge_noise)
    view2 = [(int(perm[h]), r, int(perm[t])) for h, r, t in view2]
    view1.sort()
    view2.sort()

    def _graph(edges, prefix):
        return KnowledgeGraph(
            entity_count=n,
            relation_count=n_rel,
            triples=tuple(Triple(h, r, t) for h, r, t in edges),
            entity_ids=tuple(f"{prefix}e{i}" for i in range(n)),
            entity_names=tuple("" for _ in range(n)),
            relation_ids=tuple(f"{prefix}r{i}" for i in range(n_rel)),
            relation_names=tuple(f"rel{i}" for i in range(n_rel)),
        )

    pairs = [(i, int(perm[i])) for i in range(n)]
    order = rng.permutation(n)
    n_seed = int(np.floor(cfg.seed_ratio * n + 1e-9))
    seed = tuple(sorted(pairs[i] for i in order[:n_seed]))
    test = tuple(sorted(pairs[i] for i in order[n_seed:]))
    pair = GraphPair(_graph(view1, "a"), _graph(view2, "b"), seed, test)
    return SyntheticPair(pair=pair, truth=perm.astype(np.int64))


def write_truth(path, syn: SyntheticPair) -> None:
    g1, g2 = syn.pair.g1, syn.pair.g2
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j in enumerate(syn.truth):
            fh.write(f"{g1.entity_ids[i]}\t{g2.entity_ids[j]}\n")


def edge_set(g: KnowledgeGraph, relabel: Optional[np.ndarray] = None) -> set:
    arr = g.triple_array(unique=True)
    if relabel is not None and len(arr):
        arr = np.stack([relabel[arr[:, 0]], arr[:, 1], relabel[arr[:, 2]]], axis=1)
    return {tuple(map(int, row)) for row in arr}


def is_isomorphic_under(g1: KnowledgeGraph, g2: KnowledgeGraph, mapping: np.ndarray) -> bool:
    """True if relabelling g1 by ``mapping`` yields exactly g2's edge set."""
    return g1.relation_count == g2.relation_count and edge_set(g1, mapping) == edge_set(g2)


__all__ = [
    "AdjacencyIndex",
    "ConfigError",
    "DATASET_FILES",
    "DatasetError",
    "GraphPair",
    "KnowledgeGraph",
    "SynthConfig",
    "SyntheticPair",
    "Triple",
    "build_adjacency",
    "edge_set",
    "generate_synthetic_pair",
    "is_isomorphic_under",
    "load_graph_pair",
    "merge_adjacency",
    "split_seeds",
    "write_graph_pair",
    "write_truth",
]
