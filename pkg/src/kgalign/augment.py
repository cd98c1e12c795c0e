"""Nearest-neighbour negatives and mutual-nearest-neighbour pseudo labelling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .evaluation import csls_adjust, similarity_matrix
from .losses import squared_distances

logger = logging.getLogger(__name__)

# runner-up gap (in CSLS units) a mutual pair needs during training-time augmentation
DEFAULT_MARGIN = 0.1


def truncated_uniform_negatives(anchor: np.ndarray, embeddings: np.ndarray, candidates: Sequence[int], K: int,
                                exclude: Optional[int] = None) -> np.ndarray:
    """The ``K`` candidates closest to ``anchor`` (squared L2), nearest first.

    Exact: every candidate is ranked. Ties go to the lower candidate index.
    ``exclude`` (the true counterpart) is never returned.
    """
    cand = np.asarray(candidates, dtype=np.int64)
    if exclude is not None:
        cand = cand[cand != exclude]
    if len(cand) < K:
        logger.warning("only %d candidates for K=%d; returning all", len(cand), K)
        K = len(cand)
    dist = np.sum((embeddings[cand] - np.asarray(anchor)) ** 2, axis=1)
    order = np.lexsort((cand, dist))
    return cand[order[:K]]


def nearest_negatives(F: np.ndarray, anchors: np.ndarray, positives: np.ndarray, pool: np.ndarray,
                      K: int) -> np.ndarray:
    """Batched form of :func:`truncated_uniform_negatives`, one row per anchor."""
    pool = np.asarray(pool, dtype=np.int64)
    order_pool = np.argsort(pool, kind="stable")
    pool_sorted = pool[order_pool]
    D = squared_distances(F[anchors], F[pool_sorted])
    D[pool_sorted[None, :] == positives[:, None]] = np.inf
    K = min(K, len(pool_sorted) - 1) if len(pool_sorted) > 1 else len(pool_sorted)
    # full stable ranking so equal distances keep index order
    ranking = np.argsort(D, axis=1, kind="stable")[:, :K]
    return pool_sorted[ranking]


@dataclass
class PseudoPairPool:
    """Accepted pseudo-aligned pairs; never revoked."""

    pairs: List[Tuple[int, int, int]] = field(default_factory=list)
    claimed_left: set = field(default_factory=set)
    claimed_right: set = field(default_factory=set)

    @classmethod
    def with_claimed(cls, left: Sequence[int], right: Sequence[int]) -> "PseudoPairPool":
        return cls([], set(int(x) for x in left), set(int(x) for x in right))

    def add(self, u: int, v: int, epoch: int) -> None:
        if u in self.claimed_left or v in self.claimed_right:
            raise ValueError(f"entity already claimed in pair ({u}, {v})")
        self.pairs.append((int(u), int(v), int(epoch)))
        self.claimed_left.add(int(u))
        self.claimed_right.add(int(v))

    def unclaimed(self, left: Sequence[int], right: Sequence[int]):
        l = np.array([x for x in left if x not in self.claimed_left], dtype=np.int64)
        r = np.array([x for x in right if x not in self.claimed_right], dtype=np.int64)
        return l, r

    def as_array(self) -> np.ndarray:
        return np.array([(u, v) for u, v, _ in self.pairs], dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.pairs)

    def write_tsv(self, path, labels1: Optional[List[str]] = None, labels2: Optional[List[str]] = None,
                  offset: int = 0) -> None:
        """``<g1_id>\\t<g2_id>\\t<epoch>`` per accepted pair; right ids are shifted back by ``offset``."""
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for u, v, ep in self.pairs:
                a = labels1[u] if labels1 else u
                b = labels2[v - offset] if labels2 else v - offset
                fh.write(f"{a}\t{b}\t{ep}\n")


def _runner_up_gap(S: np.ndarray, axis: int) -> np.ndarray:
    if S.shape[axis] < 2:
        return np.full(S.shape[1 - axis], np.inf)
    top2 = -np.partition(-S, 1, axis=axis).take([0, 1], axis=axis)
    return np.abs(np.diff(top2, axis=axis)).squeeze(axis)


def mutual_nearest(S: np.ndarray, min_margin: float = 0.0) -> List[Tuple[int, int]]:
    """Row/column index pairs that are each other's best match (first index wins ties).

    With ``min_margin > 0`` a pair also needs its score to beat the runner-up
    of its row and of its column by at least that much.
    """
    if S.size == 0:
        return []
    best_col = np.argmax(S, axis=1)
    best_row = np.argmax(S, axis=0)
    rows = np.arange(S.shape[0])
    keep = best_row[best_col] == rows
    if min_margin > 0:
        gap = np.minimum(_runner_up_gap(S, 1), _runner_up_gap(S, 0)[best_col])
        keep &= gap >= min_margin
    return [(int(i), int(best_col[i])) for i in rows[keep]]


def propose_pseudo_pairs(H: np.ndarray, left: Sequence[int], right: Sequence[int], csls_k: int = 10,
                         use_csls: bool = True, min_margin: float = 0.0, return_scores: bool = False):
    """Mutual nearest neighbours between unclaimed left and right entities.

    Similarity is cosine, CSLS-adjusted unless ``use_csls`` is off. Returns a
    list of global ``(left, right)`` pairs (and the score matrix if asked).
    """
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    if len(left) == 0 or len(right) == 0:
        return ([], np.zeros((len(left), len(right)))) if return_scores else []
    S = similarity_matrix(H[left], H[right], "cosine").scores
    if use_csls:
        S = csls_adjust(S, min(csls_k, *S.shape))
    found = [(int(left[i]), int(right[j])) for i, j in mutual_nearest(S, min_margin)]
    if return_scores:
        return found, S
    return found


def augment_pool(pool: PseudoPairPool, H: np.ndarray, left: Sequence[int], right: Sequence[int], epoch: int,
                 csls_k: int = 10, use_csls: bool = True, min_margin: float = 0.0) -> List[Tuple[int, int]]:
    """Run one proposal round over unclaimed entities and commit the result."""
    ul, ur = pool.unclaimed(left, right)
    found = propose_pseudo_pairs(H, ul, ur, csls_k, use_csls, min_margin)
    for u, v in found:
        pool.add(u, v, epoch)
    return found
