"""Similarity matrices, CSLS hubness correction and ranking metrics."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEGREE_BUCKETS = ("1", "2", "3", "4", "5", ">=6")


@dataclass
class SimilarityMatrix:
    scores: np.ndarray
    rows: np.ndarray  # source entity ids per row
    cols: np.ndarray  # candidate entity ids per column

    @property
    def shape(self):
        return self.scores.shape


@dataclass
class EvalReport:
    hits: Dict[str, float]
    mrr: float
    count: int
    degree_hits1: Dict[str, Optional[float]] = field(default_factory=dict)
    degree_counts: Dict[str, int] = field(default_factory=dict)
    runtime_s: float = 0.0

    @property
    def hits1(self) -> float:
        return self.hits["1"]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def similarity_matrix(H_src: np.ndarray, H_tgt: np.ndarray, metric: str = "cosine",
                      rows=None, cols=None) -> SimilarityMatrix:
    """Dense match scores, higher is better (``neg-l2`` is minus squared distance)."""
    if H_src.shape[1] != H_tgt.shape[1]:
        raise ValueError("embedding widths differ")
    if metric == "cosine":
        a = H_src / np.maximum(np.linalg.norm(H_src, axis=1, keepdims=True), 1e-12)
        b = H_tgt / np.maximum(np.linalg.norm(H_tgt, axis=1, keepdims=True), 1e-12)
        S = a @ b.T
    elif metric == "neg-l2":
        S = -(np.sum(H_src ** 2, axis=1)[:, None] + np.sum(H_tgt ** 2, axis=1)[None, :] - 2.0 * H_src @ H_tgt.T)
        S = np.minimum(S, 0.0)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    rows = np.arange(len(H_src)) if rows is None else np.asarray(rows)
    cols = np.arange(len(H_tgt)) if cols is None else np.asarray(cols)
    return SimilarityMatrix(S, rows, cols)


def _topk_mean(S: np.ndarray, k: int, axis: int) -> np.ndarray:
    n = S.shape[axis]
    part = np.partition(S, n - k, axis=axis)
    top = part.take(np.arange(n - k, n), axis=axis)
    return top.mean(axis=axis)


def csls_adjust(S, k: int = 10):
    """Cross-domain similarity local scaling.

    ``2 * S[i, j] - r_src[i] - r_tgt[j]`` where the ``r`` terms average each
    row's (column's) ``k`` largest scores. Accepts a raw array or a
    :class:`SimilarityMatrix` and returns the same kind.
    """
    wrapped = isinstance(S, SimilarityMatrix)
    M = S.scores if wrapped else np.asarray(S, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    k_row = min(k, M.shape[1])
    k_col = min(k, M.shape[0])
    if k_row < k:
        logger.warning("CSLS k=%d exceeds the %d candidates; clamped", k, M.shape[1])
    if k_col < k:
        logger.debug("CSLS k=%d exceeds the %d source rows; clamped for target-side means", k, M.shape[0])
    r_src = _topk_mean(M, k_row, axis=1)
    r_tgt = _topk_mean(M, k_col, axis=0)
    out = 2.0 * M - r_src[:, None] - r_tgt[None, :]
    if wrapped:
        return SimilarityMatrix(out, S.rows, S.cols)
    return out


def true_ranks(S: np.ndarray, truth_cols: Sequence[int]) -> np.ndarray:
    """1-based rank of the true column in each row; ties count against the truth."""
    truth_cols = np.asarray(truth_cols, dtype=np.int64)
    if len(truth_cols) != S.shape[0]:
        raise ValueError("every row needs a ground-truth column")
    if np.any(truth_cols < 0) or np.any(truth_cols >= S.shape[1]):
        raise ValueError("ground-truth column out of range")
    true_score = S[np.arange(len(S)), truth_cols]
    ahead = np.sum(S >= true_score[:, None], axis=1)  # includes the truth itself
    return ahead.astype(np.int64)


def rank_metrics(S, truth_cols, k_list: Sequence[int] = (1, 10)) -> EvalReport:
    """Hits@k and MRR of the true columns under pessimistic ties."""
    M = S.scores if isinstance(S, SimilarityMatrix) else np.asarray(S)
    if truth_cols is None or any(t is None for t in truth_cols):
        raise ValueError("missing ground truth for a source row")
    ranks = true_ranks(M, truth_cols)
    return report_from_ranks(ranks, k_list)


def report_from_ranks(ranks: np.ndarray, k_list: Sequence[int] = (1, 10)) -> EvalReport:
    ks = sorted(set(int(k) for k in k_list) | {1})
    if len(ranks) == 0:
        return EvalReport({str(k): 0.0 for k in ks}, 0.0, 0)
    hits = {str(k): float(np.mean(ranks <= k)) for k in ks}
    return EvalReport(hits, float(np.mean(1.0 / ranks)), int(len(ranks)))


def degree_bucket(deg: int) -> str:
    """Bucket label; entities of degree 0 share the lowest bucket."""
    return ">=6" if deg >= 6 else str(max(int(deg), 1))


def degree_breakdown(ranks: np.ndarray, degrees: np.ndarray):
    """Per-bucket Hits@1 and counts by source-entity degree."""
    ranks = np.asarray(ranks)
    degrees = np.asarray(degrees)
    hits: Dict[str, Optional[float]] = {}
    counts: Dict[str, int] = {}
    labels = np.array([degree_bucket(d) for d in degrees])
    for b in DEGREE_BUCKETS:
        sel = labels == b if len(labels) else np.zeros(0, bool)
        counts[b] = int(sel.sum())
        hits[b] = float(np.mean(ranks[sel] == 1)) if sel.any() else None
    return hits, counts


def evaluate_embeddings(H: np.ndarray, pairs, candidates: Optional[Sequence[int]] = None,
                        k_list: Sequence[int] = (1, 10), csls_k: int = 10, metric: str = "cosine",
                        source_degrees: Optional[np.ndarray] = None, return_ranks: bool = False):
    """Rank each pair's right entity among ``candidates`` for its left entity.

    ``pairs`` and ``candidates`` use the global indices of ``H``. Candidates
    default to the right entities of ``pairs``. ``csls_k=0`` disables CSLS.
    """
    t0 = time.perf_counter()
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    cand = pairs[:, 1] if candidates is None else np.asarray(candidates, dtype=np.int64)
    col_of = {int(c): i for i, c in enumerate(cand)}
    missing = [int(b) for b in pairs[:, 1] if int(b) not in col_of]
    if missing:
        raise ValueError(f"true targets missing from the candidate set: {missing[:5]}")
    S = similarity_matrix(H[pairs[:, 0]], H[cand], metric, rows=pairs[:, 0], cols=cand)
    if csls_k:
        S = csls_adjust(S, csls_k)
    truth = [col_of[int(b)] for b in pairs[:, 1]]
    ranks = true_ranks(S.scores, truth)
    report = report_from_ranks(ranks, k_list)
    if source_degrees is not None:
        report.degree_hits1, report.degree_counts = degree_breakdown(ranks, source_degrees)
    report.runtime_s = time.perf_counter() - t0
    if return_ranks:
        return report, ranks
    return report


def write_rank_dump(path, pairs, ranks, labels1: List[str], labels2: List[str]) -> None:
    """Per-entity ranks as ``<g1_id>\\t<g2_id>\\t<rank>`` rows."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (a, b), r in zip(pairs, ranks):
            fh.write(f"{labels1[a]}\t{labels2[b]}\t{int(r)}\n")
