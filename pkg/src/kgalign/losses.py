"""Alignment losses on final entity embeddings.

All losses work on a stacked embedding matrix ``F`` (both graphs, global
indices) and a ``(B, 2)`` array of aligned pairs ``(left, right)``. Each
returns the scalar loss together with its gradient with respect to ``F``.
"Similarity" here is squared Euclidean distance: smaller means closer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

FULL = "full"
IN_BATCH = "in-batch"


class LossError(FloatingPointError):
    """Raised when a loss evaluation produces non-finite values."""


@dataclass(frozen=True)
class LossConfig:
    margin: float = 1.0
    scale: float = 30.0  # lambda: std of the normalised losses
    shift: float = 10.0  # tau: mean of the normalised losses
    eps: float = 1e-8
    candidate_policy: str = FULL

    def validate(self) -> None:
        if not self.scale > 0:
            raise ValueError("scale (lambda) must be positive")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")
        if self.candidate_policy not in (FULL, IN_BATCH):
            raise ValueError(f"unknown candidate policy {self.candidate_policy!r}")


@dataclass
class PairLossBreakdown:
    anchor: int
    positive: int
    raw: np.ndarray
    mean: float
    var: float
    normalized: np.ndarray
    contribution: float


class LossResult(NamedTuple):
    value: float
    grad: np.ndarray


def pair_similarity(a, b) -> float:
    """Squared Euclidean distance."""
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(diff @ diff)


def squared_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise squared distances between rows of ``A`` and rows of ``B``."""
    d = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def raw_pair_losses(anchor, positive, candidates, margin: float) -> np.ndarray:
    """``margin + d(anchor, positive) - d(anchor, candidate)`` for each candidate row."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ValueError("empty candidate set")
    anchor = np.asarray(anchor, dtype=float)
    d_pos = pair_similarity(anchor, positive)
    d_neg = np.sum((candidates - anchor) ** 2, axis=1)
    return margin + d_pos - d_neg


def normalize_losses(raw, eps: float = 1e-8):
    """Standardise losses to zero mean and unit variance.

    Returns ``(normalized, mean, var)``; ``var`` is the population variance and
    the divisor is ``sqrt(var + eps)``.
    """
    raw = np.asarray(raw, dtype=float)
    mu = float(raw.mean())
    var = float(np.mean((raw - mu) ** 2))
    return (raw - mu) / np.sqrt(var + eps), mu, var


def _softplus_lse(x: np.ndarray) -> np.ndarray:
    """Row-wise ``log(1 + sum(exp(x)))`` ignoring ``-inf`` entries."""
    m = np.max(x, axis=1)
    m = np.where(np.isfinite(m), np.maximum(m, 0.0), 0.0)
    s = np.exp(-m) + np.sum(np.exp(x - m[:, None]), axis=1)
    return m + np.log(s)


@dataclass
class DirectionStats:
    anchors: np.ndarray
    positives: np.ndarray
    pool: np.ndarray
    mask: np.ndarray
    raw: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    normalized: np.ndarray
    per_anchor: np.ndarray


class NHSMResult(NamedTuple):
    value: float
    grad: np.ndarray
    directions: Tuple[DirectionStats, ...]

    def breakdown(self) -> List[PairLossBreakdown]:
        out = []
        for d in self.directions:
            for i in range(len(d.anchors)):
                m = d.mask[i]
                out.append(PairLossBreakdown(
                    anchor=int(d.anchors[i]),
                    positive=int(d.positives[i]),
                    raw=d.raw[i, m].copy(),
                    mean=float(d.mean[i]),
                    var=float(d.var[i]),
                    normalized=d.normalized[i, m].copy(),
                    contribution=float(d.per_anchor[i]),
                ))
        return out

    def frozen_stats(self):
        return tuple((d.mean.copy(), d.var.copy()) for d in self.directions)


def _raw_block(F, anchors, positives, pool, margin):
    Fa = F[anchors]
    d_pos = np.sum((Fa - F[positives]) ** 2, axis=1)
    d_c = squared_distances(Fa, F[pool])
    mask = pool[None, :] != positives[:, None]
    return margin + d_pos[:, None] - d_c, mask


def _accumulate_pair_grad(grad, F, anchors, positives, pool, coef):
    """Add the gradient of ``sum_ij coef_ij * l_o(i, j)`` to ``grad``."""
    Fa, Fp, Fc = F[anchors], F[positives], F[pool]
    row = coef.sum(axis=1)
    # l_o = margin + |a - p|^2 - |a - c|^2
    g_a = 2.0 * row[:, None] * (Fa - Fp) - 2.0 * (row[:, None] * Fa - coef @ Fc)
    g_p = -2.0 * row[:, None] * (Fa - Fp)
    g_c = 2.0 * (coef.T @ Fa) - 2.0 * coef.sum(axis=0)[:, None] * Fc
    np.add.at(grad, anchors, g_a)
    np.add.at(grad, positives, g_p)
    np.add.at(grad, pool, g_c)


def _nhsm_direction(F, anchors, positives, pool, cfg: LossConfig, grad, stats=None) -> DirectionStats:
    raw, mask = _raw_block(F, anchors, positives, pool, cfg.margin)
    count = mask.sum(axis=1)
    if np.any(count == 0):
        bad = int(anchors[np.argmin(count)])
        raise ValueError(f"anchor {bad} has no candidates")
    if stats is None:
        mu = np.where(mask, raw, 0.0).sum(axis=1) / count
        var = np.where(mask, (raw - mu[:, None]) ** 2, 0.0).sum(axis=1) / count
    else:
        mu, var = stats
    # mean and variance act as constants for differentiation
    inv_std = 1.0 / np.sqrt(var + cfg.eps)
    normalized = (raw - mu[:, None]) * inv_std[:, None]
    x = np.where(mask, cfg.scale * normalized + cfg.shift, -np.inf)
    per_anchor = _softplus_lse(x)
    if not np.all(np.isfinite(per_anchor)):
        bad = int(np.flatnonzero(~np.isfinite(per_anchor))[0])
        raise LossError(f"non-finite loss for pair ({anchors[bad]}, {positives[bad]})")
    w = np.exp(x - per_anchor[:, None])
    coef = w * (cfg.scale * inv_std)[:, None]
    _accumulate_pair_grad(grad, F, anchors, positives, pool, coef)
    return DirectionStats(anchors, positives, pool, mask, raw, mu, var, normalized, per_anchor)


def candidate_pools(pairs: np.ndarray, n1: int, n_total: int, policy: str):
    """Candidate index pools for the left-anchored and right-anchored directions."""
    if policy == FULL:
        return np.arange(n1, n_total), np.arange(n1)
    if policy == IN_BATCH:
        return pairs[:, 1].copy(), pairs[:, 0].copy()
    raise ValueError(f"unknown candidate policy {policy!r}")


def nhsm_loss(F: np.ndarray, pairs, pools, cfg: LossConfig = LossConfig(), frozen=None) -> NHSMResult:
    """Normalised hard-sample mining loss, summed over both alignment directions.

    ``pools`` is ``(right_pool, left_pool)``: candidates for left anchors and
    for right anchors. Each anchor's own counterpart is excluded. ``frozen``
    optionally supplies per-direction ``(mean, var)`` to reuse instead of
    recomputing (the gradient treats them as constants either way).
    """
    cfg.validate()
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(F)
    if len(pairs) == 0:
        return NHSMResult(0.0, grad, ())
    right_pool, left_pool = (np.asarray(p, dtype=np.int64) for p in pools)
    frozen = frozen or (None, None)
    d1 = _nhsm_direction(F, pairs[:, 0], pairs[:, 1], right_pool, cfg, grad, frozen[0])
    d2 = _nhsm_direction(F, pairs[:, 1], pairs[:, 0], left_pool, cfg, grad, frozen[1])
    value = float(d1.per_anchor.sum() + d2.per_anchor.sum())
    return NHSMResult(value, grad, (d1, d2))


def logsumexp_loss(F: np.ndarray, pairs, pools, scale: float = 1.0, margin: float = 1.0,
                   bidirectional: bool = True) -> LossResult:
    """Un-normalised smooth hard mining: ``log(1 + sum exp(scale * (margin + d_pos - d_neg)))``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(F)
    if len(pairs) == 0:
        return LossResult(0.0, grad)
    right_pool, left_pool = (np.asarray(p, dtype=np.int64) for p in pools)
    dirs = [(pairs[:, 0], pairs[:, 1], right_pool)]
    if bidirectional:
        dirs.append((pairs[:, 1], pairs[:, 0], left_pool))
    total = 0.0
    for anchors, positives, pool in dirs:
        raw, mask = _raw_block(F, anchors, positives, pool, margin)
        x = np.where(mask, scale * raw, -np.inf)
        per_anchor = _softplus_lse(x)
        if not np.all(np.isfinite(per_anchor)):
            raise LossError("non-finite logsumexp loss")
        total += float(per_anchor.sum())
        coef = np.exp(x - per_anchor[:, None]) * scale
        _accumulate_pair_grad(grad, F, anchors, positives, pool, coef)
    return LossResult(total, grad)


def triplet_loss(F: np.ndarray, pairs, negatives, margin: float = 1.0) -> LossResult:
    """Hinge loss ``max(0, margin + d_pos - d_neg)`` summed over given negatives.

    ``negatives`` has one row per anchor: shape ``(A,)`` or ``(A, K)``. The
    anchors are ``pairs[:, 0]`` (positives ``pairs[:, 1]``) unless
    ``negatives`` is a ``(left_negs, right_negs)`` tuple, in which case the
    second half is anchored on ``pairs[:, 1]``.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(F)
    if len(pairs) == 0:
        return LossResult(0.0, grad)
    if isinstance(negatives, tuple):
        dirs = [(pairs[:, 0], pairs[:, 1], negatives[0]), (pairs[:, 1], pairs[:, 0], negatives[1])]
    else:
        dirs = [(pairs[:, 0], pairs[:, 1], negatives)]
    total = 0.0
    for anchors, positives, negs in dirs:
        negs = np.asarray(negs, dtype=np.int64).reshape(len(anchors), -1)
        Fa, Fp = F[anchors], F[positives]
        d_pos = np.sum((Fa - Fp) ** 2, axis=1)
        Fn = F[negs]  # (A, K, D)
        d_neg = np.sum((Fa[:, None, :] - Fn) ** 2, axis=2)
        term = margin + d_pos[:, None] - d_neg
        active = (term > 0).astype(float)
        total += float(np.sum(term * active))
        row = active.sum(axis=1)
        g_a = 2.0 * row[:, None] * (Fa - Fp) - 2.0 * np.einsum("ak,akd->ad", active, Fa[:, None, :] - Fn)
        g_p = -2.0 * row[:, None] * (Fa - Fp)
        g_n = 2.0 * active[:, :, None] * (Fa[:, None, :] - Fn)
        np.add.at(grad, anchors, g_a)
        np.add.at(grad, positives, g_p)
        np.add.at(grad, negs.ravel(), g_n.reshape(-1, F.shape[1]))
    return LossResult(total, grad)


def gradient_weights(raw: Sequence[float], scale: float, shift: float = 0.0, eps: Optional[float] = None) -> np.ndarray:
    """Share of the gradient each pair receives under smooth hard mining.

    With ``eps`` given the losses are standardised first (normalised mining);
    otherwise ``scale`` multiplies the raw losses directly.
    """
    raw = np.asarray(raw, dtype=float)
    if eps is not None:
        raw, _, _ = normalize_losses(raw, eps)
    x = scale * raw + shift
    m = max(float(x.max()), 0.0)
    e = np.exp(x - m)
    return e / (np.exp(-m) + e.sum())
