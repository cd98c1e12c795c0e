"""Gradients, RMSprop and the training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .augment import DEFAULT_MARGIN, PseudoPairPool, augment_pool, nearest_negatives
from .encoder import EncoderConfig, ParameterSet, PairGraph, backward, forward, init_parameters
from .evaluation import evaluate_embeddings
from .graph import GraphPair, split_seeds
from .losses import LossConfig, LossError, candidate_pools, logsumexp_loss, nhsm_loss, triplet_loss

logger = logging.getLogger(__name__)

LOSSES = ("nhsm", "logsumexp", "tuns", "triplet")


class TrainingDiverged(FloatingPointError):
    """Loss or gradients became non-finite; ``params`` holds the last good state."""

    def __init__(self, message: str, params: Optional[ParameterSet] = None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history or []


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.005
    batch_size: int = 1024
    epochs: int = 100
    rho: float = 0.9
    rms_eps: float = 1e-8
    eval_every: int = 5
    patience: int = 10
    dev_fraction: float = 0.1
    rng_seed: int = 0
    loss: str = "nhsm"
    tuns_k: int = 10
    logsumexp_scale: float = 1.0
    in_batch_threshold: int = 50000
    csls_k: int = 10

    def validate(self) -> None:
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0 or self.eval_every < 1 or self.patience < 1:
            raise ValueError("epochs, eval_every and patience must be positive")
        if not 0 <= self.dev_fraction < 1:
            raise ValueError("dev_fraction must lie in [0, 1)")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSSES}")


# ---------------------------------------------------------------------------
# gradients


def compute_gradients(params: ParameterSet, batch, graph: PairGraph, enc_cfg: EncoderConfig,
                      loss_cfg: LossConfig = LossConfig(), dropout_rng: Optional[np.random.Generator] = None,
                      pools=None, frozen=None):
    """Loss value and parameter gradients of the normalised mining loss on ``batch``.

    ``batch`` holds global ``(left, right)`` indices. Returns
    ``(value, grads, loss_result)``.
    """
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    if len(batch) == 0:
        return 0.0, params.zeros_like(), None
    trace = forward(params, graph, enc_cfg, dropout_rng)
    if pools is None:
        pools = candidate_pools(batch, graph.n1, graph.entity_count, loss_cfg.candidate_policy)
    res = nhsm_loss(trace.H_final, batch, pools, loss_cfg, frozen=frozen)
    grads = backward(params, graph, enc_cfg, trace, res.grad)
    check_finite(grads)
    return res.value, grads, res


def check_finite(grads: ParameterSet) -> None:
    for name, g in grads.arrays().items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")


@dataclass
class GradientCheckReport:
    names: List[str]
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if len(self.rel_error) else 0.0

    @property
    def pass_rate(self) -> float:
        return float(np.mean(self.rel_error < self.tolerance)) if len(self.rel_error) else 1.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def worst(self, n: int = 5):
        idx = np.argsort(-self.rel_error)[:n]
        return [(self.names[i], float(self.analytic[i]), float(self.numeric[i]), float(self.rel_error[i]))
                for i in idx]


def relative_error(a, f) -> np.ndarray:
    a, f = np.asarray(a, float), np.asarray(f, float)
    return np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)


def gradient_check_fn(loss_fn: Callable[[Dict[str, np.ndarray]], float], arrays: Dict[str, np.ndarray],
                      analytic: Dict[str, np.ndarray], h: float = 1e-4, tolerance: float = 1e-3
                      ) -> GradientCheckReport:
    """Central differences of ``loss_fn`` over every scalar in ``arrays``.

    ``arrays`` is perturbed in place and restored.
    """
    names, a_vals, f_vals = [], [], []
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        g = np.asarray(analytic[name]).reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn(arrays)
            flat[i] = old - h
            down = loss_fn(arrays)
            flat[i] = old
            names.append(f"{name}[{i}]")
            a_vals.append(g[i])
            f_vals.append((up - down) / (2.0 * h))
    a_vals, f_vals = np.array(a_vals), np.array(f_vals)
    return GradientCheckReport(names, a_vals, f_vals, relative_error(a_vals, f_vals), tolerance)


def gradient_check(params: ParameterSet, graph: PairGraph, batch, enc_cfg: EncoderConfig,
                   loss_cfg: LossConfig = LossConfig(), h: float = 1e-4, tolerance: float = 1e-3,
                   grad_fn: Optional[Callable] = None) -> GradientCheckReport:
    """Compare analytic gradients against central differences in float64.

    The loss statistics are frozen at the unperturbed point so both sides
    differentiate the same function. ``grad_fn`` substitutes the analytic
    gradient routine (same signature as :func:`compute_gradients`).
    """
    work = params.astype(np.float64)
    grad_fn = grad_fn or compute_gradients
    _, grads, res = grad_fn(work, batch, graph, enc_cfg, loss_cfg)
    frozen = res.frozen_stats()
    pools = candidate_pools(np.asarray(batch).reshape(-1, 2), graph.n1, graph.entity_count,
                            loss_cfg.candidate_policy)

    def loss_fn(arrays):
        trace = forward(ParameterSet(**arrays), graph, enc_cfg)
        return nhsm_loss(trace.H_final, batch, pools, loss_cfg, frozen=frozen).value

    return gradient_check_fn(loss_fn, work.arrays(), grads.arrays(), h, tolerance)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class OptimizerState:
    accumulators: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ParameterSet) -> "OptimizerState":
        return cls({k: np.zeros_like(v) for k, v in params.arrays().items()})


def rmsprop_step(params: ParameterSet, grads: ParameterSet, state: OptimizerState, lr: float = 0.005,
                 rho: float = 0.9, eps: float = 1e-8) -> None:
    """In-place lazy RMSprop update.

    Only rows (elements, for vectors) with a nonzero gradient have their
    accumulator decayed and their value updated.
    """
    g_all = grads.arrays()
    for name, theta in params.arrays().items():
        g = g_all[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {theta.shape} for {name!r}")
        acc = state.accumulators[name]
        touched = np.any(g != 0, axis=tuple(range(1, g.ndim))) if g.ndim > 1 else g != 0
        if not touched.any():
            continue
        gt = g[touched]
        acc[touched] = rho * acc[touched] + (1.0 - rho) * gt * gt
        theta[touched] -= lr * gt / np.sqrt(acc[touched] + eps)
    state.step += 1


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: ParameterSet
    history: List[dict]
    train_pairs: np.ndarray
    dev_pairs: np.ndarray
    best_epoch: int = 0
    best_dev_hits1: Optional[float] = None
    pool: Optional[PseudoPairPool] = None
    epochs_run: int = 0
    epoch_seconds: List[float] = field(default_factory=list)


def to_global(pairs, n1: int) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2).copy()
    arr[:, 1] += n1
    return arr


def split_dev(seed_pairs, dev_fraction: float, rng_seed: int):
    seed_pairs = list(seed_pairs)
    if dev_fraction <= 0 or len(seed_pairs) < 2:
        return seed_pairs, []
    n_dev = int(np.floor(dev_fraction * len(seed_pairs)))
    if n_dev == 0:
        return seed_pairs, []
    dev, train = split_seeds(seed_pairs, n_dev / len(seed_pairs), rng_seed)
    return train, dev


def _batch_loss(name: str, F, batch, pools, loss_cfg: LossConfig, train_cfg: TrainConfig, rng, negatives=None):
    if name == "nhsm":
        res = nhsm_loss(F, batch, pools, loss_cfg)
        return res.value, res.grad
    if name == "logsumexp":
        res = logsumexp_loss(F, batch, pools, train_cfg.logsumexp_scale, loss_cfg.margin)
        return res.value, res.grad
    if name == "tuns":
        res = triplet_loss(F, batch, negatives, loss_cfg.margin)
        return res.value, res.grad
    # plain triplet: one uniform random negative per anchor and direction
    negs = []
    for anchors_col, pool in ((1, pools[0]), (0, pools[1])):
        pos = batch[:, anchors_col]
        pick = pool[rng.integers(0, len(pool), size=len(batch))]
        clash = pick == pos
        while clash.any():
            pick[clash] = pool[rng.integers(0, len(pool), size=int(clash.sum()))]
            clash = pick == pos
        negs.append(pick)
    res = triplet_loss(F, batch, (negs[0], negs[1]), loss_cfg.margin)
    return res.value, res.grad


def train(pair: GraphPair, enc_cfg: EncoderConfig = EncoderConfig(), loss_cfg: LossConfig = LossConfig(),
          train_cfg: TrainConfig = TrainConfig(), graph: Optional[PairGraph] = None,
          augment: bool = False, augment_every: int = 1, augment_csls: bool = True, augment_start: int = 0,
          augment_margin: float = DEFAULT_MARGIN, params: Optional[ParameterSet] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Fit encoder parameters on the seed pairs of ``pair``.

    A ``dev_fraction`` share of the seeds is held out; dev Hits@1 (CSLS,
    ranked against every right entity outside the training seeds) is
    measured every ``eval_every`` epochs, the best parameters are kept and
    training stops after ``patience`` evaluations without improvement. With
    ``augment`` on, mutual nearest neighbours among unclaimed entities are
    added to the training positives after every ``augment_every``-th
    evaluation from epoch ``augment_start`` on, provided each side's best
    score beats its runner-up by ``augment_margin``.
    """
    enc_cfg.validate()
    loss_cfg.validate()
    train_cfg.validate()
    if not pair.seed_pairs:
        raise ValueError("training needs at least one seed pair")
    t_start = time.perf_counter()
    graph = graph or PairGraph.from_pair(pair, enc_cfg.add_inverse, enc_cfg.add_self)
    n1, n = graph.n1, graph.entity_count
    train_local, dev_local = split_dev(pair.seed_pairs, train_cfg.dev_fraction, train_cfg.rng_seed)
    train_pairs = to_global(train_local, n1)
    dev_pairs = to_global(dev_local, n1)
    if params is None:
        params = init_parameters(n, graph.relation_count, enc_cfg, train_cfg.rng_seed)
    state = OptimizerState.for_params(params)
    rng = np.random.default_rng(train_cfg.rng_seed + 1)
    policy = loss_cfg.candidate_policy
    if policy == "full" and n > train_cfg.in_batch_threshold:
        policy = "in-batch"
    dev_candidates = np.setdiff1d(np.arange(n1, n), train_pairs[:, 1])

    pool = None
    if augment:
        pool = PseudoPairPool.with_claimed(np.concatenate([train_pairs[:, 0], dev_pairs[:, 0]]),
                                           np.concatenate([train_pairs[:, 1], dev_pairs[:, 1]]))

    history: List[dict] = []
    epoch_seconds: List[float] = []
    best = params.copy()
    best_key = (-1.0, -1.0)
    best_epoch, best_hits = 0, None
    stale = 0
    n_evals = 0
    epoch = 0
    for epoch in range(1, train_cfg.epochs + 1):
        t_epoch = time.perf_counter()
        positives = train_pairs if pool is None or len(pool) == 0 else np.concatenate([train_pairs, pool.as_array()])
        order = rng.permutation(len(positives))
        negatives_by_row = None
        if train_cfg.loss == "tuns":
            F_now = forward(params, graph, enc_cfg).H_final
            right_pool, left_pool = candidate_pools(positives, n1, n, "full")
            negatives_by_row = (
                nearest_negatives(F_now, positives[:, 0], positives[:, 1], right_pool, train_cfg.tuns_k),
                nearest_negatives(F_now, positives[:, 1], positives[:, 0], left_pool, train_cfg.tuns_k),
            )
        total = 0.0
        try:
            for start in range(0, len(order), train_cfg.batch_size):
                rows = order[start:start + train_cfg.batch_size]
                batch = positives[rows]
                pools = candidate_pools(batch, n1, n, policy)
                trace = forward(params, graph, enc_cfg, rng)
                negs = None
                if negatives_by_row is not None:
                    negs = (negatives_by_row[0][rows], negatives_by_row[1][rows])
                value, g_final = _batch_loss(train_cfg.loss, trace.H_final, batch, pools, loss_cfg, train_cfg,
                                             rng, negs)
                if not np.isfinite(value):
                    raise LossError("non-finite batch loss")
                grads = backward(params, graph, enc_cfg, trace, g_final)
                check_finite(grads)
                rmsprop_step(params, grads, state, train_cfg.learning_rate, train_cfg.rho, train_cfg.rms_eps)
                if not params.is_finite():
                    raise FloatingPointError("parameters became non-finite")
                total += value
        except FloatingPointError as exc:
            raise TrainingDiverged(f"epoch {epoch}: {exc}", best, history) from exc
        if not params.is_finite():
            raise TrainingDiverged(f"epoch {epoch}: parameters became non-finite", best, history)
        epoch_seconds.append(time.perf_counter() - t_epoch)
        record = {"epoch": epoch, "loss": total / len(positives), "dev_hits1": None}

        if epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs:
            H = forward(params, graph, enc_cfg).H_final
            n_evals += 1
            if len(dev_pairs):
                rep = evaluate_embeddings(H, dev_pairs, dev_candidates, csls_k=train_cfg.csls_k)
                record["dev_hits1"] = rep.hits1
                key = (rep.hits1, rep.mrr)
                if key > best_key:
                    stale = 0
                else:
                    stale += 1
                if key >= best_key:
                    best_key, best, best_epoch, best_hits = key, params.copy(), epoch, rep.hits1
            if pool is not None and epoch >= augment_start and n_evals % augment_every == 0:
                found = augment_pool(pool, H, range(n1), range(n1, n), epoch, train_cfg.csls_k, augment_csls,
                                     augment_margin)
                record["pseudo_pairs"] = len(pool)
                logger.info("epoch %d: accepted %d pseudo pairs (pool %d)", epoch, len(found), len(pool))
        record["elapsed_s"] = time.perf_counter() - t_start
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if len(dev_pairs) and stale >= train_cfg.patience:
            logger.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    if not len(dev_pairs):
        best, best_epoch = params.copy(), epoch
    return TrainResult(best, history, train_pairs, dev_pairs, best_epoch, best_hits, pool, epoch, epoch_seconds)


def semi_supervised_train(pair: GraphPair, enc_cfg: EncoderConfig = EncoderConfig(),
                          loss_cfg: LossConfig = LossConfig(), train_cfg: TrainConfig = TrainConfig(),
                          augment: bool = True, augment_every: int = 1, augment_csls: bool = True,
                          **kw) -> TrainResult:
    """Training with iterative mutual-nearest-neighbour pseudo labelling."""
    return train(pair, enc_cfg, loss_cfg, train_cfg, augment=augment, augment_every=augment_every,
                 augment_csls=augment_csls, **kw)
