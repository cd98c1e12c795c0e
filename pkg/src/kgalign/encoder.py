"""Dual attention matching encoder.

Entity states are propagated by relation-attentive aggregation with
Householder-style relational projections, concatenated across hops, and
fused with a cross-graph view computed against a small set of shared proxy
vectors. Every forward step keeps the intermediates needed by
:func:`backward`, which returns exact gradients for all parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from .graph import AdjacencyIndex, GraphPair, build_adjacency, merge_adjacency

NORM_FLOOR = 1e-12
PARAM_NAMES = ("entity", "relation", "attention", "proxies", "gate_weight", "gate_bias")


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 100
    depth: int = 2
    n_proxies: int = 64
    dropout_rate: float = 0.3
    add_inverse: bool = True
    add_self: bool = True
    input_dropout: bool = False
    # ablation switches
    relation_attention: bool = True
    relational_projection: bool = True
    multi_hop: bool = True
    proxy_matching: bool = True

    def validate(self) -> None:
        if self.dim < 1 or self.n_proxies < 1:
            raise ValueError("dim and n_proxies must be positive")
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def width(self) -> int:
        """Width of the multi-hop (and final) embeddings."""
        return self.dim * (self.depth + 1 if self.multi_hop else 1)


@dataclass
class ParameterSet:
    entity: np.ndarray
    relation: np.ndarray
    attention: np.ndarray
    proxies: np.ndarray
    gate_weight: np.ndarray
    gate_bias: np.ndarray

    def arrays(self) -> Dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def copy(self) -> "ParameterSet":
        return ParameterSet(**{k: v.copy() for k, v in self.arrays().items()})

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet(**{k: v.astype(dtype) for k, v in self.arrays().items()})

    def zeros_like(self) -> "ParameterSet":
        return ParameterSet(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays().values())


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_parameters(entity_count: int, relation_count: int, cfg: EncoderConfig, rng_seed: int = 0) -> ParameterSet:
    """He-normal initialisation of every trainable array."""
    cfg.validate()
    if entity_count < 1 or relation_count < 1:
        raise ValueError("counts must be positive")
    rng = np.random.default_rng(rng_seed)
    d, D = cfg.dim, cfg.width
    return ParameterSet(
        entity=he_normal(rng, (entity_count, d), d),
        relation=he_normal(rng, (relation_count, d), d),
        attention=he_normal(rng, (d,), d),
        proxies=he_normal(rng, (cfg.n_proxies, D), D),
        gate_weight=he_normal(rng, (D, D), D),
        gate_bias=np.zeros(D),
    )


class PairGraph:
    """Both graphs of a pair merged into one index space, with cached sparse operators."""

    def __init__(self, adj: AdjacencyIndex, n1: int, r1: int):
        self.adj = adj
        self.n1 = n1
        self.r1 = r1
        n, m = adj.entity_count, adj.edge_count
        cols = np.arange(m)
        # (entity x edge) incidence used for segment sums and scatter-adds
        self.gather_src = sp.csr_matrix((np.ones(m), (adj.src, cols)), shape=(n, m))
        self.gather_nbr = sp.csr_matrix((np.ones(m), (adj.nbr, cols)), shape=(n, m))
        self.gather_rel = sp.csr_matrix((np.ones(m), (adj.rel, cols)), shape=(adj.relation_count, m))
        counts = np.diff(adj.indptr)
        self.nonempty = counts > 0
        self.starts = adj.indptr[:-1][self.nonempty]

    @classmethod
    def from_pair(cls, pair: GraphPair, add_inverse: bool = True, add_self: bool = True) -> "PairGraph":
        a1 = build_adjacency(pair.g1, add_inverse, add_self)
        a2 = build_adjacency(pair.g2, add_inverse, add_self)
        return cls(merge_adjacency(a1, a2), a1.entity_count, a1.relation_count)

    @classmethod
    def single(cls, adj: AdjacencyIndex) -> "PairGraph":
        return cls(adj, adj.entity_count, adj.relation_count)

    @property
    def entity_count(self) -> int:
        return self.adj.entity_count

    @property
    def relation_count(self) -> int:
        return self.adj.relation_count

    def segment_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum edge rows into their receiving entity."""
        return np.asarray(self.gather_src @ values)

    def segment_softmax(self, logits: np.ndarray) -> np.ndarray:
        out_max = np.zeros(self.entity_count)
        if len(self.starts):
            out_max[self.nonempty] = np.maximum.reduceat(logits, self.starts)
        ex = np.exp(logits - out_max[self.adj.src])
        den = np.zeros(self.entity_count)
        if len(self.starts):
            den[self.nonempty] = np.add.reduceat(ex, self.starts)
        return ex / den[self.adj.src]


# ---------------------------------------------------------------------------
# building blocks


def unit_rows(x: np.ndarray):
    """Row-normalise ``x``; rows with norm below the floor map to zero.

    Returns (unit rows, norms, mask of degenerate rows).
    """
    norms = np.linalg.norm(x, axis=-1)
    bad = norms < NORM_FLOOR
    safe = np.where(bad, 1.0, norms)
    u = x / safe[..., None]
    u[bad] = 0.0
    return u, norms, bad


def unit_rows_backward(g_u: np.ndarray, u: np.ndarray, norms: np.ndarray, bad: np.ndarray) -> np.ndarray:
    safe = np.where(bad, 1.0, norms)
    g = (g_u - u * np.sum(u * g_u, axis=-1, keepdims=True)) / safe[..., None]
    g[bad] = 0.0
    return g


def relational_projection(h: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Reflect ``h`` across the hyperplane whose normal is ``r``.

    ``r`` is normalised first; a (near) zero ``r`` leaves ``h`` unchanged.
    Works row-wise on stacked inputs.
    """
    h = np.asarray(h, dtype=float)
    u, _, _ = unit_rows(np.asarray(r, dtype=float))
    return h - 2.0 * np.sum(u * h, axis=-1, keepdims=True) * u


def attention_weights(entity: int, params: ParameterSet, adj: AdjacencyIndex) -> np.ndarray:
    """Softmax weights of one entity's incident edges, in edge-list order."""
    lo, hi = adj.indptr[entity], adj.indptr[entity + 1]
    if hi == lo:
        raise ValueError(f"entity {entity} has no incident edges")
    logits = params.relation[adj.rel[lo:hi]] @ params.attention
    logits = logits - logits.max()
    w = np.exp(logits)
    return w / w.sum()


def _edge_weights(params: ParameterSet, graph: PairGraph, cfg: EncoderConfig) -> np.ndarray:
    if not cfg.relation_attention:
        return graph.segment_softmax(np.zeros(graph.adj.edge_count))
    rel_logits = params.relation @ params.attention
    return graph.segment_softmax(rel_logits[graph.adj.rel])


def sral_layer(H: np.ndarray, params: ParameterSet, graph: PairGraph, cfg: EncoderConfig = EncoderConfig(),
               alpha: Optional[np.ndarray] = None) -> np.ndarray:
    """One relational attention aggregation step followed by tanh."""
    if not np.isfinite(H).all():
        raise FloatingPointError("non-finite entity states entering aggregation")
    if isinstance(graph, AdjacencyIndex):
        graph = PairGraph.single(graph)
    if alpha is None:
        alpha = _edge_weights(params, graph, cfg)
    X = H[graph.adj.nbr]
    if cfg.relational_projection:
        U, _, _ = unit_rows(params.relation)
        Ue = U[graph.adj.rel]
        X = X - 2.0 * np.sum(Ue * X, axis=1, keepdims=True) * Ue
    return np.tanh(graph.segment_sum(alpha[:, None] * X))


def multi_hop(layers: List[np.ndarray]) -> np.ndarray:
    rows = {h.shape[0] for h in layers}
    if len(rows) != 1:
        raise ValueError(f"layers have mismatched row counts: {sorted(rows)}")
    return np.concatenate(layers, axis=1)


def proxy_match(H: np.ndarray, Q: np.ndarray):
    """Cross-graph view of every row of ``H`` against shared proxies.

    Returns (H_p, beta) with ``H_p = H - beta @ Q`` and ``beta`` the
    softmax over proxies of cosine similarity.
    """
    if H.shape[1] != Q.shape[1]:
        raise ValueError(f"embedding width {H.shape[1]} != proxy width {Q.shape[1]}")
    Hn, _, _ = unit_rows(H)
    Qn, _, _ = unit_rows(Q)
    cos = Hn @ Qn.T
    cos = cos - cos.max(axis=1, keepdims=True)
    beta = np.exp(cos)
    beta /= beta.sum(axis=1, keepdims=True)
    return H - beta @ Q, beta


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def gate_combine(H_multi: np.ndarray, H_p: np.ndarray, M: np.ndarray, b: np.ndarray):
    """Gate between the cross-graph view and the multi-hop view.

    Returns (H_final, eta) with ``eta = sigmoid(H_p @ M.T + b)``.
    """
    eta = _sigmoid(H_p @ M.T + b)
    return eta * H_p + (1.0 - eta) * H_multi, eta


# ---------------------------------------------------------------------------
# full pass


@dataclass
class ForwardTrace:
    layers: List[np.ndarray]
    H_multi: np.ndarray
    H_p: Optional[np.ndarray]
    eta: Optional[np.ndarray]
    H_final: np.ndarray
    alpha: np.ndarray
    beta: Optional[np.ndarray] = None
    masks: List[Optional[np.ndarray]] = field(default_factory=list)
    input_mask: Optional[np.ndarray] = None
    pre_dropout: List[np.ndarray] = field(default_factory=list)
    degenerate_relations: int = 0
    degenerate_rows: int = 0


def forward(params: ParameterSet, graph: PairGraph, cfg: EncoderConfig,
            dropout_rng: Optional[np.random.Generator] = None) -> ForwardTrace:
    """Encode every entity of both graphs.

    Dropout (inverted scaling) is applied to each layer output only when
    ``dropout_rng`` is given.
    """
    alpha = _edge_weights(params, graph, cfg)
    keep = 1.0 - cfg.dropout_rate
    H = params.entity
    input_mask = None
    if cfg.input_dropout and dropout_rng is not None and cfg.dropout_rate > 0:
        input_mask = (dropout_rng.random(H.shape) < keep) / keep
        H = H * input_mask
    layers, masks, pre = [H], [], []
    degenerate_relations = int(np.sum(np.linalg.norm(params.relation, axis=1) < NORM_FLOOR))
    for _ in range(cfg.depth):
        out = sral_layer(H, params, graph, cfg, alpha)
        pre.append(out)
        if dropout_rng is not None and cfg.dropout_rate > 0:
            mask = (dropout_rng.random(out.shape) < keep) / keep
            out = out * mask
        else:
            mask = None
        masks.append(mask)
        layers.append(out)
        H = out
    H_multi = multi_hop(layers) if cfg.multi_hop else layers[-1]
    if cfg.proxy_matching:
        degenerate_rows = int(np.sum(np.linalg.norm(H_multi, axis=1) < NORM_FLOOR)
                              + np.sum(np.linalg.norm(params.proxies, axis=1) < NORM_FLOOR))
        H_p, beta = proxy_match(H_multi, params.proxies)
        H_final, eta = gate_combine(H_multi, H_p, params.gate_weight, params.gate_bias)
    else:
        degenerate_rows = 0
        H_p = beta = eta = None
        H_final = H_multi
    return ForwardTrace(
        layers=layers,
        H_multi=H_multi,
        H_p=H_p,
        eta=eta,
        H_final=H_final,
        alpha=alpha,
        beta=beta,
        masks=masks,
        input_mask=input_mask,
        pre_dropout=pre,
        degenerate_relations=degenerate_relations,
        degenerate_rows=degenerate_rows,
    )


def encode(params: ParameterSet, graph: PairGraph, cfg: EncoderConfig) -> np.ndarray:
    """Evaluation-mode final embeddings."""
    return forward(params, graph, cfg).H_final


def backward(params: ParameterSet, graph: PairGraph, cfg: EncoderConfig, trace: ForwardTrace,
             g_final: np.ndarray) -> ParameterSet:
    """Gradients of a scalar loss w.r.t. every parameter, given dL/dH_final."""
    grads = params.zeros_like()
    adj = graph.adj
    if cfg.proxy_matching:
        H_m, H_p, eta, beta = trace.H_multi, trace.H_p, trace.eta, trace.beta
        g_p = g_final * eta
        g_m = g_final * (1.0 - eta)
        g_z = g_final * (H_p - H_m) * eta * (1.0 - eta)
        grads.gate_weight = g_z.T @ H_p
        grads.gate_bias = g_z.sum(axis=0)
        g_p = g_p + g_z @ params.gate_weight
        # H_p = H_m - beta @ Q
        g_m = g_m + g_p
        Q = params.proxies
        g_beta = -(g_p @ Q.T)
        grads.proxies = -(beta.T @ g_p)
        g_cos = beta * (g_beta - np.sum(beta * g_beta, axis=1, keepdims=True))
        Hn, h_norm, h_bad = unit_rows(H_m)
        Qn, q_norm, q_bad = unit_rows(Q)
        g_m = g_m + unit_rows_backward(g_cos @ Qn, Hn, h_norm, h_bad)
        grads.proxies = grads.proxies + unit_rows_backward(g_cos.T @ Hn, Qn, q_norm, q_bad)
    else:
        g_m = g_final

    d = cfg.dim
    if cfg.multi_hop:
        g_layers = [g_m[:, k * d:(k + 1) * d].copy() for k in range(cfg.depth + 1)]
    else:
        g_layers = [np.zeros_like(trace.layers[0]) for _ in range(cfg.depth)] + [g_m.copy()]

    alpha = trace.alpha
    U, r_norm, r_bad = unit_rows(params.relation)
    g_U = np.zeros_like(U)
    g_alpha = np.zeros_like(alpha)
    for k in range(cfg.depth, 0, -1):
        g_out = g_layers[k]
        if trace.masks[k - 1] is not None:
            g_out = g_out * trace.masks[k - 1]
        g_pre = g_out * (1.0 - trace.pre_dropout[k - 1] ** 2)
        X = trace.layers[k - 1][adj.nbr]
        g_edge = g_pre[adj.src]
        if cfg.relational_projection:
            Ue = U[adj.rel]
            ux = np.sum(Ue * X, axis=1, keepdims=True)
            P = X - 2.0 * ux * Ue
        else:
            P = X
        g_alpha += np.sum(g_edge * P, axis=1)
        g_P = alpha[:, None] * g_edge
        if cfg.relational_projection:
            ug = np.sum(Ue * g_P, axis=1, keepdims=True)
            g_X = g_P - 2.0 * ug * Ue
            g_Ue = -2.0 * (ug * X + ux * g_P)
            g_U += np.asarray(graph.gather_rel @ g_Ue)
        else:
            g_X = g_P
        g_layers[k - 1] = g_layers[k - 1] + np.asarray(graph.gather_nbr @ g_X)

    grads.entity = g_layers[0] if trace.input_mask is None else g_layers[0] * trace.input_mask
    g_rel = unit_rows_backward(g_U, U, r_norm, r_bad) if cfg.relational_projection else np.zeros_like(U)
    if cfg.relation_attention and cfg.depth > 0:
        # per-entity softmax backward, then route edge logits to their relation
        weighted = graph.segment_sum((alpha * g_alpha)[:, None])[:, 0]
        g_logit_edge = alpha * (g_alpha - weighted[adj.src])
        g_logit_rel = np.bincount(adj.rel, weights=g_logit_edge, minlength=params.relation.shape[0])
        grads.attention = params.relation.T @ g_logit_rel
        g_rel = g_rel + np.outer(g_logit_rel, params.attention)
    grads.relation = g_rel
    return grads


def relation_importance(params: ParameterSet) -> np.ndarray:
    """Attention logit of every relation: how strongly edges of that type are preferred."""
    return params.relation @ params.attention


def importance_bucket(score: float) -> str:
    if score >= 5:
        return "High"
    if score >= -5:
        return "Medium"
    return "Low"


def importance_report(params: ParameterSet, labels: Optional[List[str]] = None):
    """(label, score, bucket) rows sorted by descending score; ties keep relation order."""
    scores = relation_importance(params)
    labels = labels if labels is not None else [str(i) for i in range(len(scores))]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(labels[i], float(scores[i]), importance_bucket(scores[i])) for i in order]
