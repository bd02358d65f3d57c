"""Multi-head attention over collaborative signals and structural fusion.

Only the attention itself is kept: no feed-forward block, residual path,
positional encoding or layer norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import SparseMatrix, Tensor
from .errors import ShapeError


@dataclass
class AttentionParams:
    query: list[Tensor]
    key: list[Tensor]
    value: list[Tensor]

    @property
    def heads(self) -> int:
        return len(self.query)

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, heads: int, prefix: str = "attn") -> "AttentionParams":
        if heads < 1 or dim % heads:
            raise ShapeError(f"embedding dim {dim} is not divisible by {heads} heads")
        dk = dim // heads
        bound = np.sqrt(6.0 / (dim + dk))

        def make(kind, h):
            return ad.parameter(rng.uniform(-bound, bound, size=(dim, dk)), name=f"{prefix}.{kind}{h}")

        q = [make("q", h) for h in range(heads)]
        k = [make("k", h) for h in range(heads)]
        v = [make("v", h) for h in range(heads)]
        return cls(q, k, v)

    def named(self) -> dict[str, Tensor]:
        return {t.name: t for t in self.query + self.key + self.value}


@dataclass
class EdgeAttention:
    """Attention weights on the stored entries of a row-grouped edge list."""

    rows: np.ndarray
    cols: np.ndarray
    n_rows: int
    weights: Tensor  # (nnz, 1)


def _check(rows: Tensor, cols: Tensor, params: AttentionParams) -> int:
    d = rows.shape[1]
    if cols.shape[1] != d:
        raise ShapeError(f"rows have {d} columns, cols have {cols.shape[1]}")
    if d % params.heads:
        raise ShapeError(f"embedding dim {d} is not divisible by {params.heads} heads")
    return d // params.heads


def multi_head_attention(rows: Tensor, cols: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor]:
    """Dense attention of every row over every col.

    Returns the head-averaged row-stochastic weight matrix and the
    concatenated per-head value aggregation.
    """
    dk = _check(rows, cols, params)
    atts, outs = [], []
    for wq, wk, wv in zip(params.query, params.key, params.value):
        q = ad.matmul(rows, wq)
        k = ad.matmul(cols, wk)
        a = ad.softmax_rows(ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(dk)))
        atts.append(a)
        outs.append(ad.matmul(a, ad.matmul(cols, wv)))
    att = ad.mean_of(atts)
    if len(outs) == 1:
        return att, outs[0]
    res = ad.transpose(ad.concat_rows([ad.transpose(o) for o in outs]))
    return att, res


def masked_attention(rows: Tensor, cols: Tensor, params: AttentionParams, graph: SparseMatrix) -> EdgeAttention:
    """Attention of each row restricted to its stored neighbors in ``graph``.

    Memory is O(nnz); rows with no neighbors get no weights.
    """
    dk = _check(rows, cols, params)
    if graph.shape != (rows.shape[0], cols.shape[0]):
        raise ShapeError(f"mask {graph.shape} does not match {rows.shape[0]}x{cols.shape[0]}")
    r_idx = graph.row_ids()
    c_idx = graph.indices
    heads = []
    for wq, wk in zip(params.query, params.key):
        q = ad.gather_rows(ad.matmul(rows, wq), r_idx)
        k = ad.gather_rows(ad.matmul(cols, wk), c_idx)
        s = ad.scale(ad.row_dot(q, k), 1.0 / np.sqrt(dk))
        heads.append(ad.segment_softmax(s, r_idx, rows.shape[0]))
    return EdgeAttention(r_idx, c_idx, rows.shape[0], ad.mean_of(heads))


def apply_edge_attention(att: EdgeAttention, values: Tensor) -> Tensor:
    """Weighted sum of ``values`` rows per attention row."""
    msgs = ad.scale_rows(ad.gather_rows(values, att.cols), att.weights)
    return ad.segment_sum(msgs, att.rows, att.n_rows)


def apply_global(att_users, att_items, collab: Tensor, user_count: int) -> Tensor:
    """Global embedding over ``[users; items]``.

    User rows aggregate the item slice of ``collab`` with the user-over-item
    weights; item rows aggregate the user slice with the item-over-user
    weights. Weights may be dense tensors or :class:`EdgeAttention`.
    """
    n = collab.shape[0]
    users = ad.slice_rows(collab, 0, user_count)
    items = ad.slice_rows(collab, user_count, n)

    def agg(att, vals):
        if isinstance(att, EdgeAttention):
            return apply_edge_attention(att, vals)
        if att.shape[1] != vals.shape[0]:
            raise ShapeError(f"attention {att.shape} does not match {vals.shape}")
        return ad.matmul(att, vals)

    return ad.concat_rows([agg(att_users, items), agg(att_items, users)])


def global_embedding(
    collab_id: Tensor,
    collab: Tensor,
    params: AttentionParams,
    user_count: int,
    graph: SparseMatrix | None = None,
) -> Tensor:
    """Attention-derived global embedding.

    Queries/keys come from ``collab_id``; aggregated values from ``collab``.
    ``graph`` is the |U| x |I| interaction mask; None selects dense attention.
    """
    n = collab_id.shape[0]
    users = ad.slice_rows(collab_id, 0, user_count)
    items = ad.slice_rows(collab_id, user_count, n)
    if graph is None:
        att_u, _ = multi_head_attention(users, items, params)
        att_i, _ = multi_head_attention(items, users, params)
    else:
        att_u = masked_attention(users, items, params, graph)
        att_i = masked_attention(items, users, params, graph.transpose())
    return apply_global(att_u, att_i, collab, user_count)


def fuse_structural(global_emb: Tensor | None, local_emb: Tensor | None, alpha: float, beta: float) -> Tensor | None:
    """``alpha * NORM(global) + beta * NORM(local)``; absent inputs drop their term."""
    if not (0.0 <= alpha <= 1.0 and 0.0 <= beta <= 1.0):
        raise ValueError("alpha and beta must lie in [0, 1]")
    terms = []
    if global_emb is not None:
        terms.append(ad.scale(ad.l2_normalize_rows(global_emb), alpha))
    if local_emb is not None:
        terms.append(ad.scale(ad.l2_normalize_rows(local_emb), beta))
    if global_emb is not None and local_emb is not None and global_emb.shape != local_emb.shape:
        raise ShapeError(f"global {global_emb.shape} vs local {local_emb.shape}")
    return ad.sum_of(terms) if terms else None
