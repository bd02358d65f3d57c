"""Collaborative and modal graph propagation, plus the cross-modal InfoNCE loss."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import SparseMatrix, Tensor
from .errors import ShapeError


def cgprop(adj: SparseMatrix, emb: Tensor) -> Tensor:
    """One propagation layer: ``adj @ emb``."""
    return ad.spmm(adj, emb)


# the modal stack uses the same light propagation kernel
mgprop = cgprop


def propagate(adj: SparseMatrix, emb: Tensor, layers: int) -> list[Tensor]:
    """Return ``[emb, adj@emb, ..., adj^layers@emb]``."""
    stack = [emb]
    for _ in range(layers):
        stack.append(cgprop(adj, stack[-1]))
    return stack


def layer_combine(layers: Sequence[Tensor]) -> Tensor:
    """Elementwise mean over a layer stack."""
    if not layers:
        raise ShapeError("layer_combine needs at least one layer")
    shapes = {t.shape for t in layers}
    if len(shapes) != 1:
        raise ShapeError(f"layer shapes differ: {sorted(shapes)}")
    return ad.mean_of(list(layers))


def transform_modal(features, weight: Tensor) -> Tensor:
    """Project raw item features into the embedding space."""
    return ad.matmul(features, weight)


def init_user_modal(user_mean: SparseMatrix, item_modal: Tensor) -> Tensor:
    """Average each user's train-neighbor item rows; users without neighbors get zeros.

    ``user_mean`` is the row-averaging operator from
    :func:`srgformer.dataio.user_mean_matrix`.
    """
    return ad.spmm(user_mean, item_modal)


def modal_embeddings(
    adj: SparseMatrix, user_mean: SparseMatrix, features, weight: Tensor, layers: int
) -> Tensor:
    """Top layer of the modal propagation stack over ``[users; items]``."""
    items = transform_modal(features, weight)
    users = init_user_modal(user_mean, items)
    return propagate(adj, ad.concat_rows([users, items]), layers)[-1]


def cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise cosine similarity as an ``(n, 1)`` column; zero rows give 0."""
    return ad.row_dot(ad.l2_normalize_rows(a), ad.l2_normalize_rows(b))


def info_nce(a: Tensor, b: Tensor, temperature: float, in_batch_negatives: bool = False) -> Tensor:
    """Summed InfoNCE between matching rows of ``a`` and ``b``.

    By default the denominator sums positive-pair similarities of all rows.
    With ``in_batch_negatives`` each row is contrasted against every row of
    ``b`` instead.
    """
    if a.shape != b.shape:
        raise ShapeError(f"info_nce: {a.shape} vs {b.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    n = a.shape[0]
    if in_batch_negatives:
        an, bn = ad.l2_normalize_rows(a), ad.l2_normalize_rows(b)
        logits = ad.scale(ad.matmul(an, ad.transpose(bn)), 1.0 / temperature)
        pos = ad.scale(ad.row_dot(an, bn), 1.0 / temperature)
        return ad.sub(ad.sum(ad.logsumexp_rows(logits)), ad.sum(pos))
    pos = ad.scale(cosine_rows(a, b), 1.0 / temperature)
    lse = ad.logsumexp_rows(ad.transpose(pos))
    return ad.sub(ad.scale(ad.sum(lse), float(n)), ad.sum(pos))


def mcl_loss(
    visual: Tensor, textual: Tensor, temperature: float, in_batch_negatives: bool = False
) -> Tensor:
    return info_nce(visual, textual, temperature, in_batch_negatives)


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))
