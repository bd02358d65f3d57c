"""Learnable hyperedge structure: dependencies, Gumbel-Softmax relaxation,
hypergraph message passing and the local cross-modal contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import SparseMatrix, Tensor
from .errors import ShapeError
from .gcn import info_nce

_DELTA_CLIP = 1e-12


@dataclass
class DependencyMatrices:
    items: Tensor  # |I| x A
    users: Tensor  # |U| x A


def hyperedge_dependencies(item_features, hyperedges: Tensor, user_items: SparseMatrix) -> DependencyMatrices:
    """Item-hyperedge affinities ``E_i V^T`` and their user aggregation ``A_u (E_i V^T)``."""
    item_features = item_features if isinstance(item_features, Tensor) else ad.constant(item_features)
    if item_features.shape[1] != hyperedges.shape[1]:
        raise ShapeError(
            f"feature dim {item_features.shape[1]} does not match hyperedge dim {hyperedges.shape[1]}"
        )
    h_items = ad.matmul(item_features, ad.transpose(hyperedges))
    return DependencyMatrices(h_items, ad.spmm(user_items, h_items))


def logistic_noise(shape, rng: np.random.Generator | None) -> np.ndarray:
    """``log d - log(1 - d)`` with ``d ~ U(0, 1)``; all zeros when ``rng`` is None."""
    if rng is None:
        return np.zeros(shape)
    d = np.clip(rng.random(shape), _DELTA_CLIP, 1.0 - _DELTA_CLIP)
    return np.log(d) - np.log1p(-d)


def gumbel_softmax_rows(h: Tensor, temperature: float, noise: np.ndarray | None = None) -> Tensor:
    """Row softmax of ``(noise + h) / temperature``.

    ``noise`` is the logistic term; pass None for the noise-free (``d = 0.5``)
    reduction used at evaluation time.
    """
    if temperature <= 0:
        raise ValueError("gumbel temperature must be positive")
    logits = h if noise is None else ad.add(h, ad.constant(noise))
    return ad.softmax_rows(ad.scale(logits, 1.0 / temperature))


def hypergraph_propagate_items(
    h_items: Tensor, emb_items: Tensor, p_drop: float = 0.0, rng: np.random.Generator | None = None
) -> Tensor:
    """``DROP(H) @ (DROP(H)^T @ E)`` with independent dropout masks."""
    left = ad.dropout(h_items, p_drop, rng)
    right = ad.dropout(h_items, p_drop, rng)
    return ad.matmul(left, ad.matmul(ad.transpose(right), emb_items))


def hypergraph_propagate_users(
    h_users: Tensor,
    h_items: Tensor,
    emb_items: Tensor,
    p_drop: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """``DROP(H_u) @ (DROP(H_i)^T @ E_i)``."""
    left = ad.dropout(h_users, p_drop, rng)
    right = ad.dropout(h_items, p_drop, rng)
    return ad.matmul(left, ad.matmul(ad.transpose(right), emb_items))


@dataclass
class LocalStack:
    users: Tensor
    items: Tensor

    def stacked(self) -> Tensor:
        return ad.concat_rows([self.users, self.items])


def local_embeddings(
    deps: DependencyMatrices,
    item_emb: Tensor,
    layers: int,
    temperature: float,
    p_drop: float = 0.0,
    rng: np.random.Generator | None = None,
) -> LocalStack:
    """Run ``layers`` hypergraph steps for one modality.

    ``rng`` drives both the Gumbel noise and dropout; with ``rng=None`` the
    pass is deterministic (noise-free relaxation, no dropout).
    """
    noise_i = logistic_noise(deps.items.shape, rng)
    noise_u = logistic_noise(deps.users.shape, rng)
    hi = gumbel_softmax_rows(deps.items, temperature, noise_i if rng is not None else None)
    hu = gumbel_softmax_rows(deps.users, temperature, noise_u if rng is not None else None)
    e_items = item_emb
    e_users = None
    for _ in range(layers):
        e_users = hypergraph_propagate_users(hu, hi, e_items, p_drop, rng)
        e_items = hypergraph_propagate_items(hi, e_items, p_drop, rng)
    if e_users is None:
        e_users = ad.constant(np.zeros((deps.users.shape[0], item_emb.shape[1])))
    return LocalStack(e_users, e_items)


def fuse_local(stacks: Mapping[str, LocalStack]) -> Tensor:
    """Sum over modalities of the ``[users; items]`` local blocks."""
    if not stacks:
        raise ShapeError("fuse_local needs at least one modality")
    blocks = [s.stacked() for s in stacks.values()]
    shapes = {b.shape for b in blocks}
    if len(shapes) != 1:
        raise ShapeError(f"modal local blocks differ in shape: {sorted(shapes)}")
    return ad.sum_of(blocks)


def hcl_loss(first: Tensor, second: Tensor, temperature: float, in_batch_negatives: bool = False) -> Tensor:
    """InfoNCE between the same rows under two modalities."""
    return info_nce(first, second, temperature, in_batch_negatives)
