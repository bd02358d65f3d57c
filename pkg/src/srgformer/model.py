"""Parameter container and the full forward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, fuse_structural, global_embedding
from .autodiff import AdamState, SparseMatrix, Tensor
from .config import TrainConfig
from .dataio import InteractionDataset, ModalFeatureTable, build_normalized_adjacency, user_mean_matrix
from .gcn import layer_combine, mcl_loss, modal_embeddings, propagate, xavier_uniform
from .hypergraph import fuse_local, hcl_loss, hyperedge_dependencies, local_embeddings


@dataclass
class GraphContext:
    """Everything the forward pass reads from the dataset; immutable once built."""

    user_count: int
    item_count: int
    adjacency: SparseMatrix
    user_items: SparseMatrix
    user_mean: SparseMatrix
    features: dict[str, np.ndarray]

    @classmethod
    def build(cls, ds: InteractionDataset, features: dict[str, ModalFeatureTable]) -> "GraphContext":
        adj = build_normalized_adjacency(ds)
        feats = {}
        for name, table in features.items():
            if table.matrix.shape[0] != ds.item_count:
                raise ValueError(f"{name} features have {table.matrix.shape[0]} rows for {ds.item_count} items")
            feats[name] = table.matrix
        return cls(ds.user_count, ds.item_count, adj.matrix, adj.user_block, user_mean_matrix(ds), feats)

    @property
    def node_count(self) -> int:
        return self.user_count + self.item_count


@dataclass
class ModelState:
    config: TrainConfig
    user_count: int
    item_count: int
    modalities: list[str]
    params: dict[str, Tensor]
    adam: AdamState | None = None
    epoch: int = 0

    @classmethod
    def init(cls, config: TrainConfig, ctx: GraphContext) -> "ModelState":
        rng = np.random.default_rng([config.seed, 1])
        d = config.embedding_dim
        mods = config.modalities(ctx.features)
        params: dict[str, Tensor] = {}

        def put(name, value):
            params[name] = ad.parameter(value, name=name)

        put("id_embedding", xavier_uniform(rng, ctx.node_count, d))
        for m in mods:
            dm = ctx.features[m].shape[1]
            put(f"modal.{m}.proj", xavier_uniform(rng, dm, d))
            if not config.no_hypergraph:
                put(f"hyper.{m}.edges", xavier_uniform(rng, config.hyperedges, dm))
        if not config.no_global:
            params.update(AttentionParams.init(rng, d, config.heads).named())
        adam = AdamState(lr=config.lr)
        return cls(config, ctx.user_count, ctx.item_count, mods, dict(sorted(params.items())), adam)

    @property
    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.params.values()))

    def attention_params(self) -> AttentionParams | None:
        if self.config.no_global:
            return None
        h = self.config.heads
        get = self.params.__getitem__
        return AttentionParams(
            [get(f"attn.q{k}") for k in range(h)],
            [get(f"attn.k{k}") for k in range(h)],
            [get(f"attn.v{k}") for k in range(h)],
        )

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def restore(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            self.params[k].value = v.copy()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p.value)) for p in self.params.values())


@dataclass
class ForwardOutput:
    final: Tensor
    collab_id: Tensor
    collab: Tensor
    structural: Tensor | None
    hcl_users: Tensor | None = None
    hcl_items: Tensor | None = None
    mcl_users: Tensor | None = None
    mcl_items: Tensor | None = None
    extras: dict = field(default_factory=dict)


def _pair_loss(pairs, temperature, in_batch, fn):
    terms = [fn(a, b, temperature, in_batch) for a, b in pairs]
    return ad.sum_of(terms) if terms else None


def forward(state: ModelState, ctx: GraphContext, rng: np.random.Generator | None = None) -> ForwardOutput:
    """Compute final embeddings and the self-supervised terms.

    ``rng`` enables Gumbel noise and dropout (training); None gives the
    deterministic evaluation pass.
    """
    cfg = state.config
    p = state.params
    u, n = ctx.user_count, ctx.node_count

    collab_id = layer_combine(propagate(ctx.adjacency, p["id_embedding"], cfg.cg_layers))

    modal = {
        m: modal_embeddings(ctx.adjacency, ctx.user_mean, ctx.features[m], p[f"modal.{m}.proj"], cfg.mg_layers)
        for m in state.modalities
    }
    collab = collab_id
    if cfg.modal_in_collab and modal:
        collab = ad.add(collab_id, ad.sum_of([ad.l2_normalize_rows(e) for e in modal.values()]))

    out = ForwardOutput(final=collab, collab_id=collab_id, collab=collab, structural=None)
    pairs = list(combinations(state.modalities, 2))

    if cfg.effective_gamma > 0 and pairs:
        out.mcl_users = _pair_loss(
            [(ad.slice_rows(modal[a], 0, u), ad.slice_rows(modal[b], 0, u)) for a, b in pairs],
            cfg.temperature, cfg.in_batch_negatives, mcl_loss,
        )
        out.mcl_items = _pair_loss(
            [(ad.slice_rows(modal[a], u, n), ad.slice_rows(modal[b], u, n)) for a, b in pairs],
            cfg.temperature, cfg.in_batch_negatives, mcl_loss,
        )

    local = None
    if not cfg.no_hypergraph and state.modalities:
        item_collab = ad.slice_rows(collab_id, u, n)
        stacks = {}
        for m in state.modalities:
            deps = hyperedge_dependencies(ad.constant(ctx.features[m]), p[f"hyper.{m}.edges"], ctx.user_items)
            stacks[m] = local_embeddings(
                deps, item_collab, cfg.hyper_layers, cfg.gumbel_temperature,
                cfg.dropout if rng is not None else 0.0, rng,
            )
        local = fuse_local(stacks)
        out.extras["local"] = local
        if pairs and cfg.ssl_weight > 0:
            out.hcl_users = _pair_loss(
                [(stacks[a].users, stacks[b].users) for a, b in pairs],
                cfg.temperature, cfg.in_batch_negatives, hcl_loss,
            )
            out.hcl_items = _pair_loss(
                [(stacks[a].items, stacks[b].items) for a, b in pairs],
                cfg.temperature, cfg.in_batch_negatives, hcl_loss,
            )

    glob = None
    att = state.attention_params()
    if att is not None:
        graph = ctx.user_items if cfg.attention == "masked" else None
        glob = global_embedding(collab_id, collab, att, u, graph)
        out.extras["global"] = glob

    out.structural = fuse_structural(glob, local, cfg.alpha, cfg.effective_beta)
    out.final = final_embeddings(collab, out.structural)
    return out


def final_embeddings(collab: Tensor, structural: Tensor | None) -> Tensor:
    """Sum of the collaborative and structural embeddings."""
    return collab if structural is None else ad.add(collab, structural)


def predict_scores(final: np.ndarray, user: int, user_count: int, items=None) -> np.ndarray:
    """Inner-product scores of ``user`` against ``items`` (default: all items)."""
    final = final.value if isinstance(final, Tensor) else np.asarray(final)
    n_items = final.shape[0] - user_count
    if not 0 <= user < user_count:
        raise KeyError(f"unknown user id {user}")
    item_rows = final[user_count:]
    if items is not None:
        items = np.asarray(items, dtype=np.int64)
        if len(items) and (items.min() < 0 or items.max() >= n_items):
            raise KeyError("unknown item id")
        item_rows = item_rows[items]
    return item_rows @ final[user]


# -- losses ---------------------------------------------------------------------


def bpr_loss(
    final: Tensor,
    triples: np.ndarray,
    user_count: int,
    reg_weight: float,
    reg_terms=(),
    mode: str = "difference",
) -> Tensor:
    """Summed ``-ln sigma(pos - neg)`` plus ``reg_weight`` times squared norms.

    ``mode='sum'`` scores ``pos + neg`` instead.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    eu = ad.gather_rows(final, triples[:, 0])
    ep = ad.gather_rows(final, triples[:, 1] + user_count)
    en = ad.gather_rows(final, triples[:, 2] + user_count)
    pos, neg = ad.row_dot(eu, ep), ad.row_dot(eu, en)
    margin = ad.sub(pos, neg) if mode == "difference" else ad.add(pos, neg)
    loss = ad.neg(ad.sum(ad.log_sigmoid(margin)))
    reg_terms = list(reg_terms)
    if reg_weight and reg_terms:
        loss = ad.add(loss, ad.scale(ad.sum_of([ad.squared_norm(t) for t in reg_terms]), reg_weight))
    return loss


def batch_regularized(state: ModelState, triples: np.ndarray) -> list[Tensor]:
    """Parameters counted in the norm penalty: batch ID rows and modal projections."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    emb = state.params["id_embedding"]
    u = state.user_count
    terms = [
        ad.gather_rows(emb, triples[:, 0]),
        ad.gather_rows(emb, triples[:, 1] + u),
        ad.gather_rows(emb, triples[:, 2] + u),
    ]
    terms += [state.params[f"modal.{m}.proj"] for m in state.modalities]
    return terms


def joint_loss(bpr, hcl_users=None, hcl_items=None, mcl_users=None, mcl_items=None, ssl_weight=0.0, gamma=0.0):
    """``bpr + ssl_weight*(hcl_u + hcl_i) + gamma*(mcl_u + mcl_i)``; missing terms count as zero.

    Works on tensors and on plain floats.
    """
    if not isinstance(bpr, Tensor):
        total = float(bpr)
        total += ssl_weight * (float(hcl_users or 0.0) + float(hcl_items or 0.0))
        total += gamma * (float(mcl_users or 0.0) + float(mcl_items or 0.0))
        return total
    loss = bpr
    hcl = [t for t in (hcl_users, hcl_items) if t is not None]
    mcl = [t for t in (mcl_users, mcl_items) if t is not None]
    if ssl_weight and hcl:
        loss = ad.add(loss, ad.scale(ad.sum_of(hcl), ssl_weight))
    if gamma and mcl:
        loss = ad.add(loss, ad.scale(ad.sum_of(mcl), gamma))
    return loss


def loss_terms(state: ModelState, ctx: GraphContext, triples: np.ndarray, rng=None) -> dict[str, Tensor]:
    """Forward pass plus every loss component for one batch."""
    cfg = state.config
    out = forward(state, ctx, rng)
    bpr = bpr_loss(
        out.final, triples, state.user_count, cfg.reg_weight, batch_regularized(state, triples), cfg.bpr_mode
    )
    total = joint_loss(
        bpr, out.hcl_users, out.hcl_items, out.mcl_users, out.mcl_items, cfg.ssl_weight, cfg.effective_gamma
    )
    terms = {"bpr": bpr, "total": total}
    for name in ("hcl_users", "hcl_items", "mcl_users", "mcl_items"):
        t = getattr(out, name)
        if t is not None:
            terms[name] = t
    return terms
