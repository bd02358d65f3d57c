"""Top-N ranking metrics and full-catalog evaluation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError
from .model import forward, predict_scores


def recall_at_n(ranked, test_items, n: int) -> float:
    test = set(int(i) for i in test_items)
    if not test:
        raise ValueError("recall is undefined for an empty test set")
    hits = sum(1 for i in list(ranked)[:n] if int(i) in test)
    return hits / len(test)


def ndcg_at_n(ranked, test_items, n: int) -> float:
    test = set(int(i) for i in test_items)
    if not test:
        raise ValueError("ndcg is undefined for an empty test set")
    dcg = sum(1.0 / math.log2(r + 2) for r, i in enumerate(list(ranked)[:n]) if int(i) in test)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(n, len(test))))
    return dcg / idcg


def rank_items(scores: np.ndarray, exclude=None, n: int | None = None) -> np.ndarray:
    """Item ids by descending score, ties broken by ascending id, excluded ids removed."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    if exclude is not None and len(exclude):
        keep = np.ones(len(scores), dtype=bool)
        keep[np.asarray(exclude, dtype=np.int64)] = False
        order = order[keep[order]]
    return order if n is None else order[:n]


@dataclass
class EvalReport:
    metrics: dict[str, float]
    users: int
    config_digest: str = ""
    ablation: str = "full"
    seed: int = 0
    dataset: str = "FID"
    epoch: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_rankings(
    final: np.ndarray,
    user_count: int,
    targets: list[np.ndarray],
    exclude: list[np.ndarray] | None,
    cutoffs=(10, 20),
) -> tuple[dict[str, float], int]:
    """Mean Recall@n and NDCG@n over users with a non-empty target set."""
    final = np.asarray(final)
    users, items = final[:user_count], final[user_count:]
    cutoffs = sorted(set(int(c) for c in cutoffs))
    top = max(cutoffs)
    sums = {f"{k}@{n}": 0.0 for n in cutoffs for k in ("R", "N")}
    count = 0
    for u in range(user_count):
        tgt = targets[u]
        if len(tgt) == 0:
            continue
        scores = items @ users[u]
        ranked = rank_items(scores, exclude[u] if exclude is not None else None, top)
        if exclude is not None and len(exclude[u]):
            assert not np.isin(ranked, exclude[u]).any(), "excluded item leaked into ranking"
        for n in cutoffs:
            sums[f"R@{n}"] += recall_at_n(ranked, tgt, n)
            sums[f"N@{n}"] += ndcg_at_n(ranked, tgt, n)
        count += 1
    if count == 0:
        raise DataError("no evaluable users (all target sets are empty)")
    return {k: v / count for k, v in sums.items()}, count


def evaluate_topn(state, ctx, ds, part: str = "test", cutoffs=(10, 20)) -> EvalReport:
    """Full-catalog evaluation of ``part`` with train items masked."""
    final = forward(state, ctx, rng=None).final.value
    metrics, users = evaluate_rankings(final, ds.user_count, ds.items_by_user(part), ds.neighbors(), cutoffs)
    cfg = state.config
    return EvalReport(
        metrics=metrics,
        users=users,
        config_digest=cfg.digest(),
        ablation=cfg.ablation_tag,
        seed=cfg.seed,
        dataset=ds.variant,
        epoch=state.epoch,
    )


def recommend(state, ctx, ds, user: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``n`` unseen items and their scores for one user."""
    final = forward(state, ctx, rng=None).final.value
    scores = predict_scores(final, user, ds.user_count)
    ranked = rank_items(scores, ds.neighbors()[user], n)
    return ranked, scores[ranked]
