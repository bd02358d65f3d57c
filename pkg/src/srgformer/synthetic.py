"""Small planted-block datasets for smoke tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataio import InteractionDataset, InteractionRecord, ModalFeatureTable, write_fmat


def block_records(
    users: int = 20,
    items: int = 15,
    blocks: int = 4,
    density: float = 1.0,
    seed: int = 0,
    cross: int = 0,
) -> list[InteractionRecord]:
    """Users interact mostly with items of their own block.

    ``density`` is the chance of each in-block pair and ``cross`` adds that
    many random out-of-block items per user. Every user keeps at least one
    interaction and every item is used by someone. Timestamps increase with
    record position.
    """
    rng = np.random.default_rng(seed)
    u_block = np.arange(users) % blocks
    i_block = np.arange(items) % blocks
    recs = []
    ts = 1_000
    for u in range(users):
        mine = np.flatnonzero(i_block == u_block[u])
        chosen = mine[rng.random(len(mine)) < density]
        if len(chosen) == 0:
            chosen = mine[:1]
        if cross:
            others = np.flatnonzero(i_block != u_block[u])
            chosen = np.concatenate([chosen, rng.choice(others, size=min(cross, len(others)), replace=False)])
        for i in rng.permutation(chosen):
            recs.append(InteractionRecord(u, int(i), ts))
            ts += 1
    seen = {r.item_id for r in recs}
    for i in range(items):
        if i not in seen:
            owners = np.flatnonzero(u_block == i_block[i])
            if len(owners) == 0:
                owners = np.arange(users)
            recs.append(InteractionRecord(int(rng.choice(owners)), i, ts))
            ts += 1
    return recs


def train_only(records, users: int, items: int) -> InteractionDataset:
    return InteractionDataset(users, items, list(records), [], [])


def random_features(items: int, dims=None, seed: int = 0) -> dict[str, ModalFeatureTable]:
    dims = dims or {"textual": 8, "visual": 8}
    rng = np.random.default_rng([seed, 7])
    return {m: ModalFeatureTable(m, rng.normal(size=(items, d))) for m, d in sorted(dims.items())}


def write_demo(out_dir, users: int = 60, items: int = 40, blocks: int = 5, density: float = 0.7, seed: int = 0) -> Path:
    """Write ``interactions.tsv`` plus visual/textual ``.fmat`` files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recs = block_records(users, items, blocks, density, seed)
    with (out / "interactions.tsv").open("w", encoding="utf-8", newline="\n") as fh:
        for r in recs:
            fh.write(f"u{r.user_id:04d}\t{r.item_id}\t{r.timestamp}\n")
    for m, table in random_features(items, {"visual": 16, "textual": 12}, seed).items():
        write_fmat(out / f"features.{m}.fmat", table.matrix)
    return out
