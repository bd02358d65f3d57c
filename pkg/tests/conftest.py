import sys

import numpy as np
import pytest

from srgformer.config import TrainConfig
from srgformer.dataio import InteractionDataset, InteractionRecord, split_dataset
from srgformer.model import GraphContext
from srgformer.synthetic import block_records, random_features, train_only


def numeric_grad(f, tensor, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. ``tensor.value``."""
    base = tensor.value
    grad = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus = base.copy()
        plus[idx] += h
        tensor.value = plus
        fp = float(f())
        minus = base.copy()
        minus[idx] -= h
        tensor.value = minus
        fm = float(f())
        grad[idx] = (fp - fm) / (2 * h)
    tensor.value = base
    return grad


def rel_error(a, b):
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def tiny_dataset(users=4, items=4, seed=3):
    """Every user gets 2 items, every item at least one user."""
    rng = np.random.default_rng(seed)
    recs = []
    for u in range(users):
        for i in sorted({u % items, int(rng.integers(0, items))} | ({(u + 1) % items} if u % 2 else set())):
            recs.append(InteractionRecord(u, i, 100 + len(recs)))
    return InteractionDataset(users, items, recs, [], [])


@pytest.fixture
def tiny():
    ds = tiny_dataset()
    feats = random_features(ds.item_count, {"visual": 3, "textual": 5}, seed=1)
    return ds, GraphContext.build(ds, feats)


@pytest.fixture
def tiny_config():
    return TrainConfig(
        embedding_dim=4, heads=2, hyperedges=3, hyper_layers=2, cg_layers=2, mg_layers=1,
        dropout=0.0, gamma=0.5, ssl_weight=0.5, reg_weight=0.1, alpha=0.4, beta=0.6,
        attention="dense", seed=11,
    )


# settings for the 20-user/15-item planted-block toy; a larger step and more
# triples per epoch keep the noisy per-epoch loss monotone early on
SMOKE_OVERRIDES = dict(
    embedding_dim=64, hyperedges=4, lr=1e-2, samples_per_interaction=10.0, batch_size=2048, epochs=200, seed=0
)


def block_context(split: bool = False, seed: int = 0):
    """(dataset, GraphContext) for the planted-block toy with 8-d random features."""
    recs = block_records(20, 15, 4, 0.8, seed=seed, cross=1)
    ds = split_dataset(recs, seed=seed) if split else train_only(recs, 20, 15)
    feats = random_features(15, {"visual": 8, "textual": 8}, seed=seed)
    return ds, GraphContext.build(ds, feats)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance lines recorded by tests/test_acceptance.py, if it ran."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
