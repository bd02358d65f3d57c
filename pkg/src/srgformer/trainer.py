"""Mini-batch BPR training with Adam and validation-driven early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .dataio import InteractionDataset, sample_bpr_triples
from .errors import NumericError
from .evaluation import evaluate_rankings
from .model import GraphContext, ModelState, forward, loss_terms

log = logging.getLogger(__name__)


@dataclass
class EpochLosses:
    bpr: float = 0.0
    hcl: float = 0.0
    mcl: float = 0.0
    total: float = 0.0
    batches: int = 0


@dataclass
class TrainReport:
    losses: list[dict] = field(default_factory=list)
    val_trace: list[float] = field(default_factory=list)
    best_trace: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")
    epochs_run: int = 0
    stop_reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2, epoch])


def train_epoch(state: ModelState, ctx: GraphContext, ds: InteractionDataset) -> EpochLosses:
    """One pass over freshly sampled BPR triples; updates ``state`` in place."""
    cfg = state.config
    rng = _epoch_rng(cfg.seed, state.epoch)
    count = max(1, math.ceil(len(ds.train) * cfg.samples_per_interaction))
    triples = sample_bpr_triples(ds, count, rng)
    out = EpochLosses()
    names = list(state.params)
    for start in range(0, len(triples), cfg.batch_size):
        batch = triples[start : start + cfg.batch_size]
        with ad.Tape() as tape:
            terms = loss_terms(state, ctx, batch, rng)
        total = float(terms["total"].value)
        if not math.isfinite(total):
            snap = {k: float(t.value) for k, t in terms.items()}
            snap.update(epoch=state.epoch, batch_start=start)
            raise NumericError(f"non-finite loss at epoch {state.epoch}, batch offset {start}", snap)
        grads = tape.backward(terms["total"])
        ad.adam_step(state.adam, state.params, {n: grads[state.params[n]] for n in names})
        if not state.all_finite():
            bad = [n for n, p in state.params.items() if not np.all(np.isfinite(p.value))]
            raise NumericError(f"non-finite parameters after epoch {state.epoch} step", {"params": bad})
        out.bpr += float(terms["bpr"].value)
        out.hcl += sum(float(terms[k].value) for k in ("hcl_users", "hcl_items") if k in terms)
        out.mcl += sum(float(terms[k].value) for k in ("mcl_users", "mcl_items") if k in terms)
        out.total += total
        out.batches += 1
    state.epoch += 1
    return out


def validation_recall(state: ModelState, ctx: GraphContext, ds: InteractionDataset) -> float:
    cutoff = state.config.val_cutoff
    final = forward(state, ctx, rng=None).final.value
    metrics, _ = evaluate_rankings(final, ds.user_count, ds.items_by_user("val"), ds.neighbors(), (cutoff,))
    return metrics[f"R@{cutoff}"]


def fit(state: ModelState, ctx: GraphContext, ds: InteractionDataset) -> TrainReport:
    """Train until validation Recall@cutoff stalls for ``patience`` epochs.

    The best-scoring parameters are restored before returning. Without a
    validation split the full ``epochs`` budget runs.
    """
    cfg = state.config
    report = TrainReport()
    has_val = any(True for _ in ds.val)
    if not has_val:
        log.warning("validation split is empty; running a fixed budget of %d epochs", cfg.epochs)
    best = state.snapshot()
    stale = 0
    report.stop_reason = "epoch budget exhausted"
    for _ in range(cfg.epochs):
        losses = train_epoch(state, ctx, ds)
        report.losses.append(asdict(losses))
        report.epochs_run = state.epoch
        if not has_val:
            report.best_epoch = state.epoch
            best = state.snapshot()
            continue
        metric = validation_recall(state, ctx, ds)
        report.val_trace.append(metric)
        log.info("epoch=%d loss=%.6f val_recall=%.6f", state.epoch, losses.total, metric)
        if metric > report.best_metric:
            report.best_metric = metric
            report.best_epoch = state.epoch
            best = state.snapshot()
            stale = 0
        else:
            stale += 1
        report.best_trace.append(report.best_metric)
        if stale and stale >= cfg.patience:
            report.stop_reason = f"no improvement for {stale} epochs"
            break
    state.restore(best)
    state.epoch = report.best_epoch
    return report
