"""Ablation runs over component flags and masked dataset variants, and report files."""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .config import TrainConfig
from .dataio import PreparedData, dataset_variant
from .evaluation import EvalReport, evaluate_topn
from .model import GraphContext, ModelState
from .trainer import fit

log = logging.getLogger(__name__)

TSV_COLUMNS = ("variant", "dataset", "R@10", "R@20", "N@10", "N@20", "epoch", "seed")


def run_variant(data: PreparedData, cfg: TrainConfig, dataset: str = "FID") -> tuple[EvalReport, ModelState]:
    ds = dataset_variant(data.dataset, dataset, cfg.mask_recent_k, cfg.mask_keep_last)
    ctx = GraphContext.build(ds, data.features)
    state = ModelState.init(cfg, ctx)
    train_report = fit(state, ctx, ds)
    report = evaluate_topn(state, ctx, ds, "test")
    report.extra.update(
        parameters=state.parameter_count,
        stop_reason=train_report.stop_reason,
        epochs_run=train_report.epochs_run,
    )
    return report, state


def run_ablation(data: PreparedData, base: TrainConfig, variants=(), datasets=("FID",)) -> tuple[list[EvalReport], list[dict]]:
    """Train and test the base config plus each variant on each dataset variant.

    A failing variant is logged and recorded in the returned failure list;
    the remaining variants still run.
    """
    names = ["full"] + [v for v in variants if v != "full"]
    reports, failures = [], []
    for dataset in datasets:
        for name in names:
            try:
                cfg = base.with_ablation(name)
                report, _ = run_variant(data, cfg, dataset)
                report.ablation = name
                report.extra["config"] = cfg.to_dict()
                reports.append(report)
                log.info("variant=%s dataset=%s R@20=%.6f", name, dataset, report.metrics["R@20"])
            except Exception as exc:  # isolate one variant's failure
                log.error("variant=%s dataset=%s failed: %s", name, dataset, exc)
                failures.append({"variant": name, "dataset": dataset, "error": f"{type(exc).__name__}: {exc}"})
    return reports, failures


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def format_tsv(reports: list[EvalReport]) -> str:
    lines = ["\t".join(TSV_COLUMNS)]
    for r in reports:
        m = r.metrics
        lines.append(
            "\t".join(
                [r.ablation, r.dataset, _fmt(m["R@10"]), _fmt(m["R@20"]), _fmt(m["N@10"]), _fmt(m["N@20"]), str(r.epoch), str(r.seed)]
            )
        )
    return "\n".join(lines) + "\n"


def write_reports(path, reports: list[EvalReport], configs: dict[str, dict] | None = None, failures=()) -> tuple[Path, Path]:
    """Write the TSV table and its JSON sidecar (``<path>.json``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_tsv(reports), encoding="utf-8")
    sidecar = path.with_name(path.name + ".json")
    payload = {
        "rows": [r.to_dict() for r in reports],
        "configs": dict(sorted((configs or {}).items())),
        "failures": list(failures),
    }
    sidecar.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path, sidecar
