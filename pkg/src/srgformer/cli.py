"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from pathlib import Path

from . import checkpoint
from .ablation import format_tsv, run_ablation, write_reports
from .config import ABLATIONS, load_config
from .dataio import (
    dataset_variant,
    load_interactions,
    load_modal_features,
    load_prepared,
    save_prepared,
    split_dataset,
)
from .errors import DataError, NumericError
from .evaluation import evaluate_topn, recommend
from .model import GraphContext, ModelState
from .trainer import fit

log = logging.getLogger("srgformer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATASET_VARIANTS = ("FID", "RBM-D", "LHM-D")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _kv_pairs(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _add_config_args(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=["baby", "sports", "clothing"], help="per-dataset defaults")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", default=[], help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="logging level (default INFO)")
    parser = _Parser(prog="srgformer", description="Multimodal graph recommender.", parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("prepare", help="split interactions and write a prepared data directory")
    p.add_argument("--interactions", help="interactions.tsv (user<TAB>item<TAB>timestamp)")
    p.add_argument("--feature", action="append", default=[], metavar="MODALITY=PATH")
    p.add_argument("--synthetic", action="store_true", help="generate a small planted-block dataset first")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ratios", default="8,1,1")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    _add_config_args(p)
    p.add_argument("--dataset", choices=DATASET_VARIANTS, default="FID")
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("evaluate", help="test-set Recall/NDCG for a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", choices=DATASET_VARIANTS, default="FID")
    p.add_argument("--out", help="TSV report path (JSON sidecar alongside)")

    p = sub.add_parser("ablate", help="train/evaluate the base config and ablation variants")
    p.add_argument("--data", required=True)
    _add_config_args(p)
    p.add_argument("--variants", default="", help=f"comma list from {','.join(ABLATIONS)}")
    p.add_argument("--datasets", default="FID", help="comma list from FID,RBM-D,LHM-D")
    p.add_argument("--out", help="TSV report path (JSON sidecar alongside)")

    p = sub.add_parser("recommend", help="top-n unseen items for a user")
    p.add_argument("--data")
    p.add_argument("--checkpoint")
    p.add_argument("--server", help="query a running service instead of loading locally")
    p.add_argument("--user", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--scores", action="store_true", help="print scores next to item ids")

    p = sub.add_parser("serve", help="run the HTTP recommendation service")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    return parser


def _config(args):
    overrides = _kv_pairs(args.set)
    if args.preset:
        overrides.setdefault("preset", args.preset)
    try:
        return load_config(args.config, overrides)
    except KeyError as exc:
        raise UsageError(f"unknown config key {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# -- commands --------------------------------------------------------------------


def cmd_prepare(args) -> int:
    out = Path(args.out)
    try:
        ratios = tuple(float(x) for x in args.ratios.split(","))
    except ValueError:
        raise UsageError("--ratios expects three comma-separated numbers") from None
    if len(ratios) != 3:
        raise UsageError("--ratios expects three comma-separated numbers")
    features = _kv_pairs(args.feature)
    inter = args.interactions
    if args.synthetic:
        from .synthetic import write_demo

        raw = write_demo(out / "raw", seed=args.seed)
        inter = raw / "interactions.tsv"
        features = {m: str(raw / f"features.{m}.fmat") for m in ("visual", "textual")}
    if inter is None:
        raise UsageError("prepare needs --interactions or --synthetic")
    records, users, items = load_interactions(inter)
    ds = split_dataset(records, ratios, args.seed, users, items)
    out.mkdir(parents=True, exist_ok=True)
    copied = {}
    for modality, src in sorted(features.items()):
        load_modal_features(src, ds.item_count, modality)
        name = f"features.{modality}.fmat"
        if Path(src).resolve() != (out / name).resolve():
            shutil.copyfile(src, out / name)
        copied[modality] = name
    path = save_prepared(out, ds, args.seed, ratios, copied)
    log.info("prepared users=%d items=%d train=%d val=%d test=%d manifest=%s",
             ds.user_count, ds.item_count, len(ds.train), len(ds.val), len(ds.test), path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    data = load_prepared(args.data)
    ds = dataset_variant(data.dataset, args.dataset, cfg.mask_recent_k, cfg.mask_keep_last)
    ctx = GraphContext.build(ds, data.features)
    state = ModelState.init(cfg, ctx)
    report = fit(state, ctx, ds)
    checkpoint.save(state, args.out)
    side = Path(str(args.out) + ".train.json")
    side.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("trained best_epoch=%d val_recall=%.6f stop=%r checkpoint=%s",
             report.best_epoch, report.best_metric, report.stop_reason, args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = checkpoint.read_config(args.checkpoint)
    data = load_prepared(args.data)
    ds = dataset_variant(data.dataset, args.dataset, cfg.mask_recent_k, cfg.mask_keep_last)
    ctx = GraphContext.build(ds, data.features)
    state = checkpoint.load(args.checkpoint, ctx)
    report = evaluate_topn(state, ctx, ds, "test")
    if args.out:
        write_reports(args.out, [report], {report.config_digest: state.config.to_dict()})
    sys.stdout.write(format_tsv([report]))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    variants = _split_list(args.variants)
    for v in variants:
        if v not in ABLATIONS and v != "full":
            raise UsageError(f"unknown variant {v!r}; choose from {','.join(ABLATIONS)}")
    datasets = _split_list(args.datasets) or ["FID"]
    for d in datasets:
        if d not in DATASET_VARIANTS:
            raise UsageError(f"unknown dataset variant {d!r}")
    data = load_prepared(args.data)
    reports, failures = run_ablation(data, cfg, variants, datasets)
    if args.out:
        write_reports(args.out, reports, {r.config_digest: r.extra.get("config", {}) for r in reports}, failures)
    sys.stdout.write(format_tsv(reports))
    return EXIT_OK if not failures else EXIT_NUMERIC


def cmd_recommend(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    if args.server:
        import httpx

        try:
            resp = httpx.post(f"{args.server.rstrip('/')}/recommend", json={"user": args.user, "n": args.n}, timeout=30)
        except httpx.HTTPError as exc:
            raise DataError(f"service unreachable: {exc}") from None
        if resp.status_code == 404:
            raise DataError(resp.json().get("detail", "unknown user"))
        resp.raise_for_status()
        body = resp.json()
        items, scores, warning = body["items"], body["scores"], body.get("warning")
    else:
        if not args.data or not args.checkpoint:
            raise UsageError("recommend needs --data and --checkpoint, or --server")
        data = load_prepared(args.data)
        ds = data.dataset
        ctx = GraphContext.build(ds, data.features)
        state = checkpoint.load(args.checkpoint, ctx)
        u = ds.user_map.index().get(args.user)
        if u is None:
            raise DataError(f"unknown user {args.user!r}")
        ranked, sc = recommend(state, ctx, ds, u, args.n)
        items = [ds.item_map.raw[i] for i in ranked]
        scores = [float(s) for s in sc]
        warning = f"only {len(items)} unseen items available" if len(items) < args.n else None
    if warning:
        log.warning(warning)
    for item, score in zip(items, scores):
        sys.stdout.write(f"{item}\t{score:.6f}\n" if args.scores else f"{item}\n")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ModelService, create_app

    app = create_app(ModelService.from_paths(args.data, args.checkpoint))
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "recommend": cmd_recommend,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(
            level=getattr(logging, str(getattr(args, "log_level", "INFO")).upper(), logging.INFO),
            format="level=%(levelname)s logger=%(name)s msg=%(message)s",
            stream=sys.stderr,
            force=True,
        )
        return COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except NumericError as exc:
        sys.stderr.write(f"numeric failure: {exc} {json.dumps(exc.snapshot, sort_keys=True)}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
