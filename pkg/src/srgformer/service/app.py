"""HTTP service answering recommendation queries from a trained checkpoint."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from fastapi import FastAPI, HTTPException, Query

from .. import checkpoint
from ..dataio import PreparedData, load_prepared
from ..evaluation import evaluate_rankings, rank_items
from ..model import GraphContext, ModelState, forward
from .schemas import (
    EvaluateResponse,
    Health,
    RecommendRequest,
    RecommendResponse,
    ScoreRequest,
    ScoreResponse,
)


@dataclass
class ModelService:
    """Read-only snapshot of a model and its dataset."""

    data: PreparedData
    state: ModelState
    final: np.ndarray

    @classmethod
    def from_paths(cls, data_dir, checkpoint_path) -> "ModelService":
        data = load_prepared(data_dir)
        ctx = GraphContext.build(data.dataset, data.features)
        state = checkpoint.load(checkpoint_path, ctx)
        return cls.from_state(data, state, ctx)

    @classmethod
    def from_state(cls, data: PreparedData, state: ModelState, ctx: GraphContext) -> "ModelService":
        final = forward(state, ctx, rng=None).final.value.copy()
        final.setflags(write=False)
        return cls(data, state, final)

    def _user(self, raw: str) -> int:
        idx = self.data.dataset.user_map.index().get(raw)
        if idx is None:
            raise KeyError(f"unknown user {raw!r}")
        return idx

    def recommend(self, raw_user: str, n: int) -> tuple[list[str], list[float], str | None]:
        ds = self.data.dataset
        u = self._user(raw_user)
        users, items = self.final[: ds.user_count], self.final[ds.user_count :]
        scores = items @ users[u]
        ranked = rank_items(scores, ds.neighbors()[u], n)
        warning = None
        if len(ranked) < n:
            warning = f"only {len(ranked)} unseen items available"
        return [ds.item_map.raw[i] for i in ranked], [float(scores[i]) for i in ranked], warning

    def score(self, raw_user: str, raw_items: list[str]) -> list[float]:
        ds = self.data.dataset
        u = self._user(raw_user)
        iidx = ds.item_map.index()
        try:
            cols = [iidx[r] for r in raw_items]
        except KeyError as exc:
            raise KeyError(f"unknown item {exc.args[0]!r}") from None
        rows = self.final[ds.user_count + np.asarray(cols, dtype=np.int64)] if cols else np.zeros((0, self.final.shape[1]))
        return [float(x) for x in rows @ self.final[u]]

    def evaluate(self, part: str) -> tuple[dict, int]:
        ds = self.data.dataset
        return evaluate_rankings(self.final, ds.user_count, ds.items_by_user(part), ds.neighbors())


def create_app(service: ModelService) -> FastAPI:
    app = FastAPI(title="srgformer", version="0.1.0")

    @app.get("/health", response_model=Health)
    def health():
        ds, cfg = service.data.dataset, service.state.config
        return Health(
            status="ok",
            users=ds.user_count,
            items=ds.item_count,
            epoch=service.state.epoch,
            config_digest=cfg.digest(),
            ablation=cfg.ablation_tag,
        )

    @app.post("/recommend", response_model=RecommendResponse)
    def recommend(req: RecommendRequest):
        try:
            items, scores, warning = service.recommend(req.user, req.n)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc.args[0]))
        return RecommendResponse(user=req.user, items=items, scores=scores, warning=warning)

    @app.post("/score", response_model=ScoreResponse)
    def score(req: ScoreRequest):
        try:
            scores = service.score(req.user, req.items)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc.args[0]))
        return ScoreResponse(user=req.user, scores=scores)

    @app.get("/evaluate", response_model=EvaluateResponse)
    def evaluate(part: str = Query("test", pattern="^(val|test)$")):
        try:
            metrics, users = service.evaluate(part)
        except Exception as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return EvaluateResponse(part=part, users=users, metrics=metrics)

    return app
