"""HTTP API for the review workflow: queue, record detail, ratings, accounting.

All mutations funnel through the store's rating semantics; the server holds no
state of its own. When a built review UI exists it is served statically at /;
the API lives under /api either way. Auth is a single optional shared token.
"""
from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Optional

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .attack_kb import AttackKnowledgeBase, TechniqueIdError
from .pipeline import CurationStore, NotFoundError, RatingStateError


class RatingIn(BaseModel):
    accuracy: Literal["Good", "Normal", "Bad"]
    relevance: Literal["Good", "Normal", "Bad"]
    practicality: Literal["Good", "Normal", "Bad"]
    rater_id: str = Field(min_length=1)


def create_app(
    store: CurationStore,
    kb: AttackKnowledgeBase,
    ui_dist: Optional[str | Path] = None,
    api_token: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="cvemap review service")

    def require_token(request: Request) -> None:
        if api_token and request.headers.get("Authorization") != f"Bearer {api_token}":
            raise HTTPException(status_code=401, detail="invalid or missing token")

    auth = [Depends(require_token)]

    @app.get("/api/queue", dependencies=auth)
    def queue(status: str = "accurate_unrated") -> dict:
        try:
            items = store.list_records(status)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {"status": status, "count": len(items), "items": [r.to_dict() for r in items]}

    @app.get("/api/records/{cve_id}", dependencies=auth)
    def record_detail(cve_id: str) -> dict:
        try:
            return store.get(cve_id).to_dict()
        except NotFoundError:
            raise HTTPException(status_code=404, detail=f"no record for {cve_id}")

    @app.post("/api/records/{cve_id}/rating", dependencies=auth)
    def submit_rating(cve_id: str, rating: RatingIn) -> dict:
        try:
            updated = store.submit_rating(
                cve_id,
                accuracy=rating.accuracy,
                relevance=rating.relevance,
                practicality=rating.practicality,
                rater_id=rating.rater_id,
            )
        except NotFoundError:
            raise HTTPException(status_code=404, detail=f"no record for {cve_id}")
        except RatingStateError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return updated.to_dict()

    @app.get("/api/accounting", dependencies=auth)
    def accounting() -> dict:
        return store.accounting().to_dict()

    @app.get("/api/export/curated", dependencies=auth)
    def export_curated() -> dict:
        from .cvem import mapping_to_dict

        pairs = store.export_curated()
        return {
            "count": len(pairs),
            "items": [{"cve": cve.to_dict(), "mapping": mapping_to_dict(m)} for cve, m in pairs],
        }

    @app.get("/api/metrics/latest", dependencies=auth)
    def latest_metrics() -> dict:
        report = store.latest_metrics()
        if report is None:
            raise HTTPException(status_code=404, detail="no metrics recorded yet")
        return report

    @app.get("/api/kb/techniques/{technique_id}", dependencies=auth)
    def technique_detail(technique_id: str) -> dict:
        try:
            technique = kb.lookup_by_id(technique_id)
        except TechniqueIdError:
            raise HTTPException(status_code=400, detail=f"malformed technique id {technique_id!r}")
        if technique is None:
            raise HTTPException(status_code=404, detail=f"unknown technique {technique_id}")
        return technique.to_dict()

    if ui_dist and Path(ui_dist).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dist), html=True), name="ui")

    return app


def serve(
    store: CurationStore,
    kb: AttackKnowledgeBase,
    host: str = "127.0.0.1",
    port: int = 8080,
    ui_dist: Optional[str | Path] = None,
    api_token: Optional[str] = None,
) -> None:
    import uvicorn

    token = api_token if api_token is not None else os.environ.get("CVEMAP_API_TOKEN")
    app = create_app(store, kb, ui_dist=ui_dist, api_token=token)
    uvicorn.run(app, host=host, port=port, log_level="info")
