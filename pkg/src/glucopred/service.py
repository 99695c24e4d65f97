"""HTTP inference service for interactive what-if prediction.

Serves a trained checkpoint read-only: POST /predict runs the stored
pipeline, GET /templates returns packaged example inputs, GET /health
reports readiness and the checkpoint hash, GET /schema publishes the source
schemas, request/response JSON schemas, and slider bounds."""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .io import schema_to_dict
from .serving import (
    RequestFormatError,
    ServingState,
    predict_from_request,
    slider_bounds,
)


class PredictResponse(BaseModel):
    probabilities: list[float]
    predicted_class: str
    class_names: list[str]
    fusion_weights: dict[str, float]
    model_hash: str


class RecordModel(BaseModel):
    offset_minutes: float
    values: dict[str, float | str | None] = {}
    stop_offset_minutes: float | None = None


class PredictRequest(BaseModel):
    sources: dict[str, list[RecordModel]]


def load_templates(path: Path | None) -> list[dict]:
    if path is None or not Path(path).exists():
        return []
    payload = json.loads(Path(path).read_text())
    return payload["templates"]


def create_app(
    checkpoint_path: Path | None = None, templates_path: Path | None = None
) -> FastAPI:
    app = FastAPI(title="glucose-class inference service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.serving = None
    app.state.templates = load_templates(templates_path)
    if checkpoint_path is not None:
        app.state.serving = ServingState.from_checkpoint(Path(checkpoint_path))

    @app.get("/health")
    def health():
        if app.state.serving is None:
            return JSONResponse(status_code=503, content={"status": "no checkpoint loaded"})
        return {"status": "ready", "model_hash": app.state.serving.model_hash}

    @app.post("/predict")
    async def predict(request: Request):
        if app.state.serving is None:
            return JSONResponse(status_code=503, content={"detail": "no checkpoint loaded"})
        try:
            payload = await request.json()
        except Exception:
            return JSONResponse(
                status_code=400,
                content={"detail": [{"field": "", "message": "body is not valid JSON"}]},
            )
        try:
            return predict_from_request(app.state.serving, payload)
        except RequestFormatError as exc:
            return JSONResponse(
                status_code=400,
                content={"detail": [{"field": exc.field, "message": str(exc)}]},
            )

    @app.get("/templates")
    def templates():
        return {"templates": app.state.templates}

    @app.get("/schema")
    def schema():
        if app.state.serving is None:
            return JSONResponse(status_code=503, content={"detail": "no checkpoint loaded"})
        state = app.state.serving
        return {
            "class_names": list(map(str, ("hypo", "euglycemia", "hyper"))),
            "sources": [schema_to_dict(s) for s in state.schemas],
            "bounds": slider_bounds(state),
            "frequency_map": state.frequency_map,
            "request_schema": PredictRequest.model_json_schema(),
            "response_schema": PredictResponse.model_json_schema(),
            "model_hash": state.model_hash,
        }

    return app


def run_service(
    checkpoint_path: Path,
    templates_path: Path | None = None,
    host: str = "127.0.0.1",
    port: int = 8000,
) -> None:
    import uvicorn

    app = create_app(checkpoint_path, templates_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")
