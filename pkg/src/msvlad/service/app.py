"""FastAPI application exposing the pipeline over HTTP."""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import MsvladError, ValidationError
from . import handlers, schemas

logger = logging.getLogger(__name__)

API_VERSION = "0.1.0"


def create_app() -> FastAPI:
    app = FastAPI(title="msvlad", version=API_VERSION)

    @app.exception_handler(ValidationError)
    async def _bad_input(request: Request, exc: ValidationError):
        return JSONResponse(
            status_code=400,
            content=schemas.ErrorResponse(
                error=type(exc).__name__, detail=str(exc)
            ).model_dump(),
        )

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError):
        return JSONResponse(
            status_code=400,
            content=schemas.ErrorResponse(error="FileNotFoundError", detail=str(exc)).model_dump(),
        )

    @app.exception_handler(MsvladError)
    async def _runtime(request: Request, exc: MsvladError):
        logger.exception("request failed")
        return JSONResponse(
            status_code=500,
            content=schemas.ErrorResponse(
                error=type(exc).__name__, detail=str(exc)
            ).model_dump(),
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", version=API_VERSION)

    @app.post("/kmeans-init", response_model=schemas.KmeansInitResponse)
    def kmeans_init(req: schemas.KmeansInitRequest) -> schemas.KmeansInitResponse:
        return handlers.handle_kmeans_init(req)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest) -> schemas.TrainResponse:
        return handlers.handle_train(req)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
        return handlers.handle_evaluate(req)

    @app.post("/query", response_model=schemas.QueryResponse)
    def query(req: schemas.QueryRequest) -> schemas.QueryResponse:
        return handlers.handle_query(req)

    @app.post("/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(req: schemas.GradcheckRequest) -> schemas.GradcheckResponse:
        return handlers.handle_gradcheck(req)

    return app
