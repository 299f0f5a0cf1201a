"""HTTP+JSON surface over the annotation workflow.

Bodies mirror the corpus JSONL schemas: spans are
{start, end, target, category}; triples are the triple-file records.
Configuration comes from a YAML file with environment overrides
MTEVALKIT_PORT and MTEVALKIT_STORAGE.
"""
from __future__ import annotations

import os
from typing import Any, Optional

import yaml
from fastapi import FastAPI, HTTPException, Query
from pydantic import BaseModel

from ..corpus import LanguagePair, TranslationTriple, TripleSet, load_triples
from ..errors import DataError, ValidationError
from .core import AnnotationService, ConflictError, NotFoundError
from .storage import MemoryStorage, SqliteStorage, Storage


class ProjectRequest(BaseModel):
    project_id: str
    dimension: str
    lp: Optional[dict] = None
    min_annotators_per_item: int = 2
    calibration_size: int = 20
    triples: Optional[list[dict]] = None
    triples_path: Optional[str] = None


class EvaluatorRequest(BaseModel):
    evaluator_id: str


class SubmitRequest(BaseModel):
    spans: list[dict] = []
    da_score: Any = None


def _http_error(exc: Exception) -> HTTPException:
    if isinstance(exc, ConflictError):
        return HTTPException(status_code=409, detail=str(exc))
    if isinstance(exc, NotFoundError):
        return HTTPException(status_code=404, detail=str(exc))
    if isinstance(exc, ValidationError):
        return HTTPException(status_code=422, detail=str(exc))
    if isinstance(exc, DataError):
        return HTTPException(status_code=400, detail=str(exc))
    raise exc


def create_app(storage: Optional[Storage] = None) -> FastAPI:
    service = AnnotationService(storage or MemoryStorage())
    app = FastAPI(title="annotation service")
    app.state.service = service

    @app.post("/projects", status_code=201)
    def create_project(body: ProjectRequest):
        try:
            if body.triples is not None:
                triples = TripleSet(TranslationTriple.from_json(r) for r in body.triples)
            elif body.triples_path:
                triples = load_triples(body.triples_path)
            else:
                raise ValidationError("provide either 'triples' or 'triples_path'")
            lp = LanguagePair.from_json(body.lp) if body.lp else None
            record = service.create_project(
                project_id=body.project_id,
                dimension=body.dimension,
                triples=triples,
                lp=lp,
                min_annotators_per_item=body.min_annotators_per_item,
                calibration_size=body.calibration_size,
            )
        except (ValidationError, DataError) as exc:
            raise _http_error(exc)
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=f"missing field: {exc}")
        return {"project_id": record["project_id"], "segments": len(record["segment_ids"])}

    @app.post("/projects/{project_id}/evaluators", status_code=201)
    def register_evaluator(project_id: str, body: EvaluatorRequest):
        try:
            return service.register_evaluator(project_id, body.evaluator_id)
        except (ValidationError, DataError) as exc:
            raise _http_error(exc)

    @app.get("/projects/{project_id}/next-task")
    def next_task(project_id: str, evaluator: str = Query(...)):
        try:
            task = service.next_task(project_id, evaluator)
            if task is None:
                return {"task": None}
            return {"task": service.task_view(task["task_id"])}
        except (ValidationError, DataError) as exc:
            raise _http_error(exc)

    @app.post("/tasks/{task_id}/submit")
    def submit(task_id: str, body: SubmitRequest):
        try:
            annotation = service.submit(task_id, body.spans, body.da_score)
        except (ValidationError, DataError) as exc:
            raise _http_error(exc)
        return annotation.to_json()

    @app.get("/projects/{project_id}/export")
    def export(project_id: str, include_calibration: bool = False):
        try:
            annotations = service.export(project_id, include_calibration=include_calibration)
        except (ValidationError, DataError) as exc:
            raise _http_error(exc)
        return {"annotations": [a.to_json() for a in annotations]}

    @app.get("/projects/{project_id}/progress")
    def progress(project_id: str):
        try:
            return service.progress(project_id)
        except (ValidationError, DataError) as exc:
            raise _http_error(exc)

    @app.get("/projects/{project_id}/guidelines")
    def guidelines(project_id: str):
        try:
            return service.guidelines(project_id)
        except (ValidationError, DataError) as exc:
            raise _http_error(exc)

    return app


def load_service_config(path: Optional[str] = None) -> dict:
    """Service config with environment overrides for port and storage."""
    config: dict = {"port": 8000, "host": "127.0.0.1", "storage_path": None}
    if path:
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValidationError(f"service config {path} must be a mapping")
        config.update({k: v for k, v in loaded.get("serve", loaded).items()})
    if os.environ.get("MTEVALKIT_PORT"):
        config["port"] = int(os.environ["MTEVALKIT_PORT"])
    if os.environ.get("MTEVALKIT_STORAGE"):
        config["storage_path"] = os.environ["MTEVALKIT_STORAGE"]
    return config


def storage_from_config(config: dict) -> Storage:
    path = config.get("storage_path")
    return SqliteStorage(path) if path else MemoryStorage()
