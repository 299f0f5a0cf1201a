"""Annotation collection workflow: projects, calibration-first task
assignment, submission validation, progress, and export.

Assignment policy: every evaluator first works through the project's
calibration items (a fixed prefix of the corpus in segment-id order, so
all evaluators calibrate on the same set). Afterwards they receive the
least-covered segment they have not yet annotated, ties broken by
ascending segment id. An evaluator never sees the same segment twice and
holds at most one open task at a time.
"""
from __future__ import annotations

import hashlib
from typing import Optional

from ..corpus import (
    CATEGORIES_BY_DIMENSION,
    DIMENSIONS,
    ADEQUACY,
    Annotation,
    AnnotationSet,
    ErrorSpan,
    LanguagePair,
    TranslationTriple,
    TripleSet,
    utcnow,
)
from ..errors import DataError, ValidationError
from .storage import Storage


class NotFoundError(DataError):
    pass


class ConflictError(DataError):
    pass


BUCKET_LABELS = {
    "adequacy": {
        0: "Nonsense/No meaning preserved",
        34: "Some meaning preserved",
        67: "Most meaning preserved",
        100: "Perfect meaning",
    },
    "fluency": {
        0: "Incomprehensible",
        34: "Barely fluent, frequent errors",
        67: "Mostly fluent, occasional errors",
        100: "Fluent and natural",
    },
}

GUIDELINE_TEXT = {
    "adequacy": (
        "Read the source and its machine translation. First highlight every "
        "error span, choosing one of: Addition, Omission, Mistranslation, "
        "Untranslated. Omission errors may be highlighted on the source side. "
        "Then rate how much of the source meaning the translation preserves "
        "on a 0-100 scale, using the anchor levels at 0, 34, 67, and 100."
    ),
    "fluency": (
        "Read only the translated text. First highlight every error span, "
        "choosing one of: Grammar, Spelling, Typography, Unintelligible. "
        "Then rate how fluent and natural the text reads on a 0-100 scale, "
        "using the anchor levels at 0, 34, 67, and 100."
    ),
}


def _quote(part: str) -> str:
    return part.replace("%", "%25").replace(":", "%3A")


def _k(*parts: str) -> str:
    return ":".join(_quote(p) for p in parts)


def _task_id(project_id: str, evaluator_id: str, segment_id: str) -> str:
    digest = hashlib.blake2b(
        f"{project_id}\x00{evaluator_id}\x00{segment_id}".encode("utf-8"),
        digest_size=8,
    )
    return digest.hexdigest()


class AnnotationService:
    def __init__(self, storage: Storage):
        self.storage = storage

    # -- projects ----------------------------------------------------------

    def create_project(
        self,
        project_id: str,
        dimension: str,
        triples: TripleSet,
        lp: Optional[LanguagePair] = None,
        min_annotators_per_item: int = 2,
        calibration_size: int = 20,
    ) -> dict:
        if not project_id:
            raise ValidationError("project_id must be non-empty")
        if dimension not in DIMENSIONS:
            raise ValidationError(f"unknown dimension {dimension!r}")
        if len(triples) == 0:
            raise ValidationError("project corpus is empty")
        if min_annotators_per_item < 1:
            raise ValidationError("min_annotators_per_item must be positive")
        if calibration_size < 0:
            raise ValidationError("calibration_size must be >= 0")
        if calibration_size > len(triples):
            raise ValidationError(
                f"calibration_size {calibration_size} exceeds corpus size {len(triples)}"
            )
        if self.storage.get(_k("project", project_id)) is not None:
            raise ConflictError(f"project {project_id!r} already exists")

        segment_ids = sorted(triples.segment_ids())
        record = {
            "project_id": project_id,
            "dimension": dimension,
            "lp": lp.to_json() if lp else None,
            "min_annotators_per_item": min_annotators_per_item,
            "calibration_size": calibration_size,
            "segment_ids": segment_ids,
            "calibration_ids": segment_ids[:calibration_size],
        }
        with self.storage.transaction():
            self.storage.put(_k("project", project_id), record)
            for triple in triples:
                self.storage.put(
                    _k("triple", project_id, triple.segment_id), triple.to_json()
                )
        return record

    def _project(self, project_id: str) -> dict:
        record = self.storage.get(_k("project", project_id))
        if record is None:
            raise NotFoundError(f"unknown project {project_id!r}")
        return record

    def _triple(self, project_id: str, segment_id: str) -> TranslationTriple:
        record = self.storage.get(_k("triple", project_id, segment_id))
        if record is None:
            raise NotFoundError(f"unknown segment {segment_id!r} in project {project_id!r}")
        return TranslationTriple.from_json(record)

    # -- evaluators ----------------------------------------------------------

    def register_evaluator(self, project_id: str, evaluator_id: str) -> dict:
        project = self._project(project_id)
        if not evaluator_id:
            raise ValidationError("evaluator_id must be non-empty")
        key = _k("eval", project_id, evaluator_id)
        existing = self.storage.get(key)
        if existing is not None:
            return existing
        record = {
            "evaluator_id": evaluator_id,
            "items_done": 0,
            "calibration_done": 0,
            "calibration_complete": project["calibration_size"] == 0,
        }
        with self.storage.transaction():
            self.storage.put(key, record)
        return record

    def _evaluator(self, project_id: str, evaluator_id: str) -> dict:
        record = self.storage.get(_k("eval", project_id, evaluator_id))
        if record is None:
            raise NotFoundError(
                f"evaluator {evaluator_id!r} is not registered in project {project_id!r}"
            )
        return record

    # -- task assignment -----------------------------------------------------

    def _evaluator_tasks(self, project_id: str, evaluator_id: str) -> list[dict]:
        prefix = _k("task", project_id, evaluator_id) + ":"
        return [task for _, task in self.storage.scan(prefix)]

    def _submitter_counts(self, project_id: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for _, record in self.storage.scan(_k("ann", project_id) + ":"):
            sid = record["segment_id"]
            counts[sid] = counts.get(sid, 0) + 1
        return counts

    def next_task(self, project_id: str, evaluator_id: str) -> Optional[dict]:
        project = self._project(project_id)
        profile = self._evaluator(project_id, evaluator_id)

        with self.storage.transaction():
            tasks = self._evaluator_tasks(project_id, evaluator_id)
            for task in tasks:
                if task["state"] in ("pending", "reopened"):
                    return task
            assigned = {task["segment_id"] for task in tasks}

            segment_id = None
            is_calibration = False
            if not profile["calibration_complete"]:
                remaining = [
                    sid for sid in project["calibration_ids"] if sid not in assigned
                ]
                if remaining:
                    segment_id = remaining[0]
                    is_calibration = True
            if segment_id is None:
                counts = self._submitter_counts(project_id)
                candidates = [
                    sid for sid in project["segment_ids"] if sid not in assigned
                ]
                if not candidates:
                    return None
                segment_id = min(candidates, key=lambda sid: (counts.get(sid, 0), sid))

            task = {
                "task_id": _task_id(project_id, evaluator_id, segment_id),
                "project_id": project_id,
                "segment_id": segment_id,
                "evaluator_id": evaluator_id,
                "state": "pending",
                "is_calibration": is_calibration,
            }
            self.storage.put(_k("task", project_id, evaluator_id, segment_id), task)
            self.storage.put(
                _k("taskref", task["task_id"]),
                {"key": _k("task", project_id, evaluator_id, segment_id)},
            )
        return task

    def get_task(self, task_id: str) -> dict:
        ref = self.storage.get(_k("taskref", task_id))
        if ref is None:
            raise NotFoundError(f"unknown task {task_id!r}")
        task = self.storage.get(ref["key"])
        if task is None:
            raise NotFoundError(f"unknown task {task_id!r}")
        return task

    def task_view(self, task_id: str) -> dict:
        """Task payload for clients: texts, palette, and bucket labels.
        Fluency tasks never include the source text."""
        task = self.get_task(task_id)
        project = self._project(task["project_id"])
        triple = self._triple(task["project_id"], task["segment_id"])
        dimension = project["dimension"]
        view = {
            "task_id": task["task_id"],
            "segment_id": task["segment_id"],
            "state": task["state"],
            "is_calibration": task["is_calibration"],
            "dimension": dimension,
            "mt": triple.mt,
            "categories": list(CATEGORIES_BY_DIMENSION[dimension]),
            "buckets": {str(k): v for k, v in BUCKET_LABELS[dimension].items()},
        }
        if dimension == ADEQUACY:
            view["src"] = triple.src
        return view

    # -- submission ------------------------------------------------------------

    def submit(
        self,
        task_id: str,
        spans: list[dict],
        da_score,
        submitted_at=None,
    ) -> Annotation:
        task = self.get_task(task_id)
        if task["state"] == "submitted":
            raise ValidationError(f"task {task_id!r} was already submitted")
        project = self._project(task["project_id"])
        triple = self._triple(task["project_id"], task["segment_id"])
        dimension = project["dimension"]

        if isinstance(da_score, bool) or not isinstance(da_score, int):
            raise ValidationError(f"da_score must be an integer, got {da_score!r}")
        parsed_spans = []
        for raw in spans:
            span = ErrorSpan.from_json(raw)
            span.check_against(dimension, triple.src, triple.mt)
            parsed_spans.append(span)
        annotation = Annotation(
            segment_id=task["segment_id"],
            evaluator_id=task["evaluator_id"],
            dimension=dimension,
            spans=tuple(parsed_spans),
            da_score=da_score,
            submitted_at=submitted_at or utcnow(),
        )

        ann_key = _k("ann", task["project_id"], task["segment_id"], task["evaluator_id"])
        task_key = _k("task", task["project_id"], task["evaluator_id"], task["segment_id"])
        eval_key = _k("eval", task["project_id"], task["evaluator_id"])
        with self.storage.transaction():
            current = self.storage.get(task_key)
            if current is None or current["state"] == "submitted":
                raise ValidationError(f"task {task_id!r} was already submitted")
            first_submission = self.storage.get(ann_key) is None
            record = annotation.to_json()
            record["is_calibration"] = task["is_calibration"]
            record["task_id"] = task_id
            self.storage.put(ann_key, record)
            current["state"] = "submitted"
            self.storage.put(task_key, current)
            if first_submission:
                profile = self._evaluator(task["project_id"], task["evaluator_id"])
                profile["items_done"] += 1
                if task["is_calibration"]:
                    profile["calibration_done"] += 1
                    if profile["calibration_done"] >= project["calibration_size"]:
                        profile["calibration_complete"] = True
                self.storage.put(eval_key, profile)
        return annotation

    def reopen(self, task_id: str) -> dict:
        """Flip a submitted task back so the evaluator may revise it."""
        ref = self.storage.get(_k("taskref", task_id))
        if ref is None:
            raise NotFoundError(f"unknown task {task_id!r}")
        with self.storage.transaction():
            task = self.storage.get(ref["key"])
            if task is None:
                raise NotFoundError(f"unknown task {task_id!r}")
            if task["state"] != "submitted":
                raise ValidationError(f"task {task_id!r} is not submitted")
            task["state"] = "reopened"
            self.storage.put(ref["key"], task)
        return task

    # -- export / progress -------------------------------------------------------

    def export(self, project_id: str, include_calibration: bool = False) -> AnnotationSet:
        self._project(project_id)
        out = AnnotationSet()
        for _, record in self.storage.scan(_k("ann", project_id) + ":"):
            if record.get("is_calibration") and not include_calibration:
                continue
            payload = {
                k: v for k, v in record.items() if k not in ("is_calibration", "task_id")
            }
            out.add(Annotation.from_json(payload))
        return out

    def progress(self, project_id: str) -> dict:
        project = self._project(project_id)
        counts = self._submitter_counts(project_id)
        need = project["min_annotators_per_item"]
        evaluators = {
            record["evaluator_id"]: {
                "items_done": record["items_done"],
                "calibration_complete": record["calibration_complete"],
            }
            for _, record in self.storage.scan(_k("eval", project_id) + ":")
        }
        pending = 0
        for _, task in self.storage.scan(_k("task", project_id) + ":"):
            if task["state"] in ("pending", "reopened"):
                pending += 1
        return {
            "project_id": project_id,
            "segments_total": len(project["segment_ids"]),
            "segments_complete": sum(
                1 for sid in project["segment_ids"] if counts.get(sid, 0) >= need
            ),
            "submissions": sum(counts.values()),
            "open_tasks": pending,
            "evaluators": evaluators,
        }

    def guidelines(self, project_id: str) -> dict:
        project = self._project(project_id)
        dimension = project["dimension"]
        return {
            "dimension": dimension,
            "text": GUIDELINE_TEXT[dimension],
            "categories": list(CATEGORIES_BY_DIMENSION[dimension]),
            "buckets": {str(k): v for k, v in BUCKET_LABELS[dimension].items()},
        }
