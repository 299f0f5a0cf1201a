"""Core data model and JSONL persistence for translation evaluation corpora.

A corpus is a set of <source, machine translation, reference> triples keyed
by segment id. Human judgments attach to segments as annotations: a list of
highlighted error spans plus a 0-100 direct-assessment score for one
dimension (adequacy or fluency).

All character offsets are Unicode code-point indices (Python string
indices), never bytes, so span positions survive serialization across
languages and scripts. Files are line-delimited JSON, UTF-8, one record per
line, each carrying an explicit ``schema_version``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Iterator, Optional

from .errors import DataError, MalformedRecordError, ValidationError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

ADEQUACY = "adequacy"
FLUENCY = "fluency"
DIMENSIONS = (ADEQUACY, FLUENCY)

ADEQUACY_CATEGORIES = ("Addition", "Omission", "Mistranslation", "Untranslated")
FLUENCY_CATEGORIES = ("Grammar", "Spelling", "Typography", "Unintelligible")
CATEGORIES_BY_DIMENSION = {ADEQUACY: ADEQUACY_CATEGORIES, FLUENCY: FLUENCY_CATEGORIES}
ALL_CATEGORIES = ADEQUACY_CATEGORIES + FLUENCY_CATEGORIES

SOURCE_SIDE = "source_side"
TRANSLATION_SIDE = "translation_side"
SPAN_TARGETS = (SOURCE_SIDE, TRANSLATION_SIDE)

SPLITS = ("dev", "devtest", "unsplit")


@dataclass(frozen=True)
class LanguagePair:
    """A source->target language combination, optionally domain-tagged."""

    src_lang: str
    tgt_lang: str
    domain_tag: Optional[str] = None

    def __post_init__(self):
        for code in (self.src_lang, self.tgt_lang):
            if len(code) != 3 or not code.isascii() or not code.isalpha() or not code.islower():
                raise ValidationError(f"language code must be 3 lowercase ASCII letters: {code!r}")
        if self.src_lang == self.tgt_lang and not self.domain_tag:
            raise ValidationError(
                f"src and tgt language are both {self.src_lang!r} with no domain tag"
            )

    def label(self) -> str:
        """Human-readable key, e.g. ``eng-yor (ted)``."""
        base = f"{self.src_lang}-{self.tgt_lang}"
        return f"{base} ({self.domain_tag})" if self.domain_tag else base

    def to_json(self) -> dict:
        d = {"src_lang": self.src_lang, "tgt_lang": self.tgt_lang}
        if self.domain_tag:
            d["domain_tag"] = self.domain_tag
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LanguagePair":
        return cls(d["src_lang"], d["tgt_lang"], d.get("domain_tag"))


@dataclass(frozen=True)
class TranslationTriple:
    """One <src, mt, ref> unit; ref is optional for QE-only corpora."""

    segment_id: str
    lp: LanguagePair
    src: str
    mt: str
    ref: Optional[str] = None
    split: str = "unsplit"

    def __post_init__(self):
        if not self.segment_id:
            raise ValidationError("segment_id must be non-empty")
        if not self.src:
            raise ValidationError(f"segment {self.segment_id}: src must be non-empty")
        if not self.mt:
            raise ValidationError(f"segment {self.segment_id}: mt must be non-empty")
        if self.split not in SPLITS:
            raise ValidationError(f"segment {self.segment_id}: unknown split {self.split!r}")

    def content_key(self):
        return (self.src, self.mt, self.ref)

    def to_json(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "segment_id": self.segment_id,
            "lp": self.lp.to_json(),
            "src": self.src,
            "mt": self.mt,
        }
        if self.ref is not None:
            d["ref"] = self.ref
        if self.split != "unsplit":
            d["split"] = self.split
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TranslationTriple":
        return cls(
            segment_id=d["segment_id"],
            lp=LanguagePair.from_json(d["lp"]),
            src=d["src"],
            mt=d["mt"],
            ref=d.get("ref"),
            split=d.get("split", "unsplit"),
        )


@dataclass(frozen=True)
class ErrorSpan:
    """A highlighted error: [start, end) code-point offsets into one side."""

    start: int
    end: int
    target: str
    category: str

    def __post_init__(self):
        if self.target not in SPAN_TARGETS:
            raise ValidationError(f"unknown span target {self.target!r}")
        if self.category not in ALL_CATEGORIES:
            raise ValidationError(f"unknown error category {self.category!r}")
        if not (isinstance(self.start, int) and isinstance(self.end, int)):
            raise ValidationError("span offsets must be integers")
        if not (0 <= self.start < self.end):
            raise ValidationError(f"span offsets must satisfy 0 <= start < end, got [{self.start}, {self.end})")

    def check_against(self, dimension: str, src_text: str, mt_text: str) -> None:
        """Validate this span against its annotation dimension and texts."""
        if self.category not in CATEGORIES_BY_DIMENSION[dimension]:
            raise ValidationError(
                f"category {self.category!r} is not in the {dimension} set"
            )
        if dimension == FLUENCY and self.target != TRANSLATION_SIDE:
            raise ValidationError("fluency spans must target the translation side")
        text = src_text if self.target == SOURCE_SIDE else mt_text
        if self.end > len(text):
            raise ValidationError(
                f"span [{self.start}, {self.end}) exceeds {self.target} length {len(text)}"
            )

    def to_json(self) -> dict:
        return {"start": self.start, "end": self.end, "target": self.target, "category": self.category}

    @classmethod
    def from_json(cls, d: dict) -> "ErrorSpan":
        return cls(d["start"], d["end"], d["target"], d["category"])


@dataclass(frozen=True)
class Annotation:
    """One evaluator's judgment on one segment for one dimension."""

    segment_id: str
    evaluator_id: str
    dimension: str
    spans: tuple[ErrorSpan, ...]
    da_score: int
    submitted_at: datetime

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise ValidationError(f"unknown dimension {self.dimension!r}")
        if not isinstance(self.da_score, int) or not (0 <= self.da_score <= 100):
            raise ValidationError(f"da_score must be an integer in [0, 100], got {self.da_score!r}")
        if self.submitted_at.tzinfo is None:
            raise ValidationError("submitted_at must be timezone-aware (UTC)")
        object.__setattr__(self, "spans", tuple(self.spans))
        for span in self.spans:
            if span.category not in CATEGORIES_BY_DIMENSION[self.dimension]:
                raise ValidationError(
                    f"span category {span.category!r} is not in the {self.dimension} set"
                )

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "segment_id": self.segment_id,
            "evaluator_id": self.evaluator_id,
            "dimension": self.dimension,
            "da_score": self.da_score,
            "spans": [s.to_json() for s in self.spans],
            "submitted_at": self.submitted_at.astimezone(timezone.utc).isoformat(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Annotation":
        return cls(
            segment_id=d["segment_id"],
            evaluator_id=d["evaluator_id"],
            dimension=d["dimension"],
            spans=tuple(ErrorSpan.from_json(s) for s in d["spans"]),
            da_score=d["da_score"],
            submitted_at=datetime.fromisoformat(d["submitted_at"]),
        )


@dataclass(frozen=True)
class SegmentScore:
    """QA output per segment: averaged z-score plus optional [0,1] scaling."""

    segment_id: str
    z_mean: float
    n_annotators: int
    scaled: Optional[float] = None

    def __post_init__(self):
        if self.n_annotators < 1:
            raise ValidationError("n_annotators must be positive")
        if self.scaled is not None and not (0.0 <= self.scaled <= 1.0):
            raise ValidationError(f"scaled score {self.scaled} outside [0, 1]")

    def to_json(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "segment_id": self.segment_id,
            "z_mean": self.z_mean,
            "n_annotators": self.n_annotators,
        }
        if self.scaled is not None:
            d["scaled"] = self.scaled
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SegmentScore":
        return cls(d["segment_id"], d["z_mean"], d["n_annotators"], d.get("scaled"))


class TripleSet:
    """Ordered collection of triples, unique by segment_id and by content."""

    def __init__(self, triples: Iterable[TranslationTriple] = ()):
        self._by_id: dict[str, TranslationTriple] = {}
        seen_content = set()
        dropped = 0
        for t in triples:
            if t.segment_id in self._by_id:
                raise DataError(f"duplicate segment_id {t.segment_id!r}")
            key = t.content_key()
            if key in seen_content:
                dropped += 1
                continue
            seen_content.add(key)
            self._by_id[t.segment_id] = t
        if dropped:
            logger.info("dropped %d duplicate <src, mt, ref> triples (keep-first)", dropped)
        self.dropped_duplicates = dropped

    def __len__(self) -> int:
        return len(self._by_id)

    def __iter__(self) -> Iterator[TranslationTriple]:
        return iter(self._by_id.values())

    def __contains__(self, segment_id: str) -> bool:
        return segment_id in self._by_id

    def get(self, segment_id: str) -> TranslationTriple:
        try:
            return self._by_id[segment_id]
        except KeyError:
            raise DataError(f"unknown segment_id {segment_id!r}") from None

    def segment_ids(self) -> list[str]:
        return list(self._by_id)


class AnnotationSet:
    """Ordered collection of annotations; one evaluator may appear many times."""

    def __init__(self, annotations: Iterable[Annotation] = ()):
        self._items = list(annotations)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[Annotation]:
        return iter(self._items)

    def __eq__(self, other) -> bool:
        return isinstance(other, AnnotationSet) and self._items == other._items

    def add(self, annotation: Annotation) -> None:
        self._items.append(annotation)

    def for_dimension(self, dimension: str) -> "AnnotationSet":
        return AnnotationSet(a for a in self._items if a.dimension == dimension)

    def dimensions(self) -> set[str]:
        return {a.dimension for a in self._items}


def _read_jsonl(path) -> Iterator[tuple[int, dict]]:
    try:
        fh = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecordError(path, line_no, f"invalid JSON: {exc.msg}")
            if not isinstance(record, dict):
                raise MalformedRecordError(path, line_no, "record is not a JSON object")
            version = record.get("schema_version", SCHEMA_VERSION)
            if version != SCHEMA_VERSION:
                raise MalformedRecordError(
                    path, line_no, f"schema_version {version} != supported {SCHEMA_VERSION}"
                )
            yield line_no, record


def _write_jsonl(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_triples(path) -> TripleSet:
    """Load a triple JSONL file, dropping duplicate <src, mt, ref> (keep-first).

    Raises DataError for a missing file or duplicate segment_id, and
    MalformedRecordError (with the line number) for unparsable or invalid
    records.
    """
    triples = []
    for line_no, record in _read_jsonl(path):
        try:
            triples.append(TranslationTriple.from_json(record))
        except (KeyError, TypeError) as exc:
            raise MalformedRecordError(path, line_no, f"missing or bad field: {exc}")
        except ValidationError as exc:
            raise MalformedRecordError(path, line_no, str(exc))
    return TripleSet(triples)


def save_triples(triples: TripleSet, path) -> None:
    _write_jsonl(path, (t.to_json() for t in triples))


def load_annotations(path, triples: Optional[TripleSet] = None) -> AnnotationSet:
    """Load annotations; when ``triples`` is given, spans are validated
    against the referenced texts and unknown segment ids are rejected."""
    annotations = []
    for line_no, record in _read_jsonl(path):
        try:
            ann = Annotation.from_json(record)
        except ValidationError as exc:
            raise MalformedRecordError(path, line_no, str(exc))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedRecordError(path, line_no, f"missing or bad field: {exc}")
        if triples is not None:
            try:
                triple = triples.get(ann.segment_id)
                for span in ann.spans:
                    span.check_against(ann.dimension, triple.src, triple.mt)
            except (DataError, ValidationError) as exc:
                raise MalformedRecordError(path, line_no, str(exc))
        annotations.append(ann)
    return AnnotationSet(annotations)


def save_annotations(annotations: AnnotationSet, path) -> None:
    _write_jsonl(path, (a.to_json() for a in annotations))


def load_segment_scores(path) -> list[SegmentScore]:
    scores = []
    for line_no, record in _read_jsonl(path):
        try:
            scores.append(SegmentScore.from_json(record))
        except (KeyError, TypeError) as exc:
            raise MalformedRecordError(path, line_no, f"missing or bad field: {exc}")
        except ValidationError as exc:
            raise MalformedRecordError(path, line_no, str(exc))
    return scores


def save_segment_scores(scores: Iterable[SegmentScore], path) -> None:
    _write_jsonl(path, (s.to_json() for s in scores))


def utcnow() -> datetime:
    return datetime.now(timezone.utc)
