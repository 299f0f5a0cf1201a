"""Quality assurance over raw multi-annotator judgments.

Pipeline order: drop segments whose annotators disagree by more than the
discrepancy threshold (strictly more, per "exceeding"), z-normalize scores
per evaluator, then average z-scores per segment. A separate analytics
branch drops low-score annotations that lack any highlighted span and
correlates per-category error-word counts with sentence scores.

Everything here is a pure function over immutable inputs; sums and
correlations always reduce in ascending segment_id order so results do not
depend on input ordering or parallel scheduling.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import stats
from .corpus import (
    ALL_CATEGORIES,
    CATEGORIES_BY_DIMENSION,
    SOURCE_SIDE,
    TRANSLATION_SIDE,
    Annotation,
    AnnotationSet,
    SegmentScore,
    TranslationTriple,
)
from .errors import DegenerateVarianceError, ValidationError


@dataclass(frozen=True)
class QaConfig:
    discrepancy_threshold: int = 34
    low_da_no_span_threshold: int = 80
    iaa_repeats: int = 100
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.discrepancy_threshold <= 100):
            raise ValidationError("discrepancy_threshold must be in [0, 100]")
        if not (0 <= self.low_da_no_span_threshold <= 100):
            raise ValidationError("low_da_no_span_threshold must be in [0, 100]")
        if self.iaa_repeats < 1:
            raise ValidationError("iaa_repeats must be >= 1")


def _group_by_segment(annotations: Iterable[Annotation]) -> dict[str, list[Annotation]]:
    groups: dict[str, list[Annotation]] = {}
    for ann in annotations:
        groups.setdefault(ann.segment_id, []).append(ann)
    return groups


def _require_single_dimension(annotations: AnnotationSet) -> None:
    dims = annotations.dimensions()
    if len(dims) > 1:
        raise ValidationError(
            f"annotations mix dimensions {sorted(dims)}; filter to one dimension first"
        )


@dataclass
class DiscrepancyResult:
    kept: dict[str, list[Annotation]]
    dropped: dict[str, list[Annotation]]
    singletons: dict[str, list[Annotation]]

    def kept_annotations(self) -> AnnotationSet:
        out = AnnotationSet()
        for sid in sorted(self.kept):
            for ann in self.kept[sid]:
                out.add(ann)
        return out


def filter_discrepant(annotations: AnnotationSet, threshold: int = 34) -> DiscrepancyResult:
    """Drop a segment iff max(da) - min(da) > threshold (strict inequality).

    Segments with fewer than 2 annotations go to a separate singleton
    bucket: they are neither kept nor dropped.
    """
    _require_single_dimension(annotations)
    kept: dict[str, list[Annotation]] = {}
    dropped: dict[str, list[Annotation]] = {}
    singletons: dict[str, list[Annotation]] = {}
    for sid, group in _group_by_segment(annotations).items():
        if len(group) < 2:
            singletons[sid] = group
            continue
        scores = [a.da_score for a in group]
        if max(scores) - min(scores) > threshold:
            dropped[sid] = group
        else:
            kept[sid] = group
    return DiscrepancyResult(kept, dropped, singletons)


def znormalize(annotations: AnnotationSet) -> np.ndarray:
    """Per-evaluator z-scores, aligned with the input annotation order.

    Uses sample standard deviation (n-1 divisor). Evaluators with zero
    variance or a single annotation map all their scores to 0.
    """
    items = list(annotations)
    by_evaluator: dict[str, list[int]] = {}
    for idx, ann in enumerate(items):
        by_evaluator.setdefault(ann.evaluator_id, []).append(idx)

    z = np.zeros(len(items), dtype=np.float64)
    for indices in by_evaluator.values():
        scores = np.array([items[i].da_score for i in indices], dtype=np.float64)
        if scores.size < 2:
            continue
        std = scores.std(ddof=1)
        if std == 0.0:
            continue
        z[indices] = (scores - scores.mean()) / std
    return z


def aggregate_segments(
    annotations: AnnotationSet, z_scores: Sequence[float]
) -> list[SegmentScore]:
    """Average z-scores per segment, in ascending segment_id order."""
    items = list(annotations)
    if len(items) != len(z_scores):
        raise ValidationError("z_scores must align with annotations")
    if not items:
        raise ValidationError("cannot aggregate an empty annotation set")
    by_segment: dict[str, list[float]] = {}
    for ann, z in zip(items, z_scores):
        by_segment.setdefault(ann.segment_id, []).append(float(z))
    return [
        SegmentScore(sid, float(np.mean(by_segment[sid])), len(by_segment[sid]))
        for sid in sorted(by_segment)
    ]


def minmax_scale(scores: Sequence[float]) -> list[float]:
    """Map scores to [0, 1] via (x - min) / (max - min); constant input maps
    everything to 0.5."""
    if len(scores) == 0:
        raise ValidationError("cannot min-max scale an empty list")
    arr = np.asarray(scores, dtype=np.float64)
    lo = float(arr.min())
    hi = float(arr.max())
    if hi == lo:
        return [0.5] * arr.size
    return [float(v) for v in (arr - lo) / (hi - lo)]


def _segment_choice(seed: int, repeat: int, segment_id: str, n: int) -> int:
    digest = hashlib.blake2b(
        f"{seed}\x00{repeat}\x00{segment_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % n


def iaa(annotations: AnnotationSet, repeats: int = 100, seed: int = 0) -> float:
    """Inter-annotator agreement: mean Pearson over repeated random
    one-vs-rest splits of each segment's annotators.

    Per repeat and segment, one annotation (chosen deterministically from
    the seed, repeat index, and segment id) is side one and the mean of the
    rest is side two; Pearson is computed across segments and averaged over
    repeats. Segment order does not affect the result.
    """
    if repeats < 1:
        raise ValidationError("repeats must be >= 1")
    groups = _group_by_segment(annotations)
    for sid, group in groups.items():
        if len(group) < 2:
            raise ValidationError(f"segment {sid!r} has fewer than 2 annotations")
    if len(groups) < 2:
        raise ValidationError("need at least 2 segments to compute agreement")

    segment_ids = sorted(groups)
    # Canonical within-segment order (one annotation per evaluator), so the
    # seeded pick does not depend on input ordering.
    score_lists = [
        np.array(
            [a.da_score for a in sorted(groups[sid], key=lambda a: a.evaluator_id)],
            dtype=np.float64,
        )
        for sid in segment_ids
    ]
    total = 0.0
    for r in range(repeats):
        side1 = np.empty(len(segment_ids), dtype=np.float64)
        side2 = np.empty(len(segment_ids), dtype=np.float64)
        for i, sid in enumerate(segment_ids):
            scores = score_lists[i]
            pick = _segment_choice(seed, r, sid, scores.size)
            side1[i] = scores[pick]
            side2[i] = np.mean(np.delete(scores, pick))
        total += stats.pearson(side1, side2)
    return total / repeats


def filter_low_da_no_spans(
    annotations: AnnotationSet, threshold: int = 80
) -> AnnotationSet:
    """Drop an annotation iff its score is under the threshold and it has
    no highlighted spans."""
    return AnnotationSet(
        a for a in annotations if not (a.da_score < threshold and not a.spans)
    )


def _word_ranges(text: str) -> list[tuple[int, int]]:
    ranges = []
    start = None
    for i, ch in enumerate(text):
        if ch.isspace():
            if start is not None:
                ranges.append((start, i))
                start = None
        elif start is None:
            start = i
    if start is not None:
        ranges.append((start, len(text)))
    return ranges


@dataclass(frozen=True)
class ErrorCountRecord:
    """Per-annotation error-word counts plus the scores they accompany."""

    segment_id: str
    evaluator_id: str
    dimension: str
    counts: dict[str, int]
    total_errors: int
    avg_error: float
    da_score: int
    z_score: float


def span_error_counts(
    annotation: Annotation,
    triple: TranslationTriple,
    z_score: float = float("nan"),
) -> ErrorCountRecord:
    """Count, per category, the whitespace words each span overlaps.

    A span counts every word it touches, even partially; spans of the same
    category each contribute their own word count. avg_error divides the
    total by the reference's word count.
    """
    if annotation.segment_id != triple.segment_id:
        raise ValidationError(
            f"annotation {annotation.segment_id!r} does not match triple {triple.segment_id!r}"
        )
    if not triple.ref or not _word_ranges(triple.ref):
        raise ValidationError(
            f"segment {triple.segment_id!r}: empty reference, avg_error undefined"
        )
    word_ranges = {
        SOURCE_SIDE: _word_ranges(triple.src),
        TRANSLATION_SIDE: _word_ranges(triple.mt),
    }
    counts = {category: 0 for category in ALL_CATEGORIES}
    for span in annotation.spans:
        span.check_against(annotation.dimension, triple.src, triple.mt)
        overlapped = sum(
            1
            for (ws, we) in word_ranges[span.target]
            if span.start < we and span.end > ws
        )
        counts[span.category] += overlapped
    total = sum(counts.values())
    ref_words = len(_word_ranges(triple.ref))
    return ErrorCountRecord(
        segment_id=annotation.segment_id,
        evaluator_id=annotation.evaluator_id,
        dimension=annotation.dimension,
        counts=counts,
        total_errors=total,
        avg_error=total / ref_words,
        da_score=annotation.da_score,
        z_score=float(z_score),
    )


@dataclass
class CorrelationRow:
    """One row of the error-count correlation table; None marks a
    correlation that is undefined for the stated reason."""

    criteria: str
    pearson_da: Optional[float]
    pearson_z: Optional[float]
    spearman_da: Optional[float]
    spearman_z: Optional[float]
    kendall_da: Optional[float]
    kendall_z: Optional[float]
    notes: list[str] = field(default_factory=list)


def _safe_corr(kind: str, x, y, label: str, notes: list[str]) -> Optional[float]:
    try:
        return stats.correlation(x, y, kind)
    except DegenerateVarianceError as exc:
        notes.append(f"{kind} vs {label}: {exc}")
        return None


def error_score_correlations(records: Sequence[ErrorCountRecord]) -> list[CorrelationRow]:
    """Table of Pearson/Spearman/Kendall between per-category error counts
    and raw/normalized sentence scores, plus total- and average-error rows."""
    if len(records) < 3:
        raise ValidationError(f"need at least 3 records, got {len(records)}")
    dims = {r.dimension for r in records}
    if len(dims) > 1:
        raise ValidationError(f"records mix dimensions {sorted(dims)}")
    dimension = dims.pop()
    ordered = sorted(records, key=lambda r: r.segment_id)
    da = np.array([r.da_score for r in ordered], dtype=np.float64)
    z = np.array([r.z_score for r in ordered], dtype=np.float64)

    rows = []
    criteria = [
        (category, np.array([r.counts[category] for r in ordered], dtype=np.float64))
        for category in CATEGORIES_BY_DIMENSION[dimension]
    ]
    criteria.append(
        ("Total Error", np.array([r.total_errors for r in ordered], dtype=np.float64))
    )
    criteria.append(
        ("Avg. Error", np.array([r.avg_error for r in ordered], dtype=np.float64))
    )
    for name, counts in criteria:
        notes: list[str] = []
        rows.append(
            CorrelationRow(
                criteria=name,
                pearson_da=_safe_corr("pearson", counts, da, "da_score", notes),
                pearson_z=_safe_corr("pearson", counts, z, "z_score", notes),
                spearman_da=_safe_corr("spearman", counts, da, "da_score", notes),
                spearman_z=_safe_corr("spearman", counts, z, "z_score", notes),
                kendall_da=_safe_corr("kendall", counts, da, "da_score", notes),
                kendall_z=_safe_corr("kendall", counts, z, "z_score", notes),
                notes=notes,
            )
        )
    return rows
