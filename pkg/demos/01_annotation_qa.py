"""Walk through the annotation quality-assurance pipeline on synthetic data.

Two annotators rate a small corpus on adequacy. We drop segments where
their scores disagree by more than 34 points, z-normalize per evaluator,
average to segment scores, min-max scale to [0, 1], measure agreement,
and correlate error-word counts with the scores.

Run: python demos/01_annotation_qa.py
"""
import numpy as np

from mtevalkit.corpus import Annotation, AnnotationSet, ErrorSpan, LanguagePair, TranslationTriple, TripleSet, utcnow
from mtevalkit.qa import (
    aggregate_segments,
    error_score_correlations,
    filter_discrepant,
    filter_low_da_no_spans,
    iaa,
    minmax_scale,
    span_error_counts,
    znormalize,
)

rng = np.random.default_rng(0)
lp = LanguagePair("eng", "swh")

# ---------------------------------------------------------------- corpus
print("== corpus ==")
triples = TripleSet(
    TranslationTriple(
        segment_id=f"seg{i:02d}",
        lp=lp,
        src=f"source sentence number {i} with several words",
        mt=f"tafsiri ya mashine namba {i} yenye maneno kadhaa",
        ref=f"tafsiri ya marejeleo namba {i} yenye maneno mengi kabisa",
    )
    for i in range(12)
)
print(f"{len(triples)} triples, language pair {lp.label()}")

# ------------------------------------------------------- synthetic annotations
# Annotator quality model: both annotators see the same true quality; one
# segment gets a wildly discrepant pair on purpose.
print("\n== annotations ==")
annotations = AnnotationSet()
true_quality = rng.integers(30, 95, size=len(triples))
for i, triple in enumerate(triples):
    for evaluator, bias in (("eval-A", +3), ("eval-B", -3)):
        score = int(np.clip(true_quality[i] + bias + rng.integers(-4, 5), 0, 100))
        if triple.segment_id == "seg00" and evaluator == "eval-B":
            score = max(0, score - 60)  # deliberate disagreement
        spans = []
        if score < 80:
            # low scores come with highlighted evidence: one error span over
            # the first words of the translation
            width = int(np.clip((90 - score) // 10, 1, 5)) * 4
            spans.append(
                ErrorSpan(0, min(width, len(triple.mt)), "translation_side", "Mistranslation")
            )
        annotations.add(
            Annotation(
                segment_id=triple.segment_id,
                evaluator_id=evaluator,
                dimension="adequacy",
                spans=tuple(spans),
                da_score=score,
                submitted_at=utcnow(),
            )
        )
print(f"{len(annotations)} annotations from 2 evaluators")

# ------------------------------------------------------------ discrepancy filter
print("\n== discrepancy filter (threshold 34, strict) ==")
result = filter_discrepant(annotations, threshold=34)
print(f"kept {len(result.kept)} segments, dropped {len(result.dropped)}, singletons {len(result.singletons)}")
assert "seg00" in result.dropped

# ------------------------------------------------- normalization and aggregation
print("\n== per-evaluator z-scores -> segment scores ==")
kept = result.kept_annotations()
z = znormalize(kept)
segment_scores = aggregate_segments(kept, z)
scaled = minmax_scale([s.z_mean for s in segment_scores])
for score, value in zip(segment_scores[:5], scaled[:5]):
    print(f"  {score.segment_id}: z_mean {score.z_mean:+.3f}  scaled {value:.3f}  ({score.n_annotators} annotators)")
print(f"  ... {len(segment_scores)} segments total")

# ------------------------------------------------------------------- agreement
print("\n== inter-annotator agreement ==")
agreement = iaa(kept, repeats=100, seed=0)
print(f"mean Pearson over 100 random one-vs-rest splits: {agreement:.3f}")

# ------------------------------------------------------------- error analytics
print("\n== error-count analytics ==")
analysable = filter_low_da_no_spans(annotations, threshold=80)
print(f"{len(annotations) - len(analysable)} low-score annotations without spans excluded")
z_all = znormalize(analysable)
records = [
    span_error_counts(ann, triples.get(ann.segment_id), zv)
    for ann, zv in zip(analysable, z_all)
]
rows = error_score_correlations(records)
print(f"{'criteria':<16} {'pearson/da':>10} {'spearman/da':>11} {'kendall/da':>10}")
for row in rows:
    def fmt(v):
        return f"{v:+.3f}" if v is not None else "   --"
    print(f"{row.criteria:<16} {fmt(row.pearson_da):>10} {fmt(row.spearman_da):>11} {fmt(row.kendall_da):>10}")

print("\nMore error words should mean lower scores: correlations are negative.")
