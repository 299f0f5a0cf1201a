"""Machine translation evaluation workbench.

Collects span+DA human annotations over an HTTP service, qualifies and
normalizes them into segment scores, trains COMET-style learned metrics
(reference-based and reference-free) over frozen sentence embeddings, and
compares competing metrics against human judgments with paired permutation
significance testing.
"""

from .corpus import (
    Annotation,
    AnnotationSet,
    ErrorSpan,
    LanguagePair,
    SegmentScore,
    TranslationTriple,
    TripleSet,
    load_annotations,
    load_triples,
    save_annotations,
    save_triples,
)
from .embeddings import (
    DeterministicTestProvider,
    FileStoreProvider,
    ProviderDescriptor,
    RemoteProvider,
)
from .estimator import EstimatorModel, TrainConfig, forward, load_model, save_model, train
from .qa import QaConfig, filter_discrepant, filter_low_da_no_spans, iaa, minmax_scale, znormalize
from .stats import (
    MetricRanking,
    PairedScores,
    SignificanceMatrix,
    kendall,
    mean_impute,
    pearson,
    perm_input_test,
    rank_metrics,
    spearman,
)

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AnnotationSet",
    "DeterministicTestProvider",
    "ErrorSpan",
    "EstimatorModel",
    "FileStoreProvider",
    "LanguagePair",
    "MetricRanking",
    "PairedScores",
    "ProviderDescriptor",
    "QaConfig",
    "RemoteProvider",
    "SegmentScore",
    "SignificanceMatrix",
    "TrainConfig",
    "TranslationTriple",
    "TripleSet",
    "filter_discrepant",
    "filter_low_da_no_spans",
    "forward",
    "iaa",
    "kendall",
    "load_annotations",
    "load_model",
    "load_triples",
    "mean_impute",
    "minmax_scale",
    "pearson",
    "perm_input_test",
    "rank_metrics",
    "save_annotations",
    "save_model",
    "save_triples",
    "spearman",
    "train",
    "znormalize",
]
