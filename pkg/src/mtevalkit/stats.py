"""Correlation coefficients, the paired-permutation significance test, and
metric ranking.

The significance test compares two metrics against human scores by
repeatedly swapping the metrics' scores per segment with probability 1/2
and measuring how often the resampled correlation gap reaches the observed
one. Test p-values use add-one smoothing: p = (1 + #{delta* >= delta}) /
(runs + 1). Rankings over a set of metrics come from the matrix of all
pairwise tests: a metric's rank is 1 plus the number of metrics that beat
it significantly.

Randomness is fully seeded. Pairwise tests derive their streams from the
run seed and the *sorted* pair of metric names, so the significance matrix
does not depend on metric iteration order or on parallel scheduling.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import kendalltau, rankdata

from .errors import AlignmentError, DegenerateVarianceError, ValidationError

CORR_KINDS = ("pearson", "spearman", "kendall")


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional")
    if arr.size < 2:
        raise ValidationError(f"{name} needs at least 2 entries, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    xa = _as_vector(x, "x")
    ya = _as_vector(y, "y")
    if xa.size != ya.size:
        raise ValidationError(f"length mismatch: {xa.size} vs {ya.size}")
    return xa, ya


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values receive the mean of their positions."""
    x = np.asarray(values, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def pearson(x, y) -> float:
    """Product-moment correlation; raises on zero variance, naming the side."""
    xa, ya = _check_pair(x, y)
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx2 = float(xc @ xc)
    sy2 = float(yc @ yc)
    if sx2 == 0.0:
        raise DegenerateVarianceError("x")
    if sy2 == 0.0:
        raise DegenerateVarianceError("y")
    r = float(xc @ yc) / np.sqrt(sx2 * sy2)
    return float(min(1.0, max(-1.0, r)))


def spearman(x, y) -> float:
    """Pearson over average ranks (ties get the mean of their positions)."""
    xa, ya = _check_pair(x, y)
    return pearson(average_ranks(xa), average_ranks(ya))


def kendall(x, y) -> float:
    """Kendall tau-b with tie corrections."""
    xa, ya = _check_pair(x, y)
    if np.all(xa == xa[0]):
        raise DegenerateVarianceError("x", "all pairs tied on side 'x'")
    if np.all(ya == ya[0]):
        raise DegenerateVarianceError("y", "all pairs tied on side 'y'")
    tau = kendalltau(xa, ya, variant="b").statistic
    return float(min(1.0, max(-1.0, float(tau))))


_CORR_FUNCS = {"pearson": pearson, "spearman": spearman, "kendall": kendall}


def correlation(x, y, kind: str) -> float:
    if kind not in _CORR_FUNCS:
        raise ValidationError(f"unknown correlation kind {kind!r}; expected one of {CORR_KINDS}")
    return _CORR_FUNCS[kind](x, y)


def _pearson_rows(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise Pearson of each row of X against y."""
    Xc = X - X.mean(axis=1, keepdims=True)
    yc = y - y.mean()
    sx2 = np.einsum("ij,ij->i", Xc, Xc)
    sy2 = float(yc @ yc)
    if sy2 == 0.0:
        raise DegenerateVarianceError("y")
    if np.any(sx2 == 0.0):
        raise DegenerateVarianceError("x", "a resampled metric vector has zero variance")
    return np.clip((Xc @ yc) / np.sqrt(sx2 * sy2), -1.0, 1.0)


def _corr_rows(X: np.ndarray, y: np.ndarray, kind: str) -> np.ndarray:
    if kind == "pearson":
        return _pearson_rows(X, y)
    if kind == "spearman":
        return _pearson_rows(
            rankdata(X, method="average", axis=1), average_ranks(y)
        )
    out = np.empty(X.shape[0], dtype=np.float64)
    for i in range(X.shape[0]):
        out[i] = kendall(X[i], y)
    return out


def perm_input_test(
    metric_a,
    metric_b,
    human,
    runs: int = 200,
    seed: int = 0,
    corr_kind: str = "spearman",
) -> float:
    """One-sided p-value that metric_a correlates with human better than
    metric_b, via per-segment Bernoulli(1/2) score swaps.

    Deterministic for a fixed seed. p = (1 + #{delta* >= delta}) / (runs + 1).
    """
    a, h = _check_pair(metric_a, human)
    b, _ = _check_pair(metric_b, human)
    if b.size != a.size:
        raise ValidationError(f"length mismatch: {a.size} vs {b.size}")
    if runs < 1:
        raise ValidationError("runs must be >= 1")
    if corr_kind not in _CORR_FUNCS:
        raise ValidationError(f"unknown correlation kind {corr_kind!r}")

    delta = float(
        _corr_rows(a[np.newaxis, :], h, corr_kind)[0]
        - _corr_rows(b[np.newaxis, :], h, corr_kind)[0]
    )

    rng = np.random.default_rng(seed)
    masks = rng.random((runs, a.size)) < 0.5
    a_star = np.where(masks, b, a)
    b_star = np.where(masks, a, b)
    deltas = _corr_rows(a_star, h, corr_kind) - _corr_rows(b_star, h, corr_kind)
    count = int(np.count_nonzero(deltas >= delta))
    return (1 + count) / (runs + 1)


@dataclass(frozen=True)
class PairedScores:
    """Metric and human scores aligned on the same segments."""

    segment_ids: tuple[str, ...]
    metric: tuple[float, ...]
    human: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "segment_ids", tuple(self.segment_ids))
        object.__setattr__(self, "metric", tuple(float(v) for v in self.metric))
        object.__setattr__(self, "human", tuple(float(v) for v in self.human))
        n = len(self.segment_ids)
        if n < 3:
            raise ValidationError(f"need at least 3 paired scores, got {n}")
        if len(self.metric) != n or len(self.human) != n:
            raise ValidationError("segment_ids, metric, and human must have equal lengths")
        if not all(np.isfinite(self.metric)) or not all(np.isfinite(self.human)):
            raise ValidationError("scores must be finite (impute missing values first)")


@dataclass
class SignificanceMatrix:
    """p_values[i][j] is the p-value that metric i outperforms metric j."""

    metric_names: list[str]
    p_values: np.ndarray
    alpha: float = 0.05
    runs: int = 200


@dataclass
class MetricRanking:
    """rank = 1 + number of metrics that are significantly better."""

    ranks: dict[str, int]
    correlations: dict[str, float]
    corr_kind: str = "spearman"


def _pair_seed(seed: int, name_a: str, name_b: str) -> int:
    lo, hi = sorted((name_a, name_b))
    digest = hashlib.blake2b(
        f"{seed}\x00{lo}\x00{hi}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def rank_metrics(
    scores_by_metric: dict[str, PairedScores],
    alpha: float = 0.05,
    runs: int = 200,
    seed: int = 0,
    corr_kind: str = "spearman",
) -> tuple[SignificanceMatrix, MetricRanking]:
    """Fill the pairwise significance matrix and derive metric ranks.

    All metrics must cover identical segment sets with identical human
    scores. Metric input order does not affect the result.
    """
    if not scores_by_metric:
        raise ValidationError("need at least one metric")
    names = sorted(scores_by_metric)
    base = scores_by_metric[names[0]]
    base_ids = base.segment_ids
    for name in names[1:]:
        ids = scores_by_metric[name].segment_ids
        if set(ids) != set(base_ids):
            offenders = sorted(set(ids).symmetric_difference(base_ids))
            raise AlignmentError(
                offenders,
                f"metric {name!r} covers a different segment set; offenders: {offenders}",
            )

    # Align every metric to the first metric's segment order.
    index_by_id = {sid: i for i, sid in enumerate(base_ids)}
    human = np.asarray(base.human, dtype=np.float64)
    aligned: dict[str, np.ndarray] = {}
    for name in names:
        ps = scores_by_metric[name]
        vec = np.empty(len(base_ids), dtype=np.float64)
        for sid, m, h in zip(ps.segment_ids, ps.metric, ps.human):
            i = index_by_id[sid]
            vec[i] = m
            if h != base.human[i]:
                raise ValidationError(
                    f"human scores disagree across metrics at segment {sid!r}"
                )
        aligned[name] = vec

    m = len(names)
    p_values = np.full((m, m), np.nan)
    for i, ni in enumerate(names):
        for j, nj in enumerate(names):
            if i == j:
                continue
            p_values[i, j] = perm_input_test(
                aligned[ni],
                aligned[nj],
                human,
                runs=runs,
                seed=_pair_seed(seed, ni, nj),
                corr_kind=corr_kind,
            )

    ranks = {}
    for i, name in enumerate(names):
        dominators = sum(
            1 for j in range(m) if j != i and p_values[j, i] < alpha
        )
        ranks[name] = 1 + dominators
    correlations = {
        name: correlation(aligned[name], human, corr_kind) for name in names
    }
    matrix = SignificanceMatrix(names, p_values, alpha=alpha, runs=runs)
    return matrix, MetricRanking(ranks, correlations, corr_kind)


def mean_impute(scores: Sequence[Optional[float]]) -> list[float]:
    """Replace missing (None/NaN) entries with the mean of the present ones."""
    present = [
        float(v) for v in scores if v is not None and np.isfinite(v)
    ]
    if not present:
        raise ValidationError("cannot impute: all entries are missing")
    mean = float(np.mean(present))
    return [
        float(v) if v is not None and np.isfinite(v) else mean for v in scores
    ]
