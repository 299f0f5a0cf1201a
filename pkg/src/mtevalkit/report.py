"""Metric comparison reports: per-language-pair correlation grids,
permutation-test ranks, and CSV/text emitters.

Score files are JSONL ({"segment_id": ..., "score": ...}) or CSV with a
segment_id,score header. Language-pair grouping comes from the triple
file; the group key includes the domain tag, so "eng-yor (ted)" is its
own row. The final "avg" row is the arithmetic mean of the per-LP values.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stats
from .corpus import TripleSet
from .errors import AlignmentError, DataError, MalformedRecordError, ValidationError

AVG_ROW = "avg"


def load_score_file(path) -> dict[str, float]:
    """Read {segment_id -> score} from a JSONL or CSV score file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    scores: dict[str, float] = {}
    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for line_no, row in enumerate(reader, start=2):
                try:
                    scores[row["segment_id"]] = float(row["score"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise MalformedRecordError(path, line_no, f"bad score row: {exc}")
    else:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    scores[record["segment_id"]] = float(record["score"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise MalformedRecordError(path, line_no, f"bad score record: {exc}")
    if not scores:
        raise DataError(f"score file {path} is empty")
    return scores


def save_score_file(scores: dict[str, float], path, extra: dict[str, dict] = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid in scores:
            record = {"segment_id": sid, "score": scores[sid]}
            if extra and sid in extra:
                record.update(extra[sid])
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


@dataclass
class MetricCell:
    pearson: float
    spearman: float
    kendall: float
    rank: int
    bold: bool


@dataclass
class MetricReport:
    """Per-LP correlation grid plus significance ranks for a metric set."""

    metric_names: list[str]
    corr_kind: str
    rows: dict[str, dict[str, MetricCell]]
    averaged: dict[str, dict[str, float]]
    matrices: dict[str, stats.SignificanceMatrix] = field(default_factory=dict)


def group_segments_by_lp(triples: TripleSet) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for triple in triples:
        groups.setdefault(triple.lp.label(), []).append(triple.segment_id)
    return {lp: sorted(sids) for lp, sids in sorted(groups.items())}


def build_metric_report(
    triples: TripleSet,
    human: dict[str, float],
    metrics: dict[str, dict[str, float]],
    alpha: float = 0.05,
    runs: int = 200,
    seed: int = 0,
    corr_kind: str = "spearman",
) -> MetricReport:
    """Correlations and Perm-Input ranks per language pair.

    Every metric file must cover exactly the human-scored segments of each
    language pair; missing or extra segments raise AlignmentError naming
    the offenders.
    """
    if not metrics:
        raise ValidationError("need at least one metric to compare")
    lp_groups = group_segments_by_lp(triples)
    unknown = sorted(set(human) - set(triples.segment_ids()))
    if unknown:
        raise AlignmentError(unknown, "human scores reference segments missing from the corpus")

    rows: dict[str, dict[str, MetricCell]] = {}
    matrices: dict[str, stats.SignificanceMatrix] = {}
    for lp, sids in lp_groups.items():
        scored = [sid for sid in sids if sid in human]
        if not scored:
            continue
        for name, metric_scores in metrics.items():
            missing = [sid for sid in scored if sid not in metric_scores]
            if missing:
                raise AlignmentError(
                    missing, f"metric {name!r} is missing segments for {lp}: {missing}"
                )
        paired = {
            name: stats.PairedScores(
                segment_ids=tuple(scored),
                metric=tuple(metrics[name][sid] for sid in scored),
                human=tuple(human[sid] for sid in scored),
            )
            for name in metrics
        }
        matrix, ranking = stats.rank_metrics(
            paired, alpha=alpha, runs=runs, seed=seed, corr_kind=corr_kind
        )
        matrices[lp] = matrix
        human_vec = [human[sid] for sid in scored]
        cells = {}
        for name in metrics:
            metric_vec = [metrics[name][sid] for sid in scored]
            cells[name] = MetricCell(
                pearson=stats.pearson(metric_vec, human_vec),
                spearman=stats.spearman(metric_vec, human_vec),
                kendall=stats.kendall(metric_vec, human_vec),
                rank=ranking.ranks[name],
                bold=ranking.ranks[name] == 1,
            )
        rows[lp] = cells

    if not rows:
        raise DataError("no language pair had human-scored segments")

    averaged = {
        name: {
            kind: float(np.mean([rows[lp][name].__dict__[kind] for lp in rows]))
            for kind in ("pearson", "spearman", "kendall")
        }
        for name in metrics
    }
    return MetricReport(
        metric_names=sorted(metrics),
        corr_kind=corr_kind,
        rows=rows,
        averaged=averaged,
        matrices=matrices,
    )


def write_report_csv(report: MetricReport, path) -> None:
    """Wide grid for the report's primary coefficient: one row per LP, one
    value and one bold column per metric, final averaged row."""
    names = report.metric_names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["lp"]
        for name in names:
            header.extend([name, f"{name}_bold"])
        writer.writerow(header)
        for lp in report.rows:
            row = [lp]
            for name in names:
                cell = report.rows[lp][name]
                row.extend([repr(getattr(cell, report.corr_kind)), str(cell.bold).lower()])
            writer.writerow(row)
        avg_row = [AVG_ROW]
        for name in names:
            avg_row.extend([repr(report.averaged[name][report.corr_kind]), ""])
        writer.writerow(avg_row)


def write_correlations_csv(report: MetricReport, path) -> None:
    """Long-form table with all three coefficients and ranks."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lp", "metric", "pearson", "spearman", "kendall", "rank", "bold"])
        for lp in report.rows:
            for name in report.metric_names:
                cell = report.rows[lp][name]
                writer.writerow(
                    [
                        lp,
                        name,
                        repr(cell.pearson),
                        repr(cell.spearman),
                        repr(cell.kendall),
                        cell.rank,
                        str(cell.bold).lower(),
                    ]
                )
        for name in report.metric_names:
            avg = report.averaged[name]
            writer.writerow(
                [AVG_ROW, name, repr(avg["pearson"]), repr(avg["spearman"]), repr(avg["kendall"]), "", ""]
            )


def write_significance_csv(report: MetricReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lp", "metric_a", "metric_b", "p_value"])
        for lp, matrix in report.matrices.items():
            names = matrix.metric_names
            for i, a in enumerate(names):
                for j, b in enumerate(names):
                    if i == j:
                        continue
                    writer.writerow([lp, a, b, repr(float(matrix.p_values[i, j]))])


def render_report_text(report: MetricReport) -> str:
    """Aligned-text rendering of the primary-coefficient grid; rank-1 cells
    are starred."""
    names = report.metric_names
    width = max([len(n) for n in names] + [12])
    lp_width = max([len(lp) for lp in report.rows] + [len(AVG_ROW), 4])
    lines = [
        " ".join(["lp".ljust(lp_width)] + [n.rjust(width) for n in names]),
    ]
    for lp in report.rows:
        cells = []
        for name in names:
            cell = report.rows[lp][name]
            value = f"{getattr(cell, report.corr_kind):.3f}"
            cells.append((value + ("*" if cell.bold else " ")).rjust(width))
        lines.append(" ".join([lp.ljust(lp_width)] + cells))
    avg_cells = [
        f"{report.averaged[name][report.corr_kind]:.3f} ".rjust(width) for name in names
    ]
    lines.append(" ".join([AVG_ROW.ljust(lp_width)] + avg_cells))
    lines.append("")
    lines.append(f"coefficient: {report.corr_kind}; * marks rank 1 under the paired permutation test")
    return "\n".join(lines)


def write_error_counts_csv(records, path) -> None:
    from .corpus import ALL_CATEGORIES

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["segment_id", "evaluator_id", "dimension"]
            + list(ALL_CATEGORIES)
            + ["total_errors", "avg_error", "da_score", "z_score"]
        )
        for record in records:
            writer.writerow(
                [record.segment_id, record.evaluator_id, record.dimension]
                + [record.counts[c] for c in ALL_CATEGORIES]
                + [record.total_errors, repr(record.avg_error), record.da_score, repr(record.z_score)]
            )


def write_error_correlations_csv(rows, path) -> None:
    def cell(value):
        return "" if value is None else repr(value)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["criteria", "pearson_da", "pearson_z", "spearman_da", "spearman_z", "kendall_da", "kendall_z", "notes"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.criteria,
                    cell(row.pearson_da),
                    cell(row.pearson_z),
                    cell(row.spearman_da),
                    cell(row.spearman_z),
                    cell(row.kendall_da),
                    cell(row.kendall_z),
                    "; ".join(row.notes),
                ]
            )


def write_iaa_csv(mean_pearson: float, repeats: int, seed: int, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mean_pearson", "repeats", "seed"])
        writer.writerow([repr(mean_pearson), repeats, seed])
