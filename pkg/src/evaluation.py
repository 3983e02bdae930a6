import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from corpus import EntitySpan, LabeledSentence
from errors import ContractError
from utils import get_logger


logger = get_logger(__name__)


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        return _f1(self.precision, self.recall)


@dataclass
class EpisodeMetrics(Counts):
    """Entity-level counts of one episode (or of a pool of episodes).

    ``fp`` always equals ``fp_span + fp_type``.
    """

    fp_span: int = 0
    fp_type: int = 0
    per_class: dict[str, Counts] = field(default_factory=dict)

    def merge(self, other: "EpisodeMetrics") -> "EpisodeMetrics":
        per_class = {name: Counts(c.tp, c.fp, c.fn) for name, c in self.per_class.items()}
        for name, counts in other.per_class.items():
            target = per_class.setdefault(name, Counts())
            target.tp += counts.tp
            target.fp += counts.fp
            target.fn += counts.fn
        return EpisodeMetrics(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            fp_span=self.fp_span + other.fp_span,
            fp_type=self.fp_type + other.fp_type,
            per_class=per_class,
        )


def _check_disjoint(spans: Sequence[EntitySpan]) -> None:
    ordered = sorted(spans)
    for left, right in zip(ordered, ordered[1:], strict=False):
        if right.start <= left.end:
            msg = f"predicted spans {left.bounds} and {right.bounds} overlap"
            raise ContractError(msg)


def match_predictions(gold: Sequence[EntitySpan], predicted: Sequence[EntitySpan]) -> EpisodeMetrics:
    """Exact-match scoring of one sentence.

    A prediction equal to a gold span in boundaries and class is a true positive.
    A wrong class on gold boundaries is an FP-Type; anything else is an FP-Span.
    Gold spans without an exact match are false negatives.
    """
    _check_disjoint(predicted)
    gold_exact = set(gold)
    gold_bounds = {span.bounds for span in gold}
    metrics = EpisodeMetrics()

    def bucket(name: str) -> Counts:
        return metrics.per_class.setdefault(name, Counts())

    for span in predicted:
        if span in gold_exact:
            metrics.tp += 1
            bucket(span.label).tp += 1
            continue
        metrics.fp += 1
        bucket(span.label).fp += 1
        if span.bounds in gold_bounds:
            metrics.fp_type += 1
        else:
            metrics.fp_span += 1
    for span in gold_exact - set(predicted):
        metrics.fn += 1
        bucket(span.label).fn += 1
    return metrics


def score_episode(query: Sequence[LabeledSentence], predictions: Sequence[Sequence[EntitySpan]]) -> EpisodeMetrics:
    if len(query) != len(predictions):
        msg = f"{len(query)} query sentences but {len(predictions)} predictions"
        raise ContractError(msg)
    total = EpisodeMetrics()
    for sentence, predicted in zip(query, predictions, strict=True):
        total = total.merge(match_predictions(sentence.entity_spans, predicted))
    return total


def pool(metrics: Sequence[EpisodeMetrics]) -> EpisodeMetrics:
    if not metrics:
        msg = "need at least one episode"
        raise ContractError(msg)
    total = EpisodeMetrics()
    for m in metrics:
        total = total.merge(m)
    return total


def micro_f1_pooled(metrics: Sequence[EpisodeMetrics]) -> float:
    """F1 from TP/FP/FN pooled over every episode (FewNERD convention)."""
    return pool(metrics).f1


def episode_avg_f1(metrics: Sequence[EpisodeMetrics]) -> float:
    """Mean of per-episode F1 (SNIPS / Cross-domain convention)."""
    if not metrics:
        msg = "need at least one episode"
        raise ContractError(msg)
    return float(np.mean([m.f1 for m in metrics]))


def build_report(metrics: Sequence[EpisodeMetrics], **context: Any) -> dict[str, Any]:
    """Both F1 conventions, pooled counts, the FP-Span/FP-Type split and per-class figures."""
    pooled = pool(metrics)
    return {
        **context,
        "episodes": len(metrics),
        "micro_f1_pooled": pooled.f1,
        "episode_avg_f1": episode_avg_f1(metrics),
        "precision": pooled.precision,
        "recall": pooled.recall,
        "counts": {
            "tp": pooled.tp,
            "fp": pooled.fp,
            "fn": pooled.fn,
            "fp_span": pooled.fp_span,
            "fp_type": pooled.fp_type,
        },
        "fp_span_ratio": pooled.fp_span / pooled.fp if pooled.fp else 0.0,
        "fp_type_ratio": pooled.fp_type / pooled.fp if pooled.fp else 0.0,
        "per_class": {
            name: {"precision": c.precision, "recall": c.recall, "f1": c.f1, "tp": c.tp, "fp": c.fp, "fn": c.fn}
            for name, c in sorted(pooled.per_class.items())
        },
    }


SUMMARY_KEYS = ("micro_f1_pooled", "episode_avg_f1", "precision", "recall")


def summarize_runs(reports: Sequence[Mapping[str, Any]]) -> dict[str, Any]:
    """Mean and sample standard deviation of the headline figures over several runs."""
    if not reports:
        msg = "need at least one report"
        raise ContractError(msg)
    summary: dict[str, Any] = {"runs": list(reports), "mean": {}, "stdev": {}}
    for key in SUMMARY_KEYS:
        values = np.array([r[key] for r in reports], dtype=np.float64)
        summary["mean"][key] = float(values.mean())
        summary["stdev"][key] = float(values.std(ddof=1)) if len(values) > 1 else 0.0
    return summary


def write_report(path: str | Path, report: Mapping[str, Any]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2), encoding="utf-8")
    logger.info("Report written to %s", path)
