"""Exact match, token F1, Rouge-L and edit similarity, plus item/suite scoring."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable

from .errors import EmptySuite
from .tasks import TASK_METRIC, MetricName, Task

_PUNCT = str.maketrans("", "", string.punctuation)
_ARTICLES = re.compile(r"\b(a|an|the)\b")


def normalize(text: str, drop_articles: bool = True) -> str:
    """Lowercase, strip punctuation, optionally drop articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT)
    if drop_articles:
        text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str, drop_articles: bool = True) -> float:
    return float(normalize(pred, drop_articles) == normalize(gold, drop_articles))


def token_f1(pred: str, gold: str, drop_articles: bool = False) -> float:
    p = normalize(pred, drop_articles).split()
    g = normalize(gold, drop_articles).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    overlap = sum((Counter(p) & Counter(g)).values())
    if overlap == 0:
        return 0.0
    precision, recall = overlap / len(p), overlap / len(g)
    return 2 * precision * recall / (precision + recall)


def lcs_length(a: list[str], b: list[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    row = [0] * (len(b) + 1)
    for x in a:
        prev = 0
        for j, y in enumerate(b, 1):
            cur = row[j]
            row[j] = prev + 1 if x == y else max(row[j], row[j - 1])
            prev = cur
    return row[-1]


def rouge_l(pred: str, gold: str, beta: float = 1.0, drop_articles: bool = False) -> float:
    p = normalize(pred, drop_articles).split()
    g = normalize(gold, drop_articles).split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    lcs = lcs_length(p, g)
    if lcs == 0:
        return 0.0
    if beta == 1:
        return 2 * lcs / (len(p) + len(g))
    precision, recall = lcs / len(p), lcs / len(g)
    b2 = beta * beta
    return (1 + b2) * precision * recall / (recall + b2 * precision)


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    row = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev, row[0] = row[0], i
        for j, y in enumerate(b, 1):
            cur = row[j]
            row[j] = min(row[j] + 1, row[j - 1] + 1, prev + (x != y))
            prev = cur
    return row[-1]


def edit_similarity(pred: str, gold: str) -> float:
    if not pred and not gold:
        return 1.0
    return 1.0 - levenshtein(pred, gold) / max(len(pred), len(gold))


METRICS: dict[MetricName, Callable[[str, str], float]] = {
    MetricName.EXACT_MATCH: exact_match,
    MetricName.TOKEN_F1: token_f1,
    MetricName.ROUGE_L: rouge_l,
    MetricName.EDIT_SIM: edit_similarity,
}

# cleaning thresholds per metric
DEFAULT_THRESHOLDS = {
    MetricName.EXACT_MATCH: 1.0,
    MetricName.NEEDLE_EM: 1.0,
    MetricName.TOKEN_F1: 0.5,
    MetricName.ROUGE_L: 0.5,
    MetricName.EDIT_SIM: 0.75,
}


@dataclass(frozen=True)
class MetricResult:
    name: MetricName
    value: float

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"metric value {self.value} outside [0, 1]")


def needle_em(answer: str, gold: list[str]) -> float:
    """Mean over gold values of the best exact match among answer parts."""
    if not gold:
        return 0.0
    parts = [p for p in re.split(r"[,\s]+", answer) if p]
    hits = [max((exact_match(p, g) for p in parts), default=0.0) for g in gold]
    return sum(hits) / len(gold)


def score_answer(task: Task | str, answer: str, gold: list[str]) -> MetricResult:
    name = TASK_METRIC[Task(task)]
    if name is MetricName.NEEDLE_EM:
        return MetricResult(name, needle_em(answer, gold))
    fn = METRICS[name]
    # several references: the best one counts
    return MetricResult(name, max((fn(answer, g) for g in gold), default=0.0))


def score_item(item, answer: str) -> MetricResult:
    return score_answer(item.task, answer, item.gold)


def score_suite(values: Iterable[float | MetricResult]) -> float:
    """Arithmetic mean times 100, rounded to two decimals."""
    vals = [v.value if isinstance(v, MetricResult) else float(v) for v in values]
    if not vals:
        raise EmptySuite("cannot score an empty suite")
    return round(100 * sum(vals) / len(vals), 2)
