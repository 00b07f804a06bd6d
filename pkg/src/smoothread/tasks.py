"""Task families, their scoring metric and their early-stop default."""

from __future__ import annotations

import enum


class Task(str, enum.Enum):
    NIAH = "niah"
    PASSAGE_COUNT = "passage_count"
    PASSAGE_RETRIEVAL = "passage_retrieval"
    QA = "qa"
    SUMMARIZATION = "summarization"
    CLASSIFICATION = "classification"
    CODE = "code"


class MetricName(str, enum.Enum):
    EXACT_MATCH = "exact_match"
    TOKEN_F1 = "token_f1"
    ROUGE_L = "rouge_l"
    EDIT_SIM = "edit_similarity"
    NEEDLE_EM = "needle_em"  # mean per-needle exact match


TASK_METRIC = {
    Task.NIAH: MetricName.NEEDLE_EM,
    Task.PASSAGE_COUNT: MetricName.EXACT_MATCH,
    Task.PASSAGE_RETRIEVAL: MetricName.EXACT_MATCH,
    Task.QA: MetricName.TOKEN_F1,
    Task.SUMMARIZATION: MetricName.ROUGE_L,
    Task.CLASSIFICATION: MetricName.EXACT_MATCH,
    Task.CODE: MetricName.EDIT_SIM,
}

# question answering and passage retrieval stop early; counting and
# summarization read everything. NIAH supports both (A: off, B: on).
TASK_EARLY_STOP = {
    Task.NIAH: True,
    Task.PASSAGE_COUNT: False,
    Task.PASSAGE_RETRIEVAL: True,
    Task.QA: True,
    Task.SUMMARIZATION: False,
    Task.CLASSIFICATION: False,
    Task.CODE: False,
}

# tasks a rule teacher can solve; the rest need an LLM teacher
RULE_TASKS = {Task.NIAH, Task.PASSAGE_COUNT}
