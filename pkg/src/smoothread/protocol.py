"""Contextual summary record and its line-oriented wire grammar.

The canonical rendering is::

    TARGET: <text>
    CLUES: <text, may span lines>
    REASON: <text, may span lines>
    ANSWER: <text>            (only when stopping)
    <CONTINUE> | <STOP>

Parsing is lenient: chatter before the TARGET line or after the control token
is ignored, and the last control token in the text decides.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .errors import InvalidSummary, MalformedSummary, MissingAnswer, NoDecision, ProtocolError

CONTINUE_TOKEN = "<CONTINUE>"
STOP_TOKEN = "<STOP>"
CONTROL_TOKENS = (CONTINUE_TOKEN, STOP_TOKEN)
HEADERS = ("TARGET:", "CLUES:", "REASON:", "ANSWER:")

_CONTROL = re.compile(r"<CONTINUE>|<STOP>")
_TARGET_LINE = re.compile(r"(?m)^[ \t]*TARGET:")
_HEADER_LINE = re.compile(r"[ \t]*(?:TARGET|CLUES|REASON|ANSWER):")


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"
    NOT_APPLICABLE = "n/a"


@dataclass(frozen=True)
class ContextualSummary:
    target: str
    clues: str = ""
    reason: str = ""
    decision: Decision = Decision.CONTINUE
    final_answer: str | None = None

    @property
    def stopped(self) -> bool:
        return self.decision is Decision.STOP

    def validate(self) -> None:
        if self.decision not in (Decision.CONTINUE, Decision.STOP):
            raise InvalidSummary(f"summary decision must be continue or stop, got {self.decision}")
        if (self.final_answer is not None) != self.stopped:
            raise InvalidSummary("final_answer must be present exactly when the decision is stop")
        fields = {"target": self.target, "clues": self.clues, "reason": self.reason}
        if self.final_answer is not None:
            fields["answer"] = self.final_answer
        for name, value in fields.items():
            if any(tok in value for tok in CONTROL_TOKENS):
                raise InvalidSummary(f"{name} contains a control token")
            if any(_HEADER_LINE.match(line) for line in value.split("\n")[1:]):
                raise InvalidSummary(f"{name} contains a field header at line start")
        if "\n" in self.target:
            raise InvalidSummary("target must be a single line")

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "clues": self.clues,
            "reason": self.reason,
            "decision": self.decision.value,
            "final_answer": self.final_answer,
        }


def render(summary: ContextualSummary) -> str:
    summary.validate()
    lines = [
        f"TARGET: {summary.target}",
        f"CLUES: {summary.clues}",
        f"REASON: {summary.reason}",
    ]
    if summary.stopped:
        lines.append(f"ANSWER: {summary.final_answer}")
        lines.append(STOP_TOKEN)
    else:
        lines.append(CONTINUE_TOKEN)
    return "\n".join(lines)


def _field(body: str, header: str, start: int, end: int) -> str:
    value = body[start + len(header):end]
    return value[1:] if value.startswith(" ") else value


def parse(text: str) -> ContextualSummary:
    """Read a contextual summary out of (possibly noisy) model output."""
    controls = list(_CONTROL.finditer(text))
    if not controls:
        raise NoDecision("no <CONTINUE> or <STOP> token in output")
    last = controls[-1]
    decision = Decision.STOP if last.group() == STOP_TOKEN else Decision.CONTINUE
    body = text[: last.start()]
    if body.endswith("\n"):
        body = body[:-1]

    targets = list(_TARGET_LINE.finditer(body))
    if not targets:
        raise MalformedSummary("missing TARGET: header")
    t0 = targets[-1].end() - len("TARGET:")
    c0 = body.find("\nCLUES:", t0)
    if c0 < 0:
        raise MalformedSummary("missing CLUES: header")
    r0 = body.find("\nREASON:", c0)
    if r0 < 0:
        raise MalformedSummary("missing REASON: header")
    a0 = body.find("\nANSWER:", r0)

    target = _field(body, "TARGET:", t0, c0)
    clues = _field(body, "\nCLUES:", c0, r0)
    if a0 < 0:
        reason = _field(body, "\nREASON:", r0, len(body))
        answer = None
    else:
        reason = _field(body, "\nREASON:", r0, a0)
        answer = _field(body, "\nANSWER:", a0, len(body))

    if decision is Decision.STOP:
        if answer is None:
            raise MissingAnswer("<STOP> without an ANSWER: line")
        return ContextualSummary(target, clues, reason, decision, answer)
    return ContextualSummary(target, clues, reason, decision, None)


def try_extract_answer(text: str) -> str:
    """Best-effort final answer from free-form output (answer-elicitation turns)."""
    try:
        summary = parse(text)
    except ProtocolError:
        summary = None
    if summary is not None and summary.final_answer is not None:
        return summary.final_answer
    m = re.search(r"(?m)^[ \t]*ANSWER:[ \t]?(.*)$", text)
    if m:
        return m.group(1).strip()
    return _CONTROL.sub("", text).strip()
