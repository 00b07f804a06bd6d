"""Synthetic long-context items (needle-in-a-haystack, passage count) and a JSONL loader."""

from __future__ import annotations

import json
import random
import re
import uuid
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .backends.sim import NEEDLE_TEMPLATE, PASSAGE_TARGET, TARGET_PHRASE
from .chunker import TOKEN_RATIO, count_words, estimate_tokens
from .errors import ConfigError, InsufficientPool, InvalidOffset, IoError
from .tasks import Task

KEYWORDS = (
    "anchor", "apple", "arrow", "badge", "basket", "beacon", "blossom", "bridge", "bucket", "cabin",
    "candle", "canyon", "castle", "cedar", "comet", "copper", "coral", "cottage", "crystal", "dagger",
    "desert", "dolphin", "dragon", "eagle", "ember", "falcon", "feather", "ferry", "forest", "fossil",
    "garden", "glacier", "goblet", "granite", "harbor", "hazel", "helmet", "island", "ivory", "jasmine",
    "jungle", "kettle", "ladder", "lantern", "lemon", "lighthouse", "lizard", "magnet", "maple", "marble",
    "meadow", "mirror", "monsoon", "needle", "nutmeg", "oasis", "orchid", "otter", "paddle", "parrot",
    "pebble", "pepper", "pillow", "pirate", "planet", "pocket", "quartz", "quill", "rabbit", "raven",
    "ribbon", "river", "saddle", "saffron", "scarlet", "shadow", "silver", "sparrow", "spruce", "summit",
    "teapot", "thunder", "tiger", "timber", "tulip", "tundra", "velvet", "violet", "volcano", "walnut",
    "whistle", "willow", "window", "winter", "wizard", "yarrow", "zephyr", "zigzag", "acorn", "bramble",
)

SNAP_TOLERANCE = 16  # tokens

_SENTENCE_START = re.compile(r"(?:(?<=[.!?] )|(?<=\n\n)|^)(?=\S)")
_WORD = re.compile(r"\S+")


@dataclass
class EvalItem:
    context: str
    query: str
    gold: list[str]
    task: Task = Task.NIAH
    meta: dict = field(default_factory=dict)
    id: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalItem":
        gold = d.get("gold", [])
        if isinstance(gold, str):
            gold = [gold]
        return cls(
            context=d["context"], query=d["query"], gold=list(gold),
            task=Task(d.get("task", Task.NIAH.value)), meta=d.get("meta", {}), id=str(d.get("id", "")),
        )


@dataclass(frozen=True)
class NiahSpec:
    context_tokens: int
    num_needles: int = 1
    offsets_from_end: tuple[int, ...] | None = None  # None: uniform random placement
    haystack_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_needles < 1:
            raise ConfigError("num_needles must be >= 1")
        if self.context_tokens < 1:
            raise ConfigError("context_tokens must be >= 1")
        if self.offsets_from_end is not None:
            object.__setattr__(self, "offsets_from_end", tuple(self.offsets_from_end))
            if len(self.offsets_from_end) != self.num_needles:
                raise ConfigError("need one offset per needle")
            for off in self.offsets_from_end:
                if not 0 < off < self.context_tokens:
                    raise InvalidOffset(f"offset {off} outside (0, {self.context_tokens})")

    @property
    def placement(self) -> str:
        return "uniform" if self.offsets_from_end is None else "offset_from_end"


@lru_cache(maxsize=8)
def load_haystack(path: str | None = None) -> tuple[str, ...]:
    """Paragraphs of the filler corpus (the bundled essays by default)."""
    if path is None:
        text = resources.files("smoothread").joinpath("assets/haystack_essays.txt").read_text(encoding="utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read haystack {path}: {exc}") from exc
    paras = tuple(" ".join(p.split()) for p in re.split(r"\n\s*\n", text) if p.strip())
    if not paras:
        raise ConfigError("haystack corpus is empty")
    return paras


def _build_haystack(paras: tuple[str, ...], budget: int, rng: random.Random) -> str:
    start = rng.randrange(len(paras))
    out: list[str] = []
    used = 0
    i = start
    while True:
        p = paras[i % len(paras)]
        n = estimate_tokens(p)
        if used + n > budget:
            break
        out.append(p)
        used += n
        i += 1
    if i - start > len(paras):
        warnings.warn("haystack corpus is shorter than the requested context; cycling it", stacklevel=3)
    remaining = budget - used
    if remaining > 0.05 * budget or not out:
        # top up with the leading sentences of the next paragraph
        p = paras[i % len(paras)]
        sentences = re.split(r"(?<=[.!?]) ", p)
        piece: list[str] = []
        for s in sentences:
            if estimate_tokens(" ".join(piece + [s])) > remaining:
                break
            piece.append(s)
        if piece:
            out.append(" ".join(piece))
    return "\n\n".join(out)


def _word_starts(text: str) -> list[int]:
    return [m.start() for m in _WORD.finditer(text)]


def _insert_at_token(text: str, needle: str, token_pos: int) -> tuple[str, int]:
    """Insert ``needle`` as its own sentence near estimated token ``token_pos``.

    Snaps to the nearest sentence start when one lies within the tolerance,
    otherwise to the nearest word start. Returns the new text and the
    estimated token position of the needle's first token.
    """
    starts = _word_starts(text)
    n_words = len(starts)
    positions = [int(TOKEN_RATIO * i) for i in range(n_words + 1)]

    def nearest(indices):
        return min(indices, key=lambda i: (abs(positions[i] - token_pos), i))

    sentence_idx = []
    sentence_chars = {m.start() for m in _SENTENCE_START.finditer(text)}
    for i, c in enumerate(starts):
        if c in sentence_chars:
            sentence_idx.append(i)
    sentence_idx.append(n_words)
    best = nearest(sentence_idx)
    if abs(positions[best] - token_pos) > SNAP_TOLERANCE:
        best = nearest(range(n_words + 1))
    if best == n_words:
        return text.rstrip() + " " + needle, positions[best]
    char = starts[best]
    return text[:char] + needle + " " + text[char:], positions[best]


def make_uuid(rng: random.Random) -> str:
    return str(uuid.UUID(int=rng.getrandbits(128), version=4))


def niah_query(keys: list[str]) -> str:
    return f"What are the {TARGET_PHRASE}{', '.join(keys)}?"


def gen_niah(spec: NiahSpec) -> EvalItem:
    """Hide ``num_needles`` key/UUID facts in essay filler."""
    rng = random.Random(spec.seed)
    keys = rng.sample(KEYWORDS, spec.num_needles)
    values = []
    while len(values) < spec.num_needles:
        v = make_uuid(rng)
        if v not in values:
            values.append(v)
    needles = [NEEDLE_TEMPLATE.format(key=k, value=v) for k, v in zip(keys, values)]
    needle_tokens = sum(estimate_tokens(n) for n in needles)
    haystack = _build_haystack(load_haystack(spec.haystack_path), max(1, spec.context_tokens - needle_tokens), rng)

    positions: dict[int, int] = {}
    if spec.offsets_from_end is None:
        base = estimate_tokens(haystack)
        targets = sorted(((rng.randrange(base + 1), j) for j in range(spec.num_needles)), reverse=True)
        text = haystack
        for pos, j in targets:  # back to front so earlier targets stay valid
            text, positions[j] = _insert_at_token(text, needles[j], pos)
        # later insertions shift earlier-placed needles; recompute exact positions
        positions = {j: _needle_position(text, needles[j]) for j in range(spec.num_needles)}
    else:
        text = haystack
        order = sorted(range(spec.num_needles), key=lambda j: spec.offsets_from_end[j])
        for j in order:  # nearest the end first; earlier insertions don't move later offsets
            # measured in the final text, which includes this needle's own tokens
            total = estimate_tokens(text) + estimate_tokens(needles[j])
            text, _ = _insert_at_token(text, needles[j], total - spec.offsets_from_end[j])
        positions = {j: _needle_position(text, needles[j]) for j in range(spec.num_needles)}

    total = estimate_tokens(text)
    return EvalItem(
        context=text,
        query=niah_query(keys),
        gold=values,
        task=Task.NIAH,
        id=f"niah-{spec.seed}",
        meta={
            "keys": keys,
            "needle_positions": [positions[j] for j in range(spec.num_needles)],
            "offsets_from_end": [total - positions[j] for j in range(spec.num_needles)],
            "context_tokens": total,
            "seed": spec.seed,
            "spec": {
                "context_tokens": spec.context_tokens,
                "num_needles": spec.num_needles,
                "placement": spec.placement,
                "offsets_from_end": list(spec.offsets_from_end) if spec.offsets_from_end else None,
            },
        },
    )


def _needle_position(text: str, needle: str) -> int:
    char = text.index(needle)
    return int(TOKEN_RATIO * count_words(text[:char]))


def niah_suite(n: int, context_tokens: int, num_needles: int = 1, seed: int = 0, **kwargs) -> list[EvalItem]:
    return [gen_niah(NiahSpec(context_tokens, num_needles, seed=seed + i, **kwargs)) for i in range(n)]


@dataclass(frozen=True)
class PassageCountSpec:
    unique: int
    duplicates: int = 0
    seed: int = 0
    pool: tuple[str, ...] | None = None


def gen_passage_count(spec: PassageCountSpec) -> EvalItem:
    """Shuffle ``unique`` passages plus ``duplicates`` extra copies; gold is the unique count."""
    pool = spec.pool if spec.pool is not None else load_haystack()
    pool = tuple(dict.fromkeys(" ".join(p.split()) for p in pool))
    if spec.unique < 1 or spec.unique > len(pool):
        raise InsufficientPool(f"need {spec.unique} unique passages, pool has {len(pool)}")
    if spec.duplicates < 0:
        raise ConfigError("duplicates must be >= 0")
    rng = random.Random(spec.seed)
    chosen = rng.sample(pool, spec.unique)
    order = list(chosen)
    rng.shuffle(order)
    extra = [order[i % len(order)] for i in range(spec.duplicates)]
    passages = chosen + extra
    rng.shuffle(passages)
    context = "".join(f"Paragraph {k}: {p}\n\n" for k, p in enumerate(passages, 1))
    return EvalItem(
        context=context,
        query=f"Please {PASSAGE_TARGET} in the text above. Answer with a number.",
        gold=[str(spec.unique)],
        task=Task.PASSAGE_COUNT,
        id=f"passage-count-{spec.seed}",
        meta={"seed": spec.seed, "passages": len(passages),
              "spec": {"unique": spec.unique, "duplicates": spec.duplicates}},
    )


@dataclass
class LineError:
    line: int
    error: str


DEFAULT_FIELD_MAP = {"context": "context", "query": "query", "gold": "gold", "task": "task", "id": "id"}


def load_jsonl(path: str | Path, field_map: dict[str, str] | None = None) -> tuple[list[EvalItem], list[LineError]]:
    """Read EvalItems from JSONL; bad lines are reported, not dropped silently.

    ``field_map`` maps EvalItem fields to source keys, e.g.
    ``{"query": "input", "gold": "answers"}`` for LongBench files.
    """
    fmap = {**DEFAULT_FIELD_MAP, **(field_map or {})}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    items: list[EvalItem] = []
    errors: list[LineError] = []
    for no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("line is not a JSON object")
            gold = obj.get(fmap["gold"], [])
            item = EvalItem(
                context=obj[fmap["context"]],
                query=obj[fmap["query"]],
                gold=[gold] if isinstance(gold, str) else [str(g) for g in gold],
                task=Task(obj.get(fmap["task"], Task.QA.value)),
                meta={**(obj.get("meta") if isinstance(obj.get("meta"), dict) else {}),
                      **{k: v for k, v in obj.items() if k not in fmap.values() and k != "meta"}},
                id=str(obj.get(fmap["id"], no)),
            )
            if not isinstance(item.context, str) or not isinstance(item.query, str):
                raise ValueError("context and query must be strings")
        except (ValueError, KeyError, TypeError) as exc:
            errors.append(LineError(no, f"{type(exc).__name__}: {exc}"))
            continue
        items.append(item)
    return items, errors


def write_jsonl(items, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")
