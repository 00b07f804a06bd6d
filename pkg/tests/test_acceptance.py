"""Exit criteria for the build; each prints one PASS/FAIL line."""

from __future__ import annotations

import dataclasses
import json
import random
import statistics
import time

import pytest

from helpers import lcs_brute, levenshtein_oracle, linear_context, plain_context
from smoothread.backends.sim import AttentionSim, SimCost, SlidingWindowSim, TaskProgram
from smoothread.benchgen import NiahSpec, PassageCountSpec, gen_niah, gen_passage_count, niah_suite
from smoothread.chunker import DEFAULT_DELIMITERS, ChunkingConfig, chunk_text, split_hierarchical
from smoothread.cli import main
from smoothread.cost_model import CostParams, time_recurrent_sr, validate_against_trace
from smoothread.dataset_builder import Format, RawItem, RuleTeacher, TeacherRun, build_dataset
from smoothread.engine import run_one_step, run_smooth, run_unsmooth
from smoothread.errors import MalformedSummary, MissingAnswer, NoDecision
from smoothread.experiments import SweepConfig, sweep
from smoothread.metrics import edit_similarity, needle_em, normalize, rouge_l, token_f1
from smoothread.protocol import ContextualSummary, Decision, parse, render

pytestmark = pytest.mark.acceptance


def test_01_window_chunk_capacity_grid(criterion):
    start = time.perf_counter()
    items = niah_suite(50, 16384, num_needles=4, seed=1000)
    result = sweep(SweepConfig(windows=[512, 4096], chunks=[512, 2048, 4096]), items)
    elapsed = time.perf_counter() - start
    acc = {(w, c): a for w, row in zip(result["windows"], result["accuracy"])
           for c, a in zip(result["chunks"], row)}
    ok = (
        acc[(512, 4096)] == 0.0
        and acc[(4096, 2048)] == 1.0
        and acc[(512, 512)] >= 0.95
        and all(acc[(w, 512)] >= acc[(w, 4096)] for w in (512, 4096))
        and elapsed < 60
    )
    cells = ", ".join(f"W{w}/C{c}={a:.2f}" for (w, c), a in sorted(acc.items()))
    assert criterion(1, "window/chunk capacity grid", ok, f"{cells}; {elapsed:.1f}s")


def test_02_unsmooth_memory_bound(criterion):
    rng = random.Random(2)
    violations = steps = 0
    for run in range(100):
        c = rng.choice([256, 512, 1024])
        if rng.random() < 0.75:
            item = gen_niah(NiahSpec(rng.randrange(2000, 12000), rng.randint(1, 4), seed=run))
            program = TaskProgram.NEEDLE_RETRIEVAL
        else:
            item = gen_passage_count(PassageCountSpec(rng.randint(2, 8), rng.randint(0, 4), seed=run))
            program = TaskProgram.PASSAGE_COUNT
        backend = (AttentionSim(program=program) if rng.random() < 0.3
                   else SlidingWindowSim(rng.choice([c, 2 * c, 4 * c]), program=program))
        trace = run_unsmooth(backend, chunk_text(item.context, c), item.query,
                             early_stop=rng.random() < 0.5, chunk_tokens=c)
        k = trace.scaffold_tokens
        for step in trace.steps:
            steps += 1
            violations += step.mr_tokens > 3 * c + k
    assert criterion(2, "per-step memory bound 3c+K", violations == 0,
                     f"{violations} violations over {steps} steps in 100 runs")


def _valid_g(rng: random.Random) -> int:
    while True:
        g = rng.randrange(48, 257)
        if g % 3 != 2:  # representable as int(1.5 n)
            return g


def _sr_trace(n: int, words: int, g: int, cost: SimCost, seed: int):
    context, query = linear_context(n, words, random.Random(seed))
    c = 3 * words // 2
    chunks = chunk_text(context, c)
    assert len(chunks) == n and all(ch.est_tokens == c for ch in chunks)
    backend = SlidingWindowSim(n * c + 8192, cost=cost, decode_tokens=g)
    return run_smooth(backend, chunks, query, chunk_tokens=c), c


def test_03_time_formula_matches_simulation(criterion):
    rng = random.Random(3)
    worst = 0.0
    for i in range(20):
        words = 2 * rng.randrange(40, 400)
        n = rng.randrange(2, 12)
        g = _valid_g(rng)
        cost = SimCost(p0=rng.uniform(1e-6, 1e-3), p1=0.0, d_mult=rng.uniform(1, 20), free_tags={"scaffold"})
        trace, c = _sr_trace(n, words, g, cost, seed=i)
        assert trace.chunks_read == n and len(trace.steps) == n
        params = CostParams.from_sim(cost, g=g, c=c, l=n * c)
        worst = max(worst, validate_against_trace(trace, params))
    identity = 0.0
    for _ in range(1000):
        n, c = rng.randrange(1, 500), rng.randrange(1, 8192)
        g, beta, p_r = rng.uniform(0, 512), rng.uniform(0, 50), rng.uniform(1e-7, 1e-2)
        lhs = time_recurrent_sr(CostParams(p_r=p_r, beta=beta, g=g, c=c, l=n * c))
        rhs = n * c * p_r + n * g * beta * p_r
        identity = max(identity, abs(lhs - rhs) / rhs)
    ok = worst <= 1e-9 and identity <= 1e-12
    assert criterion(3, "time formula vs simulated clock", ok,
                     f"max trace error {worst:.2e}, max identity error {identity:.2e}")


def test_04_linear_vs_quadratic_scaling(criterion):
    cost = SimCost(p0=1e-4, p1=0.0, d_mult=10.0, free_tags={"scaffold"})
    words, g = 1024, 96  # c = 1536
    ratios = {}
    for l in (8192, 16384, 32768):
        # l and 2l rounded to whole chunks of the same size
        n = round(l / 1536)
        t1, _ = _sr_trace(n, words, g, cost, seed=l)
        t2, _ = _sr_trace(2 * n, words, g, cost, seed=l + 1)
        ratios[l] = t2.virtual_time_seconds / t1.virtual_time_seconds
    attn_cost = SimCost(p0=1e-7, p1=1e-8, d_mult=10.0)
    rng = random.Random(4)
    times = {}
    for l in (32768, 65536):
        backend = AttentionSim(program=TaskProgram.NEEDLE_RETRIEVAL, cost=attn_cost)
        times[l] = run_one_step(backend, plain_context(l, rng), "What are the magic words for: quartz?") \
            .virtual_time_seconds
    quad = times[65536] / times[32768]
    ok = all(abs(r - 2) <= 1e-6 for r in ratios.values()) and 3.5 <= quad <= 4.0
    detail = ", ".join(f"SR T(2l)/T(l) at {l}={r:.9f}" for l, r in ratios.items())
    assert criterion(4, "linear SR vs quadratic One-Step", ok, f"{detail}; One-Step ratio {quad:.4f}")


def test_05_offset_capacity_one_step(criterion):
    acc = {}
    for offset in (2048, 5120):
        for l in (8192, 32768, 131072, 262144):
            scores = []
            for seed in range(3):
                item = gen_niah(NiahSpec(l, 1, (offset,), seed=seed))
                trace = run_one_step(SlidingWindowSim(4096), item.context, item.query)
                scores.append(needle_em(trace.answer, item.gold))
            acc[(offset, l)] = statistics.mean(scores)
    ok = all(acc[(2048, l)] == 1.0 for l in (8192, 32768, 131072, 262144)) and \
        all(acc[(5120, l)] == 0.0 for l in (8192, 32768, 131072, 262144))
    detail = "; ".join(f"offset {o} l={l}: {a:.2f}" for (o, l), a in sorted(acc.items()))
    assert criterion(5, "needle offset vs window (One-Step)", ok, detail)


def test_06_early_stop_cost_and_accuracy(criterion):
    items = niah_suite(100, 16384, num_needles=1, seed=6000)
    acc = {True: [], False: []}
    tokens = {True: [], False: []}
    for item in items:
        for early in (True, False):
            trace = run_smooth(SlidingWindowSim(4096), chunk_text(item.context, 2048), item.query,
                               early_stop=early, chunk_tokens=2048)
            acc[early].append(needle_em(trace.answer, item.gold))
            tokens[early].append(trace.total_tokens)
    delta = statistics.mean(acc[True]) - statistics.mean(acc[False])
    ratio = statistics.mean(a / b for a, b in zip(tokens[True], tokens[False]))
    ok = delta >= -0.01 and ratio <= 0.75
    assert criterion(6, "early stopping", ok,
                     f"accuracy delta {delta:+.3f}, mean token ratio {ratio:.3f}")


_UNICODE_WORDS = ("alpha", "Straße", "naïve", "東京", "данные", "λόγος", "😀ok", "co-op", "x", "über")


def _random_text(rng: random.Random) -> str:
    parts = []
    for _ in range(rng.randrange(1, 80)):
        parts.append(rng.choice(_UNICODE_WORDS))
        r = rng.random()
        if r < 0.6:
            parts.append(rng.choice(DEFAULT_DELIMITERS))
        elif r < 0.7:
            parts.append(rng.choice(["\t", "　", " "]))  # whitespace that is not a delimiter
        elif r < 0.8:
            parts.append("")  # glued words
    return "".join(parts) or "x"


def _delimiter_free_run(text: str) -> bool:
    core = text.rstrip("".join(set("".join(DEFAULT_DELIMITERS))))
    return not any(d in core for d in DEFAULT_DELIMITERS)


def test_07_chunker_properties(criterion):
    rng = random.Random(7)
    start = time.perf_counter()
    roundtrip = bound = determinism = 0
    for _ in range(1000):
        text = _random_text(rng)
        cfg = ChunkingConfig(max_chunk_tokens=rng.randint(1, 40))
        chunks = split_hierarchical(text, cfg)
        roundtrip += "".join(c.text for c in chunks) != text
        bound += sum(c.est_tokens > cfg.max_chunk_tokens and not _delimiter_free_run(c.text) for c in chunks)
        determinism += [c.to_dict() for c in split_hierarchical(text, cfg)] != [c.to_dict() for c in chunks]
    elapsed = time.perf_counter() - start
    ok = roundtrip == bound == determinism == 0 and elapsed < 10
    assert criterion(7, "chunker properties", ok,
                     f"round-trip failures {roundtrip}, bound violations {bound}, "
                     f"non-deterministic {determinism}; {elapsed:.2f}s")


_FIELD_ALPHABET = list("abcXYZ 019:<>-_.,\t") + ["\n", "é", "語", "TARGET", "CLUES:", "STOP", "ANSWER", " "]


def random_summary(rng: random.Random) -> ContextualSummary:
    while True:
        def text(multiline=True):
            s = "".join(rng.choice(_FIELD_ALPHABET) for _ in range(rng.randrange(0, 30)))
            return s if multiline else s.replace("\n", " ")

        stop = rng.random() < 0.5
        s = ContextualSummary(text(False), text(), text(), Decision.STOP if stop else Decision.CONTINUE,
                              text() if stop else None)
        try:
            s.validate()
        except ValueError:
            continue
        return s


def test_08_protocol_round_trip(criterion):
    rng = random.Random(8)
    failures = sum(parse(render(s)) != s for s in (random_summary(rng) for _ in range(1000)))
    good = render(ContextualSummary("find x", "a=1", "read", Decision.STOP, "1"))
    cases = {
        NoDecision: good.replace("<STOP>", ""),
        MissingAnswer: render(ContextualSummary("find x", "a=1", "read")).replace("<CONTINUE>", "<STOP>"),
        MalformedSummary: good.replace("CLUES:", "CLEWS:"),
    }
    raised = {}
    for err, text in cases.items():
        try:
            parse(text)
            raised[err.__name__] = False
        except err:
            raised[err.__name__] = True
    ok = failures == 0 and all(raised.values())
    assert criterion(8, "summary round-trip and malformed inputs", ok,
                     f"{failures} round-trip failures of 1000; errors raised {raised}")


def test_09_metric_oracles(criterion):
    rng = random.Random(9)
    vocab = ["a", "the", "cat", "sat", "mat", "dog", "ran"]
    rouge_bad = edit_bad = 0
    for _ in range(200):
        x = " ".join(rng.choice(vocab) for _ in range(rng.randrange(0, 13)))
        y = " ".join(rng.choice(vocab) for _ in range(rng.randrange(0, 21)))
        xs, ys = normalize(x, False).split(), normalize(y, False).split()
        lcs = lcs_brute(xs, ys)
        if not xs and not ys:
            expect = 1.0
        elif not xs or not ys or lcs == 0:
            expect = 0.0
        else:
            expect = 2 * lcs / (len(xs) + len(ys))
        rouge_bad += rouge_l(x, y) != expect
        a = "".join(rng.choice("abcde ") for _ in range(rng.randrange(0, 31)))
        b = "".join(rng.choice("abcde ") for _ in range(rng.randrange(0, 31)))
        d = levenshtein_oracle(a, b)
        expect_sim = 1.0 if not a and not b else 1 - d / max(len(a), len(b))
        edit_bad += edit_similarity(a, b) != expect_sim
    f1 = token_f1("a b c", "a b d")
    ok = rouge_bad == 0 and edit_bad == 0 and f1 == 2 / 3
    assert criterion(9, "metric oracles", ok,
                     f"rouge mismatches {rouge_bad}, edit mismatches {edit_bad}, f1('a b c','a b d')={f1!r}")


def test_10_fixed_ratio_u_shape(criterion):
    items = niah_suite(10, 32768, num_needles=1, seed=10_000)
    result = sweep(SweepConfig(chunks=[512, 1024, 2048, 4096, 8192], ratio_mode=0.5), items)
    times = result["virtual_time"]
    best = min(range(len(times)), key=times.__getitem__)
    ok = 0 < best < len(times) - 1
    detail = ", ".join(f"C{c}={t:.2f}s" for c, t in zip(result["chunks"], times))
    assert criterion(10, "fixed C:W ratio U-shape", ok, f"{detail}; minimum at C={result['chunks'][best]}")


class CorruptingTeacher(RuleTeacher):
    """Rule teacher whose final answer is replaced for chosen sources."""

    def __init__(self, corrupt: set[str], **kw):
        super().__init__(**kw)
        self.corrupt = corrupt

    def read(self, raw, chunks, early_stop):
        run = super().read(raw, chunks, early_stop)
        if raw.id not in self.corrupt:
            return run
        wrong = "999" if raw.task.value == "passage_count" else "00000000-0000-4000-8000-000000000000"
        if run.final is not None:
            return dataclasses.replace(run, final=dataclasses.replace(run.final, final_answer=wrong))
        last = dataclasses.replace(run.summaries[-1], final_answer=wrong)
        return TeacherRun(run.chunks, run.summaries[:-1] + [last], None, run.chunks_total)


def _raw_items(n: int) -> list[RawItem]:
    raws = []
    for i in range(n):
        if i % 4 == 3:
            it = gen_passage_count(PassageCountSpec(3 + i % 5, i % 3, seed=i))
        else:
            it = gen_niah(NiahSpec(1500 + 300 * i, 1 + i % 3, seed=i))
        raws.append(RawItem(it.query, ", ".join(it.gold), it.context, it.task, f"src-{i:02d}"))
    return raws


def test_11_dataset_pipeline(criterion, tmp_path):
    raws = _raw_items(20)
    raw_path = tmp_path / "raw.jsonl"
    raw_path.write_text("".join(json.dumps(dataclasses.asdict(r) | {"task": r.task.value}) + "\n" for r in raws))
    out = tmp_path / "ds"
    code = main(["--seed", "11", "dataset", "build", "--raw", str(raw_path), "--teacher", "rule",
                 "--formats", "sr,ur,os", "--out", str(out)])
    variants = {f: [json.loads(line) for line in (out / f"{f}.jsonl").read_text().splitlines()]
                for f in ("sr", "ur", "os")}
    parse_failures = 0
    for item in variants["sr"]:
        for turn in item["turns"]:
            if turn["role"] == "assistant":
                try:
                    parse(turn["text"])
                except Exception:
                    parse_failures += 1
    contexts_match = all(
        variants["sr"][k]["context"].encode() == variants["ur"][k]["context"].encode()
        == variants["os"][k]["context"].encode()
        and variants["sr"][k]["source_id"] == variants["ur"][k]["source_id"] == variants["os"][k]["source_id"]
        for k in range(len(raws))
    )

    corrupt = {"src-01", "src-03", "src-08", "src-12", "src-19"}
    result = build_dataset(raws, CorruptingTeacher(corrupt, seed=11))
    dropped = {fmt: {i.source_id for i in items if not i.kept} for fmt, items in result.items.items()}
    drops_exact = all(d == corrupt for d in dropped.values()) and len(dropped) == len(Format)
    ok = code == 0 and parse_failures == 0 and contexts_match and drops_exact
    assert criterion(11, "dataset pipeline", ok,
                     f"exit {code}, SR parse failures {parse_failures}, contexts identical {contexts_match}, "
                     f"dropped {sorted(dropped.get(Format.SR, []))}")
