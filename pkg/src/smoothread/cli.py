"""Command-line entry point: ``smoothread <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .backends import make_backend
from .backends.remote import RemoteBackendConfig
from .backends.sim import SimCost
from .benchgen import (
    EvalItem,
    NiahSpec,
    PassageCountSpec,
    gen_niah,
    gen_passage_count,
    load_jsonl,
    write_jsonl,
)
from .chunker import ChunkingConfig, split_hierarchical
from .cost_model import CostParams, cost_table, crossover_length
from .dataset_builder import RemoteTeacher, RuleTeacher, build_dataset, load_raw_jsonl, write_dataset
from .engine import InferenceTrace, Strategy
from .errors import ConfigError, IoError, SmoothReadError
from .experiments import SweepConfig, defaults, program_for, report, report_rows, run_item, sweep, to_csv
from .metrics import score_item, score_suite

logger = logging.getLogger("smoothread")


def _emit(args, payload: dict, rows: list[dict] | None = None, name: str = "result") -> None:
    """Write JSON (default) or CSV to --out, or stdout."""
    payload = {"seed": args.seed, **payload}
    if args.format == "csv":
        text = to_csv(rows if rows is not None else [payload], seed=args.seed)
    else:
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        if out.is_dir():
            out = out / f"{name}.{args.format}"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _read_text(path: str) -> str:
    try:
        return sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _items(path: str) -> list[EvalItem]:
    items, errors = load_jsonl(path)
    for e in errors:
        logger.warning("%s:%d skipped: %s", path, e.line, e.error)
    return items


def _chunk_tokens(args) -> int:
    if getattr(args, "chunk_tokens", None):
        return args.chunk_tokens
    return defaults(getattr(args, "preset", None))["chunk_tokens"]


def _sim_cost(args) -> SimCost:
    return SimCost(p0=args.p0, p1=args.p1, d_mult=args.d_mult)


def cmd_chunk(args) -> None:
    chunks = split_hierarchical(_read_text(args.input), ChunkingConfig(max_chunk_tokens=_chunk_tokens(args)))
    rows = [c.to_dict() for c in chunks]
    _emit(args, {"chunk_tokens": _chunk_tokens(args), "chunks": rows}, rows, "chunks")


def cmd_gen(args) -> None:
    if args.kind == "niah":
        offsets = args.offset_from_end or None
        needles = len(offsets) if offsets else args.needles
        items = [gen_niah(NiahSpec(args.tokens, needles, offsets, args.haystack, args.seed + i))
                 for i in range(args.n)]
    else:
        items = [gen_passage_count(PassageCountSpec(args.unique, args.duplicates, args.seed + i))
                 for i in range(args.n)]
    if args.out:
        write_jsonl(items, args.out)
    else:
        for item in items:
            sys.stdout.write(json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


def _backend(args, item: EvalItem):
    if args.backend == "remote":
        return make_backend("remote")
    return make_backend(args.backend, args.window, program=program_for(item.task), cost=_sim_cost(args))


def cmd_run(args) -> None:
    items = _items(args.items)
    lines, scores = [], []
    for item in items:
        trace = run_item(item, _backend(args, item), args.strategy, _chunk_tokens(args), args.early_stop)
        score = score_item(item, trace.answer).value
        scores.append(score)
        lines.append({"id": item.id, "task": item.task.value, "answer": trace.answer, "score": score,
                      "trace": trace.to_dict()})
    summary = {"items": len(items), "score": score_suite(scores) if scores else None}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"seed": args.seed, "header": True, **summary}, sort_keys=True) + "\n")
            for line in lines:
                fh.write(json.dumps(line, sort_keys=True) + "\n")
        sys.stdout.write(json.dumps({"seed": args.seed, **summary}, sort_keys=True) + "\n")
    else:
        for line in lines:
            sys.stdout.write(json.dumps(line, sort_keys=True) + "\n")


def cmd_sweep(args) -> None:
    cfg = SweepConfig(windows=args.windows or [], chunks=args.chunks, ratio_mode=args.ratio,
                      strategy=args.strategy, early_stop=args.early_stop, seed=args.seed,
                      cost=_sim_cost(args), workers=args.workers)
    result = sweep(cfg, _items(args.items))
    _emit(args, result, result["cells"], "sweep")
    if args.svg:
        _plot_sweep(result, args.svg)


def cmd_dataset(args) -> None:
    raws = load_raw_jsonl(args.raw)
    if args.teacher == "remote":
        teacher = RemoteTeacher(RemoteBackendConfig.from_env())
    else:
        teacher = RuleTeacher(seed=args.seed)
    result = build_dataset(raws, teacher, args.formats.split(","), early_stop=args.early_stop,
                           threshold=args.clean_threshold, max_workers=args.workers)
    result.report["seed"] = args.seed
    out = args.out or "dataset"
    write_dataset(result, out)
    sys.stdout.write(json.dumps(result.report, sort_keys=True) + "\n")


def cmd_eval(args) -> None:
    items = {i.id: i for i in _items(args.items)}
    answers = {}
    for no, line in enumerate(_read_text(args.answers).splitlines(), 1):
        if line.strip():
            obj = json.loads(line)
            if obj.get("header"):
                continue
            answers[str(obj["id"])] = obj["answer"]
    rows = []
    for item_id, item in items.items():
        if item_id not in answers:
            raise ConfigError(f"no answer for item {item_id!r}")
        r = score_item(item, answers[item_id])
        rows.append({"id": item_id, "task": item.task.value, "metric": r.name.value, "score": r.value})
    payload = {"items": rows, "aggregate": score_suite([r["score"] for r in rows])}
    _emit(args, payload, rows, "eval")
    if args.out and Path(args.out).is_dir():
        # both encodings when writing into a directory
        (Path(args.out) / "eval.csv").write_text(to_csv(rows, seed=args.seed), encoding="utf-8")
        (Path(args.out) / "eval.json").write_text(
            json.dumps({"seed": args.seed, **payload}, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _cost_params(args) -> CostParams:
    base = {}
    if args.params:
        try:
            base = json.loads(_read_text(args.params))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad params file: {exc}") from exc
    for name in ("p_r", "beta", "g", "c", "quad_a", "quad_b"):
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    try:
        return CostParams(**base).validate()
    except TypeError as exc:
        raise ConfigError(f"bad cost parameters: {exc}") from exc


def cmd_cost(args) -> None:
    params = _cost_params(args)
    rows = cost_table(params, args.lengths)
    payload = {"params": {k: v for k, v in params.__dict__.items() if k != "l"}, "rows": rows,
               "crossover_length": crossover_length(params)}
    _emit(args, payload, rows, "cost")
    if args.svg:
        _plot_cost(rows, payload["crossover_length"], args.svg)


def cmd_report(args) -> None:
    traces, scores = [], []
    for line in _read_text(args.traces).splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj.get("header"):
            continue
        traces.append(InferenceTrace.from_dict(obj["trace"]))
        scores.append(float(obj.get("score", 0.0)))
    rep = report(traces, scores, seed=args.seed)
    _emit(args, rep, report_rows(rep), "report")


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    return plt


def _plot_cost(rows, crossover, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ls = [r["l"] for r in rows]
    ax.plot(ls, [r["sr_seconds"] for r in rows], marker="o", label="Smooth Reading (recurrent)")
    ax.plot(ls, [r["os_seconds"] for r in rows], marker="s", label="One-Step (self-attention)")
    if crossover is not None:
        ax.axvline(crossover, color="grey", linestyle=":", label=f"crossover {crossover:.0f}")
    ax.set_xlabel("context tokens")
    ax.set_ylabel("seconds")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _plot_sweep(result, path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if "ratio" in result:
        ax.plot(result["chunks"], result["virtual_time"], marker="o")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("chunk tokens (C:W fixed)")
        ax.set_ylabel("virtual seconds")
    else:
        im = ax.imshow(result["accuracy"], vmin=0, vmax=1, cmap="viridis")
        ax.set_xticks(range(len(result["chunks"])), result["chunks"])
        ax.set_yticks(range(len(result["windows"])), result["windows"])
        ax.set_xlabel("chunk tokens")
        ax.set_ylabel("window tokens")
        fig.colorbar(im, ax=ax, label="accuracy")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _add_sim_flags(p) -> None:
    p.add_argument("--p0", type=float, default=SimCost.p0)
    p.add_argument("--p1", type=float, default=SimCost.p1)
    p.add_argument("--d-mult", type=float, default=SimCost.d_mult)


def build_parser() -> argparse.ArgumentParser:
    def global_flags(defaults: bool) -> argparse.ArgumentParser:
        # subcommands repeat the flags without defaults so values given before the subcommand survive
        flags = argparse.ArgumentParser(add_help=False)
        d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
        flags.add_argument("--seed", type=int, default=d(0))
        flags.add_argument("--out", default=d(None))
        flags.add_argument("--format", choices=["json", "csv"], default=d("json"))
        flags.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return flags

    common = global_flags(False)
    parser = argparse.ArgumentParser(prog="smoothread", parents=[global_flags(True)], description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("chunk", parents=[common], help="split a text file into chunks")
    p.add_argument("input", help="text file, or - for stdin")
    p.add_argument("--chunk-tokens", type=int)
    p.add_argument("--preset")
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic items")
    p.add_argument("kind", choices=["niah", "passage-count"])
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--tokens", type=int, default=16384)
    p.add_argument("--needles", type=int, default=1)
    p.add_argument("--offset-from-end", type=int, action="append")
    p.add_argument("--haystack")
    p.add_argument("--unique", type=int, default=5)
    p.add_argument("--duplicates", type=int, default=0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("run", parents=[common], help="run a strategy over an item suite")
    p.add_argument("--items", required=True)
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.SMOOTH.value)
    p.add_argument("--backend", choices=["sim-swa", "sim-attn", "remote"], default="sim-swa")
    p.add_argument("--window", type=int, default=4096)
    p.add_argument("--chunk-tokens", type=int)
    p.add_argument("--preset")
    p.add_argument("--early-stop", action=argparse.BooleanOptionalAction, default=True)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="window x chunk grid on the sliding-window simulator")
    p.add_argument("--items", required=True)
    p.add_argument("--windows", type=int, nargs="*")
    p.add_argument("--chunks", type=int, nargs="+", required=True)
    p.add_argument("--ratio", type=float, help="fixed C/W ratio, e.g. 0.5 for C:W = 1:2")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.SMOOTH.value)
    p.add_argument("--early-stop", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--svg")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("dataset", parents=[common], help="SFT dataset construction")
    dsub = p.add_subparsers(dest="action", required=True)
    b = dsub.add_parser("build", parents=[common])
    b.add_argument("--raw", required=True)
    b.add_argument("--teacher", choices=["rule", "remote"], default="rule")
    b.add_argument("--formats", default="sr,ur,os")
    b.add_argument("--early-stop", action=argparse.BooleanOptionalAction, default=True)
    b.add_argument("--clean-threshold", type=float)
    b.add_argument("--workers", type=int, default=4)
    b.set_defaults(func=cmd_dataset)

    p = sub.add_parser("eval", parents=[common], help="score answers against items")
    p.add_argument("--items", required=True)
    p.add_argument("--answers", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cost", parents=[common], help="analytic time model")
    p.add_argument("--params", help="JSON file with CostParams fields")
    for name in ("p_r", "beta", "g", "c", "quad_a", "quad_b"):
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    p.add_argument("--lengths", type=float, nargs="+", default=[8192, 16384, 32768, 65536, 131072])
    p.add_argument("--svg")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("report", parents=[common], help="aggregate run output")
    p.add_argument("--traces", required=True, help="JSONL written by `run --out`")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except SmoothReadError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except json.JSONDecodeError as exc:
        logger.error("invalid JSON: %s", exc)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
