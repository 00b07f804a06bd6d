import json

import pytest

from smoothread.cli import main
from smoothread.errors import ConfigError, EmptyReport, InvalidOffset, IoError


def _jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


@pytest.fixture
def suite(tmp_path):
    path = tmp_path / "items.jsonl"
    assert main(["gen", "niah", "--n", "2", "--tokens", "3000", "--seed", "5", "--out", str(path)]) == 0
    return path


def test_gen_is_seeded(suite, tmp_path):
    again = tmp_path / "again.jsonl"
    main(["gen", "niah", "--n", "2", "--tokens", "3000", "--seed", "5", "--out", str(again)])
    assert suite.read_bytes() == again.read_bytes()
    rows = _jsonl(suite)
    assert len(rows) == 2 and rows[0]["meta"]["seed"] == 5


def test_gen_bad_offset_exit_code(tmp_path, capsys):
    code = main(["gen", "niah", "--tokens", "1000", "--offset-from-end", "5000", "--out", str(tmp_path / "x")])
    assert code == InvalidOffset.exit_code == 2


def test_chunk(tmp_path, capsys):
    text = tmp_path / "doc.txt"
    text.write_text("\n\n".join(" ".join(["word"] * 100) for _ in range(4)))
    assert main(["chunk", str(text), "--chunk-tokens", "150"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["seed"] == 0 and out["chunk_tokens"] == 150 and len(out["chunks"]) == 4
    assert main(["chunk", str(text), "--preset", "niah-rwkv", "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("# seed=0\n")
    assert main(["chunk", str(tmp_path / "missing.txt")]) == IoError.exit_code
    assert main(["chunk", str(text), "--preset", "nope"]) == ConfigError.exit_code


def test_run_eval_report(suite, tmp_path, capsys):
    run_out = tmp_path / "run.jsonl"
    assert main(["run", "--items", str(suite), "--window", "4096", "--seed", "9", "--out", str(run_out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary == {"seed": 9, "items": 2, "score": 100.0}
    lines = _jsonl(run_out)
    assert lines[0]["header"] and lines[0]["seed"] == 9 and len(lines) == 3

    out_dir = tmp_path / "eval"
    out_dir.mkdir()
    assert main(["eval", "--items", str(suite), "--answers", str(run_out), "--out", str(out_dir)]) == 0
    ev = json.loads((out_dir / "eval.json").read_text())
    assert ev["aggregate"] == 100.0 and ev["seed"] == 0
    assert (out_dir / "eval.csv").read_text().startswith("# seed=0\nid,task,metric,score\n")

    assert main(["report", "--traces", str(run_out), "--seed", "9"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["seed"] == 9 and rep["strategies"]["smooth"]["n"] == 2


def test_eval_missing_answer(suite, tmp_path):
    answers = tmp_path / "answers.jsonl"
    answers.write_text(json.dumps({"id": "nope", "answer": "x"}) + "\n")
    assert main(["eval", "--items", str(suite), "--answers", str(answers)]) == ConfigError.exit_code


def test_report_empty(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["report", "--traces", str(empty)]) == EmptyReport.exit_code


def test_sweep(suite, tmp_path):
    out = tmp_path / "sweep.json"
    assert main(["sweep", "--items", str(suite), "--windows", "512", "4096", "--chunks", "256",
                 "--seed", "4", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["seed"] == 4 and res["windows"] == [512, 4096] and len(res["accuracy"]) == 2
    assert main(["sweep", "--items", str(suite), "--windows", "512", "--chunks", "256",
                 "--ratio", "0.5"]) == ConfigError.exit_code


def test_cost(tmp_path, capsys):
    assert main(["cost", "--quad-a", "1e-9", "--quad-b", "1e-4", "--lengths", "1000", "2000"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["rows"]) == 2 and out["crossover_length"] > 0
    assert main(["cost", "--c", "0"]) == ConfigError.exit_code


def test_dataset_build(tmp_path, capsys):
    raw = tmp_path / "raw.jsonl"
    rows = [{"query": "What are the magic words for: k?", "answer": "v",
             "context": "Some text here.\n\nThe special magic word for k is: v.", "task": "niah", "id": "a"}]
    raw.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    out = tmp_path / "ds"
    assert main(["dataset", "build", "--raw", str(raw), "--seed", "2", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 2
    assert {p.name for p in out.iterdir()} == {"sr.jsonl", "ur.jsonl", "os.jsonl", "report.json"}
