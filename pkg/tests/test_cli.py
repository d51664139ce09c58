import csv
import json
import logging

import pytest

from main import cli_main
from run_sweep import ACTIVE_VARIANTS

QUIET = ["--log-level", "WARNING"]
SMALL_DIMS = ["--dims", "custom", "--d", "16", "--h", "2", "--layers", "3", "--max-len", "32", "--vocab", "128"]


@pytest.fixture(autouse=True)
def _workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    # cli_main rebinds the root logger to the captured stdout of this test
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def corpus_path(tmp_path):
    path = tmp_path / "corpus.jsonl"
    assert cli_main([*QUIET, "synth", "--out", str(path), "--count", "10", "--seed", "3", *SMALL_DIMS]) == 0
    return str(path)


def test_crossover(capsys):
    assert cli_main([*QUIET, "crossover", "--d", "768", "--h", "12"]) == 0
    assert capsys.readouterr().out.strip() == "1530"


def test_flops(capsys):
    assert cli_main([*QUIET, "flops", "--n", "512", "--d", "768", "--h", "12"]) == 0
    out = capsys.readouterr().out
    assert "MHA 3,222,798,336" in out
    assert "FFNN 4,831,444,992" in out
    assert "crossover 1530" in out
    assert "96,650,919,936" in out


def test_flops_effective_length(capsys):
    assert cli_main([*QUIET, "flops", "--n", "512", "--target", "96650919936"]) == 0
    assert "effective length 512" in capsys.readouterr().out


def test_run_reports_speedup_only_when_pruning(tmp_path, corpus_path):
    base = [*QUIET, "run", "--corpus", corpus_path, "--alpha", "0.5", *SMALL_DIMS]
    assert cli_main([*base, "--schedule", "none", "--report", str(tmp_path / "none.json")]) == 0
    assert cli_main([*base, "--schedule", "all", "--report", str(tmp_path / "all.json")]) == 0
    none = json.loads((tmp_path / "none.json").read_text(encoding="utf-8"))
    pruned = json.loads((tmp_path / "all.json").read_text(encoding="utf-8"))
    assert none["speedup_ratio"] == 1.0
    assert pruned["speedup_ratio"] > 1.0
    assert pruned["config"]["prune"] == {"alpha": 0.5, "schedule": "all", "merge": True}


def test_run_csv_without_merge(tmp_path, corpus_path):
    report = tmp_path / "r.csv"
    args = [*QUIET, "run", "--corpus", corpus_path, "--schedule", "odd", "--no-merge",
            "--format", "csv", "--report", str(report), *SMALL_DIMS]
    assert cli_main(args) == 0
    with open(report, newline="", encoding="utf-8") as f:
        assert len(list(csv.DictReader(f))) == 3 + 1


def test_run_with_saved_weights(tmp_path, corpus_path, capsys):
    base = str(tmp_path / "w")
    assert cli_main([*QUIET, "init-weights", "--out", base, "--seed", "5", *SMALL_DIMS]) == 0
    assert (tmp_path / "w.json").exists() and (tmp_path / "w.bin").exists()
    args = [*QUIET, "run", "--corpus", corpus_path, "--schedule", "all", "--weights", base,
            "--report", str(tmp_path / "r.json"), *SMALL_DIMS]
    assert cli_main(args) == 0
    assert "speedup x" in capsys.readouterr().out


def test_weights_with_other_dims_fail(tmp_path, corpus_path, capsys):
    base = str(tmp_path / "w")
    assert cli_main([*QUIET, "init-weights", "--out", base, *SMALL_DIMS]) == 0
    other = [d if d != "3" else "2" for d in SMALL_DIMS]
    args = [*QUIET, "run", "--corpus", corpus_path, "--weights", base,
            "--report", str(tmp_path / "r.json"), *other]
    assert cli_main(args) == 1
    assert "error:" in capsys.readouterr().err


def test_sweep(tmp_path, corpus_path):
    out = tmp_path / "sweep.csv"
    assert cli_main([*QUIET, "sweep", "--corpus", corpus_path, "--out", str(out), *SMALL_DIMS]) == 0
    with open(out, newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert [r["variant"] for r in rows] == list(ACTIVE_VARIANTS)
    assert float(rows[0]["speedup_ratio"]) == 1.0


def test_config_file_supplies_defaults(tmp_path, corpus_path):
    cfg = tmp_path / "alpine.json"
    cfg.write_text(json.dumps({
        "dims": {"d_mha": 16, "h": 2, "d_ffnn": 64, "layers": 3, "max_len": 32, "vocab_size": 128},
        "prune": {"alpha": 0.25, "schedule": "even"},
        "log_level": "WARNING",
    }), encoding="utf-8")
    assert cli_main(["run", "--corpus", corpus_path, "--report", "r.json"]) == 0
    report = json.loads((tmp_path / "r.json").read_text(encoding="utf-8"))
    assert report["config"]["prune"]["schedule"] == "even"
    assert report["config"]["prune"]["alpha"] == 0.25
    assert report["config"]["dims"]["layers"] == 3


def test_text_corpus(tmp_path):
    src = tmp_path / "src.txt"
    src.write_text("int main ( ) { }\nreturn 0 ;\n", encoding="utf-8")
    out = tmp_path / "t.jsonl"
    assert cli_main([*QUIET, "synth", "--out", str(out), "--text", str(src), *SMALL_DIMS]) == 0
    assert len(out.read_text(encoding="utf-8").splitlines()) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["crossover", "--bogus"],
        ["run", "--corpus", "c.jsonl"],
        ["run", "--report", "r.json", "--schedule", "sometimes", "--corpus", "c.jsonl"],
        [],
    ],
)
def test_usage_errors(argv, capsys):
    assert cli_main(argv) != 0
    assert "usage:" in capsys.readouterr().err


def test_missing_corpus(capsys):
    assert cli_main([*QUIET, "run", "--corpus", "absent.jsonl", "--report", "r.json", *SMALL_DIMS]) == 1
    assert "absent.jsonl" in capsys.readouterr().err


def test_missing_config(capsys):
    assert cli_main(["--config", "nope.json", "crossover"]) == 1
    assert "nope.json" in capsys.readouterr().err


def test_bad_custom_dims(capsys):
    assert cli_main([*QUIET, "init-weights", "--out", "w", "--dims", "custom", "--d", "10", "--h", "3"]) == 1
    assert "divisible" in capsys.readouterr().err


def test_corrupt_weights_manifest(tmp_path, corpus_path, capsys):
    base = tmp_path / "w"
    assert cli_main([*QUIET, "init-weights", "--out", str(base), *SMALL_DIMS]) == 0
    manifest = tmp_path / "w.json"
    meta = json.loads(manifest.read_text(encoding="utf-8"))
    del meta["dims"]
    manifest.write_text(json.dumps(meta), encoding="utf-8")
    args = [*QUIET, "run", "--corpus", corpus_path, "--weights", str(base),
            "--report", str(tmp_path / "r.json"), *SMALL_DIMS]
    assert cli_main(args) == 1
    assert "malformed manifest" in capsys.readouterr().err
