import json
import re
import shutil
import subprocess
import sys

import pytest

from prerank import cli

CFG = {"profile": "toy", "stage_steps": {"mlm": 2, "click": 2, "fine": 2}, "batch": 2, "list_size": 4,
       "eval_every": 2, "fusion": False,
       "encoder": {"layers": 1, "hidden": 16, "heads": 2, "ffn": 32, "max_len": 32}}


def run(*argv):
    return subprocess.run([sys.executable, "-m", "prerank.cli", *map(str, argv)],
                          capture_output=True, text=True)


def error_line(proc):
    lines = proc.stderr.strip().splitlines()
    assert len(lines) == 1, proc.stderr
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["make-synthetic", "--queries", "30", "--docs", "6", "--eval-queries", "8",
                     "--train-queries", "8", "--seed", "1", "--out", str(d / "syn")]) == 0
    (d / "cfg.json").write_text(json.dumps(CFG))
    assert cli.main(["simulate", "--labels", str(d / "syn/click.jsonl"), "--vocab", str(d / "syn/vocab.json"),
                     "--sessions", "2", "--depth", "6", "--seed", "7", "--out", str(d / "sess.jsonl")]) == 0
    return d


def test_module_entry_point_runs():
    proc = run("--version")
    assert proc.returncode == 0 and "prerank" in proc.stdout


def test_help_documents_every_flag_and_exit_codes():
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if a.choices and isinstance(a.choices, dict))
    assert set(sub.choices) >= {"build-vocab", "extract-features", "simulate", "pretrain", "finetune",
                                "evaluate", "regime", "ablate"}
    for name, p in sub.choices.items():
        text = p.format_help()
        for code in ("0", "2", "3", "4"):
            assert re.search(rf"^\s+{code}\s+\w", text, re.M), (name, code)
        for action in p._actions:
            assert action.help, (name, action.option_strings)
            for opt in action.option_strings:
                assert re.search(rf"(?<![\w-]){re.escape(opt)}(?![\w-])", text), (name, opt)
    # nothing accepted that the help does not list
    assert run("simulate", "--labels", "x", "--out", "y", "--undocumented").returncode == 2


def test_simulate_writes_sessions_and_manifest(work):
    out = work / "sess.jsonl"
    lines = out.read_text().splitlines()
    assert len(lines) == 2 * 14
    assert all("clicks" in json.loads(ln) or "docs" in json.loads(ln) for ln in lines)
    man = json.loads((work / "sess.jsonl.manifest.json").read_text())
    assert man["command"] == "simulate" and man["seed"] == 7
    assert set(man) >= {"config", "inputs", "version", "outputs", "wall_clock_seconds"}
    assert all(len(v) == 64 for v in man["inputs"].values())
    assert man["outputs"] == [str(out)]


def test_simulate_is_idempotent(work):
    again = work / "sess2.jsonl"
    assert cli.main(["simulate", "--labels", str(work / "syn/click.jsonl"), "--vocab", str(work / "syn/vocab.json"),
                     "--sessions", "2", "--depth", "6", "--seed", "7", "--out", str(again)]) == 0
    assert cli.file_digest(again) == cli.file_digest(work / "sess.jsonl")


def test_regime_curve_digest_is_reproducible(work):
    args = ["regime", "--config", work / "cfg.json", "--seed", "3", "--which", "click_then_label",
            "--vocab", work / "syn/vocab.json", "--labels", work / "syn/train.jsonl",
            "--eval-labels", work / "syn/eval.jsonl", "--sessions", work / "sess.jsonl"]
    digests = []
    for name in ("r1", "r2"):
        assert cli.main([str(a) for a in args] + ["--out", str(work / name)]) == 0
        digests.append((cli.file_digest(work / name / "curve.csv"), cli.file_digest(work / name / "trace.csv")))
    assert digests[0] == digests[1]


def test_pretrain_finetune_evaluate_chain(work, capsys):
    assert cli.main(["pretrain", "--config", str(work / "cfg.json"), "--vocab", str(work / "syn/vocab.json"),
                     "--sessions", str(work / "sess.jsonl"), "--out", str(work / "pre")]) == 0
    assert cli.main(["finetune", "--config", str(work / "cfg.json"), "--labels", str(work / "syn/train.jsonl"),
                     "--init", str(work / "pre/checkpoint"), "--out", str(work / "fine")]) == 0
    assert cli.main(["evaluate", "--checkpoint", str(work / "fine/checkpoint"),
                     "--labels", str(work / "syn/eval.jsonl"), "--out", str(work / "ev")]) == 0
    capsys.readouterr()
    assert cli.main(["evaluate", "--run", str(work / "ev/run.trec"), "--qrels", str(work / "syn/eval.jsonl"),
                     "--k", "10"]) == 0
    text = capsys.readouterr().out
    for m in ("P@10", "NDCG@10", "MAP", "MRR@10", "Recall@10"):
        assert m in text
    man = json.loads((work / "fine/run_manifest.json").read_text())
    assert man["command"] == "finetune" and str(work / "pre/checkpoint") in man["inputs"]


def test_exit_codes(work):
    assert error_line(p := run("nosuch"))["exit_code"] == 2 and p.returncode == 2
    p = run("simulate", "--labels", work / "syn/click.jsonl", "--out", work / "x.jsonl", "--bogus")
    assert p.returncode == 2 and error_line(p)["error"] == "usage"
    p = run("simulate", "--labels", work / "missing.jsonl", "--out", work / "x.jsonl")
    assert p.returncode == 3 and error_line(p)["error"] == "data"
    bad = work / "bad.jsonl"
    bad.write_text("{not json\n")
    p = run("simulate", "--labels", bad, "--vocab", work / "syn/vocab.json", "--out", work / "x.jsonl")
    assert p.returncode == 3
    (work / "badcfg.json").write_text(json.dumps({"profile": "toy", "batch": 0}))
    p = run("finetune", "--config", work / "badcfg.json", "--labels", work / "syn/train.jsonl",
            "--vocab", work / "syn/vocab.json", "--out", work / "z")
    assert p.returncode == 4 and error_line(p)["error"] == "config"


def test_schema_version_mismatch_is_config_error(work):
    src = work / "pre_schema"
    assert cli.main(["pretrain", "--config", str(work / "cfg.json"), "--vocab", str(work / "syn/vocab.json"),
                     "--sessions", str(work / "sess.jsonl"), "--out", str(src)]) == 0
    src = src / "checkpoint"
    dst = work / "tampered"
    shutil.copytree(src, dst, dirs_exist_ok=True)
    man = json.loads((dst / "manifest.json").read_text())
    man["schema_version"] = 999
    (dst / "manifest.json").write_text(json.dumps(man))
    p = run("finetune", "--config", work / "cfg.json", "--labels", work / "syn/train.jsonl",
            "--init", dst, "--out", work / "z2")
    assert p.returncode == 4, p.stderr
