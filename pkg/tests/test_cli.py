import csv
import json
import sys

import pytest

from twinfalsify import cli

SMALL = []


@pytest.fixture(autouse=True)
def fixed_epoch(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    import os
    os.environ.setdefault("SOURCE_DATE_EPOCH", "1700000000")
    out = tmp_path_factory.mktemp("demo")
    assert cli.main(["demo", "--out-dir", str(out), "--seed", "3", *SMALL]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def snapshot(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


def test_synth_outputs_and_manifest(tmp_path):
    assert cli.main(["synth", "--out-dir", str(tmp_path), "--n-obs", "50", "--n-twin", "10", "--seed", "1"]) == 0
    for name in ("schema.json", "obs.jsonl", "twin.jsonl", "manifest.json"):
        assert (tmp_path / name).exists()
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["timestamp"] == "2023-11-14T22:13:20+00:00"
    assert set(manifest["outputs"]) >= {"obs.jsonl", "twin.jsonl", "schema.json"}
    assert len((tmp_path / "obs.jsonl").read_text().splitlines()) == 50


def test_synth_zero_records(tmp_path):
    assert cli.main(["synth", "--out-dir", str(tmp_path), "--n-obs", "0", "--n-twin", "0"]) == 0
    assert (tmp_path / "obs.jsonl").read_text() == "" and (tmp_path / "twin.jsonl").read_text() == ""


def test_synth_seed_changes_data_not_schema(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["synth", "--out-dir", str(a), "--n-obs", "20", "--no-twin", "--seed", "1"])
    cli.main(["synth", "--out-dir", str(b), "--n-obs", "20", "--no-twin", "--seed", "2"])
    assert (a / "schema.json").read_bytes() == (b / "schema.json").read_bytes()
    assert (a / "obs.jsonl").read_bytes() != (b / "obs.jsonl").read_bytes()


def test_gen_hypotheses_min_support_too_large(tmp_path):
    cli.main(["synth", "--out-dir", str(tmp_path), "--n-obs", "30", "--no-twin"])
    (tmp_path / "gen.json").write_text(json.dumps({"min_support": 31}))
    assert cli.main(["gen-hypotheses", "--schema", str(tmp_path / "schema.json"), "--obs", str(tmp_path / "obs.jsonl"),
                     "--config", str(tmp_path / "gen.json"), "--out-dir", str(tmp_path / "h")]) == 0
    assert json.loads((tmp_path / "h" / "hypotheses.json").read_text()) == []
    assert len(read_csv(tmp_path / "h" / "skip_log.csv")) > 0


def test_demo_pipeline_outputs(demo_dir):
    results = read_csv(demo_dir / "test" / "results.csv")
    assert results and set(results[0]) >= {"hypothesis_id", "p", "holm_reject", "gate_reason"}
    summary = json.loads((demo_dir / "test" / "summary.json").read_text())
    assert summary["manifest"] == "manifest.json"
    table = read_csv(demo_dir / "test" / "report_table.csv")
    assert len(table) == len({r["outcome_feature"] for r in results})


def test_correct_twin_demo_has_no_rejections(demo_dir):
    summary = json.loads((demo_dir / "test" / "summary.json").read_text())
    assert summary["total_rejections"] == 0


def test_biased_twin_demo_rejects_up(tmp_path):
    assert cli.main(["demo", "--out-dir", str(tmp_path), "--seed", "3", "--twin-mode", "shift:3", *SMALL]) == 0
    rejected = [r for r in read_csv(tmp_path / "test" / "results.csv") if r["holm_reject"] == "1"]
    assert rejected and all(r["direction"] == "up" and r["outcome_feature"] == "0" for r in rejected)
    diag = read_csv(tmp_path / "test" / "diagnostics.csv")
    assert {d["hypothesis_id"] for d in diag} == {r["hypothesis_id"] for r in rejected}


def test_gated_only_input(demo_dir, tmp_path):
    empty = tmp_path / "twin.jsonl"
    empty.write_text("")
    args = ["test", "--schema", str(demo_dir / "synth" / "schema.json"), "--obs", str(demo_dir / "hypotheses" / "obs_test.jsonl"),
            "--twin", str(empty), "--hypotheses", str(demo_dir / "hypotheses" / "hypotheses.json"), "--out-dir", str(tmp_path / "o")]
    assert cli.main(args) == 0
    rows = read_csv(tmp_path / "o" / "results.csv")
    assert rows and all(r["p"] == "1.0" and r["gate_reason"] for r in rows)


def test_report_neg_log10(tmp_path):
    res = tmp_path / "results.csv"
    res.write_text("hypothesis_id,outcome_feature,t,direction,n,n_hat,mu_lo,mu_up,mu_hat,p,holm_reject,gate_reason\n"
                   "a,0,1,lo,1,1,0,1,0,1.0,0,\nb,0,1,lo,1,1,0,1,0,1.0,0,\nc,0,1,lo,1,1,0,1,0,0.001,1,\n")
    assert cli.main(["report", "--results", str(res), "--out-dir", str(tmp_path)]) == 0
    dist = json.loads((tmp_path / "pvalue_summary.json").read_text())["per_outcome_direction"]
    assert dist[0]["neg_log10_p"] == pytest.approx([0.0, 0.0, 3.0])
    assert read_csv(tmp_path / "report_table.csv")[0]["rejections"] == "1"


def test_report_empty_results(tmp_path):
    res = tmp_path / "results.csv"
    res.write_text("")
    assert cli.main(["report", "--results", str(res), "--out-dir", str(tmp_path)]) == 0
    assert read_csv(tmp_path / "report_table.csv") == []


def test_sensitivity_command(demo_dir, tmp_path):
    base = ["--schema", str(demo_dir / "synth" / "schema.json"), "--obs", str(demo_dir / "hypotheses" / "obs_test.jsonl"),
            "--twin", str(demo_dir / "synth" / "twin.jsonl"), "--hypotheses", str(demo_dir / "hypotheses" / "hypotheses.json")]
    assert cli.main(["sensitivity", *base, "--deltas", "0,100", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "sensitivity.csv")
    assert [r["delta"] for r in rows] == ["0.0", "100.0"]
    assert rows[1]["rejections"] == "0"


def test_twin_cmd_path_equals_file_free_run(demo_dir, tmp_path):
    base = ["--schema", str(demo_dir / "synth" / "schema.json"), "--obs", str(demo_dir / "hypotheses" / "obs_test.jsonl"),
            "--hypotheses", str(demo_dir / "hypotheses" / "hypotheses.json"), "--seed", "2"]
    cmd = f"{sys.executable} -m twinfalsify.twinproto"
    assert cli.main(["test", *base, "--twin-cmd", cmd, "--n-twin", "200", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "results.csv")
    assert rows and sum(r["gate_reason"] == "" for r in rows) > 0


def test_exit_codes(demo_dir, tmp_path, monkeypatch):
    assert cli.main(["gen-hypotheses", "--schema", str(tmp_path / "missing.json"), "--obs", "x", "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"x0": [1, 2, 3], "steps": []}\n')
    assert cli.main(["gen-hypotheses", "--schema", str(demo_dir / "synth" / "schema.json"), "--obs", str(bad),
                     "--out-dir", str(tmp_path)]) == 2
    base = ["test", "--schema", str(demo_dir / "synth" / "schema.json"), "--obs", str(demo_dir / "hypotheses" / "obs_test.jsonl"),
            "--hypotheses", str(demo_dir / "hypotheses" / "hypotheses.json"), "--out-dir", str(tmp_path)]
    assert cli.main([*base, "--twin-cmd", f"{sys.executable} -c pass", "--n-twin", "2"]) == 3
    monkeypatch.setattr(cli, "run_family", lambda *a, **k: 1 / 0)
    assert cli.main([*base, "--twin", str(demo_dir / "synth" / "twin.jsonl")]) == 4


def test_every_command_is_byte_identical_on_rerun(demo_dir, tmp_path):
    syn = demo_dir / "synth"
    gen = demo_dir / "hypotheses"
    inputs = ["--schema", str(syn / "schema.json"), "--obs", str(gen / "obs_test.jsonl"), "--twin", str(syn / "twin.jsonl"),
              "--hypotheses", str(gen / "hypotheses.json")]
    commands = {
        "synth": ["synth", "--n-obs", "500", "--n-twin", "100", "--seed", "4"],
        "gen": ["gen-hypotheses", "--schema", str(syn / "schema.json"), "--obs", str(syn / "obs.jsonl"),
                "--holdout-fraction", "0.05", "--seed", "4"],
        "test": ["test", *inputs, "--backend", "boot-revperc", "--workers", "3", "--seed", "4"],
        "sens": ["sensitivity", *inputs, "--deltas", "0,0.5", "--seed", "4"],
        "report": ["report", "--results", str(demo_dir / "test" / "results.csv")],
        "demo": ["demo", "--n-obs", "800", "--n-twin", "300", "--seed", "4"],
    }
    for name, argv in commands.items():
        out = tmp_path / name
        assert cli.main([*argv, "--out-dir", str(out)]) == 0
        first = snapshot(out)
        assert cli.main([*argv, "--out-dir", str(out)]) == 0
        assert snapshot(out) == first, name
