"""CLI behavior: plan files, runs, comparison, detection, conformance."""

import json
import sys

import pytest

from branchbench.cli import main, materialize_plan, read_config_file
from branchbench.plan import ExplorationPlan, two_branch_revisit_plan, make_random_plan
from branchbench.shimcheck import run_suite, suite_hash
from branchbench.strategy import run_session
from branchbench.agent import SyntheticAgent

TOYSERVER_CMD = f"{sys.executable} -m branchbench.toyserver --protocol 1"

# Contract hash of the conformance vector suite; bump deliberately when
# vectors change.
SUITE_HASH = "a4df92b993213930544e7dbab7dbb7c8b3aae75171785e695ebe6322cd7fc83c"


def test_plan_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["plan", "gen", "--seed", "1", "--branches", "100", "--max-cells", "10", "--out", str(a)]) == 0
    assert main(["plan", "gen", "--seed", "1", "--branches", "100", "--max-cells", "10", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_plan_validate_rejects_bad_branch_point(tmp_path):
    plan = two_branch_revisit_plan()
    doc = plan.to_json()
    doc["branches"][1]["branch_point"] = 99
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc), "utf-8")
    assert main(["plan", "validate", str(bad)]) == 1


def test_plan_validate_ok(tmp_path):
    path = tmp_path / "plan.json"
    two_branch_revisit_plan().save(path)
    assert main(["plan", "validate", str(path)]) == 0


def test_run_checkpoint_without_store_is_usage_error(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("BRANCHBENCH_STORE", raising=False)
    path = tmp_path / "plan.json"
    two_branch_revisit_plan().save(path)
    code = main(
        ["run", "--plan", str(path), "--strategy", "checkpoint", "--out", str(tmp_path / "o")]
    )
    assert code == 2
    assert "store" in capsys.readouterr().err


def test_run_writes_trace_and_metrics(tmp_path):
    path = tmp_path / "plan.json"
    two_branch_revisit_plan().save(path)
    out = tmp_path / "out"
    code = main(["run", "--plan", str(path), "--strategy", "restart", "--out", str(out)])
    assert code == 0
    assert (out / "trace-restart.jsonl").exists()
    report = json.loads((out / "metrics-restart.json").read_text())
    assert report["strategy"] == "restart"
    assert report["executed_cells"] == 6
    assert (out / "manifest").exists()


def test_store_env_var_supplies_store(tmp_path, monkeypatch):
    path = tmp_path / "plan.json"
    two_branch_revisit_plan().save(path)
    monkeypatch.setenv("BRANCHBENCH_STORE", str(tmp_path / "envstore"))
    out = tmp_path / "out"
    code = main(["run", "--plan", str(path), "--strategy", "checkpoint", "--out", str(out)])
    assert code == 0
    assert (tmp_path / "envstore" / "meta").exists()


def test_compare_offline_produces_three_traces_and_table(tmp_path):
    plan_path = tmp_path / "plan.json"
    make_random_plan(seed=5, n_branches=4, max_cells=4).save(plan_path)
    out = tmp_path / "cmp"
    code = main(
        ["compare", "--plan", str(plan_path), "--backend", "toy", "--agent", "synthetic",
         "--out", str(out)]
    )
    assert code == 0
    for strategy in ("restart", "continue", "checkpoint"):
        assert (out / f"trace-{strategy}.jsonl").exists()
    table = json.loads((out / "comparison.json").read_text())
    assert {row["strategy"] for row in table["rows"]} == {"restart", "continue", "checkpoint"}
    csv_header = (out / "comparison.csv").read_text().splitlines()[0]
    assert csv_header.startswith("strategy,e2e_ms,")
    manifest = json.loads((out / "manifest").read_text())
    assert "comparison.svg" in manifest


def test_compare_rerun_overwrites_deterministically(tmp_path):
    plan_path = tmp_path / "plan.json"
    make_random_plan(seed=7, n_branches=3, max_cells=3).save(plan_path)
    out = tmp_path / "cmp"
    args = ["compare", "--plan", str(plan_path), "--agent", "synthetic", "--out", str(out)]
    assert main(args) == 0
    first = {p.name: p.read_bytes() for p in out.glob("*.json*")}
    assert main(args) == 0
    second = {p.name: p.read_bytes() for p in out.glob("*.json*")}
    # trace events are identical modulo measured durations; plan and
    # comparison row structure are byte-identical
    assert first.keys() == second.keys()
    assert first["plan-materialized.json"] == second["plan-materialized.json"]


def test_compare_parallel_matches_sequential(tmp_path):
    plan_path = tmp_path / "plan.json"
    make_random_plan(seed=9, n_branches=3, max_cells=3).save(plan_path)
    seq_out, par_out = tmp_path / "seq", tmp_path / "par"
    base = ["compare", "--plan", str(plan_path), "--agent", "synthetic", "--no-detect"]
    assert main(base + ["--out", str(seq_out)]) == 0
    assert main(base + ["--out", str(par_out), "--parallel"]) == 0
    for strategy in ("restart", "continue", "checkpoint"):
        from branchbench.trace import SessionTrace

        seq = SessionTrace.load(seq_out / f"trace-{strategy}.jsonl")
        par = SessionTrace.load(par_out / f"trace-{strategy}.jsonl")
        assert seq.normalized_events() == par.normalized_events()


def test_config_file_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("agent = synthetic\nbackend = toy\n", "utf-8")
    plan_path = tmp_path / "plan.json"
    make_random_plan(seed=2, n_branches=2, max_cells=2).save(plan_path)
    out = tmp_path / "out"
    code = main(
        ["--config", str(cfg), "run", "--plan", str(plan_path), "--strategy", "continue",
         "--out", str(out)]
    )
    assert code == 0


def test_config_file_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 1\n", "utf-8")
    with pytest.raises(Exception):
        read_config_file(cfg)


def test_detect_on_checkpoint_trace_warns_and_reports_zero(tmp_path, capsys):
    from branchbench.store import Store

    plan_path = tmp_path / "plan.json"
    two_branch_revisit_plan().save(plan_path)
    result = run_session(two_branch_revisit_plan(), "checkpoint", store=Store(tmp_path / "s"))
    trace_path = tmp_path / "trace.jsonl"
    result.trace.save(trace_path)
    out = tmp_path / "det"
    code = main(["detect", "--trace", str(trace_path), "--out", str(out)])
    assert code == 0
    assert "warning" in capsys.readouterr().err
    report = json.loads((out / "interference.json").read_text())
    assert report["total"] == 0


def test_detect_on_revisit_plan_continue_trace(tmp_path):
    result = run_session(two_branch_revisit_plan(), "continue")
    trace_path = tmp_path / "trace.jsonl"
    result.trace.save(trace_path)
    out = tmp_path / "det"
    assert main(["detect", "--trace", str(trace_path), "--out", str(out)]) == 0
    report = json.loads((out / "interference.json").read_text())
    assert report["total"] == 1
    assert report["interferences"][0]["variable"] == "df"


def test_report_reemits_csv(tmp_path, capsys):
    result = run_session(two_branch_revisit_plan(), "continue")
    trace_path = tmp_path / "trace.jsonl"
    result.trace.save(trace_path)
    assert main(["report", "--trace", str(trace_path), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("strategy,e2e_ms,")
    assert out.splitlines()[1].startswith("continue,")


def test_store_stats_command(tmp_path, capsys):
    from branchbench.store import Store

    run_session(two_branch_revisit_plan(), "checkpoint", store=Store(tmp_path / "s"))
    assert main(["store", "stats", "--store", str(tmp_path / "s")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["object_count"] > 0
    assert doc["commit_count"] == 7  # root plus six cells


def test_shim_check_self_test_passes(capsys):
    assert main(["shim-check"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert SUITE_HASH[:16] in out


def test_shim_check_external_toyserver():
    results = run_suite(TOYSERVER_CMD)
    assert all(r.passed for r in results)


def test_shim_check_detects_hidden_state_leak():
    from branchbench.backend import ToyBackend

    class LeakyBackend(ToyBackend):
        """Leaks one bookkeeping variable into the user namespace."""

        def execute(self, cell):
            self.namespace["shim_meta"] = len(self.namespace)
            return super().execute(cell)

    results = run_suite(backend=LeakyBackend())
    failures = {r.name for r in results if not r.passed}
    assert "hidden-state-cleanliness" in failures


def test_suite_hash_is_stable():
    assert suite_hash() == SUITE_HASH
    assert suite_hash() == suite_hash()


def test_materialize_plan_freezes_cells_and_points():
    plan = make_random_plan(seed=3, n_branches=4, max_cells=3)
    generation = run_session(plan, "restart", agent=SyntheticAgent(3))
    scripted = materialize_plan(plan, generation)
    scripted.validate()
    assert scripted.branches[0].branch_point == "root"
    assert all(b.cells is not None for b in scripted.branches)
    # replaying the scripted plan reproduces the generation pass manifests
    replay = run_session(scripted, "restart")
    for idx, manifest in generation.final_manifests.items():
        if manifest is not None:
            assert replay.final_manifests[idx].digests() == manifest.digests()
