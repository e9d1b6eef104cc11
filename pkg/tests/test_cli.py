from __future__ import annotations

import json

import pytest

from tabreason import cli
from tabreason.dataset import (
    DatasetError,
    load_tasks,
    save_tasks,
    task_from_record,
    task_to_record,
)
from tabreason.gateway import FixtureStore, GatewayConfig, LlmGateway


def record(i, gold, question=None):
    return {
        "id": f"t{i}",
        "title": f"table {i}",
        "header": ["Year", "Won"],
        "rows": [["2001", "yes"], ["2002", "no"], ["2003", gold]],
        "question": question or f"question number {i}?",
        "answers": [gold],
    }


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "tasks.jsonl"
    rows = [record(1, "yes"), record(2, "yes"), record(3, "no"), record(4, "no")]
    path.write_text(
        "".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8"
    )
    return path


def scripted_transport(payload):
    # every completion claims "yes", so exactly half the gold answers match
    return "Because of row 1.\nFinal Answer: yes"


@pytest.fixture
def recorded_run(tmp_path, dataset, monkeypatch):
    """A completed record-mode run: returns (run_dir, fixtures_dir)."""
    fixtures = tmp_path / "fixtures"
    run_dir = tmp_path / "out"

    real = cli._make_gateway

    def with_transport(config):
        return LlmGateway(
            config=GatewayConfig(token_threshold=config.token_threshold),
            store=FixtureStore(config.fixtures),
            transport=scripted_transport,
            mode=config.mode,
        )

    monkeypatch.setattr(cli, "_make_gateway", with_transport)
    code = cli.dispatch(
        [
            "run",
            "--dataset", str(dataset),
            "--out", str(run_dir),
            "--method", "dp",
            "--perturb", "original",
            "--samples", "3",
            "--mode", "record",
            "--fixtures", str(fixtures),
        ]
    )
    assert code == 0
    monkeypatch.setattr(cli, "_make_gateway", real)
    return run_dir, fixtures


class TestDatasetIo:
    def test_round_trip(self, dataset, tmp_path):
        tasks = load_tasks(dataset)
        out = tmp_path / "copy.jsonl"
        save_tasks(tasks, out)
        assert out.read_bytes() == dataset.read_bytes()

    def test_record_fields(self):
        task = task_from_record(record(1, "yes"))
        assert task.id == "t1" and task.gold == ("yes",)
        assert task.table.header == ("Year", "Won")
        assert task_to_record(task) == record(1, "yes")

    def test_missing_field(self):
        bad = record(1, "yes")
        del bad["answers"]
        with pytest.raises(DatasetError):
            task_from_record(bad)

    def test_empty_file(self, tmp_path):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("", encoding="utf-8")
        with pytest.raises(DatasetError):
            load_tasks(empty)


class TestIngest:
    def test_csv_appends_task(self, tmp_path):
        table = tmp_path / "t.csv"
        table.write_text("a,b\n1,2\n", encoding="utf-8")
        out = tmp_path / "tasks.jsonl"
        def argv(task_id):
            return [
                "ingest", "--table", str(table), "--id", task_id, "--title", "T",
                "--question", "q?", "--answer", "1", "--out", str(out),
            ]

        assert cli.dispatch(argv("x")) == 0
        assert cli.dispatch(argv("y")) == 0
        tasks = load_tasks(out)
        assert [t.id for t in tasks] == ["x", "y"]
        assert tasks[0].table.header == ("a", "b")


class TestPerturb:
    def test_transpose_dataset(self, dataset, tmp_path):
        out = tmp_path / "transposed.jsonl"
        code = cli.dispatch(
            ["perturb", "--dataset", str(dataset), "--kind", "transpose",
             "--out", str(out)]
        )
        assert code == 0
        tasks = load_tasks(out)
        assert tasks[0].table.header == ("Year", "2001", "2002", "2003")

    def test_shuffle_is_seed_stable(self, dataset, tmp_path):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            out = tmp_path / name
            cli.dispatch(
                ["perturb", "--dataset", str(dataset), "--kind", "row_shuffle",
                 "--seed", "7", "--out", str(out)]
            )
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestExitCodes:
    def test_unknown_method_is_usage(self, dataset, tmp_path):
        code = cli.dispatch(
            ["run", "--dataset", str(dataset), "--out", str(tmp_path / "o"),
             "--method", "quantum"]
        )
        assert code == 1

    def test_replay_without_fixtures_is_usage(self, dataset, tmp_path):
        code = cli.dispatch(
            ["run", "--dataset", str(dataset), "--out", str(tmp_path / "o"),
             "--method", "dp"]
        )
        assert code == 1

    def test_missing_dataset_is_runtime(self, tmp_path):
        code = cli.dispatch(
            ["run", "--dataset", str(tmp_path / "nope.jsonl"),
             "--out", str(tmp_path / "o"), "--method", "dp",
             "--fixtures", str(tmp_path / "fx")]
        )
        assert code == 2


class TestRun:
    def test_record_manifest(self, recorded_run):
        run_dir, fixtures = recorded_run
        manifest = json.loads((run_dir / "run.json").read_text())
        # 4 tasks x 1 method x 1 perturbation x 3 samples
        assert manifest["total_records"] == 12
        assert manifest["completions"] == 12
        assert manifest["records"] == {"dp__original.jsonl": 12}
        assert len(FixtureStore(fixtures).keys()) == 12

    def test_replay_byte_identical(self, recorded_run, dataset, tmp_path):
        _, fixtures = recorded_run
        outputs = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            code = cli.dispatch(
                ["run", "--dataset", str(dataset), "--out", str(out),
                 "--method", "dp", "--perturb", "original", "--samples", "3",
                 "--mode", "replay", "--fixtures", str(fixtures)]
            )
            assert code == 0
            outputs.append(
                (out / "traces" / "dp__original.jsonl").read_bytes()
                + (out / "run.json").read_bytes()
            )
        assert outputs[0] == outputs[1]

    def test_config_hash_path_independent(self, dataset, tmp_path):
        copy = tmp_path / "deep" / "tasks.jsonl"
        copy.parent.mkdir()
        copy.write_bytes(dataset.read_bytes())
        kwargs = dict(out=tmp_path / "o", methods=["dp"],
                      perturbations=["original"], fixtures=tmp_path / "fx")
        a = cli.RunConfig(dataset=dataset, **kwargs).semantic_hash()
        b = cli.RunConfig(dataset=copy, **kwargs).semantic_hash()
        assert a == b and len(a) == 16

    def test_temperature_policy(self, dataset, tmp_path):
        common = dict(dataset=dataset, out=tmp_path / "o", methods=["dp"],
                      perturbations=["original"], fixtures=tmp_path / "fx")
        assert cli.RunConfig(samples=1, **common).temperature == 0.0
        assert cli.RunConfig(samples=5, **common).temperature == 0.8
        assert cli.RunConfig(samples=5, temperature=0.2, **common).temperature == 0.2


class TestAggregateEval:
    def test_sc_then_eval_half_right(self, recorded_run, dataset, tmp_path):
        run_dir, _ = recorded_run
        votes = tmp_path / "votes.jsonl"
        code = cli.dispatch(
            ["aggregate", "--run-dir", str(run_dir), "--strategy", "sc",
             "--method", "dp", "--out", str(votes)]
        )
        assert code == 0
        lines = votes.read_text().strip().splitlines()
        assert len(lines) == 4
        first = json.loads(lines[0])
        assert first["winner"] == ["yes"] and not first["tied"]

        result_path = tmp_path / "eval.json"
        code = cli.dispatch(
            ["eval", "--votes", str(votes), "--dataset", str(dataset),
             "--out", str(result_path)]
        )
        assert code == 0
        result = json.loads(result_path.read_text())
        assert result["accuracy"] == 50.0
        assert result["n_tasks"] == 4

    def test_mix_sc_requires_both_pools(self, recorded_run, tmp_path):
        run_dir, _ = recorded_run
        code = cli.dispatch(
            ["aggregate", "--run-dir", str(run_dir), "--strategy", "mix_sc",
             "--out", str(tmp_path / "v.jsonl")]
        )
        assert code == 2  # no pyagent traces in the run


class TestConfigFile:
    def test_section_supplies_defaults_and_flags_win(self, dataset, tmp_path,
                                                     monkeypatch, recorded_run):
        _, fixtures = recorded_run
        ini = tmp_path / "harness.ini"
        ini.write_text(
            "[run]\n"
            f"dataset = {dataset}\n"
            f"out = {tmp_path / 'cfg_out'}\n"
            "methods = dp\n"
            "samples = 3\n"
            "mode = replay\n"
            f"fixtures = {fixtures}\n",
            encoding="utf-8",
        )
        code = cli.dispatch(["--config", str(ini), "run"])
        assert code == 0
        manifest = json.loads((tmp_path / "cfg_out" / "run.json").read_text())
        assert manifest["samples"] == 3

        # a flag overrides the config value
        flag_out = tmp_path / "flag_out"
        code = cli.dispatch(
            ["--config", str(ini), "run", "--out", str(flag_out),
             "--samples", "1", "--mode", "record", "--fixtures",
             str(tmp_path / "fx2")]
        )
        # record mode without transport needs credentials, so expect runtime
        assert code == 2 or (flag_out / "run.json").exists()


class TestFixturesCommand:
    def test_verify_ok(self, recorded_run, capsys):
        _, fixtures = recorded_run
        assert cli.dispatch(["fixtures", "verify", "--dir", str(fixtures)]) == 0
        assert "ok: 12 fixtures" in capsys.readouterr().out

    def test_verify_missing_file(self, recorded_run):
        _, fixtures = recorded_run
        store = FixtureStore(fixtures)
        (fixtures / f"{store.keys()[0]}.json").unlink()
        assert cli.dispatch(["fixtures", "verify", "--dir", str(fixtures)]) == 2

    def test_list(self, recorded_run, capsys):
        _, fixtures = recorded_run
        assert cli.dispatch(["fixtures", "list", "--dir", str(fixtures)]) == 0
        assert "12 fixtures" in capsys.readouterr().out


class TestReportCommand:
    def test_markdown_from_grid_csv(self, tmp_path, capsys):
        grid_csv = (
            "method,norm,perturbation,accuracy,delta\n"
            "dp,off,original,59.50,\n"
            "dp,off,row_shuffle,52.21,-12.25\n"
        )
        grid_path = tmp_path / "grid.csv"
        grid_path.write_text(grid_csv, encoding="utf-8")
        assert cli.dispatch(["report", "--grid", str(grid_path)]) == 0
        out = capsys.readouterr().out
        assert "59.50" in out and "-12.25%" in out
