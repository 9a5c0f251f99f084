"""Command-line verbs: happy paths, error surfaces, and exit codes."""

import csv
import json

import pytest

from bitrank.cli import main
from conftest import write_model_spec


def common_args(spec, budget, out):
    return [
        "--model", str(spec),
        "--budget-bytes", str(budget),
        "--out", str(out),
        "--seed", "3",
    ]


def tiny_args(spec, budget, out):
    return common_args(spec, budget, out) + [
        "--population", "6",
        "--perturb-edits", "2",
        "--steps", "50,200",
        "--promote-count", "2",
        "--generations", "1",
        "--regions", "2",
        "--pool-per-region", "32",
        "--max-hf-evals", "2",
    ]


class TestHappyPaths:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exit_info:
            main(["--help"])
        assert exit_info.value.code == 0
        assert "bitrank" in capsys.readouterr().out

    def test_search(self, tiny_model, tmp_path, capsys):
        spec, budget = tiny_model
        out = tmp_path / "run"
        assert main(["search"] + tiny_args(spec, budget, out)) == 0
        printed = capsys.readouterr().out
        assert str(out) in printed
        assert (out / "best.json").exists()
        assert (out / "report" / "summary.json").exists()

    def test_phase1_then_phase2(self, tiny_model, tmp_path, capsys):
        spec, budget = tiny_model
        stage1 = tmp_path / "stage1"
        assert main(["phase1"] + tiny_args(spec, budget, stage1)) == 0
        assert (stage1 / "pareto.json").exists()
        assert not (stage1 / "best.json").exists()

        stage2 = tmp_path / "stage2"
        code = main(
            [
                "phase2",
                "--from", str(stage1),
                "--out", str(stage2),
                "--max-hf-evals", "2",
            ]
        )
        assert code == 0
        best = json.loads((stage2 / "best.json").read_text())
        assert best["refine_evaluations"] <= 2
        assert (stage1 / "ledger.jsonl").read_bytes() != b""
        assert not (stage1 / "best.json").exists()

    def test_random_search(self, tiny_model, tmp_path, capsys):
        spec, budget = tiny_model
        out = tmp_path / "rs"
        code = main(
            ["random-search"]
            + tiny_args(spec, budget, out)
            + ["--n-evals", "5"]
        )
        assert code == 0
        doc = json.loads((out / "random_search.json").read_text())
        assert doc["n_evals"] == 5
        assert len(doc["curve"]) == 5
        assert doc["best_score"] == doc["curve"][-1]
        with (out / "random_curve.csv").open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["evaluation", "best_score"]
        assert len(rows) == 6

    def test_brute_force(self, tiny_model, tmp_path, capsys):
        spec, budget = tiny_model
        out = tmp_path / "bf"
        assert main(["brute-force"] + common_args(spec, budget, out)) == 0
        printed = capsys.readouterr().out
        doc = json.loads((out / "oracle.json").read_text())
        assert doc["feasible"] == len(doc["entries"])
        assert f"({doc['feasible']} feasible configs)" in printed
        utilities = [e["utility"] for e in doc["entries"]]
        assert utilities == sorted(utilities, reverse=True)

    def test_brute_force_at_fidelity(self, tiny_model, tmp_path):
        spec, budget = tiny_model
        out = tmp_path / "bf400"
        code = main(
            ["brute-force"]
            + common_args(spec, budget, out)
            + ["--steps-at", "400"]
        )
        assert code == 0
        assert (out / "oracle.csv").exists()

    def test_report_regeneration(self, finished_run, tmp_path, capsys):
        target = tmp_path / "fresh-report"
        code = main(["report", str(finished_run.out_dir), "--out", str(target)])
        assert code == 0
        printed = capsys.readouterr().out
        assert str(target / "summary.json") in printed
        assert (target / "pareto_front.csv").exists()


class TestErrorPaths:
    def test_unknown_evaluator_exits_one(self, tiny_model, tmp_path, capsys):
        spec, budget = tiny_model
        code = main(
            ["search"]
            + tiny_args(spec, budget, tmp_path / "x")
            + ["--evaluator", "quantum"]
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_model_file_exits_one(self, tmp_path, capsys):
        code = main(
            ["search"] + tiny_args(tmp_path / "absent.json", 10**6, tmp_path / "x")
        )
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_oversized_brute_force_reports_count(self, tmp_path, capsys):
        spec = tmp_path / "big.json"
        write_model_spec(spec, num_layers=6)
        code = main(["brute-force"] + common_args(spec, 10**9, tmp_path / "x"))
        assert code == 1
        err = capsys.readouterr().err
        assert str(9**6) in err

    def test_budget_below_minimum_exits_one(self, tiny_model, tmp_path, capsys):
        spec, _ = tiny_model
        code = main(["search"] + tiny_args(spec, 10, tmp_path / "x"))
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_step_ladder_exits_two(self, tiny_model, tmp_path):
        spec, budget = tiny_model
        with pytest.raises(SystemExit) as exit_info:
            main(
                ["search"]
                + common_args(spec, budget, tmp_path / "x")
                + ["--steps", "100"]
            )
        assert exit_info.value.code == 2

    def test_unknown_flag_exits_two(self, tiny_model, tmp_path):
        spec, budget = tiny_model
        with pytest.raises(SystemExit) as exit_info:
            main(
                ["search"]
                + common_args(spec, budget, tmp_path / "x")
                + ["--warp-factor", "9"]
            )
        assert exit_info.value.code == 2

    def test_missing_required_budget_exits_two(self, tiny_model, tmp_path):
        spec, _ = tiny_model
        with pytest.raises(SystemExit) as exit_info:
            main(["search", "--model", str(spec), "--out", str(tmp_path / "x")])
        assert exit_info.value.code == 2
