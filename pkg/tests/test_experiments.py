import json

import numpy as np
import pytest

from dimgp import experiments as ex
from dimgp.clinic import ClinicConfig, get_clinic
from dimgp.engine import EngineConfig
from dimgp.experiments import (
    BestRule,
    SuiteConfig,
    dome_report,
    evaluate_rule_on_test,
    fixture_rules,
    load_suite,
    read_best_rules,
    read_cell,
    run_seed,
    run_suite,
    suite_from_dict,
)
from dimgp.rules import MANUAL_RULES
from dimgp.tree import ParseError, parse_individual

TINY_ENGINE = EngineConfig(pop_size=12, generations=3, train_replications=40, test_replications=300)


def tiny_suite(**kw):
    base = dict(clinics=((1, get_clinic(1)),), methods=("GPDR",), runs=2, seed_base=4, engine=TINY_ENGINE)
    base.update(kw)
    return SuiteConfig(**base)


class TestEvaluation:
    def test_2beg_reference(self):
        r = evaluate_rule_on_test("2BEG", get_clinic(1), seed=3)
        assert r.mean == pytest.approx(22.7486, rel=0.05)
        assert r.half_width < 0.01 * r.mean

    def test_vanishing_variability(self):
        costs = [evaluate_rule_on_test("IBFI", ClinicConfig(10, cv), 1, 500).raw_mean for cv in (0.2, 0.05, 1e-4)]
        assert costs[0] > costs[1] > costs[2] and costs[2] < 0.01

    def test_accepts_every_rule_form(self):
        c = get_clinic(2)
        from dimgp.rules import schedule

        by_name = evaluate_rule_on_test("IBFI", c, 2, 400)
        by_ind = evaluate_rule_on_test(parse_individual("i | (mul 0 M)"), c, 2, 400)
        by_sched = evaluate_rule_on_test(schedule("IBFI", c), c, 2, 400)
        assert by_name == by_ind == by_sched

    def test_test_stream_differs_from_training(self):
        from dimgp.clinic import ReplicationPlan, evaluate_schedule
        from dimgp.rules import schedule

        c = get_clinic(1)
        train = evaluate_schedule(schedule("IBFI", c), c, ReplicationPlan(300, 2))
        assert evaluate_rule_on_test("IBFI", c, 2, 300).raw_mean != train


class TestConfig:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "suite.json"
        path.write_text(json.dumps({
            "clinics": [1, {"id": 99, "P": 12, "CV": 0.5, "PN": 0.1, "PW": 0.0}],
            "methods": ["IBFI", "GPDR"],
            "runs": 3,
            "seed_base": 7,
            "engine": {"pop_size": 20},
        }))
        s = load_suite(path)
        assert [cid for cid, _ in s.clinics] == [1, 99]
        assert s.clinics[1][1] == ClinicConfig(12, 0.5, 0.1, 0.0)
        assert s.engine.pop_size == 20 and s.runs == 3

    def test_all_clinics(self):
        assert len(suite_from_dict({"clinics": "all"}).clinics) == 24

    @pytest.mark.parametrize("data", [{"clinic": 1}, {"methods": ["FIFO"]}, {"runs": 0},
                                      {"clinics": [1, 1]}, {"engine": {"pop": 1}}])
    def test_rejects(self, data):
        with pytest.raises(ValueError):
            suite_from_dict(data)

    def test_io_errors_name_the_path(self, tmp_path):
        missing = tmp_path / "nope.json"
        with pytest.raises(OSError, match="nope.json"):
            load_suite(missing)
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        with pytest.raises(ValueError, match="bad.json"):
            load_suite(bad)

    def test_run_seeds(self):
        assert run_seed(1, 2, 3) == run_seed(1, 2, 3)
        assert len({run_seed(1, c, r) for c in range(5) for r in range(5)}) == 25


class TestSuite:
    def test_baselines_only(self, tmp_path):
        suite = SuiteConfig(clinics=tuple(enumerate([get_clinic(k) for k in range(1, 25)], 1)),
                            methods=MANUAL_RULES, engine=EngineConfig(test_replications=60))
        rows = run_suite(suite, tmp_path)
        assert len(rows) == 24 * 6
        assert not list(tmp_path.glob("archive_*"))
        lines = (tmp_path / "results.csv").read_text().splitlines()
        assert lines[0] == ",".join(ex.RESULT_FIELDS) and len(lines) == 145

    def test_gp_cells_and_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_suite(tiny_suite(), a)
        run_suite(tiny_suite(), b)
        assert sorted(p.name for p in a.glob("archive_*.txt")) == ["archive_1_0.txt", "archive_1_1.txt"]
        for p in a.iterdir():
            assert p.read_bytes() == (b / p.name).read_bytes(), p.name
        meta, rows = read_cell(a / "archive_1_0.txt")
        assert meta["method"] == "GPDR" and float(meta["dim_gap"]) == 0
        assert rows and all(float(r["dim_gap"]) == 0 for r in rows)
        assert (a / "history_1_0.csv").exists()
        best = read_best_rules(a / "best_rules.txt")
        assert len(best) == 1 and best[0].clinic == 1

    def test_resume_recomputes_only_missing_cells(self, tmp_path, monkeypatch):
        run_suite(tiny_suite(), tmp_path)
        before = (tmp_path / "archive_1_1.txt").read_bytes()
        (tmp_path / "archive_1_1.txt").unlink()
        calls = []
        real = ex._compute_cell

        def spy(out, cid, clinic, method, r, suite, n_jobs):
            calls.append((cid, method, r))
            return real(out, cid, clinic, method, r, suite, n_jobs)

        monkeypatch.setattr(ex, "_compute_cell", spy)
        run_suite(tiny_suite(), tmp_path)
        assert calls == [(1, "GPDR", 1)]
        assert (tmp_path / "archive_1_1.txt").read_bytes() == before

    def test_standard_gp_cells(self, tmp_path):
        rows = run_suite(tiny_suite(methods=("GP",), runs=1), tmp_path)
        assert (tmp_path / "archive_GP_1_0.txt").exists()
        assert rows[0].mean_dim_gap >= 0

    def test_parallel_cells_match_serial(self, tmp_path):
        run_suite(tiny_suite(), tmp_path / "s", n_jobs=1)
        run_suite(tiny_suite(), tmp_path / "p", n_jobs=2)
        assert (tmp_path / "s" / "results.csv").read_bytes() == (tmp_path / "p" / "results.csv").read_bytes()

    def test_output_errors_name_the_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            run_suite(tiny_suite(), blocker / "out")

    def test_summary_table(self, tmp_path):
        run_suite(tiny_suite(methods=("IBFI", "GPDR")), tmp_path)
        text = (tmp_path / "summary.txt").read_text()
        assert "IBFI" in text and "GPDR" in text


class TestDomeReport:
    def test_fixtures(self):
        text = dome_report(fixture_rules())
        rows = [line.split(",") for line in text.splitlines()[1:]]
        r24 = [r for r in rows if r[1] == "EVOLVED24"]
        assert len(r24) == 9 and {r[2] for r in r24} == {"true"}
        assert (r24[0][4], r24[0][5]) == ("4", "7")
        assert {r[2] for r in rows} == {"true"}

    def test_ibfi_flat(self):
        text = dome_report([BestRule(1, "IBFI", parse_individual("i | (mul 0 M)"))])
        values = {line.split(",")[-1] for line in text.splitlines()[1:]}
        assert values == {"21.000000"} and ",true," in text

    def test_parse_errors_carry_line_numbers(self, tmp_path):
        path = tmp_path / "best_rules.txt"
        path.write_text("# header\n1\tGPDR\ti | M\n2\tGPDR\t(add i | M\n")
        with pytest.raises(ParseError, match=":3:"):
            read_best_rules(path)
        path.write_text("1 GPDR i | M\n")
        with pytest.raises(ParseError, match=":1:"):
            read_best_rules(path)
