"""Experiment driver: test evaluation, the clinic-grid suite and reports.

A suite is described by a JSON file::

    {
      "clinics": "all",                 # or a list of grid ids / clinic tables
      "methods": ["IBFI", "GPDR"],      # rule names, "GPDR", or "GP"
      "runs": 30,
      "seed_base": 1,
      "engine": {"pop_size": 256, "generations": 50}
    }

Every (clinic, method, run) cell writes one file, atomically, and cells whose
file already exists are not recomputed.  ``results.csv``, ``best_rules.txt``
and ``summary.txt`` are rebuilt from the cell files at the end.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed

from .clinic import (
    TEST_STREAM,
    ClinicConfig,
    ReplicationPlan,
    clinic_grid,
    control_variate_ci,
    get_clinic,
    plan_draws,
    service_controls,
    simulate_batch,
)
from .dimensions import individual_dim_gap
from .engine import EngineConfig, RunResult, resolve_n_jobs, run
from .rules import RULE_NAMES, EVOLVED_RULES, NamedRule, dome_profile, offset_regimes, schedule
from .tree import Individual, ParseError, compute_schedule, format_individual, parse_individual

TEST_REPLICATIONS = 15000
GP_METHODS = ("GPDR", "GP")
RESULT_FIELDS = ("clinic", "method", "mean_tc", "std_tc", "mean_dim_gap", "mean_size", "runs", "ci_half_width")


# ---------------------------------------------------------------------------
# Test evaluation


@dataclass(frozen=True)
class RuleEvaluation:
    mean: float  # control-variate adjusted
    half_width: float  # 95% batch-means half-width
    raw_mean: float  # plain sample mean of the same replications


def holdout_plan(seed: int, replications: int = TEST_REPLICATIONS) -> ReplicationPlan:
    """Test replications live on their own stream label, disjoint from training."""
    return ReplicationPlan(replications, seed, 0, TEST_STREAM)


def _as_schedule(rule, clinic: ClinicConfig) -> np.ndarray:
    if isinstance(rule, Individual):
        return compute_schedule(rule, clinic)
    if isinstance(rule, (str, NamedRule)):
        return schedule(rule, clinic)
    return np.asarray(rule, dtype=float)


def evaluate_rule_on_test(
    rule, clinic: ClinicConfig, seed: int, replications: int = TEST_REPLICATIONS
) -> RuleEvaluation:
    """Mean total cost and CI half-width over the test stream.

    ``rule`` is a rule name, a :class:`NamedRule`, an individual or a
    schedule.  Service-time totals serve as control variates.
    """
    plan = holdout_plan(seed, replications)
    batch = plan_draws(clinic, plan)
    tc = simulate_batch(_as_schedule(rule, clinic), clinic, batch)
    X, mu = service_controls(clinic, batch)
    mean, half = control_variate_ci(tc, X, mu)
    return RuleEvaluation(mean, half, float(tc.mean()))


# ---------------------------------------------------------------------------
# Suite configuration


@dataclass(frozen=True)
class SuiteConfig:
    clinics: tuple  # ((id, ClinicConfig), ...)
    methods: tuple[str, ...]
    runs: int = 30
    seed_base: int = 0
    engine: EngineConfig = EngineConfig()

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be positive")
        for m in self.methods:
            if m not in RULE_NAMES and m not in GP_METHODS:
                raise ValueError(f"unknown method {m!r}")


def _parse_clinics(clinics) -> tuple:
    if clinics in (None, "all"):
        return tuple(enumerate(clinic_grid(), start=1))
    if isinstance(clinics, (int, str)):
        clinics = [clinics]
    out = []
    for item in clinics:
        if isinstance(item, dict):
            item = dict(item)
            cid = int(item.pop("id"))
            out.append((cid, ClinicConfig(**item)))
        else:
            out.append((int(item), get_clinic(int(item))))
    ids = [cid for cid, _ in out]
    if len(set(ids)) != len(ids):
        raise ValueError("clinic ids must be unique")
    return tuple(out)


def suite_from_dict(data: dict) -> SuiteConfig:
    known = {"clinics", "methods", "runs", "seed_base", "engine"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown suite settings: {', '.join(sorted(unknown))}")
    return SuiteConfig(
        clinics=_parse_clinics(data.get("clinics", "all")),
        methods=tuple(data.get("methods", ("GPDR",))),
        runs=int(data.get("runs", 30)),
        seed_base=int(data.get("seed_base", 0)),
        engine=EngineConfig.from_dict(data.get("engine", {})),
    )


def load_suite(path) -> SuiteConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    return suite_from_dict(data)


def run_seed(seed_base: int, clinic_id: int, run_index: int) -> int:
    """Per-run master seed, a hash of the seed base and the cell."""
    ss = np.random.SeedSequence(entropy=int(seed_base), spawn_key=(int(clinic_id), int(run_index)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# Cell files


def atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc


def cell_path(out: Path, clinic_id: int, method: str, run_index: int) -> Path:
    if method == "GPDR":
        return out / f"archive_{clinic_id}_{run_index}.txt"
    if method == "GP":
        return out / f"archive_GP_{clinic_id}_{run_index}.txt"
    return out / f"baseline_{clinic_id}_{method}.txt"


def history_path(out: Path, clinic_id: int, method: str, run_index: int) -> Path:
    tag = "" if method == "GPDR" else f"{method}_"
    return out / f"history_{tag}{clinic_id}_{run_index}.csv"


def _fmt(x: float) -> str:
    return repr(float(x))


def _cell_text(meta: dict, rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("fitness", "size", "dim_gap", "rule"))
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def read_cell(path: Path) -> tuple[dict, list[dict]]:
    meta: dict = {}
    body = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition("=")
                meta[k] = v
            else:
                body.append(line)
    return meta, list(csv.DictReader(body))


def _gp_cell(out, clinic_id, clinic, method, run_index, suite: SuiteConfig, n_jobs) -> str:
    seed = run_seed(suite.seed_base, clinic_id, run_index)
    cfg = replace(suite.engine, master_seed=seed, repair_enabled=(method == "GPDR"))
    result: RunResult = run(cfg, clinic, n_jobs=n_jobs, log_path=history_path(out, clinic_id, method, run_index))
    best = result.best.individual
    test = evaluate_rule_on_test(best, clinic, suite.seed_base, cfg.test_replications)
    meta = {
        "clinic": clinic_id,
        "method": method,
        "run": run_index,
        "seed": seed,
        "test_tc": _fmt(test.mean),
        "test_ci": _fmt(test.half_width),
        "dim_gap": _fmt(individual_dim_gap(best)),
        "size": best.size,
        "best": format_individual(best),
    }
    rows = [
        (_fmt(e.fitness), e.size, _fmt(individual_dim_gap(e.individual)), format_individual(e.individual))
        for e in result.archive
    ]
    return _cell_text(meta, rows)


def _baseline_cell(clinic_id, clinic, method, suite: SuiteConfig) -> str:
    test = evaluate_rule_on_test(method, clinic, suite.seed_base, suite.engine.test_replications)
    size, gap = 0, 0.0
    if method in EVOLVED_RULES:
        ind = parse_individual(EVOLVED_RULES[method][0])
        size, gap = ind.size, float(individual_dim_gap(ind))
    meta = {
        "clinic": clinic_id,
        "method": method,
        "run": 0,
        "seed": suite.seed_base,
        "test_tc": _fmt(test.mean),
        "test_ci": _fmt(test.half_width),
        "dim_gap": _fmt(gap),
        "size": size,
    }
    return _cell_text(meta, [])


def _compute_cell(out, clinic_id, clinic, method, run_index, suite, n_jobs) -> Path:
    path = cell_path(out, clinic_id, method, run_index)
    if method in GP_METHODS:
        text = _gp_cell(out, clinic_id, clinic, method, run_index, suite, n_jobs)
    else:
        text = _baseline_cell(clinic_id, clinic, method, suite)
    atomic_write(path, text)
    return path


# ---------------------------------------------------------------------------
# Suite


@dataclass(frozen=True)
class ResultRow:
    clinic: int
    method: str
    mean_tc: float
    std_tc: float
    mean_dim_gap: float
    mean_size: float
    runs: int
    ci_half_width: float


def _cells(suite: SuiteConfig):
    for cid, clinic in suite.clinics:
        for method in suite.methods:
            runs = suite.runs if method in GP_METHODS else 1
            for r in range(runs):
                yield cid, clinic, method, r


def run_suite(suite: Union[SuiteConfig, str, Path], output_dir, n_jobs: Optional[int] = None) -> list[ResultRow]:
    """Compute missing cells, then rebuild the result files from all cells."""
    if not isinstance(suite, SuiteConfig):
        suite = load_suite(suite)
    out = Path(output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from exc
    n_jobs = resolve_n_jobs(n_jobs)
    todo = [c for c in _cells(suite) if not cell_path(out, c[0], c[2], c[3]).exists()]
    # cells run in parallel; each engine then works single-threaded
    inner = 1 if n_jobs != 1 and len(todo) > 1 else n_jobs
    Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_compute_cell)(out, cid, clinic, method, r, suite, inner)
        for cid, clinic, method, r in todo
    )
    return write_reports(suite, out)


def write_reports(suite: SuiteConfig, out: Path) -> list[ResultRow]:
    rows: list[ResultRow] = []
    best_lines = []
    for cid, _ in suite.clinics:
        for method in suite.methods:
            runs = suite.runs if method in GP_METHODS else 1
            metas = [read_cell(cell_path(out, cid, method, r))[0] for r in range(runs)]
            tc = np.array([float(m["test_tc"]) for m in metas])
            rows.append(ResultRow(
                clinic=cid,
                method=method,
                mean_tc=float(tc.mean()),
                std_tc=float(tc.std(ddof=1)) if len(tc) > 1 else 0.0,
                mean_dim_gap=float(np.mean([float(m["dim_gap"]) for m in metas])),
                mean_size=float(np.mean([float(m["size"]) for m in metas])),
                runs=runs,
                ci_half_width=float(np.mean([float(m["test_ci"]) for m in metas])),
            ))
            if method in GP_METHODS:
                top = metas[int(np.argmin(tc))]
                best_lines.append(f"{cid}\t{method}\t{top['best']}\n")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for r in rows:
        w.writerow([r.clinic, r.method, _fmt(r.mean_tc), _fmt(r.std_tc), _fmt(r.mean_dim_gap),
                    _fmt(r.mean_size), r.runs, _fmt(r.ci_half_width)])
    atomic_write(out / "results.csv", buf.getvalue())
    if best_lines:
        atomic_write(out / "best_rules.txt", "".join(best_lines))
    atomic_write(out / "summary.txt", summary_table(rows))
    return rows


def summary_table(rows: Sequence[ResultRow]) -> str:
    methods = list(dict.fromkeys(r.method for r in rows))
    clinics = list(dict.fromkeys(r.clinic for r in rows))
    cell = {(r.clinic, r.method): r for r in rows}
    head = f"{'clinic':>6} " + " ".join(f"{m:>18}" for m in methods)
    lines = [head, "-" * len(head)]
    for c in clinics:
        parts = []
        for m in methods:
            r = cell.get((c, m))
            if r is None:
                parts.append(f"{'':>18}")
            elif r.runs > 1:
                parts.append(f"{r.mean_tc:>9.4f} ({r.std_tc:6.4f})")
            else:
                parts.append(f"{r.mean_tc:>18.4f}")
        lines.append(f"{c:>6} " + " ".join(parts))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Dome report


@dataclass(frozen=True)
class BestRule:
    clinic: int
    method: str
    individual: Individual


def read_best_rules(path) -> list[BestRule]:
    """Parse ``<clinic>\\t<method>\\t<individual>`` lines; ``#`` starts a comment."""
    out = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{path}: {exc.strerror or exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected clinic, method and rule separated by tabs")
            try:
                out.append(BestRule(int(parts[0]), parts[1], parse_individual(parts[2])))
            except (ValueError, ParseError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return out


def dome_report(rules: Sequence[BestRule], clinics: Optional[dict] = None) -> str:
    """Interval series of each rule as CSV: one row per interval."""
    clinics = clinics or dict(enumerate(clinic_grid(), start=1))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("clinic", "method", "is_dome", "peak", "turn", "plateau", "index", "interval"))
    for rule in rules:
        clinic = clinics[rule.clinic]
        times = compute_schedule(rule.individual, clinic)
        prof = dome_profile(times)
        turn, plateau = offset_regimes(times, clinic.M)
        for k, d in enumerate(prof.intervals, start=1):
            w.writerow((rule.clinic, rule.method, str(prof.is_dome).lower(),
                        "" if prof.peak is None else prof.peak,
                        "" if turn is None else turn,
                        "" if plateau is None else plateau,
                        k, f"{d:.6f}"))
    return buf.getvalue()


def fixture_rules() -> list[BestRule]:
    """The three reported evolved rules with their grid rows."""
    return [BestRule(row, name, parse_individual(text)) for name, (text, row) in EVOLVED_RULES.items()]
