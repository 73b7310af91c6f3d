"""End-to-end acceptance checks; each records a verdict for the summary."""

import json
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from acceptance_log import record
from oracles import brute_force_repair
from dimgp.clinic import ClinicConfig, ReplicationDraw, Trace, clinic_grid, draw_replication, simulate_draw
from dimgp.dimensions import individual_dim_gap
from dimgp.engine import EngineConfig, run
from dimgp.experiments import evaluate_rule_on_test, fixture_rules
from dimgp.repair import Infeasible, RepairLog, build_problem, repair_individual, solve
from dimgp.rules import dome_profile, offset_regimes, schedule
from dimgp.tree import compute_schedule, ramped_init, random_tree, size

CLINIC = ClinicConfig(10, 0.40, 0.0, 0.0)
TEST_SEED = 2024

REFERENCE = {
    "IBFI": (13.1473, 0.05),
    "2BEG": (22.7486, 0.05),
    "MBFI": (21.4672, 0.05),
    "RULE7": (16.8433, 0.05),
    "OFFSET": (12.2431, 0.10),
    "DOME": (12.7261, 0.10),
}


def shape(node):
    return (len(node.children), tuple(shape(c) for c in node.children))


def test_clinic_is_the_reference_clinic():
    assert CLINIC.M == 21.0 and CLINIC.V == pytest.approx(0.4 * 21.0)


def test_1_baseline_reproduction():
    lines, ok = [], True
    for name, (ref, tol) in REFERENCE.items():
        start = time.perf_counter()
        res = evaluate_rule_on_test(name, CLINIC, TEST_SEED, 15000)
        elapsed = time.perf_counter() - start
        good = abs(res.mean - ref) <= tol * ref and elapsed < 30
        ok &= good
        lines.append(f"{name}={res.mean:.4f} ({elapsed:.1f}s)")
    record(1, ok, " ".join(lines))
    assert ok, lines


def test_2_repair_matches_exhaustive_search():
    rng = np.random.default_rng(7)
    cases = []
    while len(cases) < 200:
        tree = random_tree(2, int(rng.integers(2, 6)), "grow", rng)
        if size(tree) <= 25:
            cases.append((tree, len(cases) % 2))
    start = time.perf_counter()
    mismatches = 0
    for tree, target in cases:
        try:
            got = solve(build_problem(tree, target)).objective
        except Infeasible:
            got = None
        mismatches += got != brute_force_repair(tree, target)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 60
    record(2, ok, f"{mismatches} mismatches in 200 trees, {elapsed:.1f}s")
    assert ok


def test_3_repair_soundness():
    rng = np.random.default_rng(11)
    population = ramped_init(10000, rng)
    gaps = shape_breaks = mutated = 0
    for ind in population:
        log = RepairLog()
        fixed = repair_individual(ind, None, rng, log)
        gaps += individual_dim_gap(fixed) != 0
        if log.mutations or log.fallbacks:
            mutated += 1
        elif [shape(t) for t in fixed.trees] != [shape(t) for t in ind.trees]:
            shape_breaks += 1
    ok = gaps == 0 and shape_breaks == 0
    record(3, ok, f"{gaps} nonzero gaps, {shape_breaks} shape changes, {mutated} mutated of 10000")
    assert ok


def _walkin_bound_violations(trace: Trace) -> int:
    bad = 0
    for w in (p for p in trace.served if p.walkin):
        ahead = sum(1 for p in trace.served if not p.walkin and w.arrival <= p.start < w.start)
        bad += ahead > 3
    return bad


def test_4_simulator_identities():
    rng = np.random.default_rng(5)
    grid = clinic_grid()
    failures = {"no-show": 0, "conservation": 0, "walk-in": 0, "accounting": 0}
    worst = 0.0

    for P in (10, 20):
        c = ClinicConfig(P, 0.4, 1.0, 0.0)
        out = simulate_draw(np.sort(rng.uniform(0, c.L, P)), c, draw_replication(c, rng))
        failures["no-show"] += not (out.WAIT == 0 and out.OVER == 0 and out.IDLE == c.L / P)

    for _ in range(100_000):
        c = grid[rng.integers(len(grid))]
        sched = np.sort(rng.uniform(0, c.L, c.P))
        if rng.random() < 0.3:
            sched = np.round(sched / 10) * 10  # ties exercise simultaneous events
        draw = draw_replication(c, rng)
        tr = Trace()
        out = simulate_draw(sched, c, draw, tr)

        expected = float(draw.service[draw.show].sum() + draw.walkin_service.sum())
        free = 0.0
        for p in tr.served:
            if p.start != max(free, p.arrival):
                break
            free = p.start + p.service
        else:
            free = None
        conserved = (
            len(tr.served) == int(draw.show.sum()) + len(draw.walkin_times)
            and abs(tr.busy - expected) <= 1e-9 * max(1.0, expected)
            and free is None
        )
        failures["conservation"] += not conserved
        failures["walk-in"] += _walkin_bound_violations(tr) > 0
        err = abs(tr.busy + c.P * out.IDLE - (c.L + c.P * out.OVER))
        worst = max(worst, err)
        failures["accounting"] += err > 1e-9
    ok = not any(failures.values())
    record(4, ok, f"failures {failures}, max accounting error {worst:.1e}")
    assert ok, failures


def test_5_monte_carlo_precision():
    res = evaluate_rule_on_test("IBFI", CLINIC, TEST_SEED, 15000)
    rel = res.half_width / res.mean
    ok = rel < 0.01
    record(5, ok, f"IBFI mean {res.mean:.4f}, half-width {res.half_width:.4f} ({100 * rel:.2f}%)")
    assert ok


def test_6_desk_scale_evolution():
    config = EngineConfig(pop_size=64, generations=20, train_replications=500, master_seed=1)
    start = time.perf_counter()
    result = run(config, CLINIC, n_jobs=8)
    elapsed = time.perf_counter() - start
    best = evaluate_rule_on_test(result.best.individual, CLINIC, TEST_SEED, 15000)
    ibfi = evaluate_rule_on_test("IBFI", CLINIC, TEST_SEED, 15000)
    gaps = [individual_dim_gap(e.individual) for e in result.archive]
    ok = elapsed < 300 and best.mean < ibfi.mean and all(g == 0 for g in gaps)
    record(6, ok, f"{elapsed:.1f}s, best {best.mean:.4f} vs IBFI {ibfi.mean:.4f}, "
                  f"archive {len(gaps)} all gap 0: {all(g == 0 for g in gaps)}")
    assert ok


def test_7_dome_semantics():
    notes, ok = [], True
    for rule in fixture_rules():
        for c in clinic_grid():
            times = compute_schedule(rule.individual, c)
            ok &= dome_profile(times).is_dome
        if rule.method == "EVOLVED24":
            turn, plateau = offset_regimes(compute_schedule(rule.individual, CLINIC), CLINIC.M)
            ok &= (turn, plateau) == (4, 7)
            notes.append(f"rule 24 regimes at i={turn},{plateau}")
    notes.append(f"{len(fixture_rules())} fixtures single-peaked on all clinics: {ok}")
    record(7, ok, "; ".join(notes))
    assert ok


def test_8_cli_determinism(tmp_path):
    cfg = tmp_path / "suite.json"
    cfg.write_text(json.dumps({
        "clinics": [1, 17],
        "methods": ["GPDR", "IBFI", "DOME"],
        "runs": 2,
        "engine": {"pop_size": 16, "generations": 3, "train_replications": 50, "test_replications": 500},
    }))
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        for args in (["evolve", "--config", str(cfg), "--seed", "9"],
                     ["baselines", "--clinic", "5", "--seed", "9", "--replications", "500"]):
            sub = out / args[0]
            subprocess.run([sys.executable, "-m", "dimgp", *args, "--output", str(sub), "--jobs", "2"],
                           check=True, capture_output=True)
        outputs.append({p.relative_to(out): p.read_bytes() for p in out.rglob("*") if p.is_file()})
    same = outputs[0] == outputs[1]
    record(8, same, f"{len(outputs[0])} files compared, identical: {same}")
    assert same and len(outputs[0]) >= 10
