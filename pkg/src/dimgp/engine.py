"""The evolutionary loop with dimension repair and a Pareto archive.

Each generation: evaluate on fresh common random numbers, merge the
population's non-dominated front into the archive, count terminal usage in
the archive, breed from population plus archive, and repair the offspring.
With repair disabled the same loop is plain multi-tree GP.
"""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .clinic import TRAIN_STREAM, ClinicConfig, ReplicationPlan, evaluate_schedule, stream_rng
from .dimensions import individual_dim_gap
from .repair import RepairLog, repair_individual
from .tree import Individual, compute_schedule, cs_crossover, iter_nodes, ramped_init, subtree_mutation

N_JOBS_ENV = "DIMGP_N_JOBS"
SCHEDULE_TOL = 1e-9

# stream labels next to TRAIN_STREAM / TEST_STREAM
INIT_STREAM = 2
BREED_STREAM = 3
REPAIR_STREAM = 4


def resolve_n_jobs(n_jobs: Optional[int] = None) -> int:
    """Explicit value, else the environment variable, else 1."""
    if n_jobs is None:
        raw = os.environ.get(N_JOBS_ENV, "").strip()
        try:
            n_jobs = int(raw) if raw else 1
        except ValueError:
            raise ValueError(f"{N_JOBS_ENV} must be an integer, got {raw!r}") from None
    if n_jobs == 0:
        raise ValueError("n_jobs must be nonzero")
    return n_jobs


@dataclass(frozen=True)
class EngineConfig:
    pop_size: int = 256
    generations: int = 50
    tournament_size: int = 7
    p_crossover: float = 0.9
    p_mutation: float = 0.1
    train_replications: int = 500
    test_replications: int = 15000
    master_seed: int = 0
    repair_enabled: bool = True

    def __post_init__(self):
        for name in ("pop_size", "generations", "tournament_size",
                     "train_replications", "test_replications"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.p_crossover <= 1 and 0 <= self.p_mutation <= 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(self.p_crossover + self.p_mutation - 1) > 1e-9:
            raise ValueError("p_crossover + p_mutation must equal 1")

    @classmethod
    def from_dict(cls, data: dict) -> EngineConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown engine settings: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# Archive


@dataclass(frozen=True)
class ArchiveEntry:
    individual: Individual
    fitness: float
    size: int
    schedule: np.ndarray = field(compare=False, repr=False)

    @classmethod
    def of(cls, ind: Individual, fitness: float, clinic: ClinicConfig) -> ArchiveEntry:
        return cls(ind.with_fitness(fitness), float(fitness), ind.size, compute_schedule(ind, clinic))


def dominates(a: ArchiveEntry, b: ArchiveEntry) -> bool:
    return (
        a.fitness <= b.fitness
        and a.size <= b.size
        and (a.fitness < b.fitness or a.size < b.size)
    )


def same_schedule(a: ArchiveEntry, b: ArchiveEntry, tol: float = SCHEDULE_TOL) -> bool:
    return a.schedule.shape == b.schedule.shape and bool(
        np.all(np.abs(a.schedule - b.schedule) <= tol)
    )


def non_dominated(entries: Sequence[ArchiveEntry]) -> list[ArchiveEntry]:
    return [e for e in entries if not any(dominates(o, e) for o in entries if o is not e)]


def _dedupe(entries: Sequence[ArchiveEntry]) -> list[ArchiveEntry]:
    """Collapse identical schedules to the smallest program (earliest on ties).

    The survivor carries the best fitness seen for that schedule, so merging
    never worsens the archive's best fitness.
    """
    groups: list[list[ArchiveEntry]] = []
    for e in entries:
        for g in groups:
            if same_schedule(g[0], e):
                g.append(e)
                break
        else:
            groups.append([e])
    out = []
    for g in groups:
        keep = min(g, key=lambda e: e.size)  # min is stable: earliest wins ties
        best = min(e.fitness for e in g)
        if best < keep.fitness:
            keep = ArchiveEntry(keep.individual.with_fitness(best), best, keep.size, keep.schedule)
        out.append(keep)
    return out


def archive_update(
    population: Sequence[ArchiveEntry], archive: Sequence[ArchiveEntry]
) -> list[ArchiveEntry]:
    """Merge the population's non-dominated front into the archive.

    Membership is decided on the union at once (archive members first), so
    no entry is dropped on behalf of a candidate that is itself rejected.
    """
    front = non_dominated(_dedupe(list(population)))
    merged = _dedupe(list(archive) + front)
    result = non_dominated(merged)
    return sorted(result, key=lambda e: (e.fitness, e.size))


def check_archive(archive: Sequence[ArchiveEntry]) -> None:
    """Raise if the archive holds a dominated entry or a duplicate schedule."""
    for a in archive:
        for b in archive:
            if a is b:
                continue
            if dominates(a, b):
                raise AssertionError("archive holds a dominated entry")
            if same_schedule(a, b):
                raise AssertionError("archive holds duplicate schedules")


def terminal_frequencies(archive: Iterable) -> dict[str, int]:
    """Terminal occurrences across the archive's trees, by terminal name."""
    counts: Counter = Counter()
    for e in archive:
        ind = e.individual if isinstance(e, ArchiveEntry) else e
        for tree in ind.trees:
            counts.update(n.name for _, n in iter_nodes(tree) if not n.children)
    return dict(counts)


# ---------------------------------------------------------------------------
# Breeding


def tournament(pool: Sequence[Individual], k: int, rng: np.random.Generator) -> Individual:
    """Best (minimum) fitness among ``k`` uniform draws with replacement."""
    idx = rng.integers(len(pool), size=k)
    best = min(idx, key=lambda j: pool[j].fitness)  # first drawn wins ties
    return pool[best]


def breed(
    pool: Sequence[Individual], config: EngineConfig, rng: np.random.Generator
) -> list[Individual]:
    if not pool or any(p.fitness is None for p in pool):
        raise ValueError("mating pool members need a fitness")
    offspring: list[Individual] = []
    while len(offspring) < config.pop_size:
        if rng.random() < config.p_crossover:
            a = tournament(pool, config.tournament_size, rng)
            b = tournament(pool, config.tournament_size, rng)
            offspring.extend(cs_crossover(a, b, rng))
        else:
            parent = tournament(pool, config.tournament_size, rng)
            offspring.append(subtree_mutation(parent, rng))
    return [Individual(o.trees) for o in offspring[: config.pop_size]]


# ---------------------------------------------------------------------------
# Main loop


@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best_fitness: float  # archive best
    population_best: float
    mean_fitness: float
    mean_size: float
    archive_size: int
    mean_dim_gap: float
    repairs: int
    repair_mutations: int
    repair_fallbacks: int


@dataclass
class RunResult:
    best: ArchiveEntry
    archive: list[ArchiveEntry]
    history: list[GenerationStats]
    config: EngineConfig


def _chunks(n: int, parts: int) -> list[range]:
    bounds = np.linspace(0, n, max(1, min(parts, n)) + 1).astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def _evaluate_chunk(pop, idx, clinic, plan) -> list[float]:
    return [evaluate_schedule(compute_schedule(pop[k], clinic), clinic, plan) for k in idx]


def _repair_chunk(pop, idx, freqs, master_seed, generation) -> list[tuple[Individual, RepairLog]]:
    out = []
    for k in idx:
        log = RepairLog()
        rng = stream_rng(master_seed, REPAIR_STREAM, generation, k)
        out.append((repair_individual(pop[k], freqs, rng, log), log))
    return out


class Engine:
    """Runs one evolutionary run; the worker pool lives as long as the engine."""

    def __init__(self, config: EngineConfig, clinic: ClinicConfig, n_jobs: Optional[int] = None):
        self.config = config
        self.clinic = clinic
        self.n_jobs = resolve_n_jobs(n_jobs)

    def _map(self, parallel, func, pop, *args) -> list:
        parts = _chunks(len(pop), abs(self.n_jobs) if self.n_jobs > 0 else os.cpu_count() or 1)
        results = parallel(delayed(func)(pop, idx, *args) for idx in parts)
        return [r for chunk in results for r in chunk]

    def evaluate(self, parallel, pop, generation) -> list[ArchiveEntry]:
        cfg = self.config
        plan = ReplicationPlan(cfg.train_replications, cfg.master_seed, generation, TRAIN_STREAM)
        fits = self._map(parallel, _evaluate_chunk, pop, self.clinic, plan)
        return [ArchiveEntry.of(ind, f, self.clinic) for ind, f in zip(pop, fits)]

    def repair(self, parallel, pop, freqs, generation):
        pairs = self._map(parallel, _repair_chunk, pop, freqs, self.config.master_seed, generation)
        total = RepairLog()
        for _, log in pairs:
            total.solved += log.solved
            total.mutations += log.mutations
            total.fallbacks += log.fallbacks
        return [ind for ind, _ in pairs], total

    def run(self, log_path=None) -> RunResult:
        cfg = self.config
        pop = ramped_init(cfg.pop_size, stream_rng(cfg.master_seed, INIT_STREAM))
        archive: list[ArchiveEntry] = []
        history: list[GenerationStats] = []
        log = HistoryLog(log_path)
        with log, Parallel(n_jobs=self.n_jobs, prefer="threads") as parallel:
            rlog = RepairLog()
            if cfg.repair_enabled:
                pop, rlog = self.repair(parallel, pop, None, 0)
            for g in range(cfg.generations):
                gaps = [float(individual_dim_gap(ind)) for ind in pop]
                entries = self.evaluate(parallel, pop, g)
                archive = archive_update(entries, archive)
                fits = np.array([e.fitness for e in entries])
                history.append(GenerationStats(
                    generation=g,
                    best_fitness=archive[0].fitness,
                    population_best=float(fits.min()),
                    mean_fitness=float(fits.mean()),
                    mean_size=float(np.mean([e.size for e in entries])),
                    archive_size=len(archive),
                    mean_dim_gap=float(np.mean(gaps)),
                    repairs=rlog.solved,
                    repair_mutations=rlog.mutations,
                    repair_fallbacks=rlog.fallbacks,
                ))
                log.write(history[-1])
                if g == cfg.generations - 1:
                    break
                pool = [e.individual for e in entries] + [e.individual for e in archive]
                pop = breed(pool, cfg, stream_rng(cfg.master_seed, BREED_STREAM, g))
                rlog = RepairLog()
                if cfg.repair_enabled:
                    freqs = terminal_frequencies(archive)
                    pop, rlog = self.repair(parallel, pop, freqs, g + 1)
        return RunResult(archive[0], archive, history, cfg)


def run(config: EngineConfig, clinic: ClinicConfig, n_jobs: Optional[int] = None, log_path=None) -> RunResult:
    return Engine(config, clinic, n_jobs).run(log_path)


class HistoryLog:
    """Streams per-generation statistics to a CSV file (no-op without a path)."""

    names = tuple(f.name for f in fields(GenerationStats))

    def __init__(self, path=None):
        self.path = path
        self._fh = None
        self._writer = None

    def __enter__(self):
        if self.path is not None:
            try:
                self._fh = open(self.path, "w", newline="", encoding="utf-8")
            except OSError as exc:
                raise OSError(f"{self.path}: {exc.strerror or exc}") from exc
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(self.names)
        return self

    def write(self, stats: GenerationStats) -> None:
        if self._writer is None:
            return
        self._writer.writerow([_cell(getattr(stats, n)) for n in self.names])
        self._fh.flush()

    def __exit__(self, *exc):
        if self._fh is not None:
            self._fh.close()
        return False


def _cell(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)
