"""Single-server clinic session simulation.

Scheduled patients arrive punctually (unless they no-show), walk-ins arrive
as a Poisson process and jump the queue to position 4.  Service times are
log-normal with mean ``M`` and standard deviation ``V``.

Random numbers are organised in replications: replication ``r`` of a plan
draws everything it needs from its own stream, derived purely from
``(master_seed, stream, generation, r)``.  Every schedule evaluated against
the same plan therefore sees the same patients (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import stats

SESSION_LENGTH = 210.0
COST_RATIO = 0.1
WALKIN_POSITION = 4  # 1-indexed queue slot, in-service patient not counted

TRAIN_STREAM = 0
TEST_STREAM = 1


@dataclass(frozen=True)
class ClinicConfig:
    P: int
    CV: float
    PN: float = 0.0
    PW: float = 0.0
    L: float = SESSION_LENGTH
    CR: float = COST_RATIO

    def __post_init__(self):
        if int(self.P) != self.P or self.P < 1:
            raise ValueError(f"P must be a positive integer, got {self.P}")
        # CV = 0 is the degenerate deterministic-service clinic
        if not self.CV >= 0:
            raise ValueError(f"CV must be non-negative, got {self.CV}")
        for name in ("PN", "PW"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not self.L > 0:
            raise ValueError("L must be positive")

    @property
    def M(self) -> float:
        return self.L / self.P

    @property
    def V(self) -> float:
        return self.CV * self.M

    def label(self) -> str:
        return f"<M={self.M:.1f},CV={self.CV:.2f},PN={self.PN:.2f},PW={self.PW:.2f}>"


def clinic_grid() -> list[ClinicConfig]:
    """The 24 benchmark clinics, in the usual reporting order (PW fastest)."""
    return [
        ClinicConfig(P, CV, PN, PW)
        for P in (10, 20)
        for CV in (0.4, 0.6, 0.8)
        for PN in (0.0, 0.15)
        for PW in (0.0, 0.15)
    ]


def get_clinic(clinic_id: int) -> ClinicConfig:
    """Clinic by 1-based grid row."""
    grid = clinic_grid()
    if not 1 <= clinic_id <= len(grid):
        raise ValueError(f"clinic id must be in 1..{len(grid)}, got {clinic_id}")
    return grid[clinic_id - 1]


@dataclass(frozen=True)
class SimOutcome:
    WAIT: float
    IDLE: float
    OVER: float
    TC: float


def total_cost(wait, idle, over, cr: float = COST_RATIO):
    return wait + cr * (10.0 * idle + 15.0 * over)


def lognormal_params(M: float, V: float) -> tuple[float, float]:
    """``(mu, sigma)`` of the log-normal with mean ``M`` and std ``V``."""
    if not M > 0 or V < 0:
        raise ValueError("need M > 0 and V >= 0")
    s2 = math.log1p((V / M) ** 2)
    return math.log(M) - s2 / 2.0, math.sqrt(s2)


def sample_service(clinic: ClinicConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    mu, sigma = lognormal_params(clinic.M, clinic.V)
    return rng.lognormal(mu, sigma, size=n)


def sample_walkins(clinic: ClinicConfig, rng: np.random.Generator) -> np.ndarray:
    """Sorted walk-in arrival times: Poisson process on ``[0, L]`` with rate
    ``PW * P / L``."""
    n = rng.poisson(clinic.PW * clinic.P) if clinic.PW > 0 else 0
    return np.sort(rng.uniform(0.0, clinic.L, size=n))


@dataclass(frozen=True)
class ReplicationDraw:
    """All randomness one replication consumes."""

    service: np.ndarray  # per scheduled patient
    show: np.ndarray  # bool per scheduled patient
    walkin_times: np.ndarray
    walkin_service: np.ndarray


def draw_replication(clinic: ClinicConfig, rng: np.random.Generator) -> ReplicationDraw:
    service = sample_service(clinic, rng, clinic.P)
    show = rng.random(clinic.P) >= clinic.PN
    times = sample_walkins(clinic, rng)
    wservice = sample_service(clinic, rng, len(times))
    return ReplicationDraw(service, show, times, wservice)


def stream_rng(master_seed: int, *labels: int) -> np.random.Generator:
    """Generator that depends only on the seed and the integer labels."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(x) for x in labels))
    )


@dataclass(frozen=True)
class ReplicationPlan:
    count: int
    master_seed: int
    generation: int = 0
    stream: int = TRAIN_STREAM

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be positive")

    def rng(self, replication: int) -> np.random.Generator:
        return stream_rng(self.master_seed, self.stream, self.generation, replication)


@dataclass(frozen=True)
class DrawBatch:
    """Replication draws of a plan stacked for vectorised simulation."""

    service: np.ndarray  # (R, P)
    show: np.ndarray  # (R, P)
    walkins: tuple  # per replication (times, services)
    has_walkins: np.ndarray  # (R,)

    @property
    def count(self) -> int:
        return self.service.shape[0]


@lru_cache(maxsize=16)
def plan_draws(clinic: ClinicConfig, plan: ReplicationPlan) -> DrawBatch:
    draws = [draw_replication(clinic, plan.rng(r)) for r in range(plan.count)]
    return DrawBatch(
        service=np.stack([d.service for d in draws]),
        show=np.stack([d.show for d in draws]),
        walkins=tuple((d.walkin_times, d.walkin_service) for d in draws),
        has_walkins=np.array([len(d.walkin_times) > 0 for d in draws]),
    )


# ---------------------------------------------------------------------------
# Event-driven simulation


@dataclass
class Patient:
    pid: int  # scheduled index, or -1-k for the k-th walk-in
    arrival: float
    service: float
    walkin: bool
    start: Optional[float] = None


@dataclass
class Trace:
    """Per-replication record used by invariant checks and event logs."""

    served: list = field(default_factory=list)  # Patients in service order
    events: list = field(default_factory=list)  # (time, kind, pid)
    busy: float = 0.0
    last_completion: float = 0.0


def _check_schedule(schedule: Sequence[float], clinic: ClinicConfig) -> np.ndarray:
    sched = np.asarray(schedule, dtype=float)
    if sched.shape != (clinic.P,):
        raise ValueError(f"schedule needs {clinic.P} appointment times, got {sched.shape}")
    if np.any(np.diff(sched) < 0):
        raise ValueError("schedule must be non-decreasing")
    if sched.size and (sched[0] < 0 or sched[-1] > clinic.L):
        raise ValueError("schedule must lie within [0, L]")
    return sched


def simulate_draw(
    schedule: Sequence[float],
    clinic: ClinicConfig,
    draw: ReplicationDraw,
    trace: Optional[Trace] = None,
) -> SimOutcome:
    sched = _check_schedule(schedule, clinic)
    arrivals = [
        Patient(k, float(sched[k]), float(draw.service[k]), False)
        for k in range(clinic.P)
        if draw.show[k]
    ]
    arrivals += [
        Patient(-1 - k, float(t), float(s), True)
        for k, (t, s) in enumerate(zip(draw.walkin_times, draw.walkin_service))
    ]
    # stable: scheduled patients keep index order on equal times
    arrivals.sort(key=lambda p: p.arrival)

    queue: list[Patient] = []
    free_at = 0.0
    busy = 0.0
    wait_total = 0.0
    served = 0
    nxt = 0
    n_arr = len(arrivals)
    while nxt < n_arr or queue:
        next_arrival = arrivals[nxt].arrival if nxt < n_arr else math.inf
        # arrivals at the completion instant join the queue before the next start
        if queue and free_at < next_arrival:
            p = queue.pop(0)
            start = max(free_at, p.arrival)
            p.start = start
            wait_total += start - p.arrival
            free_at = start + p.service
            busy += p.service
            served += 1
            if trace is not None:
                trace.served.append(p)
                trace.events.append((start, "start", p.pid))
                trace.events.append((free_at, "complete", p.pid))
            continue
        p = arrivals[nxt]
        nxt += 1
        if p.walkin and len(queue) >= WALKIN_POSITION:
            queue.insert(WALKIN_POSITION - 1, p)
        else:
            queue.append(p)
        if trace is not None:
            trace.events.append((p.arrival, "walkin" if p.walkin else "arrive", p.pid))

    last = free_at if served else 0.0
    L, P = clinic.L, clinic.P
    wait = wait_total / served if served else 0.0
    over = max(0.0, last - L) / P
    idle = (max(last, L) - busy) / P
    if trace is not None:
        trace.busy = busy
        trace.last_completion = last
        trace.events.sort(key=lambda e: (e[0], 0 if e[1] == "complete" else 1))
    return SimOutcome(wait, idle, over, total_cost(wait, idle, over, clinic.CR))


def simulate_once(
    schedule: Sequence[float],
    clinic: ClinicConfig,
    rng: np.random.Generator,
    trace: Optional[Trace] = None,
) -> SimOutcome:
    return simulate_draw(schedule, clinic, draw_replication(clinic, rng), trace)


def write_event_log(trace: Trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, kind, pid in trace.events:
            fh.write(f"{t:.6f} {kind} {pid}\n")


# ---------------------------------------------------------------------------
# Batch evaluation


def _vectorised(sched: np.ndarray, clinic: ClinicConfig, service, show):
    """Lindley recursion across replications; valid when no walk-ins arrive."""
    R = service.shape[0]
    end = np.zeros(R)
    busy = np.zeros(R)
    wait = np.zeros(R)
    n = np.zeros(R)
    for k in range(clinic.P):
        s = service[:, k]
        on = show[:, k]
        start = np.maximum(sched[k], end)
        wait += np.where(on, start - sched[k], 0.0)
        end = np.where(on, start + s, end)
        busy += np.where(on, s, 0.0)
        n += on
    L, P = clinic.L, clinic.P
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(n > 0, wait / np.maximum(n, 1), 0.0)
    over = np.maximum(0.0, end - L) / P
    idle = (np.maximum(end, L) - busy) / P
    return w, idle, over


def simulate_batch(schedule: Sequence[float], clinic: ClinicConfig, batch: DrawBatch) -> np.ndarray:
    """Per-replication total cost of ``schedule``."""
    sched = _check_schedule(schedule, clinic)
    tc = np.empty(batch.count)
    plain = ~batch.has_walkins
    if plain.any():
        w, i, o = _vectorised(sched, clinic, batch.service[plain], batch.show[plain])
        tc[plain] = total_cost(w, i, o, clinic.CR)
    for r in np.flatnonzero(batch.has_walkins):
        times, wserv = batch.walkins[r]
        draw = ReplicationDraw(batch.service[r], batch.show[r], times, wserv)
        tc[r] = simulate_draw(sched, clinic, draw).TC
    return tc


def evaluate_schedule(schedule: Sequence[float], clinic: ClinicConfig, plan: ReplicationPlan) -> float:
    return float(simulate_batch(schedule, clinic, plan_draws(clinic, plan)).mean())


def evaluate_fitness(ind, clinic: ClinicConfig, plan: ReplicationPlan) -> float:
    """Mean total cost of an individual's schedule over the plan."""
    from .tree import compute_schedule

    return evaluate_schedule(compute_schedule(ind, clinic), clinic, plan)


def batch_means_ci(values: np.ndarray, n_batches: int = 30, level: float = 0.95) -> tuple[float, float]:
    """``(mean, half_width)`` of a confidence interval from batch means."""
    values = np.asarray(values, dtype=float)
    n_batches = min(n_batches, len(values))
    if n_batches < 2:
        return float(values.mean()), math.inf
    usable = len(values) - len(values) % n_batches
    means = values[:usable].reshape(n_batches, -1).mean(axis=1)
    half = stats.t.ppf(0.5 + level / 2, n_batches - 1) * means.std(ddof=1) / math.sqrt(n_batches)
    return float(values.mean()), float(half)


def service_controls(clinic: ClinicConfig, batch: DrawBatch) -> tuple[np.ndarray, np.ndarray]:
    """Control variates with known expectations: total service of patients who
    show up, and total walk-in service.  Returns ``(X, mu)``."""
    shown = (batch.service * batch.show).sum(axis=1)
    walk = np.array([s.sum() for _, s in batch.walkins])
    X = np.column_stack([shown, walk])
    mu = np.array([clinic.P * (1 - clinic.PN) * clinic.M, clinic.PW * clinic.P * clinic.M])
    return X, mu


def control_variate_ci(
    values: np.ndarray,
    controls: np.ndarray,
    control_means: np.ndarray,
    n_batches: int = 30,
    level: float = 0.95,
) -> tuple[float, float]:
    """Batch-means interval of ``values`` adjusted by linear control variates.

    The coefficients come from a least-squares fit of the centred values on
    the centred controls; constant controls are dropped.
    """
    values = np.asarray(values, dtype=float)
    X = np.asarray(controls, dtype=float) - np.asarray(control_means, dtype=float)
    keep = X.std(axis=0) > 0
    if keep.any():
        Xc = X[:, keep] - X[:, keep].mean(axis=0)
        beta, *_ = np.linalg.lstsq(Xc, values - values.mean(), rcond=None)
        values = values - X[:, keep] @ beta
    return batch_means_ci(values, n_batches, level)
