"""scikit-learn style wrappers around the engine and the repair operator."""

from __future__ import annotations

from numbers import Integral
from typing import Iterable, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clinic import ClinicConfig, get_clinic
from .dimensions import individual_dim_gap
from .engine import EngineConfig, run, terminal_frequencies
from .repair import RepairLog, repair_individual
from .tree import Individual, compute_schedule, parse_individual


def check_clinic(clinic) -> ClinicConfig:
    """Coerce ``clinic`` to a :class:`ClinicConfig`.

    Accepts a config, a 1-based grid id, a mapping of its fields, or a
    sequence ``(P, CV[, PN, PW])``.
    """
    if isinstance(clinic, ClinicConfig):
        return clinic
    if isinstance(clinic, (Integral, np.integer)) and not isinstance(clinic, bool):
        return get_clinic(int(clinic))
    if isinstance(clinic, dict):
        return ClinicConfig(**clinic)
    arr = np.asarray(clinic, dtype=float).ravel()
    if arr.size not in (2, 3, 4) or not np.all(np.isfinite(arr)):
        raise ValueError("clinic must be a ClinicConfig, grid id, mapping or (P, CV[, PN, PW])")
    if arr[0] != int(arr[0]):
        raise ValueError("P must be an integer")
    return ClinicConfig(int(arr[0]), *map(float, arr[1:]))


def check_individuals(X) -> list[Individual]:
    """Individuals, or their ``"tree1 | tree2"`` prefix form."""
    if isinstance(X, (Individual, str)):
        X = [X]
    out = []
    for item in X:
        if isinstance(item, str):
            item = parse_individual(item)
        if not isinstance(item, Individual):
            raise TypeError(f"expected an Individual or prefix string, got {type(item).__name__}")
        out.append(item)
    return out


class DimensionAwareScheduler(BaseEstimator):
    """Evolves an appointment rule for one clinic.

    ``fit`` runs the evolutionary loop; ``predict`` returns the appointment
    times the best rule assigns on a clinic; ``score`` is the negated mean
    total cost on held-out replications, so higher is better.
    """

    def __init__(
        self,
        pop_size=256,
        generations=50,
        tournament_size=7,
        p_crossover=0.9,
        train_replications=500,
        test_replications=15000,
        repair=True,
        random_state=0,
        n_jobs=None,
    ):
        self.pop_size = pop_size
        self.generations = generations
        self.tournament_size = tournament_size
        self.p_crossover = p_crossover
        self.train_replications = train_replications
        self.test_replications = test_replications
        self.repair = repair
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _engine_config(self) -> EngineConfig:
        return EngineConfig(
            pop_size=self.pop_size,
            generations=self.generations,
            tournament_size=self.tournament_size,
            p_crossover=self.p_crossover,
            p_mutation=1 - self.p_crossover,
            train_replications=self.train_replications,
            test_replications=self.test_replications,
            master_seed=int(self.random_state or 0),
            repair_enabled=bool(self.repair),
        )

    def fit(self, X, y=None):
        self.clinic_ = check_clinic(X)
        result = run(self._engine_config(), self.clinic_, n_jobs=self.n_jobs)
        self.best_ = result.best.individual
        self.archive_ = [e.individual for e in result.archive]
        self.history_ = result.history
        self.dim_gap_ = float(individual_dim_gap(self.best_))
        return self

    def predict(self, X=None) -> np.ndarray:
        check_is_fitted(self, "best_")
        clinic = self.clinic_ if X is None else check_clinic(X)
        return compute_schedule(self.best_, clinic)

    def score(self, X=None, y=None, seed: int = 0) -> float:
        from .experiments import evaluate_rule_on_test

        check_is_fitted(self, "best_")
        clinic = self.clinic_ if X is None else check_clinic(X)
        return -evaluate_rule_on_test(self.best_, clinic, seed, self.test_replications).mean


class DimensionRepairer(TransformerMixin, BaseEstimator):
    """Repairs individuals to dimensional consistency.

    ``fit`` learns terminal frequencies from reference individuals (an
    archive); ``transform`` repairs with frequency-guided replacement, or
    uniform replacement when fitted on nothing.
    """

    def __init__(self, random_state=None):
        self.random_state = random_state

    def fit(self, X=(), y=None):
        self.terminal_frequencies_ = terminal_frequencies(check_individuals(X))
        return self

    def transform(self, X) -> list[Individual]:
        check_is_fitted(self, "terminal_frequencies_")
        rng = np.random.default_rng(self.random_state)
        self.log_ = RepairLog()
        return [
            repair_individual(ind, self.terminal_frequencies_, rng, self.log_)
            for ind in check_individuals(X)
        ]

    def fit_transform(self, X, y=None, reference: Optional[Iterable] = None):
        return self.fit(X if reference is None else reference).transform(X)
