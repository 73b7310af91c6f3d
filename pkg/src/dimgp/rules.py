"""Manually designed appointment rules and the interval-profile analysis.

The cut points of OFFSET and DOME are not fixed by the rules themselves;
the defaults put the OFFSET switch mid-session and bracket the DOME plateau
around the middle third, and both can be overridden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .clinic import ClinicConfig
from .tree import Individual, clamp_schedule, compute_schedule, parse_individual

MANUAL_RULES = ("IBFI", "2BEG", "MBFI", "OFFSET", "DOME", "RULE7")

# Best evolved rules reported for grid rows 9, 10 and 14, written as
# individuals.  CV is not a terminal, so it appears as V / M.
EVOLVED_RULES: dict[str, tuple[str, int]] = {
    "EVOLVED24": (
        "(add (sub i CR) (sub (min (mul (mul 0.2 CR) (mul i i)) 0.8) 0.2)) | (mul 0 M)",
        9,
    ),
    "EVOLVED25": (
        "(sub i 0.31003) | "
        "(mul (mul 0.18 (min (div (mul PW (sub (sub i PW) 1)) (div V M)) 1)) (mul i V))",
        10,
    ),
    "EVOLVED26": (
        "i | (mul (mul 0.43479 (min (mul (sub (mul 0.43479 i) 2) (sqrt i)) i)) V)",
        14,
    ),
}

RULE_NAMES = MANUAL_RULES + tuple(EVOLVED_RULES)


@dataclass(frozen=True)
class NamedRule:
    name: str
    params: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        if self.name not in RULE_NAMES:
            raise ValueError(
                f"unknown rule {self.name!r}; choose from {', '.join(RULE_NAMES)}"
            )

    def cut_points(self, P: int) -> dict:
        if self.name == "OFFSET":
            cuts = {"k": math.ceil(P / 2)}
        elif self.name == "DOME":
            cuts = {"k1": math.ceil(P / 3), "k2": math.ceil(2 * P / 3)}
        else:
            cuts = {}
        cuts.update({k: v for k, v in self.params.items() if k in cuts})
        if "k1" in cuts and not 0 <= cuts["k1"] <= cuts["k2"] <= P:
            raise ValueError("need 0 <= k1 <= k2 <= P")
        if "k" in cuts and not 0 <= cuts["k"] <= P:
            raise ValueError("need 0 <= k <= P")
        return cuts


def evolved_individual(name: str) -> Individual:
    return parse_individual(EVOLVED_RULES[name][0])


def _raw(rule: NamedRule, clinic: ClinicConfig) -> np.ndarray:
    P, M, V = clinic.P, clinic.M, clinic.V
    i = np.arange(P, dtype=float)
    name = rule.name
    cuts = rule.cut_points(P)
    if name == "IBFI":
        return i * M
    if name == "2BEG":
        return np.where(i <= 1, 0.0, (i - 1) * M)
    if name == "MBFI":
        return np.where(i % 2 == 0, i * M, (i - 1) * M)
    if name == "OFFSET":
        k = cuts["k"]
        return i * M + np.where(i <= k, 0.15, 0.3) * (i - k) * V
    if name == "DOME":
        k1, k2 = cuts["k1"], cuts["k2"]
        return np.select(
            [i <= k1, i <= k2],
            [i * M + 0.15 * (i - k1) * V, i * M + 0.3 * (i - k1) * V],
            i * M - 0.05 * (i - k2) * V,
        )
    if name == "RULE7":
        return np.where(i <= 1, 0.0, (i - 1) * M + 0.3 * (i - 1) * V)
    raise AssertionError(name)


def schedule(rule, clinic: ClinicConfig) -> np.ndarray:
    """Appointment times of a named rule (or rule name) on ``clinic``."""
    if isinstance(rule, str):
        rule = NamedRule(rule)
    if rule.name in EVOLVED_RULES:
        return compute_schedule(evolved_individual(rule.name), clinic)
    return clamp_schedule(_raw(rule, clinic), clinic.L)


# ---------------------------------------------------------------------------
# Interval profiles


@dataclass(frozen=True)
class DomeProfile:
    intervals: np.ndarray
    is_dome: bool
    peak: Optional[int]  # 1-based patient index the longest interval leads into


def dome_profile(times, tol: float = 1e-9) -> DomeProfile:
    """Consecutive appointment intervals and whether they are single-peaked
    (non-decreasing, then non-increasing; trailing zero intervals ignored)."""
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < -tol):
        raise ValueError("schedule must be non-decreasing")
    intervals = np.diff(times)
    core = intervals.copy()
    while core.size and abs(core[-1]) <= tol:
        core = core[:-1]
    if core.size == 0:
        return DomeProfile(intervals, True, None)
    steps = np.diff(core)
    falling = False
    dome = True
    for s in steps:
        if s < -tol:
            falling = True
        elif s > tol and falling:
            dome = False
            break
    peak = int(np.argmax(core)) + 1
    return DomeProfile(intervals, dome, peak)


def offset_regimes(times, M: float, tol: float = 1e-9) -> tuple[Optional[int], Optional[int]]:
    """Regime switches of the offset ``A_i - i*M`` relative to evenly spaced
    slots.

    Returns ``(turn, plateau)``: the first index where a negative offset turns
    positive, and the first index from which the offset stays constant to the
    end of the session (``None`` when absent).
    """
    offs = np.asarray(times, dtype=float) - np.arange(len(times)) * M
    turn = None
    seen_negative = False
    for k, o in enumerate(offs):
        if o < -tol:
            seen_negative = True
        elif o > tol and seen_negative:
            turn = k
            break
    plateau = None
    if len(offs) >= 2:
        k = len(offs) - 1
        while k > 0 and abs(offs[k - 1] - offs[-1]) <= tol * max(1.0, abs(offs[-1])):
            k -= 1
        if k < len(offs) - 1:
            plateau = k
    return turn, plateau
