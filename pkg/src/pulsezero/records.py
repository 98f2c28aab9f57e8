"""Run bookkeeping shared by every optimizer: per-episode/iteration records
and cooperative wall-time or unit-count budgets."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass
class OptimizationRecord:
    """One optimizer data point: an episode, iteration or refined solution."""

    index: int
    infidelity: float
    wall_time_s: float
    optimizer: str = ""
    seed: int = 0
    config_hash: str = ""
    sequence: tuple[int, ...] | None = None
    pulse: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    @property
    def fidelity(self) -> float:
        return 1.0 - self.infidelity


def best_record(records) -> OptimizationRecord:
    return min(records, key=lambda r: r.infidelity)


@dataclass(frozen=True)
class Budget:
    """Either a unit count (episodes/iterations) or a wall-clock allowance.

    Exactly one of the two must be set. Wall-time budgets are enforced
    cooperatively: optimizers check the clock between units of work and stop
    within one unit past the deadline.
    """

    units: int | None = None
    seconds: float | None = None

    def __post_init__(self):
        if (self.units is None) == (self.seconds is None):
            raise DomainError("set exactly one of units or seconds")
        if self.units is not None and self.units <= 0:
            raise DomainError("unit budget must be positive")
        if self.seconds is not None and self.seconds <= 0:
            raise DomainError("wall-time budget must be positive")

    def start(self) -> "BudgetClock":
        return BudgetClock(self)

    def split(self, fraction: float) -> tuple["Budget", "Budget"]:
        """Two budgets carving the original into fraction / 1 - fraction."""
        if not 0.0 < fraction < 1.0:
            raise DomainError("fraction must lie strictly between 0 and 1")
        if self.units is not None:
            first = max(1, int(round(self.units * fraction)))
            return Budget(units=first), Budget(units=max(1, self.units - first))
        return Budget(seconds=self.seconds * fraction), Budget(
            seconds=self.seconds * (1.0 - fraction)
        )


class BudgetClock:
    """Running-budget view handed to an optimizer loop."""

    def __init__(self, budget: Budget):
        self.budget = budget
        self._t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._t0

    def exhausted(self, completed_units: int) -> bool:
        if self.budget.units is not None:
            return completed_units >= self.budget.units
        return self.elapsed() >= self.budget.seconds
