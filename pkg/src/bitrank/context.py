"""Shared per-run bundle: search space, budget, importance, repair tallies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feasibility import Budget, RepairStats, repair
from .importance import ImportanceProfile
from .space import Config, SearchSpace, embed, space_memory


@dataclass
class SearchContext:
    space: SearchSpace
    budget: Budget
    importance: ImportanceProfile
    repair_stats: RepairStats | None = None

    def __post_init__(self) -> None:
        if not self.importance.normalized:
            raise ValueError("SearchContext requires a normalized importance profile")
        if self.importance.num_layers != self.space.num_layers:
            raise ValueError("importance profile covers a different layer count")

    def repair(self, config: Config) -> Config:
        repaired, trace = repair(config, self.importance, self.budget, self.space)
        if self.repair_stats is not None:
            self.repair_stats.update(trace)
        return repaired

    def memory(self, config: Config) -> int:
        return space_memory(config, self.space)

    def embed(self, config: Config) -> np.ndarray:
        return embed(config, self.space.ladders)

    def feasible(self, config: Config) -> bool:
        return self.memory(config) <= self.budget.max_bytes
