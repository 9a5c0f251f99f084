"""Reference strategies: repaired random search and exhaustive enumeration.

Both serve as yardsticks for the two-phase search; the brute-force oracle
additionally defines ground truth on instances small enough to enumerate.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .context import SearchContext
from .evaluator import (
    EvalRecord,
    EvalRequest,
    Ledger,
    SyntheticLatent,
    evaluate_batch,
    synthetic_asymptote,
)
from .refine import UtilitySpec
from .space import Config, SearchSpace, space_memory

log = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 10_000


class SpaceTooLargeError(ValueError):
    """Enumeration refused beyond the configured size limit."""


def random_config(ctx: SearchContext, rng: np.random.Generator) -> Config:
    """Uniform ladder choice per variable, then repair."""
    q = tuple(
        ctx.space.ladders.q.values[int(rng.integers(len(ctx.space.ladders.q)))]
        for _ in range(ctx.space.num_layers)
    )
    r = tuple(
        ctx.space.ladders.r.values[int(rng.integers(len(ctx.space.ladders.r)))]
        for _ in range(ctx.space.num_layers)
    )
    return ctx.repair(Config(q, r))


@dataclass
class RandomSearchResult:
    records: list[EvalRecord | None]
    best_curve: list[float]

    @property
    def best_score(self) -> float:
        return self.best_curve[-1] if self.best_curve else float("nan")

    def evals_to_reach(self, target: float) -> int | None:
        """1-based index of the first evaluation whose running best matches
        the target; None when the curve never gets there."""
        for i, value in enumerate(self.best_curve):
            if value >= target:
                return i + 1
        return None


def random_search(
    ctx: SearchContext,
    backend,
    ledger: Ledger,
    n_evals: int,
    steps: int,
    eval_seed: int,
    rng: np.random.Generator,
    workers: int = 1,
) -> RandomSearchResult:
    """Evaluate n repaired uniform-random configs at one fidelity and track
    the running best score.  Failed evaluations hold the curve flat."""
    if n_evals < 1:
        raise ValueError("n_evals must be >= 1")
    configs = [random_config(ctx, rng) for _ in range(n_evals)]
    requests = [EvalRequest(c, steps, eval_seed) for c in configs]
    records = evaluate_batch(requests, backend, ledger, ctx.space, workers=workers)
    curve: list[float] = []
    best = float("-inf")
    for record in records:
        if record is not None:
            best = max(best, record.score)
        curve.append(best)
    return RandomSearchResult(records=records, best_curve=curve)


@dataclass(frozen=True)
class OracleEntry:
    config: Config
    score: float
    memory_bytes: int
    utility: float


@dataclass
class OracleTable:
    """All feasible configs with noiseless scores, best utility first."""

    entries: list[OracleEntry]
    alpha: float
    spec: UtilitySpec

    def utilities(self) -> list[float]:
        return [e.utility for e in self.entries]

    def rank_of(self, config: Config) -> int:
        """0-based utility rank of a config; raises if it is not feasible."""
        key = config.key()
        for i, entry in enumerate(self.entries):
            if entry.config.key() == key:
                return i
        raise KeyError(f"config {key} not in the feasible set")

    def top_fraction(self, fraction: float) -> int:
        """Number of entries inside the given top fraction (at least one)."""
        return max(1, int(np.ceil(fraction * len(self.entries))))


def enumerate_configs(space: SearchSpace):
    q_vals = space.ladders.q.values
    r_vals = space.ladders.r.values
    layers = space.num_layers
    for q in itertools.product(q_vals, repeat=layers):
        for r in itertools.product(r_vals, repeat=layers):
            yield Config(q, r)


def brute_force_oracle(
    space: SearchSpace,
    max_bytes: int,
    latent: SyntheticLatent,
    alpha: float,
    steps: int | None = None,
    limit: int = BRUTE_FORCE_LIMIT,
) -> OracleTable:
    """Enumerate every feasible config and score it noiselessly.

    With ``steps`` the scores sit on the learning curve at that fidelity
    (still noise-free); otherwise they are the asymptotes.  Utilities use
    min-max bounds over the feasible set itself and are identical under
    either convention, because min-max normalization absorbs the common
    saturation factor.  Refuses to enumerate spaces above ``limit``
    configurations.
    """
    count = space.total_configs()
    if count > limit:
        raise SpaceTooLargeError(
            f"{count} configurations exceed the enumeration limit of {limit}"
        )
    min_bits = space.ladders.q.minimum
    saturation = 1.0
    if steps is not None:
        saturation = 1.0 - float(np.exp(-steps / latent.learning_timescale))
    rows: list[tuple[Config, float, int]] = []
    for config in enumerate_configs(space):
        memory = space_memory(config, space)
        if memory > max_bytes:
            continue
        score = synthetic_asymptote(config, latent, min_bits) * saturation
        rows.append((config, score, memory))
    if not rows:
        raise ValueError("no feasible configuration under the given budget")
    scores = [s for _, s, _ in rows]
    memories = [float(m) for _, _, m in rows]
    spec = UtilitySpec(
        alpha, min(scores), max(scores), min(memories), max(memories)
    )
    entries = [
        OracleEntry(config, score, memory, spec.scalarize(score, memory))
        for config, score, memory in rows
    ]
    entries.sort(key=lambda e: (-e.utility, e.memory_bytes, e.config.key()))
    log.info("oracle: %d feasible of %d total configs", len(entries), count)
    return OracleTable(entries=entries, alpha=alpha, spec=spec)
