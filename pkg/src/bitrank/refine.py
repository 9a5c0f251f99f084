"""Local phase: trust-region Bayesian refinement at the top fidelity.

The archive's top-fidelity measurements are scalarized into a single
utility, a GP is fit over the ordinal embeddings, and candidates proposed
inside a few diverse trust regions compete on expected improvement.  One
candidate is measured per iteration; regions grow on improvement, shrink
otherwise, and retire after a fixed number of accepted evaluations.
Normalization bounds are refreshed from the full measured set every
iteration, so utilities are always mutually comparable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .context import SearchContext
from .evaluator import (
    EvalRecord,
    EvalRequest,
    EvaluationError,
    Ledger,
    evaluate,
)
from .evolve import sample_edit
from .gp import GpGrid, expected_improvement, fit_gp
from .space import Config, atomic_distance

log = logging.getLogger(__name__)


def _normalize(value: float, lo: float, hi: float) -> float:
    if hi <= lo:
        return 0.5
    return (value - lo) / (hi - lo)


@dataclass(frozen=True)
class UtilitySpec:
    """Scalarization weights plus the min-max bounds they normalize with."""

    alpha: float
    score_lo: float
    score_hi: float
    memory_lo: float
    memory_hi: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    @classmethod
    def from_records(cls, records: list[EvalRecord], alpha: float) -> "UtilitySpec":
        scores = [r.score for r in records]
        memories = [float(r.memory_bytes) for r in records]
        return cls(alpha, min(scores), max(scores), min(memories), max(memories))

    def scalarize(self, score: float, memory: float) -> float:
        p_hat = _normalize(score, self.score_lo, self.score_hi)
        m_hat = _normalize(float(memory), self.memory_lo, self.memory_hi)
        return self.alpha * p_hat - (1.0 - self.alpha) * m_hat


def scalarize(score: float, memory: float, spec: UtilitySpec) -> float:
    return spec.scalarize(score, memory)


@dataclass
class TrustRegion:
    center: Config
    radius: int
    accepted: int = 0


@dataclass
class RefinementParams:
    alpha: float = 0.9
    num_regions: int = 3
    min_center_distance: int = 2
    radius_init: int = 2
    radius_min: int = 1
    radius_max: int | None = None  # defaults to 2 * num_layers
    expand_factor: float = 2.0
    shrink_factor: float = 0.5
    pool_per_region: int = 256
    ei_tol: float = 1e-4
    max_evals: int = 30
    max_per_region: int = 5
    importance_power: float = 2.0
    grid: GpGrid = field(default_factory=GpGrid)

    def resolved_radius_max(self, num_layers: int) -> int:
        return self.radius_max if self.radius_max else 2 * num_layers


@dataclass
class RefinementResult:
    best_config: Config | None
    best_record: EvalRecord | None
    best_utility: float
    trace: list[dict]
    evaluations: int
    stop_reason: str
    regions: list[TrustRegion] = field(default_factory=list)


def init_trust_regions(
    records: list[EvalRecord],
    utilities: list[float],
    ctx: SearchContext,
    num_regions: int,
    min_center_distance: int,
    radius_init: int,
) -> list[TrustRegion]:
    """Greedy diverse centers: walk records by utility (ties toward smaller
    memory) and accept each one at least ``min_center_distance`` atomic
    steps from every accepted center, until ``num_regions`` exist."""
    order = sorted(
        range(len(records)),
        key=lambda i: (-utilities[i], records[i].memory_bytes, i),
    )
    regions: list[TrustRegion] = []
    for idx in order:
        candidate = records[idx].config
        if all(
            atomic_distance(candidate, region.center, ctx.space.ladders)
            >= min_center_distance
            for region in regions
        ):
            regions.append(TrustRegion(center=candidate, radius=radius_init))
        if len(regions) == num_regions:
            break
    return regions


def propose_pool(
    regions: list[tuple[int, TrustRegion]],
    ctx: SearchContext,
    power: float,
    pool_per_region: int,
    ledger: Ledger,
    top_steps: int,
    eval_seed: int,
    rng: np.random.Generator,
    excluded: set,
) -> list[tuple[Config, int]]:
    """Candidate pool: repaired sensitivity-guided random walks of length
    at most each region's radius, deduplicated across regions, minus
    configs already measured at the top fidelity (or marked failed)."""
    pool: list[tuple[Config, int]] = []
    seen: set = set()
    for region_idx, region in regions:
        for _ in range(pool_per_region):
            length = int(rng.integers(1, region.radius + 1))
            candidate = region.center
            for _ in range(length):
                candidate = sample_edit(candidate, ctx, power, rng)
            candidate = ctx.repair(candidate)
            key = candidate.key()
            if key in seen or key in excluded:
                continue
            if ledger.lookup(candidate, top_steps, eval_seed) is not None:
                continue
            seen.add(key)
            pool.append((candidate, region_idx))
    return pool


def update_region(
    region: TrustRegion,
    improved: bool,
    radius_min: int,
    radius_max: int,
    expand_factor: float,
    shrink_factor: float,
    new_center: Config | None = None,
) -> None:
    """Grow and recenter on improvement, shrink otherwise; the radius stays
    an integer in [radius_min, radius_max]."""
    factor = expand_factor if improved else shrink_factor
    radius = int(round(factor * region.radius))
    region.radius = max(radius_min, min(radius_max, radius))
    if improved and new_center is not None:
        region.center = new_center


def _incumbent_index(records: list[EvalRecord], utilities: list[float]) -> int:
    best = 0
    for i in range(1, len(records)):
        if utilities[i] > utilities[best] or (
            utilities[i] == utilities[best]
            and records[i].memory_bytes < records[best].memory_bytes
        ):
            best = i
    return best


def run_trust_region_refinement(
    ctx: SearchContext,
    records: list[EvalRecord],
    backend,
    ledger: Ledger,
    params: RefinementParams,
    top_steps: int,
    eval_seed: int,
    rng_pool: np.random.Generator,
) -> RefinementResult:
    """Refine from a set of top-fidelity records; see the module docstring.

    Stops when the best pool EI drops below ``ei_tol``, the evaluation cap
    is hit, every region reaches its accepted-evaluation cap, or the pool
    stays empty after one global radius bump.
    """
    hi: list[EvalRecord] = []
    seen = set()
    for record in records:
        if record.steps != top_steps or record.seed != eval_seed:
            continue
        if record.memory_bytes > ctx.budget.max_bytes:
            continue
        if record.config.key() in seen:
            continue
        seen.add(record.config.key())
        hi.append(record)
    if not hi:
        raise ValueError("refinement needs at least one feasible top-fidelity record")

    radius_max = params.resolved_radius_max(ctx.space.num_layers)
    regions: list[TrustRegion] | None = None
    failed: set = set()
    trace: list[dict] = []
    evaluations = 0
    stop_reason = "max_evals"

    while True:
        spec = UtilitySpec.from_records(hi, params.alpha)
        utilities = [spec.scalarize(r.score, r.memory_bytes) for r in hi]
        incumbent = _incumbent_index(hi, utilities)
        y_best = utilities[incumbent]

        if regions is None:
            regions = init_trust_regions(
                hi,
                utilities,
                ctx,
                params.num_regions,
                params.min_center_distance,
                params.radius_init,
            )

        if evaluations >= params.max_evals:
            stop_reason = "max_evals"
            break
        active = [
            (j, region)
            for j, region in enumerate(regions)
            if region.accepted < params.max_per_region
        ]
        if not active:
            stop_reason = "all_regions_capped"
            break

        model = fit_gp(
            np.asarray([ctx.embed(r.config) for r in hi]), utilities, params.grid
        )
        pool = propose_pool(
            active, ctx, params.importance_power, params.pool_per_region,
            ledger, top_steps, eval_seed, rng_pool, failed,
        )
        if not pool:
            for region in regions:
                region.radius = min(region.radius + 1, radius_max)
            pool = propose_pool(
                active, ctx, params.importance_power, params.pool_per_region,
                ledger, top_steps, eval_seed, rng_pool, failed,
            )
            if not pool:
                stop_reason = "empty_pool"
                break

        embeddings = np.asarray([ctx.embed(c) for c, _ in pool])
        mu, sigma = model.posterior(embeddings)
        ei = expected_improvement(mu, sigma, y_best)
        ranked = np.argsort(-ei, kind="stable")
        if ei[ranked[0]] < params.ei_tol:
            stop_reason = "ei_below_tol"
            break

        new_record: EvalRecord | None = None
        selected_region = -1
        selected_ei = 0.0
        below_tol = False
        for pos in ranked:
            if ei[pos] < params.ei_tol:
                below_tol = True
                break
            candidate, region_idx = pool[pos]
            try:
                new_record = evaluate(
                    EvalRequest(candidate, top_steps, eval_seed), backend, ledger, ctx.space
                )
            except EvaluationError as exc:
                log.warning("refinement candidate failed: %s", exc)
                failed.add(candidate.key())
                continue
            selected_region = int(region_idx)
            selected_ei = float(ei[pos])
            break
        if new_record is None:
            if below_tol:
                stop_reason = "ei_below_tol"
                break
            # Every candidate above threshold failed; the pool regenerates
            # without them next round.
            continue

        evaluations += 1
        region = regions[selected_region]
        region.accepted += 1
        y_new = spec.scalarize(new_record.score, new_record.memory_bytes)
        improved = y_new > y_best
        update_region(
            region,
            improved,
            params.radius_min,
            radius_max,
            params.expand_factor,
            params.shrink_factor,
            new_center=new_record.config,
        )
        hi.append(new_record)
        trace.append(
            {
                "iteration": evaluations,
                "pool_size": len(pool),
                "max_ei": selected_ei,
                "incumbent_utility": y_best,
                "utility": y_new,
                "improved": improved,
                "selected_region": selected_region,
                "radii": [r.radius for r in regions],
                "accepted": [r.accepted for r in regions],
                "config": new_record.config.to_json_dict(),
                "score": new_record.score,
                "memory_bytes": new_record.memory_bytes,
            }
        )

    spec = UtilitySpec.from_records(hi, params.alpha)
    utilities = [spec.scalarize(r.score, r.memory_bytes) for r in hi]
    best = _incumbent_index(hi, utilities)
    return RefinementResult(
        best_config=hi[best].config,
        best_record=hi[best],
        best_utility=utilities[best],
        trace=trace,
        evaluations=evaluations,
        stop_reason=stop_reason,
        regions=regions or [],
    )
