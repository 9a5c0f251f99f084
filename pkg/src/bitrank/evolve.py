"""Global phase: multi-fidelity evolutionary search.

Each generation proposes a cohort of repaired mutants, pushes it through a
successive-halving ladder of step counts (cheap rungs first, survivors
promoted with resume tokens), and keeps a fixed-size population by
constrained two-objective survival.  A robust linear surrogate, trained on
(low-fidelity, top-fidelity) pairs from earlier survivors, takes over the
promotion ranking once enough pairs exist.  The run stops when the archive
hypervolume plateaus or the generation cap is reached.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .context import SearchContext
from .evaluator import EvalRecord, EvalRequest, Ledger, evaluate_batch
from .feasibility import REPAIR_EPSILON, greedy_fill
from .multiobjective import (
    ParetoArchive,
    SelectionItem,
    hypervolume_stalled,
    nsga2_select,
)
from .space import Config
from .stats import spearman
from .surrogate import ScreeningSurrogate, fit_screening_surrogate, surrogate_features

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShaSchedule:
    """Step-count ladder with its pruning rule.

    At each promotion a cohort of n keeps max(promote_count, floor(n /
    reduction_factor)) members, so exactly promote_count candidates reach
    the top rung under the default sizing.
    """

    steps: tuple[int, ...] = (100, 400, 1600)
    reduction_factor: float = 2.9
    promote_count: int = 3

    def __post_init__(self) -> None:
        steps = tuple(int(s) for s in self.steps)
        object.__setattr__(self, "steps", steps)
        if len(steps) < 2:
            raise ValueError("schedule needs at least two rungs")
        if steps[0] <= 0 or any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("step counts must be positive and strictly increasing")
        if self.reduction_factor <= 1.0:
            raise ValueError("reduction_factor must be > 1")
        if self.promote_count < 1:
            raise ValueError("promote_count must be >= 1")

    @property
    def top_steps(self) -> int:
        return self.steps[-1]

    @property
    def num_rungs(self) -> int:
        return len(self.steps)

    def keep_count(self, cohort_size: int) -> int:
        keep = max(self.promote_count, math.floor(cohort_size / self.reduction_factor))
        return min(keep, cohort_size)

    def cohort_sizes(self, initial: int) -> list[int]:
        sizes = [initial]
        for _ in range(len(self.steps) - 1):
            sizes.append(self.keep_count(sizes[-1]))
        return sizes


@dataclass
class Individual:
    config: Config
    embedding: np.ndarray
    memory_bytes: int
    scores: dict[int, float] = field(default_factory=dict)
    predicted_top: float | None = None

    def estimate(self, top_steps: int) -> float:
        """Best available score estimate: measured top rung, then surrogate
        prediction, then the highest measured rung."""
        if top_steps in self.scores:
            return self.scores[top_steps]
        if self.predicted_top is not None:
            return self.predicted_top
        return self.scores[max(self.scores)]


def layer_choice_weights(importance_vec, power: float) -> np.ndarray:
    """Sampling distribution over layers: (importance + eps) ** power."""
    w = (np.asarray(importance_vec, dtype=float) + REPAIR_EPSILON) ** power
    return w / w.sum()


def sample_edit(
    config: Config, ctx: SearchContext, power: float, rng: np.random.Generator
) -> Config:
    """One atomic edit: uniform knob, importance-weighted layer, uniform
    direction reflected at ladder ends."""
    knob = "q" if int(rng.integers(2)) == 0 else "r"
    weights = layer_choice_weights(ctx.importance.vector(knob), power)
    layer = int(rng.choice(len(weights), p=weights))
    ladder = ctx.space.ladders.for_knob(knob)
    value = config.value(knob, layer)
    step_up = bool(rng.integers(2))
    nxt = ladder.upper(value) if step_up else ladder.lower(value)
    if nxt is None:
        nxt = ladder.lower(value) if step_up else ladder.upper(value)
    assert nxt is not None
    return config.replaced(knob, layer, nxt)


def mutate_sensitivity(
    config: Config, ctx: SearchContext, power: float, rng: np.random.Generator
) -> Config:
    """Single sensitivity-guided atomic edit, then repair."""
    return ctx.repair(sample_edit(config, ctx, power, rng))


def mutate_coupled(
    config: Config, ctx: SearchContext, power: float, rng: np.random.Generator
) -> Config:
    """Upgrade one sensitivity-sampled variable and let repair trim
    elsewhere; the net effect trades capacity between layers.  Returns the
    input unchanged when nothing can be upgraded."""
    ladders = ctx.space.ladders
    upgradable = [
        (knob, layer)
        for knob in ("q", "r")
        for layer in range(config.num_layers)
        if ladders.for_knob(knob).upper(config.value(knob, layer)) is not None
    ]
    if not upgradable:
        return config
    for _ in range(1000):
        knob = "q" if int(rng.integers(2)) == 0 else "r"
        weights = layer_choice_weights(ctx.importance.vector(knob), power)
        layer = int(rng.choice(len(weights), p=weights))
        upper = ladders.for_knob(knob).upper(config.value(knob, layer))
        if upper is not None:
            return ctx.repair(config.replaced(knob, layer, upper))
    knob, layer = upgradable[0]
    upper = ladders.for_knob(knob).upper(config.value(knob, layer))
    return ctx.repair(config.replaced(knob, layer, upper))


def init_population(
    prototype: Config,
    size: int,
    perturb_edits: int,
    ctx: SearchContext,
    power: float,
    rng: np.random.Generator,
) -> list[Config]:
    """Prototype plus repaired k-edit perturbations, deduplicated with up
    to ten resampling attempts per slot."""
    if size < 1:
        raise ValueError("population size must be >= 1")
    population = [prototype]
    seen = {prototype.key()}
    while len(population) < size:
        candidate = None
        for _ in range(10):
            cand = prototype
            for _ in range(perturb_edits):
                cand = sample_edit(cand, ctx, power, rng)
            cand = ctx.repair(cand)
            if cand.key() not in seen:
                candidate = cand
                break
            candidate = cand
        assert candidate is not None
        seen.add(candidate.key())
        population.append(candidate)
    return population


@dataclass
class RungMeta:
    steps: int
    cohort_size: int
    keep: int
    promoted_by: str
    lf_overlap: float


@dataclass
class ShaOutcome:
    finalists: list[EvalRecord]
    all_records: list[EvalRecord]
    new_pairs: dict[int, list[tuple[np.ndarray, float]]]
    rung_meta: list[RungMeta]


def run_sha_generation(
    cohort: list[Config],
    schedule: ShaSchedule,
    surrogates: dict[int, ScreeningSurrogate],
    ctx: SearchContext,
    backend,
    ledger: Ledger,
    eval_seed: int,
    workers: int = 1,
) -> ShaOutcome:
    """Push one cohort up the fidelity ladder.

    Candidates are evaluated at the lowest rung, ranked (surrogate
    prediction when the rung's surrogate is trained, measured score
    otherwise), and the top slice is re-evaluated one rung up with resume
    tokens.  Evaluation failures shrink the cohort but promotion never
    goes below one survivor while any candidate remains.  Returns the
    finalist records and fresh (low-fidelity features, top score) training
    pairs harvested from candidates that reached the top rung.
    """
    unique: list[Config] = []
    seen = set()
    for config in cohort:
        if config.key() not in seen:
            seen.add(config.key())
            unique.append(config)

    all_records: list[EvalRecord] = []
    rung_meta: list[RungMeta] = []
    by_rung: list[dict[tuple, EvalRecord]] = []

    def eval_rung(configs: list[Config], steps: int, tokens: dict[tuple, str | None]):
        requests = [
            EvalRequest(c, steps, eval_seed, resume_token=tokens.get(c.key()))
            for c in configs
        ]
        records = evaluate_batch(requests, backend, ledger, ctx.space, workers=workers)
        alive = []
        table = {}
        for config, record in zip(configs, records):
            if record is None:
                continue
            alive.append(config)
            table[config.key()] = record
            all_records.append(record)
        return alive, table

    current, table = eval_rung(unique, schedule.steps[0], {})
    by_rung.append(table)
    if not current:
        raise RuntimeError("every candidate failed at the lowest rung")

    for stage in range(schedule.num_rungs - 1):
        steps = schedule.steps[stage]
        next_steps = schedule.steps[stage + 1]
        surrogate = surrogates.get(stage)
        if surrogate is not None and surrogate.trained:
            ranked = sorted(
                current,
                key=lambda c: -float(
                    surrogate.predict(
                        surrogate_features(
                            table[c.key()].score,
                            table[c.key()].memory_bytes,
                            ctx.embed(c),
                        )
                    )
                ),
            )
            promoted_by = "surrogate"
        else:
            ranked = sorted(current, key=lambda c: -table[c.key()].score)
            promoted_by = "measured"
        measured_order = sorted(current, key=lambda c: -table[c.key()].score)
        keep = schedule.keep_count(len(current))
        chosen = ranked[:keep]
        lf_top = {c.key() for c in measured_order[:keep]}
        overlap = sum(1 for c in chosen if c.key() in lf_top) / keep
        rung_meta.append(
            RungMeta(
                steps=steps,
                cohort_size=len(current),
                keep=keep,
                promoted_by=promoted_by,
                lf_overlap=overlap,
            )
        )
        tokens = {c.key(): table[c.key()].resume_token for c in chosen}
        survivors, next_table = eval_rung(chosen, next_steps, tokens)
        if not survivors:
            # Promotion must not bottom out while ranked spares remain.
            for spare in ranked[keep:]:
                alive, extra = eval_rung(
                    [spare], next_steps, {spare.key(): table[spare.key()].resume_token}
                )
                if alive:
                    survivors, next_table = alive, extra
                    break
        if not survivors:
            raise RuntimeError(f"every candidate failed at {next_steps} steps")
        current, table = survivors, next_table
        by_rung.append(table)

    top_steps = schedule.top_steps
    finalists = [table[c.key()] for c in current]

    new_pairs: dict[int, list[tuple[np.ndarray, float]]] = {
        stage: [] for stage in range(schedule.num_rungs - 1)
    }
    for config in current:
        top_score = table[config.key()].score
        for stage in range(schedule.num_rungs - 1):
            rec = by_rung[stage].get(config.key())
            if rec is None:
                continue
            features = surrogate_features(rec.score, rec.memory_bytes, ctx.embed(config))
            new_pairs[stage].append((features, top_score))
    log.debug(
        "sha generation: %d -> %d finalists at %d steps",
        len(unique), len(finalists), top_steps,
    )
    return ShaOutcome(finalists, all_records, new_pairs, rung_meta)


@dataclass
class EvolutionParams:
    population_size: int = 25
    perturb_edits: int = 3
    importance_power: float = 2.0
    steps: tuple[int, ...] = (100, 400, 1600)
    reduction_factor: float = 2.9
    promote_count: int = 3
    hv_tol: float = 0.01
    hv_patience: int = 3
    hv_denominator_floor: float = 1e-9
    generations: int = 20
    surrogate_min_pairs: int = 8
    huber_delta: float = 0.1
    ridge: float = 1e-8

    def schedule(self) -> ShaSchedule:
        return ShaSchedule(self.steps, self.reduction_factor, self.promote_count)


@dataclass
class EvolutionResult:
    archive: ParetoArchive
    telemetry: list[dict]
    population: list[Individual]
    prototype: Config


def run_evolutionary_search(
    ctx: SearchContext,
    backend,
    ledger: Ledger,
    params: EvolutionParams,
    eval_seed: int,
    rng_init: np.random.Generator,
    rng_mutation: np.random.Generator,
    workers: int = 1,
) -> EvolutionResult:
    """Run the global phase end to end; see the module docstring."""
    schedule = params.schedule()
    top = schedule.top_steps
    prototype = greedy_fill(ctx.importance, ctx.budget, ctx.space)
    configs = init_population(
        prototype,
        params.population_size,
        params.perturb_edits,
        ctx,
        params.importance_power,
        rng_init,
    )
    archive = ParetoArchive(
        final_steps=top, ref_score=0.0, ref_memory=float(ctx.budget.max_bytes)
    )
    individuals: dict[tuple, Individual] = {}
    pairs: dict[int, list[tuple[np.ndarray, float]]] = {
        s: [] for s in range(schedule.num_rungs - 1)
    }
    surrogates: dict[int, ScreeningSurrogate] = {
        s: ScreeningSurrogate(stage_steps=schedule.steps[s])
        for s in range(schedule.num_rungs - 1)
    }
    telemetry: list[dict] = []

    def get_individual(config: Config) -> Individual:
        ind = individuals.get(config.key())
        if ind is None:
            ind = Individual(config, ctx.embed(config), ctx.memory(config))
            individuals[config.key()] = ind
        return ind

    def absorb(outcome: ShaOutcome) -> list[dict]:
        surrogate_rows = []
        for stage, fresh in outcome.new_pairs.items():
            model = surrogates[stage]
            heldout = None
            if model.trained and len(fresh) >= 3:
                preds = [float(model.predict(x)) for x, _ in fresh]
                truth = [t for _, t in fresh]
                rho = spearman(preds, truth)
                heldout = None if math.isnan(rho) else rho
            meta = outcome.rung_meta[stage]
            surrogate_rows.append(
                {
                    "steps": schedule.steps[stage],
                    "pairs_total": len(pairs[stage]) + len(fresh),
                    "trained": model.trained,
                    "promoted_by": meta.promoted_by,
                    "lf_overlap": meta.lf_overlap,
                    "heldout_spearman": heldout,
                }
            )
            pairs[stage].extend(fresh)
        for record in outcome.all_records:
            get_individual(record.config).scores[record.steps] = record.score
        archive.extend(outcome.finalists)
        return surrogate_rows

    def refresh_estimates(members: list[Individual]) -> None:
        for ind in members:
            if top in ind.scores:
                ind.predicted_top = None
                continue
            high = max(ind.scores)
            stage = schedule.steps.index(high)
            model = surrogates.get(stage)
            if model is not None and model.trained:
                ind.predicted_top = float(
                    model.predict(
                        surrogate_features(
                            ind.scores[high], ind.memory_bytes, ind.embedding
                        )
                    )
                )
            else:
                ind.predicted_top = None

    def emit(generation: int, cohort_size: int, surrogate_rows: list[dict]) -> None:
        telemetry.append(
            {
                "generation": generation,
                "cohort_size": cohort_size,
                "archive_size": len(archive.members),
                "hypervolume": archive.hv_trace[-1],
                "top_steps_records": len(ledger.records_at(top, eval_seed)),
                "surrogates": surrogate_rows,
            }
        )

    outcome = run_sha_generation(
        configs, schedule, surrogates, ctx, backend, ledger, eval_seed, workers
    )
    rows = absorb(outcome)
    archive.log_generation()
    emit(0, len(configs), rows)
    population = []
    seen_keys = set()
    for config in configs:
        if config.key() not in seen_keys and config.key() in individuals:
            seen_keys.add(config.key())
            population.append(individuals[config.key()])

    generation = 0
    while generation < params.generations and not hypervolume_stalled(
        archive.hv_trace, params.hv_tol, params.hv_patience, params.hv_denominator_floor
    ):
        generation += 1
        for stage, data in pairs.items():
            if data:
                feats = np.asarray([x for x, _ in data])
                targets = np.asarray([t for _, t in data])
                surrogates[stage] = fit_screening_surrogate(
                    feats,
                    targets,
                    schedule.steps[stage],
                    huber_delta=params.huber_delta,
                    ridge=params.ridge,
                    min_pairs=params.surrogate_min_pairs,
                )
        count = params.population_size
        sens_count = (count + 1) // 2
        offspring: list[Config] = []
        for i in range(count):
            parent = population[int(rng_mutation.integers(len(population)))].config
            if i < sens_count:
                child = mutate_sensitivity(parent, ctx, params.importance_power, rng_mutation)
            else:
                child = mutate_coupled(parent, ctx, params.importance_power, rng_mutation)
            offspring.append(child)
        outcome = run_sha_generation(
            offspring, schedule, surrogates, ctx, backend, ledger, eval_seed, workers
        )
        rows = absorb(outcome)

        pool: list[Individual] = []
        pool_keys = set()
        for ind in population + [get_individual(c) for c in offspring if c.key() in individuals]:
            if ind.config.key() not in pool_keys:
                pool_keys.add(ind.config.key())
                pool.append(ind)
        refresh_estimates(pool)
        items = [
            SelectionItem(
                score=ind.estimate(top),
                memory=float(ind.memory_bytes),
                violation=0.0,
                payload=ind,
            )
            for ind in pool
        ]
        chosen = nsga2_select(items, params.population_size)
        population = [items[i].payload for i in chosen]
        archive.log_generation()
        emit(generation, len(offspring), rows)
    return EvolutionResult(archive, telemetry, population, prototype)
