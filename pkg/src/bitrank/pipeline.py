"""Run orchestration: manifest in, run directory out.

A RunManifest captures every input and hyperparameter of a run.  Driving
the same manifest twice produces byte-identical ledgers, archives, and
best-config files; all randomness flows through named substreams of the
manifest seed.

Run directory layout::

    manifest.json            inputs + resolved derived values
    importance.json          the normalized profile the run used
    latent.json              synthetic ground-truth coefficients (synthetic runs)
    ledger.jsonl             every evaluation, append order
    phase1_telemetry.jsonl   one row per generation
    pareto.json              final archive + hypervolume trace
    refine_trace.jsonl       one row per refinement evaluation
    best.json                returned config and its utility
    repair_stats.json        per-layer downgrade tallies
    report/                  delimited tables and figures (see reporting)
"""

from __future__ import annotations

import dataclasses
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path

from .context import SearchContext
from .evaluator import (
    ExternalBackend,
    Ledger,
    SyntheticBackend,
    SyntheticLatent,
    synthetic_importance,
)
from .evolve import EvolutionParams, EvolutionResult, run_evolutionary_search
from .feasibility import Budget, RepairStats
from .importance import ImportanceProfile, normalize_importance
from .refine import RefinementParams, RefinementResult, run_trust_region_refinement
from .reporting import emit_reports
from .seeding import derive_seed, substream
from .space import SearchSpace, load_search_space

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunManifest:
    model_path: str
    budget_bytes: int
    alpha: float = 0.9
    evaluator: str = "synthetic"
    importance: str = "auto"
    importance_noise: float = 0.25
    seed: int = 0
    latent_seed: int = 0
    workers: int = 1
    # global phase
    population_size: int = 25
    perturb_edits: int = 3
    importance_power: float = 2.0
    steps: tuple[int, ...] = (100, 400, 1600)
    reduction_factor: float = 2.9
    promote_count: int = 3
    hv_tol: float = 0.01
    hv_patience: int = 3
    generations: int = 20
    surrogate_min_pairs: int = 8
    huber_delta: float = 0.1
    ridge: float = 1e-8
    # refinement phase
    num_regions: int = 3
    min_center_distance: int = 2
    radius_init: int = 2
    radius_min: int = 1
    radius_max: int = 0  # 0 = twice the layer count
    expand_factor: float = 2.0
    shrink_factor: float = 0.5
    pool_per_region: int = 256
    ei_tol: float = 1e-4
    max_refine_evals: int = 30
    max_per_region: int = 5
    # synthetic evaluator
    noise_scale: float = 0.02
    base_score: float = 0.9
    rank_half_point: float = 8.0
    learning_timescale: float = 0.0  # 0 = second rung of the step ladder
    sensitivity_lo: float = 0.01
    sensitivity_hi: float = 0.2

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(int(s) for s in self.steps))

    @property
    def eval_seed(self) -> int:
        return derive_seed(self.seed, "evaluation") % (2**31)

    @property
    def top_steps(self) -> int:
        return self.steps[-1]

    def resolved_timescale(self) -> float:
        return self.learning_timescale if self.learning_timescale > 0 else float(self.steps[1])

    def evolution_params(self) -> EvolutionParams:
        return EvolutionParams(
            population_size=self.population_size,
            perturb_edits=self.perturb_edits,
            importance_power=self.importance_power,
            steps=self.steps,
            reduction_factor=self.reduction_factor,
            promote_count=self.promote_count,
            hv_tol=self.hv_tol,
            hv_patience=self.hv_patience,
            generations=self.generations,
            surrogate_min_pairs=self.surrogate_min_pairs,
            huber_delta=self.huber_delta,
            ridge=self.ridge,
        )

    def refinement_params(self) -> RefinementParams:
        return RefinementParams(
            alpha=self.alpha,
            num_regions=self.num_regions,
            min_center_distance=self.min_center_distance,
            radius_init=self.radius_init,
            radius_min=self.radius_min,
            radius_max=self.radius_max or None,
            expand_factor=self.expand_factor,
            shrink_factor=self.shrink_factor,
            pool_per_region=self.pool_per_region,
            ei_tol=self.ei_tol,
            max_evals=self.max_refine_evals,
            max_per_region=self.max_per_region,
            importance_power=self.importance_power,
        )

    def to_json_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["steps"] = list(self.steps)
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RunManifest":
        fields = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in obj.items() if k in fields}
        kwargs["steps"] = tuple(kwargs.get("steps", (100, 400, 1600)))
        return cls(**kwargs)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        return cls.from_json_dict(raw.get("manifest", raw))


def write_json(path: Path, obj: object) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def append_jsonl(path: Path, row: dict) -> None:
    with path.open("a") as fh:
        fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass
class PreparedRun:
    manifest: RunManifest
    space: SearchSpace
    ctx: SearchContext
    backend: object
    ledger: Ledger
    latent: SyntheticLatent | None
    out_dir: Path


@dataclass
class SearchOutputs:
    out_dir: Path
    evolution: EvolutionResult | None
    refinement: RefinementResult | None
    report_paths: list[Path]


def _resolve_importance(
    manifest: RunManifest, latent: SyntheticLatent | None, num_layers: int
) -> ImportanceProfile:
    if manifest.importance == "auto":
        if latent is None:
            raise ValueError(
                "importance 'auto' needs the synthetic evaluator; pass a profile path"
            )
        return synthetic_importance(
            latent, manifest.importance_noise, derive_seed(manifest.seed, "importance")
        )
    profile = ImportanceProfile.from_json_file(manifest.importance)
    if profile.num_layers != num_layers:
        raise ValueError(
            f"importance profile covers {profile.num_layers} layers, model has {num_layers}"
        )
    return normalize_importance(profile)


def prepare_run(manifest: RunManifest, out_dir: str | Path) -> PreparedRun:
    """Materialize the run directory: space, backend, importance, ledger."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = load_search_space(manifest.model_path)
    num_layers = space.num_layers

    latent: SyntheticLatent | None = None
    if manifest.evaluator == "synthetic":
        latent = SyntheticLatent.sample(
            num_layers,
            manifest.latent_seed,
            sensitivity_range=(manifest.sensitivity_lo, manifest.sensitivity_hi),
            base_score=manifest.base_score,
            learning_timescale=manifest.resolved_timescale(),
            noise_scale=manifest.noise_scale,
            rank_half_point=manifest.rank_half_point,
            noise_ref_steps=manifest.steps[0],
        )
        backend: object = SyntheticBackend(latent, space.ladders)
    elif manifest.evaluator.startswith("exec:"):
        command = manifest.evaluator[len("exec:"):]
        if not command.strip():
            raise ValueError("exec evaluator needs a command, e.g. exec:python eval.py")
        backend = ExternalBackend(command, max_children=manifest.workers)
    else:
        raise ValueError(
            f"unknown evaluator {manifest.evaluator!r}; use 'synthetic' or 'exec:<command>'"
        )

    importance = _resolve_importance(manifest, latent, num_layers)
    budget = Budget.checked(manifest.budget_bytes, space)
    ctx = SearchContext(space, budget, importance, RepairStats(num_layers))
    ledger = Ledger(out / "ledger.jsonl")

    write_json(
        out / "manifest.json",
        {
            "manifest": manifest.to_json_dict(),
            "resolved": {
                "eval_seed": manifest.eval_seed,
                "learning_timescale": manifest.resolved_timescale(),
                "noise_ref_steps": manifest.steps[0],
                "radius_max": manifest.radius_max or 2 * num_layers,
                "layers": space.catalog.names,
                "num_layers": num_layers,
            },
        },
    )
    write_json(out / "importance.json", importance.to_json_dict())
    if latent is not None:
        write_json(out / "latent.json", latent.to_json_dict())
    return PreparedRun(manifest, space, ctx, backend, ledger, latent, out)


def _persist_phase1(run: PreparedRun, result: EvolutionResult) -> None:
    telemetry_path = run.out_dir / "phase1_telemetry.jsonl"
    telemetry_path.write_text("")
    for row in result.telemetry:
        append_jsonl(telemetry_path, row)
    write_json(run.out_dir / "pareto.json", result.archive.to_json_dict())


def _persist_phase2(run: PreparedRun, result: RefinementResult) -> None:
    trace_path = run.out_dir / "refine_trace.jsonl"
    trace_path.write_text("")
    for row in result.trace:
        append_jsonl(trace_path, row)
    assert result.best_record is not None
    best = {
        "config": result.best_config.to_json_dict(),
        "score": result.best_record.score,
        "memory_bytes": result.best_record.memory_bytes,
        "utility": result.best_utility,
        "alpha": run.manifest.alpha,
        "steps": result.best_record.steps,
        "seed": result.best_record.seed,
        "mean_bits": result.best_config.mean_bits(),
        "mean_rank": result.best_config.mean_rank(),
        "refine_evaluations": result.evaluations,
        "stop_reason": result.stop_reason,
    }
    write_json(run.out_dir / "best.json", best)


def run_search(
    manifest: RunManifest, out_dir: str | Path, refine: bool = True
) -> SearchOutputs:
    """Full pipeline: prepare, evolve, refine (optional), report."""
    run = prepare_run(manifest, out_dir)
    try:
        evolution = run_evolutionary_search(
            run.ctx,
            run.backend,
            run.ledger,
            manifest.evolution_params(),
            manifest.eval_seed,
            rng_init=substream(manifest.seed, "init"),
            rng_mutation=substream(manifest.seed, "mutation"),
            workers=manifest.workers,
        )
        _persist_phase1(run, evolution)
        refinement = None
        if refine:
            records = run.ledger.records_at(manifest.top_steps, manifest.eval_seed)
            refinement = run_trust_region_refinement(
                run.ctx,
                records,
                run.backend,
                run.ledger,
                manifest.refinement_params(),
                manifest.top_steps,
                manifest.eval_seed,
                rng_pool=substream(manifest.seed, "pool"),
            )
            _persist_phase2(run, refinement)
        if run.ctx.repair_stats is not None:
            write_json(run.out_dir / "repair_stats.json", run.ctx.repair_stats.to_json_dict())
        report_paths = emit_reports(run.out_dir)
    finally:
        close = getattr(run.backend, "close", None)
        if close is not None:
            close()
    return SearchOutputs(
        out_dir=run.out_dir,
        evolution=evolution,
        refinement=refinement,
        report_paths=report_paths,
    )


def run_refinement_from(
    source: str | Path,
    out_dir: str | Path | None = None,
    overrides: dict | None = None,
) -> SearchOutputs:
    """Resume refinement from a finished global phase.

    ``source`` is a run directory or its pareto.json.  The sibling ledger
    supplies every top-fidelity record; archive members alone would lose
    the dominated measurements, which are still useful GP training data.
    """
    source = Path(source)
    src_dir = source.parent if source.is_file() else source
    manifest = RunManifest.from_json_file(src_dir / "manifest.json")
    if overrides:
        manifest = dataclasses.replace(manifest, **overrides)
    out = Path(out_dir) if out_dir is not None else src_dir
    out.mkdir(parents=True, exist_ok=True)
    if out != src_dir:
        for name in ("ledger.jsonl", "importance.json", "latent.json",
                     "phase1_telemetry.jsonl", "pareto.json", "repair_stats.json"):
            src = src_dir / name
            if src.exists():
                shutil.copy(src, out / name)
    run = prepare_run(manifest, out)
    try:
        records = run.ledger.records_at(manifest.top_steps, manifest.eval_seed)
        refinement = run_trust_region_refinement(
            run.ctx,
            records,
            run.backend,
            run.ledger,
            manifest.refinement_params(),
            manifest.top_steps,
            manifest.eval_seed,
            rng_pool=substream(manifest.seed, "pool"),
        )
        _persist_phase2(run, refinement)
        report_paths = emit_reports(run.out_dir)
    finally:
        close = getattr(run.backend, "close", None)
        if close is not None:
            close()
    return SearchOutputs(
        out_dir=run.out_dir,
        evolution=None,
        refinement=refinement,
        report_paths=report_paths,
    )
