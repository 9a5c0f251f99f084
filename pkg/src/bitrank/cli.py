"""Command-line entry points.

Verbs:

    search         global phase + refinement, reports included
    phase1         global phase only
    phase2         refinement resumed from a finished run directory
    random-search  repaired uniform sampling baseline
    brute-force    exact oracle for small spaces
    report         regenerate tables and figures for a run directory
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .baselines import SpaceTooLargeError, brute_force_oracle, random_search
from .evaluator import EvaluationError, LedgerConflictError
from .feasibility import BudgetError
from .pipeline import (
    RunManifest,
    prepare_run,
    run_refinement_from,
    run_search,
    write_json,
)
from .reporting import emit_reports, write_csv
from .seeding import substream
from .space import ModelSpecError, load_search_space

log = logging.getLogger(__name__)

USER_ERRORS = (
    ModelSpecError,
    BudgetError,
    EvaluationError,
    LedgerConflictError,
    SpaceTooLargeError,
    ValueError,
    OSError,
)


def _parse_steps(text: str) -> tuple[int, ...]:
    try:
        steps = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad step ladder {text!r}; expected e.g. 100,400,1600")
    if len(steps) < 2:
        raise argparse.ArgumentTypeError("step ladder needs at least two rungs")
    return steps


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", required=True, help="model spec JSON")
    parser.add_argument("--budget-bytes", type=int, required=True, help="memory budget")
    parser.add_argument("--alpha", type=float, default=0.9, help="utility weight on score")
    parser.add_argument(
        "--evaluator",
        default="synthetic",
        help="'synthetic' or 'exec:<command>' speaking the line protocol",
    )
    parser.add_argument(
        "--importance",
        default="auto",
        help="'auto' (synthetic only) or a profile JSON path",
    )
    parser.add_argument("--importance-noise", type=float, default=0.25)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--latent-seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=None, help="run directory (default runs/<verb>)")


def _add_phase1(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--population", type=int, default=25)
    parser.add_argument("--perturb-edits", type=int, default=3)
    parser.add_argument("--importance-power", type=float, default=2.0)
    parser.add_argument("--steps", type=_parse_steps, default=(100, 400, 1600))
    parser.add_argument("--reduction-factor", type=float, default=2.9)
    parser.add_argument("--promote-count", type=int, default=3)
    parser.add_argument("--hv-tol", type=float, default=0.01)
    parser.add_argument("--hv-patience", type=int, default=3)
    parser.add_argument("--generations", type=int, default=20)
    parser.add_argument("--surrogate-min-pairs", type=int, default=8)
    parser.add_argument("--huber-delta", type=float, default=0.1)
    parser.add_argument("--ridge", type=float, default=1e-8)


def _add_phase2(parser: argparse.ArgumentParser, with_defaults: bool = True) -> None:
    d = (lambda v: v) if with_defaults else (lambda v: None)
    parser.add_argument("--regions", type=int, default=d(3))
    parser.add_argument("--min-center-distance", type=int, default=d(2))
    parser.add_argument("--radius-init", type=int, default=d(2))
    parser.add_argument("--radius-min", type=int, default=d(1))
    parser.add_argument("--radius-max", type=int, default=d(0), help="0 = twice the layer count")
    parser.add_argument("--expand-factor", type=float, default=d(2.0))
    parser.add_argument("--shrink-factor", type=float, default=d(0.5))
    parser.add_argument("--pool-per-region", type=int, default=d(256))
    parser.add_argument("--ei-tol", type=float, default=d(1e-4))
    parser.add_argument("--max-hf-evals", type=int, default=d(30))
    parser.add_argument("--max-per-region", type=int, default=d(5))


def _add_synthetic(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--noise-scale", type=float, default=0.02)
    parser.add_argument("--base-score", type=float, default=0.9)
    parser.add_argument("--rank-half-point", type=float, default=8.0)
    parser.add_argument(
        "--learning-timescale", type=float, default=0.0, help="0 = second step rung"
    )
    parser.add_argument("--sensitivity-lo", type=float, default=0.01)
    parser.add_argument("--sensitivity-hi", type=float, default=0.2)


def _manifest_from_args(args: argparse.Namespace) -> RunManifest:
    return RunManifest(
        model_path=args.model,
        budget_bytes=args.budget_bytes,
        alpha=args.alpha,
        evaluator=args.evaluator,
        importance=args.importance,
        importance_noise=args.importance_noise,
        seed=args.seed,
        latent_seed=args.latent_seed,
        workers=args.workers,
        population_size=args.population,
        perturb_edits=args.perturb_edits,
        importance_power=args.importance_power,
        steps=args.steps,
        reduction_factor=args.reduction_factor,
        promote_count=args.promote_count,
        hv_tol=args.hv_tol,
        hv_patience=args.hv_patience,
        generations=args.generations,
        surrogate_min_pairs=args.surrogate_min_pairs,
        huber_delta=args.huber_delta,
        ridge=args.ridge,
        num_regions=args.regions,
        min_center_distance=args.min_center_distance,
        radius_init=args.radius_init,
        radius_min=args.radius_min,
        radius_max=args.radius_max,
        expand_factor=args.expand_factor,
        shrink_factor=args.shrink_factor,
        pool_per_region=args.pool_per_region,
        ei_tol=args.ei_tol,
        max_refine_evals=args.max_hf_evals,
        max_per_region=args.max_per_region,
        noise_scale=args.noise_scale,
        base_score=args.base_score,
        rank_half_point=args.rank_half_point,
        learning_timescale=args.learning_timescale,
        sensitivity_lo=args.sensitivity_lo,
        sensitivity_hi=args.sensitivity_hi,
    )


def _out_dir(args: argparse.Namespace, verb: str) -> Path:
    return Path(args.out) if args.out else Path("runs") / verb


def _cmd_search(args: argparse.Namespace) -> int:
    manifest = _manifest_from_args(args)
    outputs = run_search(manifest, _out_dir(args, "search"), refine=True)
    best_path = outputs.out_dir / "best.json"
    print(f"run directory: {outputs.out_dir}")
    print(f"best config: {best_path}")
    return 0


def _cmd_phase1(args: argparse.Namespace) -> int:
    manifest = _manifest_from_args(args)
    outputs = run_search(manifest, _out_dir(args, "phase1"), refine=False)
    print(f"run directory: {outputs.out_dir}")
    print(f"archive: {outputs.out_dir / 'pareto.json'}")
    return 0


_PHASE2_OVERRIDES = {
    "alpha": "alpha",
    "regions": "num_regions",
    "min_center_distance": "min_center_distance",
    "radius_init": "radius_init",
    "radius_min": "radius_min",
    "radius_max": "radius_max",
    "expand_factor": "expand_factor",
    "shrink_factor": "shrink_factor",
    "pool_per_region": "pool_per_region",
    "ei_tol": "ei_tol",
    "max_hf_evals": "max_refine_evals",
    "max_per_region": "max_per_region",
}


def _cmd_phase2(args: argparse.Namespace) -> int:
    overrides = {}
    for arg_name, field in _PHASE2_OVERRIDES.items():
        value = getattr(args, arg_name)
        if value is not None:
            overrides[field] = value
    outputs = run_refinement_from(args.from_path, args.out, overrides)
    print(f"run directory: {outputs.out_dir}")
    print(f"best config: {outputs.out_dir / 'best.json'}")
    return 0


def _cmd_random_search(args: argparse.Namespace) -> int:
    manifest = _manifest_from_args(args)
    run = prepare_run(manifest, _out_dir(args, "random-search"))
    try:
        result = random_search(
            run.ctx,
            run.backend,
            run.ledger,
            n_evals=args.n_evals,
            steps=manifest.top_steps,
            eval_seed=manifest.eval_seed,
            rng=substream(manifest.seed, "random-search"),
            workers=manifest.workers,
        )
    finally:
        close = getattr(run.backend, "close", None)
        if close is not None:
            close()
    write_json(
        run.out_dir / "random_search.json",
        {
            "n_evals": args.n_evals,
            "steps": manifest.top_steps,
            "best_score": result.best_score,
            "curve": result.best_curve,
        },
    )
    write_csv(
        run.out_dir / "random_curve.csv",
        ["evaluation", "best_score"],
        [[i + 1, f"{v!r}"] for i, v in enumerate(result.best_curve)],
    )
    print(f"run directory: {run.out_dir}")
    print(f"best score: {result.best_score!r}")
    return 0


def _cmd_brute_force(args: argparse.Namespace) -> int:
    from .evaluator import SyntheticLatent
    from .feasibility import Budget

    manifest = _manifest_from_args(args)
    if manifest.evaluator != "synthetic":
        raise ValueError("brute-force needs the synthetic evaluator")
    space = load_search_space(manifest.model_path)
    Budget.checked(manifest.budget_bytes, space)
    latent = SyntheticLatent.sample(
        space.num_layers,
        manifest.latent_seed,
        sensitivity_range=(manifest.sensitivity_lo, manifest.sensitivity_hi),
        base_score=manifest.base_score,
        learning_timescale=manifest.resolved_timescale(),
        noise_scale=manifest.noise_scale,
        rank_half_point=manifest.rank_half_point,
        noise_ref_steps=manifest.steps[0],
    )
    steps_at = args.steps_at if args.steps_at and args.steps_at > 0 else None
    table = brute_force_oracle(
        space, manifest.budget_bytes, latent, manifest.alpha, steps=steps_at
    )
    out = _out_dir(args, "brute-force")
    out.mkdir(parents=True, exist_ok=True)
    write_json(
        out / "oracle.json",
        {
            "alpha": manifest.alpha,
            "budget_bytes": manifest.budget_bytes,
            "feasible": len(table.entries),
            "entries": [
                {
                    "config": e.config.to_json_dict(),
                    "score": e.score,
                    "memory_bytes": e.memory_bytes,
                    "utility": e.utility,
                }
                for e in table.entries
            ],
        },
    )
    write_csv(
        out / "oracle.csv",
        ["rank", "utility", "score", "memory_bytes", "q", "r"],
        [
            [
                i + 1,
                f"{e.utility!r}",
                f"{e.score!r}",
                e.memory_bytes,
                json.dumps(list(e.config.q)),
                json.dumps(list(e.config.r)),
            ]
            for i, e in enumerate(table.entries)
        ],
    )
    print(f"oracle: {out / 'oracle.csv'} ({len(table.entries)} feasible configs)")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    paths = emit_reports(args.run_dir, args.out)
    for path in paths:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bitrank",
        description="joint bit-width and adapter-rank search under a memory budget",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="global phase plus refinement")
    _add_common(p)
    _add_phase1(p)
    _add_phase2(p)
    _add_synthetic(p)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("phase1", help="global phase only")
    _add_common(p)
    _add_phase1(p)
    _add_phase2(p)
    _add_synthetic(p)
    p.set_defaults(func=_cmd_phase1)

    p = sub.add_parser("phase2", help="refinement from a finished run directory")
    p.add_argument("--from", dest="from_path", required=True,
                   help="run directory or its pareto.json")
    p.add_argument("--out", default=None, help="new run directory (default: in place)")
    p.add_argument("--alpha", type=float, default=None)
    _add_phase2(p, with_defaults=False)
    p.set_defaults(func=_cmd_phase2)

    p = sub.add_parser("random-search", help="repaired uniform sampling baseline")
    _add_common(p)
    _add_phase1(p)
    _add_phase2(p)
    _add_synthetic(p)
    p.add_argument("--n-evals", type=int, default=30)
    p.set_defaults(func=_cmd_random_search)

    p = sub.add_parser("brute-force", help="exact oracle for small spaces")
    _add_common(p)
    _add_phase1(p)
    _add_phase2(p)
    _add_synthetic(p)
    p.add_argument(
        "--steps-at", type=int, default=0, help="score at this many steps (0 = asymptote)"
    )
    p.set_defaults(func=_cmd_brute_force)

    p = sub.add_parser("report", help="regenerate tables and figures")
    p.add_argument("run_dir", help="run directory")
    p.add_argument("--out", default=None, help="report directory (default <run>/report)")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
