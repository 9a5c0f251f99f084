"""Report emission: delimited tables, JSON summaries, and figures.

Everything here is derived from the files a run directory already
contains, so reports can be regenerated at any time.  Data outputs are
deterministic: emitting twice from the same run directory produces
byte-identical CSV and JSON files.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluator import EvalRecord, Ledger
from .multiobjective import ParetoArchive

log = logging.getLogger(__name__)

FIGURE_DPI = 120


def _load_json(path: Path) -> dict:
    return json.loads(path.read_text())


def _load_jsonl(path: Path) -> list[dict]:
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            rows.append(json.loads(line))
    return rows


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, obj: object) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _top_records(ledger: Ledger, steps: int, seed: int, budget: int) -> list[EvalRecord]:
    """Feasible top-fidelity records, deduplicated by config, ledger order."""
    seen: set = set()
    out = []
    for rec in ledger.records_at(steps, seed=seed):
        key = rec.config.key()
        if key in seen or rec.memory_bytes > budget:
            continue
        seen.add(key)
        out.append(rec)
    return out


def _pareto_members(records: list[EvalRecord], steps: int, budget: int) -> list[EvalRecord]:
    archive = ParetoArchive(final_steps=steps, ref_score=0.0, ref_memory=float(budget))
    archive.extend(records)
    return sorted(archive.members, key=lambda r: (-r.score, r.memory_bytes, r.config.key()))


def _utility_bounds(records: list[EvalRecord]) -> tuple[float, float, float, float]:
    scores = [r.score for r in records]
    mems = [float(r.memory_bytes) for r in records]
    return min(scores), max(scores), min(mems), max(mems)


def _scalarize(score: float, memory: float, alpha: float,
               bounds: tuple[float, float, float, float]) -> float:
    s_lo, s_hi, m_lo, m_hi = bounds
    s_norm = 0.5 if s_hi <= s_lo else (score - s_lo) / (s_hi - s_lo)
    m_norm = 0.5 if m_hi <= m_lo else (memory - m_lo) / (m_hi - m_lo)
    return alpha * s_norm - (1.0 - alpha) * m_norm


def _config_row(rec: EvalRecord) -> list:
    cfg = rec.config
    return [
        f"{rec.score!r}",
        rec.memory_bytes,
        f"{cfg.mean_bits()!r}",
        f"{cfg.mean_rank()!r}",
        json.dumps(list(cfg.q)),
        json.dumps(list(cfg.r)),
    ]


def emit_reports(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render every table and figure for a run directory.

    Returns the list of written paths.  Handles runs that stopped after
    the global phase: the summary then carries an explicit marker that
    refinement never ran instead of silently omitting it.
    """
    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run / "report"
    out.mkdir(parents=True, exist_ok=True)

    manifest_doc = _load_json(run / "manifest.json")
    manifest = manifest_doc.get("manifest", manifest_doc)
    resolved = manifest_doc.get("resolved", {})
    steps = list(manifest["steps"])
    top_steps = steps[-1]
    eval_seed = resolved["eval_seed"]
    budget = int(manifest["budget_bytes"])
    alpha = float(manifest["alpha"])
    layer_names = resolved.get("layers")

    ledger = Ledger(run / "ledger.jsonl")
    hf_records = _top_records(ledger, top_steps, eval_seed, budget)
    written: list[Path] = []

    # Pareto front table
    front = _pareto_members(hf_records, top_steps, budget)
    front_path = out / "pareto_front.csv"
    write_csv(
        front_path,
        ["score", "memory_bytes", "mean_bits", "mean_rank", "q", "r"],
        [_config_row(r) for r in front],
    )
    written.append(front_path)

    # Best-so-far curve over top-fidelity evaluations, ledger order
    curve_rows = []
    best = float("-inf")
    for i, rec in enumerate(hf_records, start=1):
        best = max(best, rec.score)
        curve_rows.append([i, f"{rec.score!r}", f"{best!r}"])
    curve_path = out / "best_so_far.csv"
    write_csv(curve_path, ["evaluation", "score", "best_score"], curve_rows)
    written.append(curve_path)

    # Hypervolume trace
    telemetry = []
    telemetry_path = run / "phase1_telemetry.jsonl"
    if telemetry_path.exists():
        telemetry = _load_jsonl(telemetry_path)
    hv_path = out / "hv_trace.csv"
    write_csv(
        hv_path,
        ["generation", "hypervolume", "archive_size", "cohort_size"],
        [
            [row["generation"], f"{row['hypervolume']!r}", row["archive_size"], row["cohort_size"]]
            for row in telemetry
        ],
    )
    written.append(hv_path)

    # Surrogate quality per generation and stage
    quality_rows = []
    for row in telemetry:
        for stage in row.get("surrogates", []):
            quality_rows.append(
                {
                    "generation": row["generation"],
                    "steps": stage["steps"],
                    "trained": stage["trained"],
                    "pairs_total": stage["pairs_total"],
                    "promoted_by": stage["promoted_by"],
                    "lf_overlap": stage["lf_overlap"],
                    "heldout_spearman": stage["heldout_spearman"],
                }
            )
    overlaps = [r["lf_overlap"] for r in quality_rows if r["lf_overlap"] is not None]
    spears = [r["heldout_spearman"] for r in quality_rows if r["heldout_spearman"] is not None]
    quality_path = out / "surrogate_quality.json"
    _write_json(
        quality_path,
        {
            "per_stage": quality_rows,
            "mean_lf_overlap": sum(overlaps) / len(overlaps) if overlaps else None,
            "mean_heldout_spearman": sum(spears) / len(spears) if spears else None,
        },
    )
    written.append(quality_path)

    # Repair intensity per layer
    repair_rows: list[list] = []
    stats_path = run / "repair_stats.json"
    importance_path = run / "importance.json"
    if stats_path.exists():
        stats = _load_json(stats_path)
        importance = _load_json(importance_path) if importance_path.exists() else {}
        iq = importance.get("iq", [])
        ir = importance.get("ir", [])
        n = len(stats["steps_q"])
        for i in range(n):
            name = layer_names[i] if layer_names and i < len(layer_names) else f"layer{i}"
            repair_rows.append(
                [
                    i,
                    name,
                    f"{iq[i]!r}" if i < len(iq) else "",
                    f"{ir[i]!r}" if i < len(ir) else "",
                    stats["steps_q"][i],
                    stats["steps_r"][i],
                    stats["bytes_q"][i],
                    stats["bytes_r"][i],
                ]
            )
    repair_path = out / "repair_intensity.csv"
    write_csv(
        repair_path,
        ["layer", "name", "iq", "ir", "steps_q", "steps_r", "bytes_q", "bytes_r"],
        repair_rows,
    )
    written.append(repair_path)

    # Best config + summary
    best_doc = None
    best_path_src = run / "best.json"
    if best_path_src.exists():
        best_doc = _load_json(best_path_src)
    elif hf_records:
        bounds = _utility_bounds(hf_records)
        utilities = [
            _scalarize(r.score, float(r.memory_bytes), alpha, bounds) for r in hf_records
        ]
        idx = max(
            range(len(hf_records)),
            key=lambda i: (utilities[i], -hf_records[i].memory_bytes),
        )
        rec = hf_records[idx]
        best_doc = {
            "config": rec.config.to_json_dict(),
            "score": rec.score,
            "memory_bytes": rec.memory_bytes,
            "utility": utilities[idx],
            "alpha": alpha,
            "steps": rec.steps,
            "seed": rec.seed,
            "mean_bits": rec.config.mean_bits(),
            "mean_rank": rec.config.mean_rank(),
        }
    best_out = out / "best_config.json"
    _write_json(best_out, best_doc if best_doc is not None else {})
    written.append(best_out)

    refine_rows = []
    refine_path = run / "refine_trace.jsonl"
    if refine_path.exists():
        refine_rows = _load_jsonl(refine_path)
    refined = best_path_src.exists()
    summary = {
        "budget_bytes": budget,
        "alpha": alpha,
        "top_steps": top_steps,
        "total_evaluations": len(ledger.records()),
        "top_fidelity_evaluations": len(hf_records),
        "pareto_size": len(front),
        "phase1": {
            "generations": len(telemetry),
            "final_hypervolume": telemetry[-1]["hypervolume"] if telemetry else None,
        },
        "phase2": (
            {
                "ran": True,
                "evaluations": len(refine_rows),
                "stop_reason": best_doc.get("stop_reason") if best_doc else None,
            }
            if refined
            else {"ran": False, "reason": "refinement phase not run"}
        ),
        "best": best_doc,
    }
    summary_path = out / "summary.json"
    _write_json(summary_path, summary)
    written.append(summary_path)

    written.extend(_emit_figures(out, hf_records, front, telemetry, curve_rows, repair_rows, budget))
    return written


def _emit_figures(
    out: Path,
    hf_records: list[EvalRecord],
    front: list[EvalRecord],
    telemetry: list[dict],
    curve_rows: list[list],
    repair_rows: list[list],
    budget: int,
) -> list[Path]:
    paths = []
    mb = 1.0 / (1024 * 1024)

    fig, ax = plt.subplots(figsize=(6, 4))
    if hf_records:
        ax.scatter(
            [r.memory_bytes * mb for r in hf_records],
            [r.score for r in hf_records],
            s=18,
            color="#9db4c8",
            label="measured",
        )
    if front:
        ordered = sorted(front, key=lambda r: r.memory_bytes)
        ax.plot(
            [r.memory_bytes * mb for r in ordered],
            [r.score for r in ordered],
            marker="o",
            color="#c44e52",
            label="front",
        )
    ax.axvline(budget * mb, color="#555555", linestyle="--", linewidth=1, label="budget")
    ax.set_xlabel("memory (MiB)")
    ax.set_ylabel("score")
    ax.set_title("score versus memory")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    path = out / "pareto_front.png"
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    if telemetry:
        ax.plot(
            [row["generation"] for row in telemetry],
            [row["hypervolume"] for row in telemetry],
            marker="o",
            color="#4c72b0",
        )
    ax.set_xlabel("generation")
    ax.set_ylabel("hypervolume")
    ax.set_title("archive hypervolume")
    fig.tight_layout()
    path = out / "hv_trace.png"
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(6, 4))
    if curve_rows:
        ax.step(
            [row[0] for row in curve_rows],
            [float(row[2]) for row in curve_rows],
            where="post",
            color="#55a868",
        )
    ax.set_xlabel("top-fidelity evaluation")
    ax.set_ylabel("best score so far")
    ax.set_title("incumbent score")
    fig.tight_layout()
    path = out / "best_so_far.png"
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(7, 4))
    if repair_rows:
        idx = [row[0] for row in repair_rows]
        width = 0.4
        ax.bar(
            [i - width / 2 for i in idx],
            [row[4] for row in repair_rows],
            width=width,
            color="#4c72b0",
            label="bit downgrades",
        )
        ax.bar(
            [i + width / 2 for i in idx],
            [row[5] for row in repair_rows],
            width=width,
            color="#dd8452",
            label="rank downgrades",
        )
        ax.set_xticks(idx)
        ax.set_xticklabels([row[1] for row in repair_rows], rotation=45, ha="right", fontsize=7)
        ax.legend(fontsize=8)
    ax.set_ylabel("repair steps")
    ax.set_title("repair pressure by layer")
    fig.tight_layout()
    path = out / "repair_intensity.png"
    fig.savefig(path, dpi=FIGURE_DPI)
    plt.close(fig)
    paths.append(path)
    return paths
