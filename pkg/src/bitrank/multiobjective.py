"""Two-objective selection machinery: constrained non-dominated sorting,
crowding-distance survival, exact 2-D hypervolume, and the running archive
of top-fidelity measurements.

Objectives throughout are (score maximized, memory minimized).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from .evaluator import EvalRecord

log = logging.getLogger(__name__)


@dataclass
class SelectionItem:
    """One candidate in objective space; payload carries the caller's object."""

    score: float
    memory: float
    violation: float = 0.0
    payload: object = None


def dominates(a: SelectionItem, b: SelectionItem) -> bool:
    """Constrained domination: feasibility first, then Pareto order."""
    a_feas = a.violation <= 0.0
    b_feas = b.violation <= 0.0
    if a_feas != b_feas:
        return a_feas
    if not a_feas:
        return a.violation < b.violation
    if a.score >= b.score and a.memory <= b.memory:
        return a.score > b.score or a.memory < b.memory
    return False


def fast_nondominated_fronts(items: Sequence[SelectionItem]) -> list[list[int]]:
    """Deb's fast non-dominated sort; returns index lists, best front first."""
    n = len(items)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    counts = [0] * n
    fronts: list[list[int]] = [[]]
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if dominates(items[i], items[j]):
                dominated_by[i].append(j)
            elif dominates(items[j], items[i]):
                counts[i] += 1
        if counts[i] == 0:
            fronts[0].append(i)
    current = 0
    while fronts[current]:
        nxt: list[int] = []
        for i in fronts[current]:
            for j in dominated_by[i]:
                counts[j] -= 1
                if counts[j] == 0:
                    nxt.append(j)
        current += 1
        fronts.append(nxt)
    fronts.pop()
    return fronts


def crowding_distances(
    items: Sequence[SelectionItem], front: Sequence[int]
) -> dict[int, float]:
    """Crowding distance within one front; boundary points get infinity."""
    dist = {i: 0.0 for i in front}
    if len(front) <= 2:
        return {i: float("inf") for i in front}
    for objective in ("score", "memory"):
        ordered = sorted(front, key=lambda i: getattr(items[i], objective))
        lo = getattr(items[ordered[0]], objective)
        hi = getattr(items[ordered[-1]], objective)
        dist[ordered[0]] = float("inf")
        dist[ordered[-1]] = float("inf")
        if hi == lo:
            continue
        for k in range(1, len(ordered) - 1):
            prev_v = getattr(items[ordered[k - 1]], objective)
            next_v = getattr(items[ordered[k + 1]], objective)
            dist[ordered[k]] += (next_v - prev_v) / (hi - lo)
    return dist


def nsga2_select(items: Sequence[SelectionItem], target_size: int) -> list[int]:
    """Survivor indices: whole fronts while they fit, then the most-crowded
    remainder (boundary points first; ties broken by insertion index)."""
    if target_size <= 0:
        return []
    chosen: list[int] = []
    for front in fast_nondominated_fronts(items):
        if len(chosen) + len(front) <= target_size:
            chosen.extend(front)
            if len(chosen) == target_size:
                break
            continue
        dist = crowding_distances(items, front)
        ranked = sorted(front, key=lambda i: (-dist[i], i))
        chosen.extend(ranked[: target_size - len(chosen)])
        break
    return chosen


def hypervolume_2d(
    points: Sequence[tuple[float, float]],
    ref_score: float,
    ref_memory: float,
) -> float:
    """Exact dominated hypervolume for (score max, memory min) points.

    The reference corner sits at (ref_score, ref_memory); points at or
    outside the reference box contribute nothing and points strictly
    outside are logged.  Duplicate and dominated points are skipped by the
    sweep, so the result is insensitive to them.
    """
    inside = []
    for score, memory in points:
        if score <= ref_score or memory >= ref_memory:
            if score < ref_score or memory > ref_memory:
                log.warning(
                    "hypervolume: point (%.6g, %.6g) outside reference box"
                    " (%.6g, %.6g), excluded",
                    score, memory, ref_score, ref_memory,
                )
            continue
        inside.append((score, memory))
    inside.sort(key=lambda p: (-p[0], p[1]))
    volume = 0.0
    best_memory = ref_memory
    for score, memory in inside:
        if memory >= best_memory:
            continue
        volume += (score - ref_score) * (best_memory - memory)
        best_memory = memory
    return volume


def hypervolume_stalled(
    trace: Sequence[float],
    tol: float,
    patience: int,
    denominator_floor: float = 1e-9,
) -> bool:
    """True when the last ``patience`` relative HV improvements all fall
    below ``tol``.  Needs patience+1 trace entries to fire."""
    if patience < 1:
        raise ValueError("patience must be >= 1")
    if len(trace) < patience + 1:
        return False
    for prev, cur in zip(trace[-patience - 1 : -1], trace[-patience:]):
        rel = (cur - prev) / (prev + denominator_floor)
        if rel >= tol:
            return False
    return True


@dataclass
class ParetoArchive:
    """Non-dominated top-fidelity measurements plus the per-generation HV trace."""

    final_steps: int
    ref_score: float
    ref_memory: float
    members: list[EvalRecord] = field(default_factory=list)
    hv_trace: list[float] = field(default_factory=list)

    def try_insert(self, record: EvalRecord) -> bool:
        """Insert if non-dominated; prunes members the newcomer dominates.

        Only feasible records measured at the archive's fidelity may enter.
        """
        if record.steps != self.final_steps:
            raise ValueError(
                f"archive holds {self.final_steps}-step records, got {record.steps}"
            )
        if record.memory_bytes > self.ref_memory:
            raise ValueError("infeasible record offered to the archive")
        for member in self.members:
            if member.config.key() == record.config.key():
                return False
            if (
                member.score >= record.score
                and member.memory_bytes <= record.memory_bytes
                and (member.score > record.score or member.memory_bytes < record.memory_bytes)
            ):
                return False
        self.members = [
            m
            for m in self.members
            if not (
                record.score >= m.score
                and record.memory_bytes <= m.memory_bytes
                and (record.score > m.score or record.memory_bytes < m.memory_bytes)
            )
        ]
        self.members.append(record)
        return True

    def extend(self, records: Sequence[EvalRecord]) -> int:
        added = 0
        for record in records:
            if self.try_insert(record):
                added += 1
        return added

    def points(self) -> list[tuple[float, float]]:
        return [(m.score, float(m.memory_bytes)) for m in self.members]

    def hypervolume(self) -> float:
        return hypervolume_2d(self.points(), self.ref_score, self.ref_memory)

    def log_generation(self) -> float:
        hv = self.hypervolume()
        self.hv_trace.append(hv)
        return hv

    def to_json_dict(self) -> dict:
        ordered = sorted(
            self.members, key=lambda m: (-m.score, m.memory_bytes, m.config.key())
        )
        return {
            "final_steps": self.final_steps,
            "reference": {"score": self.ref_score, "memory_bytes": self.ref_memory},
            "hypervolume_trace": list(self.hv_trace),
            "members": [m.to_json_dict() for m in ordered],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ParetoArchive":
        archive = cls(
            final_steps=int(obj["final_steps"]),
            ref_score=float(obj["reference"]["score"]),
            ref_memory=float(obj["reference"]["memory_bytes"]),
        )
        archive.hv_trace = [float(v) for v in obj.get("hypervolume_trace", [])]
        for entry in obj.get("members", []):
            archive.members.append(EvalRecord.from_json_dict(entry))
        return archive
