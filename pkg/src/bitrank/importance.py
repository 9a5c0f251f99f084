"""Per-layer importance signals for the two knobs.

The bit-width signal measures Fisher-weighted quantization damage at the
lowest ladder setting; the rank signal measures how much gradient energy a
few leading singular directions capture.  Both are min-max normalized per
knob before any search component consumes them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_TOP_SINGULAR_VALUES = 8


@dataclass(frozen=True)
class ImportanceProfile:
    """Per-layer importance for bit-width (iq) and rank (ir) decisions."""

    iq: tuple[float, ...]
    ir: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self) -> None:
        iq = tuple(float(v) for v in self.iq)
        ir = tuple(float(v) for v in self.ir)
        object.__setattr__(self, "iq", iq)
        object.__setattr__(self, "ir", ir)
        if len(iq) != len(ir):
            raise ValueError("iq and ir must have the same length")
        if not iq:
            raise ValueError("importance profile must cover at least one layer")
        for v in iq + ir:
            if not math.isfinite(v) or v < 0:
                raise ValueError("importance values must be finite and >= 0")
        if self.normalized:
            for v in iq + ir:
                if v > 1.0:
                    raise ValueError("normalized importance values must be <= 1")

    @property
    def num_layers(self) -> int:
        return len(self.iq)

    def vector(self, knob: str) -> tuple[float, ...]:
        if knob == "q":
            return self.iq
        if knob == "r":
            return self.ir
        raise ValueError(f"unknown knob {knob!r}")

    def to_json_dict(self) -> dict:
        return {"iq": list(self.iq), "ir": list(self.ir)}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ImportanceProfile":
        return cls(tuple(obj["iq"]), tuple(obj["ir"]))

    @classmethod
    def from_json_file(cls, path: str | Path) -> "ImportanceProfile":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), sort_keys=True) + "\n")


def uniform_profile(num_layers: int) -> ImportanceProfile:
    """Neutral profile: every layer equally important on both knobs."""
    half = (0.5,) * num_layers
    return ImportanceProfile(half, half, normalized=True)


def _minmax(values: tuple[float, ...]) -> tuple[float, ...]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return (0.5,) * len(values)
    return tuple((v - lo) / (hi - lo) for v in values)


def normalize_importance(profile: ImportanceProfile) -> ImportanceProfile:
    """Min-max normalize each knob independently; all-equal maps to 0.5."""
    return ImportanceProfile(_minmax(profile.iq), _minmax(profile.ir), normalized=True)


@dataclass
class ProbeSample:
    """Calibration statistics for one model, grouped per layer.

    weight_matrices[l] holds the weight tensors of layer l (reshaped 2-D),
    fisher_diag[l] the matching per-element Fisher estimates, and
    grad_matrices[l] the accumulated gradients of that layer's adapter
    target projections.
    """

    weight_matrices: list[list[np.ndarray]]
    fisher_diag: list[list[np.ndarray]]
    grad_matrices: list[list[np.ndarray]]

    def __post_init__(self) -> None:
        if not (
            len(self.weight_matrices) == len(self.fisher_diag) == len(self.grad_matrices)
        ):
            raise ValueError("per-layer lists must have equal length")
        for layer, (ws, fs) in enumerate(zip(self.weight_matrices, self.fisher_diag)):
            if len(ws) != len(fs):
                raise ValueError(f"layer {layer}: weight/fisher counts differ")
            for w, f in zip(ws, fs):
                if w.shape != f.shape:
                    raise ValueError(f"layer {layer}: weight/fisher shapes differ")
                if not np.all(np.isfinite(w)) or not np.all(np.isfinite(f)):
                    raise ValueError(f"layer {layer}: non-finite probe values")
                if np.any(f < 0):
                    raise ValueError(f"layer {layer}: fisher values must be >= 0")
        for layer, gs in enumerate(self.grad_matrices):
            for g in gs:
                if not np.all(np.isfinite(g)):
                    raise ValueError(f"layer {layer}: non-finite gradient values")

    @property
    def num_layers(self) -> int:
        return len(self.weight_matrices)


def uniform_quantize(matrix: np.ndarray, bits: int, group_size: int) -> np.ndarray:
    """Symmetric per-group uniform quantization of a matrix.

    Elements are grouped contiguously in flattened row-major order; each
    group uses scale = max|w| / (2^(bits-1) - 1) and rounds w/scale to the
    nearest integer level.  All-zero groups pass through unchanged.
    """
    if bits < 2:
        raise ValueError("bits must be >= 2")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    flat = np.asarray(matrix, dtype=float).reshape(-1).copy()
    levels = (1 << (bits - 1)) - 1
    for start in range(0, flat.size, group_size):
        seg = flat[start : start + group_size]
        peak = np.max(np.abs(seg))
        if peak == 0.0:
            continue
        scale = peak / levels
        flat[start : start + group_size] = np.round(seg / scale) * scale
    return flat.reshape(np.asarray(matrix).shape)


def quant_sensitivity(
    sample: ProbeSample, min_bits: int, group_size: int
) -> tuple[float, ...]:
    """Fisher-weighted squared damage per layer at the lowest bit-width."""
    out = []
    for ws, fs in zip(sample.weight_matrices, sample.fisher_diag):
        acc = 0.0
        for w, f in zip(ws, fs):
            resid = np.asarray(w, dtype=float) - uniform_quantize(w, min_bits, group_size)
            acc += float(np.sum(np.asarray(f, dtype=float) * resid * resid))
        out.append(acc)
    return tuple(out)


def rank_signal(
    sample: ProbeSample, top_singular_values: int = DEFAULT_TOP_SINGULAR_VALUES
) -> tuple[float, ...]:
    """Gradient energy in the leading singular directions, per layer."""
    if top_singular_values < 1:
        raise ValueError("top_singular_values must be >= 1")
    out = []
    for gs in sample.grad_matrices:
        acc = 0.0
        for g in gs:
            sv = np.linalg.svd(np.asarray(g, dtype=float), compute_uv=False)
            acc += float(np.sum(sv[:top_singular_values] ** 2))
        out.append(acc)
    return tuple(out)


def profile_from_probe(
    sample: ProbeSample,
    min_bits: int,
    group_size: int,
    top_singular_values: int = DEFAULT_TOP_SINGULAR_VALUES,
) -> ImportanceProfile:
    """Raw probe statistics -> normalized per-layer profile."""
    raw = ImportanceProfile(
        quant_sensitivity(sample, min_bits, group_size),
        rank_signal(sample, top_singular_values),
    )
    return normalize_importance(raw)
