"""Design space: ladders, layer catalogs, configurations, memory accounting.

A configuration assigns every layer one bit-width from the quantization
ladder and one adapter rank from the rank ladder.  Memory accounting uses
integer arithmetic only, so feasibility decisions are exactly reproducible
across platforms.  The ordinal embedding maps configurations into a real
vector space for the surrogate and GP stages.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_BIT_LADDER = (2, 4, 8)
DEFAULT_RANK_LADDER = (4, 8, 16)

KNOBS = ("q", "r")


class ModelSpecError(ValueError):
    """Raised when a model-spec file fails validation."""


@dataclass(frozen=True)
class Ladder:
    """Strictly increasing menu of integer settings for one knob."""

    values: tuple[int, ...]

    def __post_init__(self) -> None:
        vals = tuple(int(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ValueError("ladder needs at least two settings")
        if vals[0] < 1:
            raise ValueError("ladder values must be >= 1")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ValueError("ladder values must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)

    def __contains__(self, value: int) -> bool:
        return value in self.values

    def index(self, value: int) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise ValueError(f"{value} is not on ladder {self.values}") from None

    def lower(self, value: int) -> int | None:
        """Next setting down, or None at the bottom."""
        i = self.index(value)
        return self.values[i - 1] if i > 0 else None

    def upper(self, value: int) -> int | None:
        """Next setting up, or None at the top."""
        i = self.index(value)
        return self.values[i + 1] if i + 1 < len(self.values) else None

    @property
    def minimum(self) -> int:
        return self.values[0]

    @property
    def maximum(self) -> int:
        return self.values[-1]

    def z_scores(self) -> tuple[float, ...]:
        # Standardize ordinal indices 0..K-1 by their population mean/std.
        k = len(self.values)
        mean = (k - 1) / 2.0
        std = math.sqrt((k * k - 1) / 12.0)
        return tuple((i - mean) / std for i in range(k))


@dataclass(frozen=True)
class Ladders:
    """The paired bit-width and rank ladders shared by all layers."""

    q: Ladder
    r: Ladder

    def for_knob(self, knob: str) -> Ladder:
        if knob == "q":
            return self.q
        if knob == "r":
            return self.r
        raise ValueError(f"unknown knob {knob!r}")

    def min_config(self, num_layers: int) -> "Config":
        return Config((self.q.minimum,) * num_layers, (self.r.minimum,) * num_layers)

    def max_config(self, num_layers: int) -> "Config":
        return Config((self.q.maximum,) * num_layers, (self.r.maximum,) * num_layers)

    @property
    def choices_per_layer(self) -> int:
        return len(self.q) * len(self.r)


def default_ladders() -> Ladders:
    return Ladders(Ladder(DEFAULT_BIT_LADDER), Ladder(DEFAULT_RANK_LADDER))


@dataclass(frozen=True)
class LayerSpec:
    """One searchable layer: backbone size plus its adapter target shapes."""

    name: str
    backbone_params: int
    adapter_targets: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "backbone_params", int(self.backbone_params))
        targets = tuple((int(a), int(b)) for a, b in self.adapter_targets)
        object.__setattr__(self, "adapter_targets", targets)
        if not self.name:
            raise ModelSpecError("layer name must be non-empty")
        if self.backbone_params <= 0:
            raise ModelSpecError(f"layer {self.name!r}: backbone_params must be > 0")
        for d_in, d_out in targets:
            if d_in <= 0 or d_out <= 0:
                raise ModelSpecError(
                    f"layer {self.name!r}: adapter target dims must be > 0, got ({d_in}, {d_out})"
                )


@dataclass(frozen=True)
class LayerCatalog:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers:
            raise ModelSpecError("empty catalog: at least one layer is required")
        names = [layer.name for layer in layers]
        if len(set(names)) != len(names):
            raise ModelSpecError("layer names must be unique")

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    @property
    def names(self) -> list[str]:
        return [layer.name for layer in self.layers]


@dataclass(frozen=True)
class MemoryPolicy:
    """Byte-accounting conventions for quantized backbones and adapters.

    ``meta_bytes_per_group`` covers per-group quantizer metadata (scales,
    zero points); zero is allowed so the metadata term can be switched off.
    """

    adapter_precision_bits: int = 16
    quant_group_size: int = 64
    meta_bytes_per_group: int = 4

    def __post_init__(self) -> None:
        if self.adapter_precision_bits <= 0:
            raise ValueError("adapter_precision_bits must be > 0")
        if self.quant_group_size <= 0:
            raise ValueError("quant_group_size must be > 0")
        if self.meta_bytes_per_group < 0:
            raise ValueError("meta_bytes_per_group must be >= 0")


@dataclass(frozen=True)
class Config:
    """Per-layer (bit-width, rank) assignment.  Hashable; used as a cache key."""

    q: tuple[int, ...]
    r: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", tuple(int(v) for v in self.q))
        object.__setattr__(self, "r", tuple(int(v) for v in self.r))
        if len(self.q) != len(self.r):
            raise ValueError("q and r must have the same length")
        if not self.q:
            raise ValueError("config must cover at least one layer")

    @property
    def num_layers(self) -> int:
        return len(self.q)

    def key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        return (self.q, self.r)

    def value(self, knob: str, layer: int) -> int:
        return (self.q if knob == "q" else self.r)[layer]

    def replaced(self, knob: str, layer: int, value: int) -> "Config":
        vec = list(self.q if knob == "q" else self.r)
        vec[layer] = int(value)
        if knob == "q":
            return Config(tuple(vec), self.r)
        return Config(self.q, tuple(vec))

    def mean_bits(self) -> float:
        return sum(self.q) / len(self.q)

    def mean_rank(self) -> float:
        return sum(self.r) / len(self.r)

    def to_json_dict(self) -> dict:
        return {"q": list(self.q), "r": list(self.r)}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Config":
        return cls(tuple(obj["q"]), tuple(obj["r"]))


@dataclass(frozen=True)
class SearchSpace:
    """Catalog, ladders, and memory policy bundled for the search stack."""

    catalog: LayerCatalog
    ladders: Ladders = field(default_factory=default_ladders)
    policy: MemoryPolicy = field(default_factory=MemoryPolicy)

    @property
    def num_layers(self) -> int:
        return len(self.catalog)

    def validate_config(self, config: Config) -> None:
        if config.num_layers != self.num_layers:
            raise ValueError(
                f"config covers {config.num_layers} layers, catalog has {self.num_layers}"
            )
        for v in config.q:
            self.ladders.q.index(v)
        for v in config.r:
            self.ladders.r.index(v)

    def total_configs(self) -> int:
        return self.ladders.choices_per_layer ** self.num_layers


def adapter_param_count(layer: LayerSpec, rank: int) -> int:
    """Adapter parameters added to one layer at the given rank."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return sum(rank * (d_in + d_out) for d_in, d_out in layer.adapter_targets)


def layer_memory(layer: LayerSpec, q: int, r: int, policy: MemoryPolicy) -> int:
    """Exact bytes for one layer: quantized backbone + group metadata + adapter.

    Fractional bytes from bit products round up.
    """
    backbone = -(-(layer.backbone_params * q) // 8)
    groups = -(-layer.backbone_params // policy.quant_group_size)
    meta = groups * policy.meta_bytes_per_group
    adapter = -(-(adapter_param_count(layer, r) * policy.adapter_precision_bits) // 8)
    return backbone + meta + adapter


def total_memory(config: Config, catalog: LayerCatalog, policy: MemoryPolicy) -> int:
    if config.num_layers != len(catalog):
        raise ValueError(
            f"config covers {config.num_layers} layers, catalog has {len(catalog)}"
        )
    return sum(
        layer_memory(layer, config.q[i], config.r[i], policy)
        for i, layer in enumerate(catalog.layers)
    )


def space_memory(config: Config, space: SearchSpace) -> int:
    return total_memory(config, space.catalog, space.policy)


def embed(config: Config, ladders: Ladders) -> np.ndarray:
    """Ordinal embedding: standardized ladder indices, q block then r block."""
    zq = ladders.q.z_scores()
    zr = ladders.r.z_scores()
    coords = [zq[ladders.q.index(v)] for v in config.q]
    coords += [zr[ladders.r.index(v)] for v in config.r]
    return np.asarray(coords, dtype=float)


def atomic_distance(a: Config, b: Config, ladders: Ladders) -> int:
    """Total ladder steps separating two configs (L1 over ordinal indices)."""
    if a.num_layers != b.num_layers:
        raise ValueError("configs cover different layer counts")
    d = 0
    for va, vb in zip(a.q, b.q):
        d += abs(ladders.q.index(va) - ladders.q.index(vb))
    for va, vb in zip(a.r, b.r):
        d += abs(ladders.r.index(va) - ladders.r.index(vb))
    return d


def _parse_ladder(obj: object, what: str) -> Ladder:
    if not isinstance(obj, list):
        raise ModelSpecError(f"{what} ladder must be a list")
    try:
        return Ladder(tuple(obj))
    except ValueError as exc:
        raise ModelSpecError(f"{what} ladder: {exc}") from None


def load_model_spec(path: str | Path) -> LayerCatalog:
    """Load and validate the layer catalog from a model-spec JSON file.

    The file must contain ``layers``, a list of objects with ``name``,
    ``backbone_params``, and ``adapter_targets`` (a list of [d_in, d_out]
    pairs).  Optional ``ladders`` and ``memory_policy`` sections are read
    by :func:`load_search_space`.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelSpecError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict) or "layers" not in raw:
        raise ModelSpecError(f"{path}: expected an object with a 'layers' list")
    layers = []
    for i, entry in enumerate(raw["layers"]):
        name = entry.get("name", f"layer{i}")
        try:
            layers.append(
                LayerSpec(
                    name=name,
                    backbone_params=entry["backbone_params"],
                    adapter_targets=tuple(
                        (t[0], t[1]) for t in entry.get("adapter_targets", [])
                    ),
                )
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise ModelSpecError(f"layer {name!r}: malformed entry ({exc})") from None
    return LayerCatalog(tuple(layers))


def load_search_space(path: str | Path) -> SearchSpace:
    """Load catalog plus optional ladders / memory-policy overrides."""
    path = Path(path)
    catalog = load_model_spec(path)
    raw = json.loads(path.read_text())
    ladders = default_ladders()
    if "ladders" in raw:
        section = raw["ladders"]
        q = _parse_ladder(section["q"], "q") if "q" in section else ladders.q
        r = _parse_ladder(section["r"], "r") if "r" in section else ladders.r
        ladders = Ladders(q, r)
    policy = MemoryPolicy()
    if "memory_policy" in raw:
        section = dict(raw["memory_policy"])
        unknown = set(section) - {
            "adapter_precision_bits",
            "quant_group_size",
            "meta_bytes_per_group",
        }
        if unknown:
            raise ModelSpecError(f"memory_policy: unknown fields {sorted(unknown)}")
        try:
            policy = MemoryPolicy(
                adapter_precision_bits=section.get("adapter_precision_bits", 16),
                quant_group_size=section.get("quant_group_size", 64),
                meta_bytes_per_group=section.get("meta_bytes_per_group", 4),
            )
        except ValueError as exc:
            raise ModelSpecError(f"memory_policy: {exc}") from None
    return SearchSpace(catalog=catalog, ladders=ladders, policy=policy)
