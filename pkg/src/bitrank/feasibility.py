"""Hard-budget feasibility: deterministic repair and greedy fill-up.

Repair walks an over-budget config back inside the budget one ladder step
at a time, always spending the step where the importance forfeited per byte
saved is smallest.  Greedy fill is the mirror image used to build the
search prototype: starting from the all-minimum config it buys the upgrade
with the best importance-per-byte until nothing else fits.
"""

from __future__ import annotations

from dataclasses import dataclass

from .importance import ImportanceProfile
from .space import KNOBS, Config, SearchSpace, layer_memory, space_memory

# Smoothing added to importance before ratios so zero-importance layers
# still order deterministically instead of dividing to exact ties.
REPAIR_EPSILON = 1e-9


class BudgetError(ValueError):
    """Budget below the minimal footprint, or unreachable by downgrades."""


class LadderBoundError(ValueError):
    """A requested ladder move falls off the end of the ladder."""


@dataclass(frozen=True)
class Budget:
    """Hard byte ceiling for the total footprint."""

    max_bytes: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "max_bytes", int(self.max_bytes))
        if self.max_bytes <= 0:
            raise BudgetError("budget must be positive")

    @classmethod
    def checked(cls, max_bytes: int, space: SearchSpace) -> "Budget":
        """Construct a budget, rejecting one below the all-minimum footprint."""
        budget = cls(max_bytes)
        floor = space_memory(space.ladders.min_config(space.num_layers), space)
        if budget.max_bytes < floor:
            raise BudgetError(
                f"budget {budget.max_bytes} below minimal footprint {floor}"
            )
        return budget


@dataclass(frozen=True)
class RepairStep:
    layer: int
    knob: str
    from_value: int
    to_value: int
    bytes_saved: int

    def to_json_dict(self) -> dict:
        return {
            "layer": self.layer,
            "knob": self.knob,
            "from": self.from_value,
            "to": self.to_value,
            "bytes_saved": self.bytes_saved,
        }


@dataclass
class RepairTrace:
    """Ordered record of the downgrades applied by one repair call."""

    steps: tuple[RepairStep, ...] = ()
    initial_memory: int = 0
    final_memory: int = 0

    def to_json_dict(self) -> dict:
        return {
            "initial_memory": self.initial_memory,
            "final_memory": self.final_memory,
            "steps": [s.to_json_dict() for s in self.steps],
        }


def _knob_delta(space: SearchSpace, layer_idx: int, knob: str, old: int, new: int) -> int:
    """Memory change on one layer when a single knob moves old -> new.

    The three byte terms are additive, so the unchanged knob can be pinned
    to any legal value; it cancels in the difference.
    """
    layer = space.catalog.layers[layer_idx]
    if knob == "q":
        return layer_memory(layer, old, 1, space.policy) - layer_memory(
            layer, new, 1, space.policy
        )
    q_pin = space.ladders.q.minimum
    return layer_memory(layer, q_pin, old, space.policy) - layer_memory(
        layer, q_pin, new, space.policy
    )


def downgrade_saving(config: Config, layer: int, knob: str, space: SearchSpace) -> int:
    """Bytes saved by stepping one knob of one layer down a single rung.

    Raises LadderBoundError if that knob is already at the ladder minimum.
    """
    ladder = space.ladders.for_knob(knob)
    current = config.value(knob, layer)
    lower = ladder.lower(current)
    if lower is None:
        raise LadderBoundError(
            f"layer {layer} knob {knob}: {current} already at ladder minimum"
        )
    return _knob_delta(space, layer, knob, current, lower)


def _importance_vector(importance: ImportanceProfile, knob: str) -> tuple[float, ...]:
    return importance.iq if knob == "q" else importance.ir


def repair(
    config: Config,
    importance: ImportanceProfile,
    budget: Budget,
    space: SearchSpace,
) -> tuple[Config, RepairTrace]:
    """Downgrade an over-budget config until it fits.

    Each step removes the single adjacent downgrade minimizing
    (importance + eps) / bytes_saved; ties prefer knob q over r, then the
    lower layer index.  Already-feasible configs come back unchanged.

    Returns the repaired config and the ordered step trace.

    Raises BudgetError if every variable reaches its ladder minimum while
    the footprint still exceeds the budget.
    """
    space.validate_config(config)
    if len(importance.iq) != config.num_layers:
        raise ValueError("importance profile covers a different layer count")
    mem = space_memory(config, space)
    initial = mem
    steps: list[RepairStep] = []
    current = config
    while mem > budget.max_bytes:
        best_key = None
        best_move = None
        for knob in KNOBS:
            ladder = space.ladders.for_knob(knob)
            imp = _importance_vector(importance, knob)
            for layer in range(current.num_layers):
                value = current.value(knob, layer)
                lower = ladder.lower(value)
                if lower is None:
                    continue
                saving = _knob_delta(space, layer, knob, value, lower)
                if saving <= 0:
                    continue
                key = ((imp[layer] + REPAIR_EPSILON) / saving, KNOBS.index(knob), layer)
                if best_key is None or key < best_key:
                    best_key = key
                    best_move = (layer, knob, value, lower, saving)
        if best_move is None:
            raise BudgetError(
                f"budget {budget.max_bytes} unreachable: no downgrade left at {mem} bytes"
            )
        layer, knob, value, lower, saving = best_move
        current = current.replaced(knob, layer, lower)
        mem -= saving
        steps.append(RepairStep(layer, knob, value, lower, saving))
    return current, RepairTrace(tuple(steps), initial, mem)


def greedy_fill(
    importance: ImportanceProfile,
    budget: Budget,
    space: SearchSpace,
) -> Config:
    """Best-ratio fill-up from the all-minimum config.

    Repeatedly applies the single upgrade maximizing
    (importance + eps) / bytes_added among upgrades that still fit the
    budget; ties prefer knob q over r, then the lower layer index.  Stops
    when no upgrade fits.
    """
    num_layers = space.num_layers
    if len(importance.iq) != num_layers:
        raise ValueError("importance profile covers a different layer count")
    current = space.ladders.min_config(num_layers)
    mem = space_memory(current, space)
    if mem > budget.max_bytes:
        raise BudgetError(f"budget {budget.max_bytes} below minimal footprint {mem}")
    while True:
        best_key = None
        best_move = None
        for knob in KNOBS:
            ladder = space.ladders.for_knob(knob)
            imp = _importance_vector(importance, knob)
            for layer in range(num_layers):
                value = current.value(knob, layer)
                upper = ladder.upper(value)
                if upper is None:
                    continue
                added = -_knob_delta(space, layer, knob, value, upper)
                if mem + added > budget.max_bytes:
                    continue
                ratio = (
                    float("inf")
                    if added == 0
                    else (imp[layer] + REPAIR_EPSILON) / added
                )
                key = (-ratio, KNOBS.index(knob), layer)
                if best_key is None or key < best_key:
                    best_key = key
                    best_move = (layer, knob, upper, added)
        if best_move is None:
            return current
        layer, knob, upper, added = best_move
        current = current.replaced(knob, layer, upper)
        mem += added


class RepairStats:
    """Aggregates repair traces into per-layer, per-knob downgrade tallies."""

    def __init__(self, num_layers: int) -> None:
        self.num_layers = num_layers
        self.calls = 0
        self.steps_q = [0] * num_layers
        self.steps_r = [0] * num_layers
        self.bytes_q = [0] * num_layers
        self.bytes_r = [0] * num_layers

    def update(self, trace: RepairTrace) -> None:
        self.calls += 1
        for step in trace.steps:
            if step.knob == "q":
                self.steps_q[step.layer] += 1
                self.bytes_q[step.layer] += step.bytes_saved
            else:
                self.steps_r[step.layer] += 1
                self.bytes_r[step.layer] += step.bytes_saved

    def to_json_dict(self) -> dict:
        return {
            "calls": self.calls,
            "steps_q": list(self.steps_q),
            "steps_r": list(self.steps_r),
            "bytes_q": list(self.bytes_q),
            "bytes_r": list(self.bytes_r),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RepairStats":
        stats = cls(len(obj["steps_q"]))
        stats.calls = int(obj["calls"])
        stats.steps_q = [int(v) for v in obj["steps_q"]]
        stats.steps_r = [int(v) for v in obj["steps_r"]]
        stats.bytes_q = [int(v) for v in obj["bytes_q"]]
        stats.bytes_r = [int(v) for v in obj["bytes_r"]]
        return stats
