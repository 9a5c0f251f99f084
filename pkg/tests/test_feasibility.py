"""Budget checks, repair, and greedy fill."""

import numpy as np
import pytest

from bitrank.feasibility import (
    REPAIR_EPSILON,
    Budget,
    BudgetError,
    LadderBoundError,
    RepairStats,
    downgrade_saving,
    greedy_fill,
    repair,
)
from bitrank.importance import ImportanceProfile, uniform_profile
from bitrank.space import (
    Config,
    Ladder,
    Ladders,
    LayerCatalog,
    LayerSpec,
    MemoryPolicy,
    SearchSpace,
    default_ladders,
    space_memory,
)
from conftest import make_layer, make_space, mid_budget, random_space

KNOB_ORDER = {"q": 0, "r": 1}


def profile(iq, ir) -> ImportanceProfile:
    return ImportanceProfile(iq=tuple(iq), ir=tuple(ir), normalized=True)


def oracle_repair(config, importance, budget, space):
    """Step-replay oracle: exhaustively scan every legal downgrade each
    round and apply the argmin of (importance + eps) / saving."""
    current = config
    trace = []
    while space_memory(current, space) > budget.max_bytes:
        options = []
        for knob in ("q", "r"):
            ladder = space.ladders.for_knob(knob)
            vec = importance.vector(knob)
            for layer in range(current.num_layers):
                value = current.value(knob, layer)
                lower = ladder.lower(value)
                if lower is None:
                    continue
                after = current.replaced(knob, layer, lower)
                saving = space_memory(current, space) - space_memory(after, space)
                if saving <= 0:
                    continue
                ratio = (vec[layer] + REPAIR_EPSILON) / saving
                options.append((ratio, KNOB_ORDER[knob], layer, after))
        if not options:
            raise AssertionError("oracle: budget unreachable")
        options.sort(key=lambda t: (t[0], t[1], t[2]))
        _, knob_rank, layer, current = options[0]
        trace.append((knob_rank, layer))
    return current, trace


class TestBudget:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Budget(0)

    def test_checked_rejects_below_minimum(self, small_space):
        min_bytes = space_memory(
            small_space.ladders.min_config(small_space.num_layers), small_space
        )
        with pytest.raises(BudgetError):
            Budget.checked(min_bytes - 1, small_space)
        assert Budget.checked(min_bytes, small_space).max_bytes == min_bytes


class TestDowngradeSaving:
    def test_hand_computed_q_step(self):
        layer = make_layer("l", 800)
        space = SearchSpace(LayerCatalog((layer,)), default_ladders(), MemoryPolicy())
        config = Config(q=(8,), r=(4,))
        assert downgrade_saving(config, 0, "q", space) == 400

    def test_minimum_raises(self, small_space):
        config = small_space.ladders.min_config(3)
        with pytest.raises(LadderBoundError):
            downgrade_saving(config, 0, "q", small_space)
        with pytest.raises(LadderBoundError):
            downgrade_saving(config, 1, "r", small_space)

    def test_saving_matches_total_memory_delta(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            space = random_space(rng, int(rng.integers(1, 5)))
            config = Config(
                q=tuple(int(rng.choice([2, 4, 8])) for _ in range(space.num_layers)),
                r=tuple(int(rng.choice([4, 8, 16])) for _ in range(space.num_layers)),
            )
            for knob in ("q", "r"):
                ladder = space.ladders.for_knob(knob)
                for layer in range(space.num_layers):
                    lower = ladder.lower(config.value(knob, layer))
                    if lower is None:
                        continue
                    saving = downgrade_saving(config, layer, knob, space)
                    after = config.replaced(knob, layer, lower)
                    assert saving == space_memory(config, space) - space_memory(after, space)
                    assert saving > 0


class TestRepair:
    def test_feasible_input_unchanged(self, small_space):
        ctx_budget = mid_budget(small_space, 1.0)
        config = small_space.ladders.max_config(3)
        out, trace = repair(config, uniform_profile(3), ctx_budget, small_space)
        assert out.key() == config.key()
        assert trace.steps == ()

    def test_low_importance_layer_downgraded_first(self):
        # Two identical layers, ranks pinned at minimum, so the only legal
        # downgrades are the two q steps with equal savings.
        space = make_space(2, params=8000)
        imp = profile([0.9, 0.1], [0.5, 0.5])
        config = Config(q=(8, 8), r=(4, 4))
        full = space_memory(config, space)
        saving = downgrade_saving(config, 0, "q", space)
        budget = Budget(full - 1)
        out, trace = repair(config, imp, budget, space)
        assert trace.steps[0].layer == 1
        assert trace.steps[0].knob == "q"
        assert space_memory(out, space) <= full - saving

    def test_matches_step_replay_oracle(self):
        rng = np.random.default_rng(33)
        for _ in range(120):
            space = random_space(rng, 3)
            imp = profile(rng.random(3), rng.random(3))
            config = Config(
                q=tuple(int(rng.choice([2, 4, 8])) for _ in range(3)),
                r=tuple(int(rng.choice([4, 8, 16])) for _ in range(3)),
            )
            lo = space_memory(space.ladders.min_config(3), space)
            hi = space_memory(space.ladders.max_config(3), space)
            budget = Budget(int(lo + rng.random() * (hi - lo)))
            got, trace = repair(config, imp, budget, space)
            want, want_trace = oracle_repair(config, imp, budget, space)
            assert got.key() == want.key()
            assert [
                (KNOB_ORDER[s.knob], s.layer) for s in trace.steps
            ] == want_trace

    def test_fuzz_feasible_idempotent_bounded(self):
        rng = np.random.default_rng(55)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            space = random_space(rng, n)
            imp = profile(rng.random(n), rng.random(n))
            config = Config(
                q=tuple(int(rng.choice([2, 4, 8])) for _ in range(n)),
                r=tuple(int(rng.choice([4, 8, 16])) for _ in range(n)),
            )
            lo = space_memory(space.ladders.min_config(n), space)
            hi = space_memory(space.ladders.max_config(n), space)
            budget = Budget(int(lo + rng.random() * (hi - lo)))
            out, trace = repair(config, imp, budget, space)
            assert space_memory(out, space) <= budget.max_bytes
            again, trace2 = repair(out, imp, budget, space)
            assert again.key() == out.key()
            assert trace2.steps == ()
            # Every step decreases memory; length is bounded by the total
            # ladder index mass of the starting config.
            assert all(s.bytes_saved > 0 for s in trace.steps)
            bound = sum(
                space.ladders.q.index(config.q[i]) + space.ladders.r.index(config.r[i])
                for i in range(n)
            )
            assert len(trace.steps) <= bound

    def test_budget_unreachable_via_raw_constructor(self, small_space):
        config = small_space.ladders.max_config(3)
        min_bytes = space_memory(
            small_space.ladders.min_config(3), small_space
        )
        with pytest.raises(BudgetError, match="unreachable"):
            repair(config, uniform_profile(3), Budget(min_bytes - 1), small_space)

    def test_monotone_protection_on_equal_savings(self):
        # Uniform-gap bit ladder and identical layers make every q step
        # save the same amount; the argmax-importance layer must survive
        # until the others are exhausted on that knob.
        ladders = Ladders(q=Ladder((4, 6, 8)), r=Ladder((4, 8)))
        catalog = LayerCatalog(
            tuple(make_layer(f"l{i}", 16_000, targets=((8, 8),)) for i in range(3))
        )
        space = SearchSpace(catalog, ladders, MemoryPolicy())
        imp = profile([0.1, 0.9, 0.5], [0.0, 0.0, 0.0])
        config = Config(q=(8, 8, 8), r=(4, 4, 4))
        lo = space_memory(space.ladders.min_config(3), space)
        out, trace = repair(config, imp, Budget(lo), space)
        q_steps = [s.layer for s in trace.steps if s.knob == "q"]
        protected_first_touch = q_steps.index(1)
        # Layers 0 and 2 own four q-downgrades total; both must be
        # exhausted before layer 1 is ever touched.
        assert protected_first_touch == 4
        assert sorted(q_steps[:4]) == [0, 0, 2, 2]

    def test_trace_serializes(self, small_space):
        config = small_space.ladders.max_config(3)
        budget = mid_budget(small_space, 0.2)
        _, trace = repair(config, uniform_profile(3), budget, small_space)
        doc = trace.to_json_dict()
        assert doc["initial_memory"] > doc["final_memory"]
        assert all({"layer", "knob", "from", "to", "bytes_saved"} <= set(s) for s in doc["steps"])


def oracle_greedy_fill(importance, budget, space):
    current = space.ladders.min_config(space.num_layers)
    while True:
        best = None
        for knob in ("q", "r"):
            ladder = space.ladders.for_knob(knob)
            vec = importance.vector(knob)
            for layer in range(current.num_layers):
                upper = ladder.upper(current.value(knob, layer))
                if upper is None:
                    continue
                after = current.replaced(knob, layer, upper)
                added = space_memory(after, space) - space_memory(current, space)
                if space_memory(after, space) > budget.max_bytes:
                    continue
                ratio = float("inf") if added == 0 else (vec[layer] + REPAIR_EPSILON) / added
                key = (-ratio, KNOB_ORDER[knob], layer)
                if best is None or key < best[0]:
                    best = (key, after)
        if best is None:
            return current
        current = best[1]


class TestGreedyFill:
    def test_no_headroom_returns_minimum(self, small_space):
        lo = space_memory(small_space.ladders.min_config(3), small_space)
        out = greedy_fill(uniform_profile(3), Budget(lo), small_space)
        assert out.key() == small_space.ladders.min_config(3).key()

    def test_everything_fits_returns_maximum(self, small_space):
        hi = space_memory(small_space.ladders.max_config(3), small_space)
        out = greedy_fill(uniform_profile(3), Budget(hi), small_space)
        assert out.key() == small_space.ladders.max_config(3).key()

    def test_matches_replay_oracle(self):
        rng = np.random.default_rng(77)
        for _ in range(60):
            space = random_space(rng, 2)
            imp = profile(rng.random(2), rng.random(2))
            lo = space_memory(space.ladders.min_config(2), space)
            hi = space_memory(space.ladders.max_config(2), space)
            budget = Budget(int(lo + rng.random() * (hi - lo)))
            got = greedy_fill(imp, budget, space)
            want = oracle_greedy_fill(imp, budget, space)
            assert got.key() == want.key()
            assert space_memory(got, space) <= budget.max_bytes

    def test_prefers_important_layer(self):
        space = make_space(2, params=8000)
        imp = profile([1.0, 0.0], [0.5, 0.5])
        config_min = space.ladders.min_config(2)
        one_q_step = downgrade_saving(
            config_min.replaced("q", 0, 4), 0, "q", space
        )
        budget = Budget(space_memory(config_min, space) + one_q_step)
        out = greedy_fill(imp, budget, space)
        assert out.q[0] == 4
        assert out.q[1] == 2


class TestRepairStats:
    def test_accumulates_and_round_trips(self, small_space):
        stats = RepairStats(3)
        config = small_space.ladders.max_config(3)
        _, trace = repair(
            config, uniform_profile(3), mid_budget(small_space, 0.2), small_space
        )
        stats.update(trace)
        stats.update(trace)
        assert stats.calls == 2
        total_steps = sum(stats.steps_q) + sum(stats.steps_r)
        assert total_steps == 2 * len(trace.steps)
        doc = stats.to_json_dict()
        back = RepairStats.from_json_dict(doc)
        assert back.to_json_dict() == doc
