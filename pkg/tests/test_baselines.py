"""Random-search baseline and the exhaustive synthetic oracle."""

import numpy as np
import pytest

from bitrank.baselines import (
    SpaceTooLargeError,
    brute_force_oracle,
    random_config,
    random_search,
)
from bitrank.evaluator import BackendFailure, Ledger, SyntheticLatent, space_memory
from conftest import make_context, make_space, mid_budget
from test_evolve import EVAL_SEED, make_backend


class TestRandomConfig:
    def test_always_feasible(self, small_space, rng):
        ctx = make_context(small_space, fraction=0.4)
        for _ in range(200):
            assert ctx.feasible(random_config(ctx, rng))

    def test_covers_the_space_under_a_loose_budget(self, small_space, rng):
        ctx = make_context(small_space, fraction=1.0)
        seen = {random_config(ctx, rng).key() for _ in range(300)}
        assert len(seen) > 50


class TestRandomSearch:
    def test_curve_shape_and_monotonicity(self, small_space, rng):
        ctx = make_context(small_space, fraction=0.6)
        backend = make_backend(small_space)
        result = random_search(ctx, backend, Ledger(), 12, 400, EVAL_SEED, rng)
        assert len(result.best_curve) == 12
        assert len(result.records) == 12
        curve = result.best_curve
        assert all(b >= a for a, b in zip(curve, curve[1:]))
        assert result.best_score == curve[-1]
        assert curve[-1] == max(r.score for r in result.records if r is not None)

    def test_failures_hold_the_curve_flat(self, small_space):
        ctx = make_context(small_space, fraction=0.6)
        inner = make_backend(small_space)
        preview = [
            random_config(ctx, np.random.default_rng(60)) for _ in range(10)
        ]
        doomed = {preview[2].key(), preview[5].key()}

        class PersistentFailures:
            source = "synthetic"

            def score(self, request):
                if request.config.key() in doomed:
                    raise BackendFailure("injected")
                return inner.score(request)

            def close(self):
                pass

        result = random_search(
            ctx, PersistentFailures(), Ledger(), 10, 400, EVAL_SEED,
            np.random.default_rng(60),
        )
        assert len(result.best_curve) == 10
        failed = [i for i, rec in enumerate(result.records) if rec is None]
        assert failed
        for i in failed:
            if i > 0:
                assert result.best_curve[i] == result.best_curve[i - 1]

    def test_evals_to_reach(self, small_space, rng):
        ctx = make_context(small_space, fraction=0.6)
        backend = make_backend(small_space)
        result = random_search(ctx, backend, Ledger(), 8, 400, EVAL_SEED, rng)
        assert result.evals_to_reach(result.best_curve[0]) == 1
        target = result.best_score
        n = result.evals_to_reach(target)
        assert n is not None
        assert result.best_curve[n - 1] >= target
        assert all(v < target for v in result.best_curve[: n - 1])
        assert result.evals_to_reach(result.best_score + 1.0) is None

    def test_rejects_empty_run(self, small_space, rng):
        ctx = make_context(small_space, fraction=0.6)
        with pytest.raises(ValueError):
            random_search(ctx, make_backend(small_space), Ledger(), 0, 400, EVAL_SEED, rng)


class TestBruteForceOracle:
    def setup_table(self, alpha=0.9, steps=None):
        space = make_space(2)
        budget = mid_budget(space, 0.6)
        latent = SyntheticLatent.sample(2, 5)
        table = brute_force_oracle(space, budget.max_bytes, latent, alpha, steps=steps)
        return space, budget, latent, table

    def test_counts_and_feasibility(self):
        space, budget, _, table = self.setup_table()
        assert 0 < len(table.entries) <= space.total_configs()
        for entry in table.entries:
            assert entry.memory_bytes <= budget.max_bytes
            assert entry.memory_bytes == space_memory(entry.config, space)

    def test_sorted_by_utility(self):
        _, _, _, table = self.setup_table()
        utilities = table.utilities()
        assert all(b <= a for a, b in zip(utilities, utilities[1:]))

    def test_rank_of_and_membership(self):
        _, _, _, table = self.setup_table()
        assert table.rank_of(table.entries[0].config) == 0
        assert table.rank_of(table.entries[-1].config) == len(table.entries) - 1
        infeasible = make_space(2).ladders.max_config(2)
        with pytest.raises(KeyError):
            table.rank_of(infeasible)

    def test_top_fraction_floor(self):
        _, _, _, table = self.setup_table()
        assert table.top_fraction(1e-9) == 1
        assert table.top_fraction(1.0) == len(table.entries)
        assert table.top_fraction(0.1) == int(np.ceil(0.1 * len(table.entries)))

    def test_finite_fidelity_preserves_utilities_and_ranks(self):
        _, _, _, asymptote = self.setup_table()
        _, _, _, finite = self.setup_table(steps=400)
        assert [e.config for e in finite.entries] == [
            e.config for e in asymptote.entries
        ]
        for a, b in zip(asymptote.entries, finite.entries):
            assert b.utility == pytest.approx(a.utility)
            assert b.score < a.score

    def test_scores_match_backend_asymptotes(self):
        space, budget, latent, table = self.setup_table()
        from bitrank.evaluator import synthetic_asymptote

        min_bits = space.ladders.q.minimum
        for entry in table.entries[:10]:
            assert entry.score == pytest.approx(
                synthetic_asymptote(entry.config, latent, min_bits)
            )

    def test_refuses_oversized_spaces(self):
        space = make_space(2)
        latent = SyntheticLatent.sample(2, 5)
        with pytest.raises(SpaceTooLargeError) as err:
            brute_force_oracle(space, 10**9, latent, 0.9, limit=10)
        assert str(space.total_configs()) in str(err.value)
