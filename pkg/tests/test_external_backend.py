"""Child-process evaluator protocol, retries, and fault handling."""

import sys
import uuid
from pathlib import Path

import pytest

from bitrank.evaluator import (
    EvalRequest,
    EvaluationError,
    ExternalBackend,
    Ledger,
    evaluate,
    evaluate_batch,
)
from bitrank.space import Config
from conftest import make_space
from external_stub import stub_score

STUB = Path(__file__).parent / "external_stub.py"


def stub_command(mode: str = "ok") -> str:
    return f"{sys.executable} {STUB} {mode}"


class TestExternalBackend:
    def setup_method(self):
        self.space = make_space(2, params=5_000)

    def test_scores_match_protocol_contract(self):
        config = Config(q=(4, 2), r=(8, 16))
        with ExternalBackend(stub_command()) as backend:
            record = evaluate(
                EvalRequest(config, 200, seed=11), backend, Ledger(), self.space
            )
        assert record.score == pytest.approx(
            stub_score(config.q, config.r, 200, 11)
        )
        assert record.source == "external"
        assert record.resume_token == "stub:200"
        assert record.wall_time > 0

    def test_child_reused_across_requests(self):
        with ExternalBackend(stub_command()) as backend:
            ledger = Ledger()
            for i, q in enumerate(((2, 2), (4, 4), (8, 8))):
                evaluate(
                    EvalRequest(Config(q=q, r=(4, 4)), 100, seed=i),
                    backend,
                    ledger,
                    self.space,
                )
            assert backend._spawned == 1
        assert len(ledger) == 3

    def test_parallel_children(self):
        configs = [
            Config(q=(q0, q1), r=(4, 4))
            for q0 in (2, 4, 8)
            for q1 in (2, 4, 8)
        ]
        with ExternalBackend(stub_command(), max_children=3) as backend:
            records = evaluate_batch(
                [EvalRequest(c, 100, 0) for c in configs],
                backend,
                Ledger(),
                self.space,
                workers=3,
            )
        assert all(r is not None for r in records)
        for config, record in zip(configs, records):
            assert record.score == pytest.approx(stub_score(config.q, config.r, 100, 0))

    def test_crash_then_retry_succeeds(self, monkeypatch):
        monkeypatch.setenv("STUB_RUN_ID", uuid.uuid4().hex)
        config = Config(q=(4, 4), r=(8, 8))
        with ExternalBackend(stub_command("crash-first")) as backend:
            record = evaluate(
                EvalRequest(config, 100, seed=0), backend, Ledger(), self.space
            )
        assert record.score == pytest.approx(stub_score(config.q, config.r, 100, 0))

    def test_persistent_bad_id_discards_candidate(self):
        config = Config(q=(4, 4), r=(8, 8))
        with ExternalBackend(stub_command("bad-id")) as backend:
            with pytest.raises(EvaluationError):
                evaluate(EvalRequest(config, 100, seed=0), backend, Ledger(), self.space)

    def test_resume_token_forwarded(self):
        config = Config(q=(4, 4), r=(8, 8))
        with ExternalBackend(stub_command()) as backend:
            ledger = Ledger()
            low = evaluate(EvalRequest(config, 100, seed=0), backend, ledger, self.space)
            high = evaluate(
                EvalRequest(config, 400, seed=0, resume_token=low.resume_token),
                backend,
                ledger,
                self.space,
            )
        # The stub ignores the token, but the engine must not reject an
        # opaque non-checkpoint token and must pass steps through.
        assert high.resume_token == "stub:400"
