"""Scoring backends, the append-only evaluation ledger, and cache-first
evaluation.

External evaluators are child processes speaking newline-delimited JSON
over stdin/stdout.  Request::

    {"id": int, "q": [ints], "r": [ints], "steps": int, "seed": int,
     "resume": string|null}

Response::

    {"id": int, "score": float, "token": string|null}

One request is in flight per child; the engine may run several children.
A failed call is retried once on a fresh child, then surfaced as an
EvaluationError so the caller can discard the candidate.

The synthetic backend is a closed-form stand-in for fine-tuning runs: each
layer contributes damage that shrinks exponentially with bit-width and can
be partially bought back by adapter rank, scores saturate with step count,
and measurement noise shrinks as steps grow.  Everything is deterministic
given (config, steps, seed).
"""

from __future__ import annotations

import json
import logging
import math
import queue
import shlex
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .importance import ImportanceProfile, normalize_importance
from .seeding import derive_seed, stable_hash
from .space import Config, Ladders, SearchSpace, space_memory

log = logging.getLogger(__name__)

EvalKey = tuple[tuple[int, ...], tuple[int, ...], int, int]


class LedgerConflictError(RuntimeError):
    """A re-append tried to change an existing ledger record."""


class BackendFailure(RuntimeError):
    """One backend call failed (timeout, crash, malformed response)."""


class EvaluationError(RuntimeError):
    """Both attempts at scoring a candidate failed."""

    def __init__(self, config: Config, steps: int, cause: str) -> None:
        super().__init__(f"evaluation failed for {config.key()} at {steps} steps: {cause}")
        self.config = config
        self.steps = steps


@dataclass(frozen=True)
class EvalRequest:
    config: Config
    steps: int
    seed: int
    resume_token: str | None = None

    def __post_init__(self) -> None:
        if self.steps <= 0:
            raise ValueError("steps must be > 0")


@dataclass(frozen=True)
class EvalRecord:
    config: Config
    steps: int
    score: float
    seed: int
    memory_bytes: int
    wall_time: float
    source: str
    resume_token: str | None = None

    def key(self) -> EvalKey:
        return (self.config.q, self.config.r, self.steps, self.seed)

    def to_json_dict(self) -> dict:
        return {
            "q": list(self.config.q),
            "r": list(self.config.r),
            "steps": self.steps,
            "score": self.score,
            "seed": self.seed,
            "memory_bytes": self.memory_bytes,
            "wall_time": self.wall_time,
            "source": self.source,
            "resume_token": self.resume_token,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "EvalRecord":
        return cls(
            config=Config(tuple(obj["q"]), tuple(obj["r"])),
            steps=int(obj["steps"]),
            score=float(obj["score"]),
            seed=int(obj["seed"]),
            memory_bytes=int(obj["memory_bytes"]),
            wall_time=float(obj["wall_time"]),
            source=str(obj["source"]),
            resume_token=obj.get("resume_token"),
        )


class Ledger:
    """Append-only store of evaluation outcomes keyed by (config, steps, seed).

    Re-appending an identical record is a no-op; changing the score under
    an existing key is a hard error.  With a path, every append lands as
    one JSON line, flushed immediately.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self._records: dict[EvalKey, EvalRecord] = {}
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        if self._path is not None and self._path.exists():
            for line in self._path.read_text().splitlines():
                if not line.strip():
                    continue
                record = EvalRecord.from_json_dict(json.loads(line))
                self._insert(record, persist=False)

    def _insert(self, record: EvalRecord, persist: bool) -> None:
        key = record.key()
        existing = self._records.get(key)
        if existing is not None:
            if existing.score != record.score:
                raise LedgerConflictError(
                    f"key {key}: stored score {existing.score} != {record.score}"
                )
            return
        self._records[key] = record
        if persist and self._path is not None:
            with self._path.open("a") as fh:
                fh.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")
                fh.flush()

    def append(self, record: EvalRecord) -> None:
        with self._lock:
            self._insert(record, persist=True)

    def lookup(self, config: Config, steps: int, seed: int) -> EvalRecord | None:
        return self._records.get((config.q, config.r, steps, seed))

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> list[EvalRecord]:
        """All records in append order."""
        return list(self._records.values())

    def records_at(self, steps: int, seed: int | None = None) -> list[EvalRecord]:
        return [
            rec
            for rec in self._records.values()
            if rec.steps == steps and (seed is None or rec.seed == seed)
        ]


# --- synthetic compensation model -------------------------------------------

DEFAULT_SENSITIVITY_RANGE = (0.01, 0.2)


@dataclass(frozen=True)
class SyntheticLatent:
    """Hidden per-layer coefficients behind the synthetic evaluator.

    sensitivity[l] scales the damage layer l takes at low bit-width;
    compensability[l] is the fraction of that damage a large adapter rank
    can buy back.  noise_ref_steps anchors the noise law: measurement
    noise has standard deviation noise_scale * sqrt(noise_ref_steps / steps).
    """

    sensitivity: tuple[float, ...]
    compensability: tuple[float, ...]
    base_score: float = 0.9
    learning_timescale: float = 400.0
    noise_scale: float = 0.02
    rank_half_point: float = 8.0
    noise_ref_steps: int = 100

    def __post_init__(self) -> None:
        a = tuple(float(v) for v in self.sensitivity)
        b = tuple(float(v) for v in self.compensability)
        object.__setattr__(self, "sensitivity", a)
        object.__setattr__(self, "compensability", b)
        if len(a) != len(b) or not a:
            raise ValueError("sensitivity/compensability must be equal-length, non-empty")
        if any(v <= 0 for v in a):
            raise ValueError("sensitivity values must be > 0")
        if any(v < 0 or v > 1 for v in b):
            raise ValueError("compensability values must lie in [0, 1]")
        if not 0 < self.base_score <= 1:
            raise ValueError("base_score must lie in (0, 1]")
        if self.learning_timescale <= 0 or self.rank_half_point <= 0:
            raise ValueError("timescale and rank_half_point must be > 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.noise_ref_steps <= 0:
            raise ValueError("noise_ref_steps must be > 0")

    @property
    def num_layers(self) -> int:
        return len(self.sensitivity)

    @classmethod
    def sample(
        cls,
        num_layers: int,
        seed: int,
        sensitivity_range: tuple[float, float] = DEFAULT_SENSITIVITY_RANGE,
        **overrides: object,
    ) -> "SyntheticLatent":
        """Draw per-layer coefficients: log-uniform sensitivity, uniform
        compensability."""
        rng = np.random.default_rng(derive_seed(seed, "latent"))
        lo, hi = sensitivity_range
        a = np.exp(rng.uniform(math.log(lo), math.log(hi), size=num_layers))
        b = rng.uniform(0.0, 1.0, size=num_layers)
        return cls(tuple(a), tuple(b), **overrides)  # type: ignore[arg-type]

    def to_json_dict(self) -> dict:
        return {
            "sensitivity": list(self.sensitivity),
            "compensability": list(self.compensability),
            "base_score": self.base_score,
            "learning_timescale": self.learning_timescale,
            "noise_scale": self.noise_scale,
            "rank_half_point": self.rank_half_point,
            "noise_ref_steps": self.noise_ref_steps,
        }


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def synthetic_asymptote(config: Config, latent: SyntheticLatent, min_bits: int) -> float:
    """Noise-free, infinite-steps score of a config under the latent."""
    if config.num_layers != latent.num_layers:
        raise ValueError("config and latent cover different layer counts")
    damage = 0.0
    for layer in range(config.num_layers):
        eps = 2.0 ** (-2.0 * (config.q[layer] - min_bits))
        rho = config.r[layer] / (config.r[layer] + latent.rank_half_point)
        damage += latent.sensitivity[layer] * eps * (
            1.0 - latent.compensability[layer] * rho
        )
    return _clamp01(latent.base_score - damage)


def synthetic_score(
    config: Config, steps: int, latent: SyntheticLatent, seed: int, min_bits: int
) -> float:
    """Score at finite fidelity: saturating learning curve plus seeded noise."""
    asymptote = synthetic_asymptote(config, latent, min_bits)
    mean = asymptote * (1.0 - math.exp(-steps / latent.learning_timescale))
    if latent.noise_scale > 0:
        std = latent.noise_scale * math.sqrt(latent.noise_ref_steps / steps)
        noise_rng = np.random.default_rng(
            stable_hash("synthetic-noise", config.q, config.r, steps, seed)
        )
        mean += float(noise_rng.standard_normal()) * std
    return _clamp01(mean)


def synthetic_importance(
    latent: SyntheticLatent, noise: float, seed: int
) -> ImportanceProfile:
    """Normalized profile derived from the latent, with multiplicative
    lognormal corruption (log-std = noise) simulating imperfect probes."""
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(derive_seed(seed, "synthetic-importance"))
    num = latent.num_layers
    mq = rng.lognormal(mean=0.0, sigma=noise, size=num)
    mr = rng.lognormal(mean=0.0, sigma=noise, size=num)
    a = np.asarray(latent.sensitivity)
    b = np.asarray(latent.compensability)
    raw = ImportanceProfile(tuple(a * mq), tuple(a * b * mr))
    return normalize_importance(raw)


def _checkpoint_token(config: Config, steps: int, seed: int) -> str:
    return f"ck:{stable_hash('ckpt', config.q, config.r, seed):016x}:{steps}"


def _validate_resume_token(request: EvalRequest) -> None:
    token = request.resume_token
    if token is None or not token.startswith("ck:"):
        return
    parts = token.split(":")
    if len(parts) != 3:
        raise ValueError(f"malformed resume token {token!r}")
    expected = f"{stable_hash('ckpt', request.config.q, request.config.r, request.seed):016x}"
    if parts[1] != expected:
        raise ValueError("resume token was issued for a different config")
    if int(parts[2]) >= request.steps:
        raise ValueError("resume token must come from a lower step count")


class SyntheticBackend:
    """Closed-form scoring; reports its step count as the charged cost so
    ledgers stay byte-identical across reruns."""

    source = "synthetic"

    def __init__(self, latent: SyntheticLatent, ladders: Ladders) -> None:
        self.latent = latent
        self.ladders = ladders

    def score(self, request: EvalRequest) -> tuple[float, str | None, float]:
        value = synthetic_score(
            request.config,
            request.steps,
            self.latent,
            request.seed,
            self.ladders.q.minimum,
        )
        token = _checkpoint_token(request.config, request.steps, request.seed)
        return value, token, float(request.steps)

    def close(self) -> None:
        pass


class _Child:
    """One external evaluator process with an id-checked request loop."""

    def __init__(self, command: str) -> None:
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self.next_id = 0

    def request(self, body: dict, timeout: float) -> dict:
        if self.proc.poll() is not None:
            raise BackendFailure("evaluator process exited")
        rid = self.next_id
        self.next_id += 1
        payload = dict(body, id=rid)
        try:
            assert self.proc.stdin is not None
            self.proc.stdin.write(json.dumps(payload, sort_keys=True) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendFailure(f"write to evaluator failed: {exc}") from None
        box: list[str] = []

        def _read() -> None:
            assert self.proc.stdout is not None
            box.append(self.proc.stdout.readline())

        reader = threading.Thread(target=_read, daemon=True)
        reader.start()
        reader.join(timeout)
        if reader.is_alive():
            raise BackendFailure(f"evaluator timed out after {timeout}s")
        if not box or not box[0]:
            raise BackendFailure("evaluator closed stdout")
        try:
            resp = json.loads(box[0])
        except json.JSONDecodeError as exc:
            raise BackendFailure(f"malformed evaluator response: {exc}") from None
        if resp.get("id") != rid:
            raise BackendFailure(
                f"response id {resp.get('id')} does not match request id {rid}"
            )
        if "score" not in resp:
            raise BackendFailure("evaluator response lacks a score")
        return resp

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                if stream is not None:
                    stream.close()
            except OSError:
                pass
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class ExternalBackend:
    """Pool of child evaluator processes, one in-flight request each."""

    source = "external"

    def __init__(self, command: str, max_children: int = 1, timeout: float = 300.0):
        if max_children < 1:
            raise ValueError("max_children must be >= 1")
        self.command = command
        self.timeout = timeout
        self._max_children = max_children
        self._idle: queue.Queue[_Child] = queue.Queue()
        self._spawned = 0
        self._lock = threading.Lock()

    def _checkout(self) -> _Child:
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            pass
        with self._lock:
            if self._spawned < self._max_children:
                self._spawned += 1
                return _Child(self.command)
        return self._idle.get()

    def score(self, request: EvalRequest) -> tuple[float, str | None, float]:
        child = self._checkout()
        body = {
            "q": list(request.config.q),
            "r": list(request.config.r),
            "steps": request.steps,
            "seed": request.seed,
            "resume": request.resume_token,
        }
        start = time.perf_counter()
        try:
            resp = child.request(body, self.timeout)
        except BackendFailure:
            child.close()
            with self._lock:
                self._spawned -= 1
            raise
        self._idle.put(child)
        wall = time.perf_counter() - start
        token = resp.get("token")
        return float(resp["score"]), (str(token) if token is not None else None), wall

    def close(self) -> None:
        while True:
            try:
                self._idle.get_nowait().close()
            except queue.Empty:
                break
        with self._lock:
            self._spawned = 0

    def __enter__(self) -> "ExternalBackend":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def _score_with_retry(backend, request: EvalRequest) -> tuple[float, str | None, float]:
    try:
        return backend.score(request)
    except BackendFailure as exc:
        log.warning("evaluation attempt failed (%s); retrying once", exc)
    try:
        return backend.score(request)
    except BackendFailure as exc:
        raise EvaluationError(request.config, request.steps, str(exc)) from None


def evaluate(
    request: EvalRequest,
    backend,
    ledger: Ledger,
    space: SearchSpace,
) -> EvalRecord:
    """Cache-first evaluation: ledger hit wins, otherwise the backend is
    called (with one retry) and the outcome is appended."""
    _validate_resume_token(request)
    hit = ledger.lookup(request.config, request.steps, request.seed)
    if hit is not None:
        return hit
    score, token, wall = _score_with_retry(backend, request)
    record = EvalRecord(
        config=request.config,
        steps=request.steps,
        score=score,
        seed=request.seed,
        memory_bytes=space_memory(request.config, space),
        wall_time=wall,
        source=backend.source,
        resume_token=token,
    )
    ledger.append(record)
    return record


def evaluate_batch(
    requests: list[EvalRequest],
    backend,
    ledger: Ledger,
    space: SearchSpace,
    workers: int = 1,
) -> list[EvalRecord | None]:
    """Evaluate a cohort; failed candidates come back as None.

    Backend calls for distinct uncached keys may run concurrently, but
    ledger appends happen afterwards in request order, so the persisted
    ledger does not depend on the worker count.
    """
    for request in requests:
        _validate_resume_token(request)
    keys = [(req.config.q, req.config.r, req.steps, req.seed) for req in requests]
    pending: dict[EvalKey, EvalRequest] = {}
    for key, req in zip(keys, requests):
        if ledger.lookup(req.config, req.steps, req.seed) is None and key not in pending:
            pending[key] = req

    outcomes: dict[EvalKey, EvalRecord | EvaluationError] = {}

    def _run(req: EvalRequest) -> EvalRecord | EvaluationError:
        try:
            score, token, wall = _score_with_retry(backend, req)
        except EvaluationError as exc:
            return exc
        return EvalRecord(
            config=req.config,
            steps=req.steps,
            score=score,
            seed=req.seed,
            memory_bytes=space_memory(req.config, space),
            wall_time=wall,
            source=backend.source,
            resume_token=token,
        )

    todo = list(pending.values())
    if workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run, todo))
    else:
        results = [_run(req) for req in todo]
    for req, result in zip(todo, results):
        outcomes[(req.config.q, req.config.r, req.steps, req.seed)] = result

    out: list[EvalRecord | None] = []
    for key, req in zip(keys, requests):
        hit = ledger.lookup(req.config, req.steps, req.seed)
        if hit is not None:
            out.append(hit)
            continue
        result = outcomes[key]
        if isinstance(result, EvaluationError):
            log.warning("discarding candidate %s: %s", req.config.key(), result)
            out.append(None)
        else:
            ledger.append(result)
            out.append(ledger.lookup(req.config, req.steps, req.seed))
    return out
