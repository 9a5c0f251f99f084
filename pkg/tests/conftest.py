"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from bitrank.context import SearchContext
from bitrank.feasibility import Budget, RepairStats
from bitrank.importance import ImportanceProfile, uniform_profile
from bitrank.space import (
    Ladder,
    Ladders,
    LayerCatalog,
    LayerSpec,
    MemoryPolicy,
    SearchSpace,
    default_ladders,
)


def make_layer(name: str, params: int, targets=((64, 64),)) -> LayerSpec:
    return LayerSpec(name=name, backbone_params=params, adapter_targets=tuple(targets))


def make_space(
    num_layers: int = 3,
    params: int = 40_000,
    ladders: Ladders | None = None,
    policy: MemoryPolicy | None = None,
    targets=((64, 64),),
) -> SearchSpace:
    catalog = LayerCatalog(
        tuple(make_layer(f"layer{i}", params, targets) for i in range(num_layers))
    )
    return SearchSpace(
        catalog, ladders or default_ladders(), policy or MemoryPolicy()
    )


def random_space(rng: np.random.Generator, num_layers: int) -> SearchSpace:
    layers = []
    for i in range(num_layers):
        width = int(rng.integers(8, 256))
        layers.append(
            LayerSpec(
                name=f"layer{i}",
                backbone_params=int(rng.integers(1_000, 200_000)),
                adapter_targets=((width, width), (width, 2 * width)),
            )
        )
    return SearchSpace(LayerCatalog(tuple(layers)), default_ladders(), MemoryPolicy())


def mid_budget(space: SearchSpace, fraction: float = 0.5) -> Budget:
    from bitrank.space import space_memory

    lo = space_memory(space.ladders.min_config(space.num_layers), space)
    hi = space_memory(space.ladders.max_config(space.num_layers), space)
    return Budget.checked(int(lo + fraction * (hi - lo)), space)


def make_context(
    space: SearchSpace,
    fraction: float = 0.5,
    importance: ImportanceProfile | None = None,
    stats: bool = False,
) -> SearchContext:
    return SearchContext(
        space,
        mid_budget(space, fraction),
        importance or uniform_profile(space.num_layers),
        RepairStats(space.num_layers) if stats else None,
    )


@pytest.fixture
def small_space() -> SearchSpace:
    return make_space(3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def write_model_spec(path, num_layers: int = 4, base_params: int = 150_000) -> None:
    import json

    layers = []
    for i in range(num_layers):
        width = 64 * (i + 1)
        layers.append(
            {
                "name": f"block{i}",
                "backbone_params": base_params * (i + 1),
                "adapter_targets": [[width, width], [width, 2 * width]],
            }
        )
    path.write_text(json.dumps({"layers": layers}, indent=2))


def tiny_manifest(spec_path, budget: int, **overrides):
    from bitrank.pipeline import RunManifest

    base = dict(
        model_path=str(spec_path),
        budget_bytes=budget,
        seed=3,
        population_size=6,
        perturb_edits=2,
        steps=(50, 200),
        promote_count=2,
        generations=2,
        num_regions=2,
        pool_per_region=32,
        max_refine_evals=3,
    )
    base.update(overrides)
    return RunManifest(**base)


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory):
    """Model spec path plus a mid-range budget for it."""
    from bitrank.experiments import budget_fraction
    from bitrank.space import load_search_space

    path = tmp_path_factory.mktemp("model") / "model.json"
    write_model_spec(path)
    space = load_search_space(path)
    return path, budget_fraction(space, 0.55)


@pytest.fixture(scope="session")
def finished_run(tiny_model, tmp_path_factory):
    """One completed two-phase run shared by reporting and CLI tests."""
    from bitrank.pipeline import run_search

    spec, budget = tiny_model
    out = tmp_path_factory.mktemp("runs") / "full"
    outputs = run_search(tiny_manifest(spec, budget), out, refine=True)
    return outputs
