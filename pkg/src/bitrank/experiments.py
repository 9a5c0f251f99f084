"""Controlled experiments on the synthetic evaluator.

The screening experiment asks whether the trained surrogate picks top-rung
winners from low-fidelity measurements better than the low-fidelity scores
alone: for each trial a fresh latent is drawn, a training set of
(low-fidelity, top-fidelity) pairs is collected, and both rankings try to
recover the cohort's measured top-k at the highest rung.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context import SearchContext
from .evaluator import SyntheticLatent, synthetic_score
from .feasibility import Budget
from .importance import uniform_profile
from .baselines import random_config
from .space import (
    Config,
    LayerCatalog,
    LayerSpec,
    SearchSpace,
    space_memory,
)
from .surrogate import fit_screening_surrogate, surrogate_features
from .seeding import derive_seed


def synthetic_catalog(num_layers: int, seed: int) -> LayerCatalog:
    """Layer catalog with log-spread backbone sizes for desk-scale runs."""
    rng = np.random.default_rng(derive_seed(seed, "catalog"))
    layers = []
    for i in range(num_layers):
        params = int(rng.integers(200_000, 2_000_000))
        width = int(rng.integers(128, 1024))
        layers.append(
            LayerSpec(
                name=f"block{i}",
                backbone_params=params,
                adapter_targets=((width, width), (width, 2 * width)),
            )
        )
    return LayerCatalog(tuple(layers))


def budget_fraction(space: SearchSpace, fraction: float) -> int:
    """Byte budget at a fraction of the min-to-max footprint range."""
    lo = space_memory(space.ladders.min_config(space.num_layers), space)
    hi = space_memory(space.ladders.max_config(space.num_layers), space)
    return int(lo + fraction * (hi - lo))


@dataclass
class ScreeningTrial:
    surrogate_hits: float
    lf_hits: float


def screening_trial(
    trial_seed: int,
    num_layers: int = 6,
    train_count: int = 60,
    cohort_size: int = 25,
    top_k: int = 3,
    low_steps: int = 100,
    high_steps: int = 1600,
    noise_scale: float = 0.05,
) -> ScreeningTrial:
    """One paired comparison of surrogate-ranked vs LF-ranked promotion.

    Both selectors see identical low-fidelity measurements of the same
    cohort; ground truth is the cohort's measured ranking at the top rung.
    Hit rate is the overlap with the true top-k, in [0, 1].
    """
    catalog = synthetic_catalog(num_layers, trial_seed)
    space = SearchSpace(catalog)
    ctx = SearchContext(
        space,
        Budget(budget_fraction(space, 0.55)),
        uniform_profile(num_layers),
    )
    latent = SyntheticLatent.sample(
        num_layers, derive_seed(trial_seed, "latent"), noise_scale=noise_scale
    )
    min_bits = space.ladders.q.minimum
    rng = np.random.default_rng(derive_seed(trial_seed, "screening"))
    eval_seed = int(rng.integers(2**31))

    def draw(count: int) -> list[Config]:
        configs = []
        seen = set()
        while len(configs) < count:
            config = random_config(ctx, rng)
            if config.key() in seen:
                continue
            seen.add(config.key())
            configs.append(config)
        return configs

    def lf(config: Config) -> float:
        return synthetic_score(config, low_steps, latent, eval_seed, min_bits)

    def hf(config: Config) -> float:
        return synthetic_score(config, high_steps, latent, eval_seed, min_bits)

    train = draw(train_count)
    features = np.asarray(
        [
            surrogate_features(lf(c), ctx.memory(c), ctx.embed(c))
            for c in train
        ]
    )
    targets = np.asarray([hf(c) for c in train])
    model = fit_screening_surrogate(features, targets, stage_steps=low_steps)

    cohort = draw(cohort_size)
    lf_scores = [lf(c) for c in cohort]
    hf_scores = [hf(c) for c in cohort]
    true_top = set(np.argsort([-s for s in hf_scores], kind="stable")[:top_k])
    lf_top = set(np.argsort([-s for s in lf_scores], kind="stable")[:top_k])
    if model.trained:
        preds = [
            float(
                model.predict(
                    surrogate_features(lf_scores[i], ctx.memory(c), ctx.embed(c))
                )
            )
            for i, c in enumerate(cohort)
        ]
        sur_top = set(np.argsort([-p for p in preds], kind="stable")[:top_k])
    else:
        sur_top = lf_top
    return ScreeningTrial(
        surrogate_hits=len(sur_top & true_top) / top_k,
        lf_hits=len(lf_top & true_top) / top_k,
    )


def screening_benefit(trials: int = 50, base_seed: int = 2024, **kwargs) -> dict:
    """Paired hit rates over many trials, plus their mean gap."""
    rows = [screening_trial(base_seed + i, **kwargs) for i in range(trials)]
    surrogate = [row.surrogate_hits for row in rows]
    lf = [row.lf_hits for row in rows]
    gains = [s - b for s, b in zip(surrogate, lf)]
    return {
        "trials": trials,
        "surrogate_mean": float(np.mean(surrogate)),
        "lf_mean": float(np.mean(lf)),
        "mean_gain": float(np.mean(gains)),
        "gains": gains,
    }
