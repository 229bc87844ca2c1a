"""Seeded A/B experiment: does amortised SEU rank ambiguous prompts as more uncertain?"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .grammar import SyntheticGrammar
from .model import ModelParams, ToyLmConfig, init_params
from .scoring import AseuResult, ScoringConfig, score_sequence
from .train import TrainResult, train

# Tighter observation noise than the model default: with sigma_e2 = 0.1 and
# D = 8 even unambiguous posteriors stay too wide for their samples to align.
EXPERIMENT_CONFIG = ToyLmConfig(
    hidden_dim=24, latent_dim=8, sigma_e2=0.01, learning_rate=0.02, prefix_training=True
)
EXPERIMENT_EPOCHS = 300


@dataclass
class DirectionalRun:
    seed: int
    mean_a: float
    mean_b: float
    scores: dict[str, AseuResult]
    trained: TrainResult

    @property
    def b_above_a(self) -> bool:
        return self.mean_b > self.mean_a


def grammar_and_config(seed: int, base: ToyLmConfig = EXPERIMENT_CONFIG) -> tuple[SyntheticGrammar, ToyLmConfig]:
    grammar = SyntheticGrammar(latent_dim=base.latent_dim, seed=seed)
    return grammar, replace(base, vocab_size=grammar.vocab_size, seed=seed)


def score_prompts(
    grammar: SyntheticGrammar, params: ModelParams, cfg: ToyLmConfig, scfg: ScoringConfig
) -> dict[str, AseuResult]:
    return {
        name: score_sequence(ids, params, cfg, scfg)
        for kind in ("A", "B")
        for name, ids in grammar.prompts(kind)
    }


def kind_means(scores: dict[str, AseuResult]) -> tuple[float, float]:
    a = [r.score for k, r in scores.items() if k.startswith("A-")]
    b = [r.score for k, r in scores.items() if k.startswith("B-")]
    return float(np.mean(a)), float(np.mean(b))


def run_directional(
    seed: int,
    epochs: int = EXPERIMENT_EPOCHS,
    base: ToyLmConfig = EXPERIMENT_CONFIG,
    scoring: ScoringConfig | None = None,
    max_seconds: float | None = 300.0,
) -> DirectionalRun:
    grammar, cfg = grammar_and_config(seed, base)
    trained = train(grammar.corpus(), cfg, epochs, max_seconds=max_seconds)
    scfg = scoring or ScoringConfig(eos_id=grammar.eos_id, seed=seed)
    scores = score_prompts(grammar, trained.params, cfg, scfg)
    mean_a, mean_b = kind_means(scores)
    return DirectionalRun(seed, mean_a, mean_b, scores, trained)


def untrained_scores(seed: int, base: ToyLmConfig = EXPERIMENT_CONFIG, scoring: ScoringConfig | None = None):
    grammar, cfg = grammar_and_config(seed, base)
    scfg = scoring or ScoringConfig(eos_id=grammar.eos_id, seed=seed)
    return score_prompts(grammar, init_params(cfg), cfg, scfg)
