"""Single-pass uncertainty from posterior samples during greedy decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from ..geometry import mean_pairwise_similarity
from .model import LatentPosterior, ModelParams, ToyLmConfig, gru_step, initial_state, posterior

LengthNorm = Literal["none", "divide_by_length", "divide_by_log_length"]


@dataclass(frozen=True)
class ScoringConfig:
    k_samples: int = 10
    length_norm: LengthNorm = "divide_by_length"
    seed: int = 0
    max_new_tokens: int = 16
    eos_id: int | None = 0  # None: never stop early, always emit max_new_tokens

    def __post_init__(self):
        if self.k_samples < 2:
            raise ValueError("k_samples must be >= 2")
        if self.length_norm not in ("none", "divide_by_length", "divide_by_log_length"):
            raise ValueError(f"unknown length_norm {self.length_norm!r}")


@dataclass
class AseuResult:
    score: float
    raw: float
    steps: list[float]
    tokens: list[int]
    posteriors: list[LatentPosterior] = field(default_factory=list, repr=False)

    @property
    def length(self) -> int:
        return len(self.tokens)


def step_similarity(samples: Sequence[np.ndarray]) -> float:
    return mean_pairwise_similarity(samples)


def median(values: Sequence[float]) -> float:
    """Median; an even count averages the two middle values."""
    if not values:
        raise ValueError("median of an empty sequence")
    return float(np.median(np.asarray(values, dtype=np.float64)))


def normalise(raw: float, length: int, mode: LengthNorm) -> float:
    if length < 1:
        raise ValueError("zero-length generation")
    if mode == "none":
        return raw
    if mode == "divide_by_length":
        return raw / length
    return raw / math.log1p(length)


def aseu_from_steps(steps: Sequence[float], mode: LengthNorm = "divide_by_length") -> tuple[float, float]:
    """(normalised, raw) score from a per-step similarity trace."""
    if not steps:
        raise ValueError("zero-length generation")
    raw = 1.0 - median(steps)
    return normalise(raw, len(steps), mode), raw


def _encode_prompt(prompt: Sequence[int], params: ModelParams, cfg: ToyLmConfig):
    if len(prompt) == 0:
        raise ValueError("empty prompt")
    state = initial_state(cfg)
    for tok in prompt:
        state = gru_step(int(tok), state, params.theta, cfg)
    return state


def score_sequence(
    prompt: Sequence[int], params: ModelParams, cfg: ToyLmConfig, scfg: ScoringConfig = ScoringConfig()
) -> AseuResult:
    """Greedy-decode a response and score it in the same pass.

    Before emitting each response token the posterior is read from the
    hidden state of the last token so far, K latents are drawn and their
    mean pairwise cosine recorded. EOS ends the response and is not a step.
    """
    rng = np.random.default_rng([scfg.seed, *map(int, prompt)])
    state = _encode_prompt(prompt, params, cfg)
    steps: list[float] = []
    tokens: list[int] = []
    posts: list[LatentPosterior] = []
    for _ in range(scfg.max_new_tokens):
        h = state[-1]
        nxt = int(np.argmax(h @ params.theta["out.W"] + params.theta["out.b"]))
        if scfg.eos_id is not None and nxt == scfg.eos_id:
            break
        q = posterior(h, params.psi)
        z = q.mu + q.std * rng.standard_normal((scfg.k_samples, cfg.latent_dim))
        steps.append(step_similarity(list(z)))
        posts.append(q)
        tokens.append(nxt)
        state = gru_step(nxt, state, params.theta, cfg)
    if not tokens:
        raise ValueError("zero-length generation: the model emitted end-of-sequence first")
    score, raw = aseu_from_steps(steps, scfg.length_norm)
    return AseuResult(score, raw, steps, tokens, posts)


def posterior_entropy_score(result: AseuResult) -> float:
    """Comparison baseline: mean differential entropy of q over the decoding steps."""
    return float(np.mean([0.5 * np.sum(np.log(2 * math.pi * math.e) + q.log_var) for q in result.posteriors]))


def posterior_mean(prompt: Sequence[int], params: ModelParams, cfg: ToyLmConfig) -> np.ndarray:
    state = _encode_prompt(prompt, params, cfg)
    return posterior(state[-1], params.psi).mu
