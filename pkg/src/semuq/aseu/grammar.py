"""Bundled synthetic grammar for the amortised-SEU experiments.

Sequences look like ``ask <prompt> the answer is <ans> <eos>``. Type-A
prompts always get the same answer; each type-B prompt is followed by one of
two answers with equal probability. Reference embeddings are built from
the answer word only, so the two B answers have distinct embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..clients import hashed_bag_embedding

EOS = "<eos>"
FILLER = ("the", "answer", "is")


class ReferenceEmbedder:
    """Deterministic unit-vector embedding of a token sequence."""

    def __init__(self, dim: int, seed: int = 0, stopwords: frozenset[str] = frozenset()):
        self.dim, self.seed, self.stopwords = dim, seed, stopwords

    def __call__(self, tokens: list[str]) -> np.ndarray:
        content = [t for t in tokens if t not in self.stopwords and t != EOS]
        return hashed_bag_embedding(content, self.dim, self.seed)


@dataclass(frozen=True)
class Example:
    ids: tuple[int, ...]
    target: np.ndarray = field(compare=False)
    prompt_len: int = 2
    kind: str = "A"
    name: str = ""


@dataclass
class SyntheticGrammar:
    n_a: int = 6
    n_b: int = 6
    latent_dim: int = 8
    seed: int = 0
    vocab: list[str] = field(init=False)

    def __post_init__(self):
        self.vocab = [EOS, "ask", *FILLER]
        self.vocab += [f"a{i}" for i in range(self.n_a)] + [f"b{j}" for j in range(self.n_b)]
        self.vocab += [f"ans_a{i}" for i in range(self.n_a)]
        self.vocab += [f"ans_b{j}_{k}" for j in range(self.n_b) for k in range(2)]
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.embedder = ReferenceEmbedder(self.latent_dim, self.seed, frozenset(FILLER))

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    def encode(self, words: list[str]) -> tuple[int, ...]:
        return tuple(self.index[w] for w in words)

    def decode(self, ids) -> list[str]:
        return [self.vocab[i] for i in ids]

    def prompts(self, kind: str) -> list[tuple[str, tuple[int, ...]]]:
        n, p = (self.n_a, "a") if kind == "A" else (self.n_b, "b")
        return [(f"{kind}-{i}", self.encode(["ask", f"{p}{i}"])) for i in range(n)]

    def _example(self, prompt_word: str, answer: str, kind: str, name: str) -> Example:
        words = ["ask", prompt_word, *FILLER, answer, EOS]
        return Example(self.encode(words), self.embedder(words[2:]), 2, kind, name)

    def corpus(self) -> list[Example]:
        out = [self._example(f"a{i}", f"ans_a{i}", "A", f"A-{i}") for i in range(self.n_a)]
        for j in range(self.n_b):
            out += [self._example(f"b{j}", f"ans_b{j}_{k}", "B", f"B-{j}") for k in range(2)]
        return out
