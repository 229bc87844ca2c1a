"""Seeded mock QA worlds for offline experiments.

A record is either *known*, in which case the mock model answers with
near-verbatim paraphrases of the reference (one extra word each, the kind of
variation a strict entailment check rejects), or *unknown*, in which case it
scatters over unrelated answers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clients import MockLlm
from .dataset import QaRecord, SamplingConfig

_CONS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
ADDITIONS = ("indeed", "definitely", "originally", "famously", "still", "officially", "mainly")


def pseudo_word(rng: np.random.Generator, syllables: int = 3) -> str:
    return "".join(rng.choice(list(_CONS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))


def paraphrases(reference: str, rng: np.random.Generator, n: int = 4) -> list[str]:
    """The reference plus variants that each insert one extra word."""
    words = reference.split()
    out = [reference]
    extras = rng.permutation(len(ADDITIONS))[: n - 1]
    for e in extras:
        w = list(words)
        w.insert(int(rng.integers(1, len(w) + 1)), ADDITIONS[int(e)])
        out.append(" ".join(w))
    return out


def scattered(rng: np.random.Generator, n: int = 5) -> list[str]:
    return [" ".join(pseudo_word(rng) for _ in range(int(rng.integers(3, 8)))) for _ in range(n)]


@dataclass
class MockWorld:
    records: list[QaRecord]
    known: dict[str, bool]
    candidates: dict[str, list[tuple[str, float]]]

    def llm(self, sampling: SamplingConfig, seed: int = 0, include_context: bool = False) -> MockLlm:
        table = {
            sampling.render(r, include_context=include_context): self.candidates[r.id] for r in self.records
        }
        return MockLlm(table, seed=seed)


def _candidates_for(reference: str, known: bool, rng: np.random.Generator) -> list[tuple[str, float]]:
    if known:
        para = paraphrases(reference, rng)
        weights = rng.dirichlet(np.full(len(para), 2.0))
        cands = list(zip(para, weights))
        if rng.random() < 0.2:
            cands.append((scattered(rng, 1)[0], 0.1))
        return [(t, float(w)) for t, w in cands]
    wrong = scattered(rng, 5)
    cands = list(zip(wrong, rng.dirichlet(np.full(len(wrong), 1.0))))
    if rng.random() < 0.2:
        cands.append((reference, 0.15))
    return [(t, float(w)) for t, w in cands]


def paraphrase_world(n_records: int = 200, seed: int = 0, p_known: float = 0.5, ref_len: int = 12) -> MockWorld:
    rng = np.random.default_rng(seed)
    records, known, cands = [], {}, {}
    for i in range(n_records):
        subject = pseudo_word(rng)
        reference = " ".join([subject] + [pseudo_word(rng) for _ in range(ref_len - 1)])
        rid = f"syn-{i:04d}"
        records.append(QaRecord(rid, f"What is known about {subject}?", (reference,)))
        known[rid] = bool(rng.random() < p_known)
        cands[rid] = _candidates_for(reference, known[rid], rng)
    return MockWorld(records, known, cands)


def world_for_records(records: list[QaRecord], seed: int = 0, p_known: float = 0.6) -> MockWorld:
    """Mock world over an existing dataset, paraphrasing each first reference."""
    rng = np.random.default_rng(seed)
    known, cands = {}, {}
    for r in records:
        known[r.id] = bool(rng.random() < p_known)
        cands[r.id] = _candidates_for(r.references[0], known[r.id], rng)
    return MockWorld(list(records), known, cands)
