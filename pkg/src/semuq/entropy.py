"""Semantic entropy over entailment clusters, plus token-likelihood baselines."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Literal, Protocol, Sequence

import numpy as np

from .dataset import GenerationSet, Response

METHODS = ("seu", "se", "pe", "lnpe", "aseu")


class EntailmentLabel(str, enum.Enum):
    ENTAILMENT = "entailment"
    NEUTRAL = "neutral"
    CONTRADICTION = "contradiction"

    @classmethod
    def parse(cls, raw: str) -> EntailmentLabel:
        try:
            return cls(str(raw).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown entailment label {raw!r}; expected one of {[m.value for m in cls]}"
            ) from None


class EntailmentOracle(Protocol):
    def judge(self, premise: str, hypothesis: str, question: str = "") -> EntailmentLabel: ...


class OracleError(RuntimeError):
    """An entailment judgment failed; carries the pair that was being compared."""

    def __init__(self, a: str, b: str, cause: BaseException):
        super().__init__(f"entailment oracle failed on ({a!r}, {b!r}): {cause}")
        self.a, self.b = a, b


@dataclass(frozen=True)
class SemanticClustering:
    clusters: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        flat = [i for c in self.clusters for i in c]
        if any(len(c) == 0 for c in self.clusters):
            raise ValueError("empty cluster")
        if sorted(flat) != list(range(len(flat))):
            raise ValueError(f"clusters do not partition 0..{len(flat) - 1}: {self.clusters}")

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def m(self) -> int:
        return sum(len(c) for c in self.clusters)


@dataclass(frozen=True)
class ClusterDistribution:
    probs: tuple[float, ...]

    def __post_init__(self):
        if not self.probs or any(p < 0 for p in self.probs):
            raise ValueError(f"invalid cluster probabilities {self.probs}")
        if abs(math.fsum(self.probs) - 1.0) > 1e-9:
            raise ValueError(f"cluster probabilities sum to {math.fsum(self.probs)}, not 1")


@dataclass(frozen=True)
class UncertaintyScore:
    record_id: str
    method: str
    value: float

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not math.isfinite(self.value):
            raise ValueError(f"{self.method} score for {self.record_id} is not finite")


def bidirectional_equivalent(a: str, b: str, question: str, oracle: EntailmentOracle) -> bool:
    try:
        if oracle.judge(a, b, question) is not EntailmentLabel.ENTAILMENT:
            return False
        return oracle.judge(b, a, question) is EntailmentLabel.ENTAILMENT
    except OracleError:
        raise
    except Exception as exc:
        raise OracleError(a, b, exc) from exc


def cluster(responses: Sequence[str], question: str, oracle: EntailmentOracle) -> SemanticClustering:
    """Greedy single-pass clustering against each cluster's first member.

    Each response joins the earliest-created cluster whose representative is
    bidirectionally equivalent to it, otherwise it starts a new cluster.
    """
    if not responses:
        raise ValueError("cannot cluster an empty response list")
    clusters: list[list[int]] = []
    for i, text in enumerate(responses):
        for members in clusters:
            if bidirectional_equivalent(text, responses[members[0]], question, oracle):
                members.append(i)
                break
        else:
            clusters.append([i])
    return SemanticClustering(tuple(tuple(c) for c in clusters))


def cluster_distribution(
    clustering: SemanticClustering,
    responses: Sequence[Response],
    mode: Literal["likelihood", "discrete"] = "likelihood",
    *,
    length_normalized: bool = False,
) -> ClusterDistribution:
    """Cluster probabilities from sequence likelihoods or from counts.

    ``likelihood`` weights each response by exp(joint log-prob) and
    renormalises over the M samples; ``length_normalized`` swaps the joint
    log-prob for its per-token mean.
    """
    if clustering.m != len(responses):
        raise ValueError(f"clustering covers {clustering.m} responses, got {len(responses)}")
    if mode == "discrete":
        m = len(responses)
        return ClusterDistribution(tuple(len(c) / m for c in clustering.clusters))
    if mode != "likelihood":
        raise ValueError(f"unknown mode {mode!r}")
    logw = np.empty(len(responses))
    for i, r in enumerate(responses):
        if not r.token_logprobs:
            raise ValueError(f"response {i} has no token log-probabilities")
        logw[i] = r.joint_logprob / (len(r.token_logprobs) if length_normalized else 1)
    w = np.exp(logw - logw.max())
    total = w.sum()
    probs = [float(w[list(c)].sum() / total) for c in clustering.clusters]
    return ClusterDistribution(tuple(probs))


def semantic_entropy(dist: ClusterDistribution) -> float:
    """Entropy in nats over clusters; zero-probability clusters contribute 0."""
    h = -math.fsum(p * math.log(p) for p in dist.probs if p > 0)
    return max(0.0, h)


def _require_tokens(gen: GenerationSet) -> None:
    for i, r in enumerate(gen.responses):
        if not r.tokens:
            raise ValueError(f"record {gen.record_id}: response {i} has an empty token list")


def predictive_entropy(gen: GenerationSet) -> float:
    """Mean negative joint log-probability over the sampled sequences."""
    _require_tokens(gen)
    return math.fsum(-r.joint_logprob for r in gen.responses) / len(gen.responses)


def lnpe(gen: GenerationSet) -> float:
    """Length-normalised predictive entropy: per-sequence mean token NLL, averaged."""
    _require_tokens(gen)
    per_seq = [-r.joint_logprob / len(r.tokens) for r in gen.responses]
    return math.fsum(per_seq) / len(per_seq)


def se_score(
    gen: GenerationSet,
    question: str,
    oracle: EntailmentOracle,
    mode: Literal["likelihood", "discrete"] = "likelihood",
    *,
    length_normalized: bool = False,
) -> float:
    clustering = cluster(gen.texts, question, oracle)
    dist = cluster_distribution(clustering, gen.responses, mode, length_normalized=length_normalized)
    return semantic_entropy(dist)
