from __future__ import annotations

import math

import numpy as np


from semuq.dataset import GenerationSet, Response, SamplingConfig
from semuq.entropy import EntailmentLabel


def make_response(text: str, logprobs=(-0.5,), tokens=None) -> Response:
    tokens = tokens if tokens is not None else tuple(f"t{i}" for i in range(len(logprobs)))
    return Response(text, tuple(tokens), tuple(float(x) for x in logprobs))


def make_set(texts, logprobs=None, record_id="r0", m=None) -> GenerationSet:
    logprobs = logprobs or [(-0.5,)] * len(texts)
    responses = tuple(make_response(t, lp) for t, lp in zip(texts, logprobs))
    sampling = SamplingConfig(m=m or max(2, len(texts)))
    return GenerationSet(record_id, responses, sampling)


class TableOracle:
    """Oracle answering from an explicit (premise, hypothesis) table; identical pairs entail."""

    def __init__(self, table=None, default=EntailmentLabel.NEUTRAL):
        self.table = dict(table or {})
        self.default = default
        self.calls = 0

    def judge(self, premise, hypothesis, question=""):
        self.calls += 1
        if premise == hypothesis:
            return EntailmentLabel.ENTAILMENT
        return self.table.get((premise, hypothesis), self.default)


class ConstOracle:
    def __init__(self, label):
        self.label = label

    def judge(self, premise, hypothesis, question=""):
        return self.label


def naive_seu(vectors) -> float:
    sims = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            a, b = vectors[i], vectors[j]
            dot = sum(x * y for x, y in zip(a, b))
            na = math.sqrt(sum(x * x for x in a))
            nb = math.sqrt(sum(y * y for y in b))
            sims.append(dot / (na * nb))
    return 1.0 - sum(sims) / len(sims)


def brute_auroc(correct_u, wrong_u) -> float:
    wins = 0.0
    for w in wrong_u:
        for c in correct_u:
            wins += 1.0 if w > c else 0.5 if w == c else 0.0
    return wins / (len(correct_u) * len(wrong_u))



# -- acceptance bookkeeping ------------------------------------------------------------

import contextlib
import time

ACCEPTANCE: list[str] = []


@contextlib.contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    """Record one PASS/FAIL/SKIP line for an acceptance criterion.

    The body fills ``info["detail"]`` and asserts; the wall-clock budget is
    checked after the body finishes.
    """
    info = {"detail": ""}
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield info
        elapsed = time.perf_counter() - start
        info["detail"] += f" [{elapsed:.2f}s]"
        if budget_s is not None and elapsed >= budget_s:
            info["detail"] += f" over budget {budget_s:g}s"
            raise AssertionError(f"criterion {number} took {elapsed:.2f}s, budget {budget_s:g}s")
        status = "PASS"
    except BaseException as exc:
        if type(exc).__name__ == "Skipped":
            status = "SKIP"
            info["detail"] = str(exc)
        else:
            info["detail"] = f"{info['detail']} {type(exc).__name__}: {exc}".strip()
        raise
    finally:
        line = f"{status} criterion {number:>2}: {title} -- {info['detail'].strip()}"
        ACCEPTANCE.append(line)
        print(line)
