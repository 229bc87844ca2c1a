"""QA records, sampled generations and the on-disk generation cache."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

QUESTION_PLACEHOLDER = "{question}"


class DatasetError(ValueError):
    """Malformed dataset file."""


class CacheError(OSError):
    """Generation cache cannot be written."""


@dataclass(frozen=True)
class QaRecord:
    id: str
    question: str
    references: tuple[str, ...]
    context: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not self.question:
            raise ValueError(f"record {self.id}: question must be non-empty")
        if not self.references:
            raise ValueError(f"record {self.id}: references must be non-empty")
        if any(not r for r in self.references):
            raise ValueError(f"record {self.id}: empty reference answer")


@dataclass(frozen=True)
class SamplingConfig:
    m: int = 5
    temperature: float = 0.5
    prompt_template: str = "Answer the following question as briefly as possible.\nQuestion: {question}\nAnswer:"
    model_id: str = "mock-llm"
    max_tokens: int = 64

    def __post_init__(self):
        if self.m < 2:
            raise ValueError(f"m must be >= 2, got {self.m}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.prompt_template.count(QUESTION_PLACEHOLDER) != 1:
            raise ValueError("prompt_template must contain exactly one {question} placeholder")

    def render(self, record: QaRecord, *, include_context: bool = False) -> str:
        question = record.question
        if include_context and record.context:
            question = f"{record.context}\n{question}"
        return self.prompt_template.replace(QUESTION_PLACEHOLDER, question)


@dataclass(frozen=True)
class Response:
    text: str
    tokens: tuple[str, ...] = ()
    token_logprobs: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.tokens) != len(self.token_logprobs):
            raise ValueError(
                f"tokens ({len(self.tokens)}) and token_logprobs ({len(self.token_logprobs)}) differ in length"
            )
        for lp in self.token_logprobs:
            if not math.isfinite(lp) or lp > 0:
                raise ValueError(f"token log-probability must be finite and <= 0, got {lp}")

    @property
    def joint_logprob(self) -> float:
        return math.fsum(self.token_logprobs)


@dataclass(frozen=True)
class GenerationSet:
    record_id: str
    responses: tuple[Response, ...]
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if not self.responses:
            raise ValueError("a generation set needs at least one response")

    @property
    def texts(self) -> list[str]:
        return [r.text for r in self.responses]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["responses"] = [
            {"text": r.text, "tokens": list(r.tokens), "token_logprobs": list(r.token_logprobs)}
            for r in self.responses
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> GenerationSet:
        return cls(
            record_id=d["record_id"],
            responses=tuple(
                Response(r["text"], tuple(r["tokens"]), tuple(float(x) for x in r["token_logprobs"]))
                for r in d["responses"]
            ),
            sampling=SamplingConfig(**d["sampling"]),
        )


def load_dataset(path: str | os.PathLike) -> list[QaRecord]:
    """Read a line-delimited JSON dataset.

    Each line holds ``{"id", "question", "context"?, "answers": [...]}``.
    Blank lines are skipped. Errors carry the 1-based line number.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    records: list[QaRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected an object")
            for key in ("id", "question", "answers"):
                if key not in obj:
                    raise DatasetError(f"{path}:{lineno}: missing field {key!r}")
            answers = obj["answers"]
            if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
                raise DatasetError(f"{path}:{lineno}: 'answers' must be a list of strings")
            rid = str(obj["id"])
            if rid in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {rid!r}")
            try:
                rec = QaRecord(
                    id=rid,
                    question=obj["question"],
                    references=tuple(answers),
                    context=obj.get("context"),
                )
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            seen.add(rid)
            records.append(rec)
    return records


def write_dataset(records: list[QaRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            obj = {"id": r.id, "question": r.question, "answers": list(r.references)}
            if r.context is not None:
                obj["context"] = r.context
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def digest(obj) -> str:
    """SHA-256 hex digest of the canonical JSON form of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def cache_key(record_id: str, sampling: SamplingConfig, prompt: str) -> str:
    return digest(
        {
            "record_id": record_id,
            "model_id": sampling.model_id,
            "prompt": prompt,
            "temperature": sampling.temperature,
            "m": sampling.m,
            "max_tokens": sampling.max_tokens,
        }
    )


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def store_generations(gen: GenerationSet, cache_dir: str | os.PathLike, key: str) -> Path:
    path = Path(cache_dir) / f"{key}.json"
    try:
        atomic_write_text(path, json.dumps(gen.to_dict(), ensure_ascii=False, sort_keys=True))
    except OSError as exc:
        raise CacheError(f"cannot write generation cache {path}: {exc}") from exc
    return path


def load_generations(key: str, cache_dir: str | os.PathLike) -> GenerationSet | None:
    path = Path(cache_dir) / f"{key}.json"
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        return None
    try:
        return GenerationSet.from_dict(json.loads(text))
    except (ValueError, KeyError, TypeError) as exc:
        log.warning("corrupt cache file %s (%s); treating as absent", path, exc)
        return None
