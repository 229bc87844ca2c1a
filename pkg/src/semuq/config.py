"""Run configuration read from an INI-style file.

Example::

    [run]
    dataset = data/nq_open.jsonl
    methods = seu, se, pe, lnpe
    out_dir = out
    cache_dir = .semuq-cache

    [sampling]
    model_id = llama-3.1-8b-instruct
    m = 5
    temperature = 0.5
    prompt = llama            ; a preset name or a template with {question}

    [generation]
    base_url = http://localhost:8000

    [embedding]
    base_url = http://localhost:8001
    model = all-MiniLM-L6-v2

    [entailment]
    base_url = http://localhost:8002

Relative paths are resolved against the config file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .aseu.model import ToyLmConfig
from .aseu.experiment import EXPERIMENT_CONFIG, EXPERIMENT_EPOCHS
from .clients import PROMPT_PRESETS, EndpointConfig
from .dataset import SamplingConfig
from .entropy import METHODS


class ConfigError(ValueError):
    pass


@dataclass
class AseuSettings:
    model: ToyLmConfig = EXPERIMENT_CONFIG
    epochs: int = EXPERIMENT_EPOCHS
    k_samples: int = 10
    length_norm: str = "divide_by_length"
    max_new_tokens: int = 16
    max_seconds: float = 300.0
    n_a: int = 6
    n_b: int = 6
    checkpoint: Path | None = None


@dataclass
class RunConfig:
    dataset: Path | None = None
    dataset_name: str = ""
    cache_dir: Path = Path(".semuq-cache")
    out_dir: Path = Path("out")
    methods: tuple[str, ...] = ("seu", "se", "pe", "lnpe")
    rouge_threshold: float = 0.3
    seed: int = 0
    correctness: str = "first"
    se_mode: str = "likelihood"
    se_length_normalized: bool = False
    include_context: bool = False
    workers: int = 0
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    generation: EndpointConfig | None = None
    embedding: EndpointConfig | None = None
    entailment: EndpointConfig | None = None
    aseu: AseuSettings = field(default_factory=AseuSettings)

    @property
    def name(self) -> str:
        if self.dataset_name:
            return self.dataset_name
        return self.dataset.stem if self.dataset else "dataset"

    def validate(self, mock: bool) -> None:
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}; choose from {list(METHODS)}")
        if self.correctness not in ("first", "any", "majority"):
            raise ConfigError(f"correctness must be first, any or majority, got {self.correctness!r}")
        if self.se_mode not in ("likelihood", "discrete"):
            raise ConfigError(f"se_mode must be likelihood or discrete, got {self.se_mode!r}")
        if mock:
            return
        if "seu" in self.methods and self.embedding is None:
            raise ConfigError("method seu needs an [embedding] endpoint (or --mock)")
        if "se" in self.methods and self.entailment is None:
            raise ConfigError("method se needs an [entailment] endpoint (or --mock)")

    def validate_pipeline(self, mock: bool) -> None:
        self.validate(mock)
        if self.dataset is None:
            raise ConfigError("no dataset given ([run] dataset)")
        if not mock and self.generation is None:
            raise ConfigError("no [generation] endpoint configured (or pass --mock)")


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _coerce(kind, raw: str):
    if kind in (bool, "bool"):
        return _bool(raw)
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def _endpoint(section: configparser.SectionProxy) -> EndpointConfig:
    kw: dict = {"base_url": section.get("base_url", "")}
    if not kw["base_url"]:
        raise ConfigError(f"[{section.name}] needs base_url")
    for f in fields(EndpointConfig):
        if f.name in section and f.name != "base_url":
            kw[f.name] = _coerce(f.type, section[f.name])
    return EndpointConfig(**kw)


def load_config(path: str | Path | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path, encoding="utf-8")
        return _from_parser(cp, path.parent)
    except (configparser.Error, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _from_parser(cp: configparser.ConfigParser, base: Path) -> RunConfig:
    cfg = RunConfig()

    def resolve(p: str) -> Path:
        q = Path(p).expanduser()
        return q if q.is_absolute() else base / q

    if cp.has_section("run"):
        run = cp["run"]
        if "dataset" in run:
            cfg.dataset = resolve(run["dataset"])
        for key in ("cache_dir", "out_dir"):
            if key in run:
                setattr(cfg, key, resolve(run[key]))
        if "methods" in run:
            cfg.methods = tuple(m.strip().lower() for m in run["methods"].split(",") if m.strip())
        for key, kind in (
            ("dataset_name", str),
            ("rouge_threshold", float),
            ("seed", int),
            ("correctness", str),
            ("se_mode", str),
            ("se_length_normalized", bool),
            ("include_context", bool),
            ("workers", int),
        ):
            if key in run:
                setattr(cfg, key, _coerce(kind, run[key]))
    if cp.has_section("sampling"):
        s = cp["sampling"]
        kw = {}
        for key, kind in (("m", int), ("temperature", float), ("max_tokens", int), ("model_id", str)):
            if key in s:
                kw[key] = _coerce(kind, s[key])
        if "prompt" in s:
            raw = s["prompt"]
            kw["prompt_template"] = PROMPT_PRESETS.get(raw, raw.replace("\\n", "\n"))
        cfg.sampling = SamplingConfig(**kw)
    for name in ("generation", "embedding", "entailment"):
        if cp.has_section(name):
            setattr(cfg, name, _endpoint(cp[name]))
    if cp.has_section("aseu"):
        a = cp["aseu"]
        model_kw = {
            f.name: _coerce(f.type, a[f.name]) for f in fields(ToyLmConfig) if f.name in a and f.name != "vocab_size"
        }
        settings = AseuSettings(model=replace(EXPERIMENT_CONFIG, **model_kw))
        for key, kind in (
            ("epochs", int),
            ("k_samples", int),
            ("length_norm", str),
            ("max_new_tokens", int),
            ("max_seconds", float),
            ("n_a", int),
            ("n_b", int),
        ):
            if key in a:
                setattr(settings, key, _coerce(kind, a[key]))
        if "checkpoint" in a:
            settings.checkpoint = resolve(a["checkpoint"])
        cfg.aseu = settings
    return cfg
