"""Batch pipeline: generate -> score -> evaluate, plus toy amortised-SEU train/score.

Exit codes: 0 success, 1 failure of some records or of a stage, 2 invalid config.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence, TypeVar

from . import entropy
from .aseu.grammar import SyntheticGrammar
from .aseu.scoring import ScoringConfig, score_sequence
from .aseu.train import load_checkpoint, save_checkpoint, train, write_trace
from .clients import (
    CachedEmbedder,
    CachedEntailer,
    CachedGenerator,
    ClientError,
    HttpEmbeddingClient,
    HttpEntailmentClient,
    HttpGenerationClient,
    MockEmbedder,
    MockEntailer,
)
from .config import ConfigError, RunConfig, load_config
from .dataset import (
    DatasetError,
    GenerationSet,
    QaRecord,
    atomic_write_text,
    cache_key,
    load_dataset,
    load_generations,
)
from .evaluation import DegenerateLabelsError, LabeledScore, MethodResult, emit_report, label_correct
from .geometry import seu
from .synthetic import world_for_records

log = logging.getLogger("semuq")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2
SCORE_COLUMNS = ("record_id", "method", "value")
T = TypeVar("T")


class PipelineError(RuntimeError):
    pass


@dataclass
class Clients:
    generator: object
    embedder: object | None
    entailer: object | None


def build_clients(cfg: RunConfig, mock: bool, records: Sequence[QaRecord] = ()) -> Clients:
    """Real HTTP clients from the config, or seeded mocks; all wrapped in caches."""
    cache = Path(cfg.cache_dir)
    if mock:
        world = world_for_records(list(records), seed=cfg.seed)
        gen = world.llm(cfg.sampling, seed=cfg.seed, include_context=cfg.include_context)
        emb = MockEmbedder(256, seed=cfg.seed)
        ent = MockEntailer()
    else:
        needs_lp = bool({"pe", "lnpe"} & set(cfg.methods)) or ("se" in cfg.methods and cfg.se_mode == "likelihood")
        gen = HttpGenerationClient(cfg.generation, require_logprobs=needs_lp) if cfg.generation else None
        emb = HttpEmbeddingClient(cfg.embedding) if cfg.embedding else None
        ent = HttpEntailmentClient(cfg.entailment) if cfg.entailment else None
    return Clients(
        CachedGenerator(gen, cache) if gen is not None else None,
        CachedEmbedder(emb, cache / "embeddings") if emb is not None else None,
        CachedEntailer(ent, cache / "nli") if ent is not None else None,
    )


def effective_sampling(cfg: RunConfig, mock: bool):
    if mock and not cfg.sampling.model_id.startswith("mock"):
        return replace(cfg.sampling, model_id=f"mock:{cfg.sampling.model_id}")
    return cfg.sampling


def _workers(cfg: RunConfig) -> int:
    if cfg.workers > 0:
        return cfg.workers
    return cfg.generation.max_concurrency if cfg.generation else 4


def _pool_map(fn: Callable[[QaRecord], T], records: Sequence[QaRecord], workers: int) -> list[tuple[QaRecord, T | Exception]]:
    def safe(rec):
        try:
            return fn(rec)
        except Exception as exc:  # noqa: BLE001 - collected per record
            return exc

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(zip(records, pool.map(safe, records)))


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v: float) -> str:
    return format(v, ".12g")


# -- stages ------------------------------------------------------------------------


def cmd_generate(cfg: RunConfig, clients: Clients, records: Sequence[QaRecord], mock: bool = False) -> int:
    sampling = effective_sampling(cfg, mock)
    done = 0

    def one(rec: QaRecord) -> GenerationSet:
        nonlocal done
        prompt = sampling.render(rec, include_context=cfg.include_context)
        gen = clients.generator.generate(prompt, sampling, rec.id)
        done += 1
        if done % 50 == 0:
            log.info("generated %d/%d records", done, len(records))
        return gen

    results = _pool_map(one, records, _workers(cfg))
    failures = [(r.id, f"{type(x).__name__}: {x}") for r, x in results if isinstance(x, Exception)]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fail_path = out / "failures.csv"
    if failures:
        atomic_write_text(fail_path, _csv(failures, ("record_id", "reason")))
        log.error("%d of %d records failed; see %s", len(failures), len(records), fail_path)
        return EXIT_PARTIAL
    fail_path.unlink(missing_ok=True)
    log.info("generations cached for %d records in %s", len(records), cfg.cache_dir)
    return EXIT_OK


def _cached(clients: Clients, rec: QaRecord, cfg: RunConfig, mock: bool) -> GenerationSet:
    sampling = effective_sampling(cfg, mock)
    key = cache_key(rec.id, sampling, sampling.render(rec, include_context=cfg.include_context))
    gen = load_generations(key, cfg.cache_dir)
    if gen is None:
        raise PipelineError(f"no cached generations for record {rec.id!r}; run `semuq generate` first")
    return gen


def score_record(gen: GenerationSet, rec: QaRecord, cfg: RunConfig, clients: Clients) -> dict[str, float]:
    out: dict[str, float] = {}
    for method in cfg.methods:
        if method == "seu":
            out["seu"] = seu(clients.embedder.embed(gen.texts))
        elif method == "se":
            out["se"] = entropy.se_score(
                gen, rec.question, clients.entailer, cfg.se_mode, length_normalized=cfg.se_length_normalized
            )
        elif method == "pe":
            out["pe"] = entropy.predictive_entropy(gen)
        elif method == "lnpe":
            out["lnpe"] = entropy.lnpe(gen)
    return out


def cmd_score(cfg: RunConfig, clients: Clients, records: Sequence[QaRecord], mock: bool = False) -> int:
    if "aseu" in cfg.methods:
        raise ConfigError("aseu scores come from `semuq aseu-score`; drop it from [run] methods for `score`")
    gens = {}
    for rec in records:
        gens[rec.id] = _cached(clients, rec, cfg, mock)
    results = _pool_map(lambda r: score_record(gens[r.id], r, cfg, clients), records, _workers(cfg))
    rows = []
    for rec, res in results:
        if isinstance(res, Exception):
            raise PipelineError(f"scoring record {rec.id!r} failed: {res}") from res
        rows += [(rec.id, m, _fmt(v)) for m, v in res.items()]
    rows.sort(key=lambda r: (r[0], r[1]))
    path = Path(cfg.out_dir) / "scores.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, _csv(rows, SCORE_COLUMNS))
    log.info("wrote %d scores to %s", len(rows), path)
    return EXIT_OK


def read_scores(path: Path) -> list[tuple[str, str, float]]:
    if not path.is_file():
        raise PipelineError(f"{path} not found; run `semuq score` first")
    with path.open(newline="") as fh:
        return [(r["record_id"], r["method"], float(r["value"])) for r in csv.DictReader(fh)]


def is_correct(gen: GenerationSet, rec: QaRecord, cfg: RunConfig) -> bool:
    flags = [label_correct(t, rec.references, cfg.rouge_threshold) for t in gen.texts]
    if cfg.correctness == "first":
        return flags[0]
    if cfg.correctness == "any":
        return any(flags)
    return sum(flags) * 2 > len(flags)


def cmd_evaluate(cfg: RunConfig, clients: Clients, records: Sequence[QaRecord], mock: bool = False) -> int:
    scores = read_scores(Path(cfg.out_dir) / "scores.csv")
    by_id = {r.id: r for r in records}
    labels = {}
    for rec in records:
        labels[rec.id] = is_correct(_cached(clients, rec, cfg, mock), rec, cfg)
    per_method: dict[str, list[LabeledScore]] = {}
    for rid, method, value in scores:
        if rid not in by_id:
            raise PipelineError(f"scores.csv mentions unknown record {rid!r}")
        per_method.setdefault(method, []).append(LabeledScore(rid, value, labels[rid]))
    model = effective_sampling(cfg, mock).model_id
    try:
        rows = [MethodResult(m, cfg.name, model, s) for m, s in sorted(per_method.items())]
    except DegenerateLabelsError as exc:
        raise PipelineError(f"cannot evaluate: {exc}") from exc
    out = Path(cfg.out_dir)
    label_rows = [(rid, int(labels[rid])) for rid in sorted(labels)]
    atomic_write_text(out / "labels.csv", _csv(label_rows, ("record_id", "correct")))
    emit_report(rows, out)
    for r in rows:
        log.info("%-5s AUROC %.4f  FPR@J %.4f  TPR@J %.4f  (n=%d)", r.method, r.auroc, r.best.fpr, r.best.tpr,
                 len(r.scores))
    return EXIT_OK


def cmd_report(cfg: RunConfig, clients: Clients, records: Sequence[QaRecord], mock: bool = False) -> int:
    code = cmd_generate(cfg, clients, records, mock)
    if code != EXIT_OK:
        return code
    cmd_score(cfg, clients, records, mock)
    return cmd_evaluate(cfg, clients, records, mock)


def _grammar(cfg: RunConfig) -> tuple[SyntheticGrammar, object]:
    a = cfg.aseu
    grammar = SyntheticGrammar(n_a=a.n_a, n_b=a.n_b, latent_dim=a.model.latent_dim, seed=cfg.seed)
    model_cfg = replace(a.model, vocab_size=grammar.vocab_size, seed=cfg.seed)
    return grammar, model_cfg


def _checkpoint_path(cfg: RunConfig) -> Path:
    return cfg.aseu.checkpoint or Path(cfg.out_dir) / "aseu.npz"


def cmd_aseu_train(cfg: RunConfig, epochs: int | None = None) -> int:
    grammar, model_cfg = _grammar(cfg)
    res = train(
        grammar.corpus(), model_cfg, epochs if epochs is not None else cfg.aseu.epochs,
        max_seconds=cfg.aseu.max_seconds, log_every=50,
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = _checkpoint_path(cfg)
    save_checkpoint(ckpt, res.params, model_cfg, {"grammar": {"n_a": cfg.aseu.n_a, "n_b": cfg.aseu.n_b}})
    write_trace(res.trace, out / "loss_trace.csv")
    log.info("loss %.4f -> %.4f; checkpoint %s", res.losses[0], res.losses[-1], ckpt)
    return EXIT_OK


def cmd_aseu_score(cfg: RunConfig) -> int:
    grammar, model_cfg = _grammar(cfg)
    ckpt = _checkpoint_path(cfg)
    if not ckpt.is_file():
        raise PipelineError(f"checkpoint {ckpt} not found; run `semuq aseu-train` first")
    try:
        params, model_cfg, _ = load_checkpoint(ckpt, model_cfg)
    except ValueError as exc:
        raise ConfigError(f"checkpoint does not match config: {exc}") from exc
    scfg = ScoringConfig(
        k_samples=cfg.aseu.k_samples,
        length_norm=cfg.aseu.length_norm,
        seed=cfg.seed,
        max_new_tokens=cfg.aseu.max_new_tokens,
        eos_id=grammar.eos_id,
    )
    rows = []
    for kind in ("A", "B"):
        for name, ids in grammar.prompts(kind):
            try:
                rows.append((name, "aseu", _fmt(score_sequence(ids, params, model_cfg, scfg).score)))
            except ValueError as exc:
                log.warning("prompt %s: %s", name, exc)
    rows.sort()
    path = Path(cfg.out_dir) / "aseu_scores.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, _csv(rows, SCORE_COLUMNS))
    log.info("wrote %d ASEU scores to %s", len(rows), path)
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="INI run configuration")
    p.add_argument("--cache", type=Path, default=argparse.SUPPRESS, help="cache directory")
    p.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--dataset", type=Path, default=argparse.SUPPRESS, help="dataset (JSON lines)")
    p.add_argument("--methods", default=argparse.SUPPRESS, help="comma-separated subset of seu,se,pe,lnpe")
    p.add_argument("--mock", action="store_true", default=argparse.SUPPRESS,
                   help="swap every client for a seeded mock")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)
    return p


def make_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="semuq", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="sample and cache M responses per question")
    sub.add_parser("score", parents=[common], help="compute uncertainty scores into scores.csv")
    sub.add_parser("evaluate", parents=[common], help="label correctness, write report.csv and ROC plots")
    sub.add_parser("report", parents=[common], help="run generate, score and evaluate in one go")
    t = sub.add_parser("aseu-train", parents=[common], help="train the toy amortised model")
    t.add_argument("--epochs", type=int, default=None)
    sub.add_parser("aseu-score", parents=[common], help="score the synthetic prompts with a checkpoint")
    return parser


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if "cache" in args:
        cfg.cache_dir = args.cache
    if "out" in args:
        cfg.out_dir = args.out
    if "seed" in args:
        cfg.seed = args.seed
    if "dataset" in args:
        cfg.dataset = args.dataset
    if "methods" in args:
        cfg.methods = tuple(m.strip().lower() for m in args.methods.split(",") if m.strip())
    return cfg


def run(argv: Sequence[str] | None = None, clients: Clients | None = None) -> int:
    args = make_parser().parse_args(argv)
    verbosity = getattr(args, "verbose", 0)
    logging.basicConfig(
        level=logging.DEBUG if verbosity > 1 else logging.INFO if verbosity == 1 else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    mock = getattr(args, "mock", False)
    try:
        cfg = apply_overrides(load_config(getattr(args, "config", None)), args)
        if args.command == "aseu-train":
            cfg.validate(mock=True)
            return cmd_aseu_train(cfg, args.epochs)
        if args.command == "aseu-score":
            cfg.validate(mock=True)
            return cmd_aseu_score(cfg)
        cfg.validate_pipeline(mock or clients is not None)
        records = load_dataset(cfg.dataset)
    except (ConfigError, DatasetError, FileNotFoundError) as exc:
        print(f"semuq: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, ClientError, OSError) as exc:
        print(f"semuq: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    clients = clients or build_clients(cfg, mock, records)
    stage = {"generate": cmd_generate, "score": cmd_score, "evaluate": cmd_evaluate, "report": cmd_report}
    try:
        return stage[args.command](cfg, clients, records, mock)
    except ConfigError as exc:
        print(f"semuq: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PipelineError, ClientError, OSError, ValueError) as exc:
        print(f"semuq: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
