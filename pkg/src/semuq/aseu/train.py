"""Adam training of the toy latent-semantic model and checkpoint I/O."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grammar import Example
from .model import ModelParams, ToyLmConfig, init_params, objective, validate_params

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "semuq-toylm/1"
TRACE_COLUMNS = ("epoch", "elbo", "kl", "recon", "next_token_nll")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainResult:
    params: ModelParams
    trace: list[dict] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [row["loss"] for row in self.trace]


def _by_length(corpus: Sequence[Example]) -> list[list[Example]]:
    groups: dict[int, list[Example]] = defaultdict(list)
    for ex in corpus:
        groups[len(ex.ids)].append(ex)
    return [groups[k] for k in sorted(groups)]


def _batch(group: list[Example], rng: np.random.Generator | None, prefixes: bool):
    ids = np.array([ex.ids for ex in group], dtype=np.int64)
    T = ids.shape[1]
    pos = [(b, T - 1) for b in range(len(group))]
    tgt = [ex.target for ex in group]
    if prefixes and rng is not None:
        for b, ex in enumerate(group):
            pos.append((b, int(rng.integers(ex.prompt_len - 1, T))))
            tgt.append(ex.target)
    return ids, np.array(tgt), np.array(pos, dtype=np.int64)


def evaluate(params: ModelParams, corpus: Sequence[Example], cfg: ToyLmConfig, seed: int) -> dict:
    """Objective on the full corpus with fixed noise, final-token readouts only."""
    rng = np.random.default_rng(seed)
    nll_w = cfg.nll_weight if cfg.train_backbone else 0.0
    totals = defaultdict(float)
    n = len(corpus)
    for group in _by_length(corpus):
        ids, tgt, pos = _batch(group, None, False)
        eps = rng.standard_normal((cfg.mc_samples, len(pos), cfg.latent_dim))
        parts, _ = objective(params, ids, tgt, pos, eps, cfg, nll_weight=nll_w, need_grad=False)
        w = len(group) / n
        for k in ("elbo", "kl", "recon", "nll"):
            totals[k] += w * getattr(parts, k)
    totals["loss"] = totals["elbo"] + nll_w * totals["nll"]
    return dict(totals)


def train(
    corpus: Sequence[Example],
    cfg: ToyLmConfig,
    epochs: int,
    *,
    params: ModelParams | None = None,
    max_seconds: float | None = None,
    log_every: int = 0,
) -> TrainResult:
    """Full-batch Adam on negative ELBO plus next-token NLL.

    One optimiser step per epoch. The trace has one row per epoch plus an
    epoch-0 row for the starting point; every row is evaluated with the
    same fixed noise so a zero learning rate gives a flat trace.
    """
    if not corpus:
        raise ValueError("empty training corpus")
    params = init_params(cfg) if params is None else params.copy()
    validate_params(params, cfg)
    rng = np.random.default_rng([cfg.seed, 1])
    eval_seed = cfg.seed * 7919 + 17
    nll_w = cfg.nll_weight if cfg.train_backbone else 0.0
    groups = _by_length(corpus)
    n = len(corpus)
    m1 = params.zeros_like()
    m2 = params.zeros_like()
    b1, b2, adam_eps = 0.9, 0.999, 1e-8

    def record(epoch: int) -> None:
        row = {"epoch": epoch, **evaluate(params, corpus, cfg, eval_seed)}
        row["next_token_nll"] = row.pop("nll")
        if not math.isfinite(row["loss"]):
            raise TrainingDiverged(epoch, row["loss"])
        result.trace.append(row)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d loss %.4f kl %.4f recon %.4f nll %.4f", epoch, row["loss"], row["kl"],
                     row["recon"], row["next_token_nll"])

    result = TrainResult(params)
    record(0)
    start = time.monotonic()
    for epoch in range(1, epochs + 1):
        grads = params.zeros_like()
        for group in groups:
            ids, tgt, pos = _batch(group, rng, cfg.prefix_training)
            eps = rng.standard_normal((cfg.mc_samples, len(pos), cfg.latent_dim))
            parts, g = objective(params, ids, tgt, pos, eps, cfg, nll_weight=nll_w)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(epoch, parts.total)
            w = len(group) / n
            for (_, gd), (_, d) in zip(grads.groups(), g.groups()):
                for k in gd:
                    gd[k] += w * d[k]
        t = epoch
        for name, (_, pd), (_, gd), (_, md), (_, vd) in zip(
            ("theta", "psi", "omega"), params.groups(), grads.groups(), m1.groups(), m2.groups()
        ):
            if name == "theta" and not cfg.train_backbone:
                continue
            for k in pd:
                md[k] = b1 * md[k] + (1 - b1) * gd[k]
                vd[k] = b2 * vd[k] + (1 - b2) * gd[k] ** 2
                step = (md[k] / (1 - b1**t)) / (np.sqrt(vd[k] / (1 - b2**t)) + adam_eps)
                pd[k] -= cfg.learning_rate * step
        record(epoch)
        if max_seconds is not None and time.monotonic() - start > max_seconds:
            log.warning("stopping after %d epochs: time budget of %.0fs spent", epoch, max_seconds)
            break
    return result


def write_trace(trace: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([row["epoch"]] + [f"{row[c]:.6f}" for c in TRACE_COLUMNS[1:]])


def save_checkpoint(path: str | Path, params: ModelParams, cfg: ToyLmConfig, extra: dict | None = None) -> None:
    meta = {"format": CHECKPOINT_FORMAT, "config": cfg.to_dict(), "extra": extra or {}}
    arrays = {name: arr for name, arr in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path: str | Path, cfg: ToyLmConfig | None = None) -> tuple[ModelParams, ToyLmConfig, dict]:
    """Load parameters, checking every shape against ``cfg`` (or the stored config)."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
        params = ModelParams()
        for name in z.files:
            if name == "__meta__":
                continue
            group, key = name.split("/", 1)
            getattr(params, group)[key] = z[name].astype(np.float64)
    stored = ToyLmConfig(**meta["config"])
    cfg = cfg or stored
    validate_params(params, cfg)
    return params, cfg, meta.get("extra", {})
