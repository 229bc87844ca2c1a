"""Correctness labels, AUROC, ROC operating points and report files."""

from __future__ import annotations

import csv
import io
import math
import re
import string
from dataclasses import dataclass, field
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import atomic_write_text

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")

REPORT_COLUMNS = ("method", "dataset", "model", "auroc", "fpr_at_j", "tpr_at_j", "n")


class DegenerateLabelsError(ValueError):
    """All labels fall in one class, so ROC quantities are undefined."""


@dataclass(frozen=True)
class LabeledScore:
    record_id: str
    uncertainty: float
    correct: bool

    def __post_init__(self):
        if not math.isfinite(self.uncertainty):
            raise ValueError(f"non-finite uncertainty for {self.record_id}")


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fpr: float
    tpr: float

    @property
    def j(self) -> float:
        return self.tpr - self.fpr


def tokenize(text: str) -> list[str]:
    return _PUNCT.sub("", text.lower()).split()


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """Rouge-L F1 over lowercased, punctuation-free whitespace tokens."""
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        return 0.0
    lcs = _lcs_len(c, r)
    # 2PR/(P+R) with P=lcs/|c|, R=lcs/|r| simplifies to this exact ratio
    return 2.0 * lcs / (len(c) + len(r))


def label_correct(candidate: str, references: Sequence[str], threshold: float = 0.3) -> bool:
    if not references:
        raise ValueError("at least one reference answer is required")
    return max(rouge_l(candidate, ref) for ref in references) > threshold


def _split(scores: Sequence[LabeledScore]) -> tuple[np.ndarray, np.ndarray]:
    u = np.array([s.uncertainty for s in scores], dtype=np.float64)
    y = np.array([s.correct for s in scores], dtype=bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateLabelsError(
            f"need both correct and incorrect answers; got {n_pos} correct of {len(y)}"
        )
    return u, y


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    # boundaries of tie groups in sorted order
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    ranks_sorted = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    ranks = np.empty_like(ranks_sorted)
    ranks[order] = ranks_sorted
    return ranks


def auroc(scores: Sequence[LabeledScore]) -> float:
    """Probability that an incorrect answer gets higher uncertainty than a correct one.

    Ties count one half. Computed from average ranks (Mann-Whitney U).
    """
    u, y = _split(scores)
    ranks = _average_ranks(u)
    n_wrong = int((~y).sum())
    n_right = len(y) - n_wrong
    u_stat = ranks[~y].sum() - n_wrong * (n_wrong + 1) / 2.0
    return float(u_stat / (n_wrong * n_right))


def roc_curve(scores: Sequence[LabeledScore]) -> list[RocPoint]:
    """ROC with correct answers as positives, predicted when uncertainty <= threshold.

    Starts at (0, 0) with threshold -inf, adds one point per distinct
    uncertainty in ascending order, and ends at (1, 1) with threshold +inf.
    """
    u, y = _split(scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    order = np.argsort(u, kind="mergesort")
    us, ys = u[order], y[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(~ys)
    last_of_group = np.flatnonzero(np.r_[us[1:] != us[:-1], True])
    points = [RocPoint(-math.inf, 0.0, 0.0)]
    for i in last_of_group:
        points.append(RocPoint(float(us[i]), fp[i] / n_neg, tp[i] / n_pos))
    points.append(RocPoint(math.inf, 1.0, 1.0))
    return points


def trapezoid_area(curve: Sequence[RocPoint]) -> float:
    area = 0.0
    for a, b in zip(curve, curve[1:]):
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0
    return area


def youden_point(curve: Sequence[RocPoint]) -> RocPoint:
    """Point maximising TPR - FPR; ties go to lower FPR, then lower threshold."""
    if not curve:
        raise ValueError("empty ROC curve")
    return min(curve, key=lambda p: (-p.j, p.fpr, p.threshold))


@dataclass
class MethodResult:
    """Labeled scores of one method on one (dataset, model) pair."""

    method: str
    dataset: str
    model: str
    scores: list[LabeledScore] = field(default_factory=list)

    def __post_init__(self):
        self.auroc = auroc(self.scores)
        self.curve = roc_curve(self.scores)
        self.best = youden_point(self.curve)


def report_csv(rows: Sequence[MethodResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in sorted(rows, key=lambda r: (r.method, r.dataset, r.model)):
        w.writerow(
            [r.method, r.dataset, r.model, f"{r.auroc:.4f}", f"{r.best.fpr:.4f}", f"{r.best.tpr:.4f}", len(r.scores)]
        )
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def roc_svg(method: str, rows: Sequence[MethodResult], size: int = 360) -> str:
    """Self-contained SVG of the ROC curves of one method."""
    pad = 48
    side = size - 2 * pad

    def xy(fpr: float, tpr: float) -> str:
        return f"{pad + fpr * side:.2f},{pad + (1 - tpr) * side:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{size / 2:.0f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">'
        f"{escape(method)}</text>",
        f'<polyline points="{xy(0, 0)} {xy(1, 0)} {xy(1, 1)} {xy(0, 1)} {xy(0, 0)}" fill="none" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad + side}" x2="{pad + side}" y2="{pad}" stroke="gray" stroke-dasharray="4 4"/>',
    ]
    for t in (0.0, 0.5, 1.0):
        px, py = pad + t * side, pad + (1 - t) * side
        out.append(
            f'<text x="{px:.2f}" y="{pad + side + 16}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{t:.1f}</text>'
        )
        out.append(
            f'<text x="{pad - 6}" y="{py + 4:.2f}" text-anchor="end" font-family="sans-serif" '
            f'font-size="11">{t:.1f}</text>'
        )
    out.append(
        f'<text x="{size / 2:.0f}" y="{size - 8}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12">False positive rate</text>'
    )
    out.append(
        f'<text x="14" y="{size / 2:.0f}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {size / 2:.0f})">True positive rate</text>'
    )
    ordered = sorted(rows, key=lambda r: (r.dataset, r.model))
    for i, r in enumerate(ordered):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(xy(p.fpr, p.tpr) for p in r.curve)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        label = escape(f"{r.dataset} / {r.model}  AUROC {r.auroc:.4f}")
        out.append(
            f'<text x="{pad + side - 4}" y="{pad + side - 8 - 14 * i}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10" fill="{color}">{label}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(rows: Sequence[MethodResult], out_dir: str | Path) -> list[Path]:
    """Write report.csv plus one roc_<method>.svg per method; return the paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = [out_dir / "report.csv"]
    atomic_write_text(written[0], report_csv(rows))
    by_method: dict[str, list[MethodResult]] = {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r)
    for method in sorted(by_method):
        path = out_dir / f"roc_{method}.svg"
        atomic_write_text(path, roc_svg(method, by_method[method]))
        written.append(path)
    return written
