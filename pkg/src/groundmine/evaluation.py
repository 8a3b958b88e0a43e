"""Grounding metrics and model evaluation.

Intervals are (start, end) pairs in seconds. Proposal ranking at inference
follows the training-time criterion: heads are ordered by ascending base
alignment score ("the cheapest explanation wins"), ties by head index. The
metric battery: R@n at tIoU thresholds, mIoU per n, mIoP and IoP recall for
the top-1 proposal, plus answer accuracy and grounded answer accuracy when
the corpus carries answer-correctness flags.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import FormatError, ValidationError
from .losses import BaseScorer, HingeAlignmentBase
from .model import ModelParams, encode_query, interval_of, propose

Interval = tuple[float, float]


def _check_interval(iv: Interval, what: str) -> tuple[float, float]:
    s, e = float(iv[0]), float(iv[1])
    if not (np.isfinite(s) and np.isfinite(e) and s <= e):
        raise ValidationError(f"malformed {what} interval ({s}, {e})")
    return s, e


def tiou(a: Interval, b: Interval) -> float:
    """Temporal IoU. Zero-measure union (two identical points) gives 0."""
    s1, e1 = _check_interval(a, "first")
    s2, e2 = _check_interval(b, "second")
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    union = (e1 - s1) + (e2 - s2) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iop(pred: Interval, gt: Interval) -> float:
    """Intersection over prediction length; 0 for a zero-length prediction."""
    s1, e1 = _check_interval(pred, "predicted")
    s2, e2 = _check_interval(gt, "ground-truth")
    length = e1 - s1
    if length <= 0.0:
        return 0.0
    inter = max(0.0, min(e1, e2) - max(s1, s2))
    return inter / length


def vote_select(intervals: list[Interval], scores: list[float]) -> list[Interval]:
    """Rank intervals by ascending score; ties keep the original order."""
    if len(intervals) != len(scores):
        raise ValidationError(
            f"got {len(intervals)} intervals but {len(scores)} scores"
        )
    order = sorted(range(len(scores)), key=lambda i: (scores[i], i))
    return [intervals[i] for i in order]


def _best(ranked: list[Interval], gt: Interval, n: int, measure) -> float:
    head = ranked[:n]
    if not head:
        raise ValidationError("empty ranked list")
    return max(measure(iv, gt) for iv in head)


def recall_at(
    ranked_lists: list[list[Interval]],
    gts: list[Interval],
    n: int,
    threshold: float,
    measure=tiou,
) -> float:
    """Fraction of samples whose best of the first n proposals clears threshold."""
    if len(ranked_lists) != len(gts) or not gts:
        raise ValidationError("ranked lists and ground truths must align and be non-empty")
    hits = sum(
        1 for ranked, gt in zip(ranked_lists, gts) if _best(ranked, gt, n, measure) >= threshold
    )
    return hits / len(gts)


def mean_best(
    ranked_lists: list[list[Interval]], gts: list[Interval], n: int, measure=tiou
) -> float:
    """Mean over samples of the best overlap among the first n proposals."""
    if len(ranked_lists) != len(gts) or not gts:
        raise ValidationError("ranked lists and ground truths must align and be non-empty")
    return float(
        np.mean([_best(ranked, gt, n, measure) for ranked, gt in zip(ranked_lists, gts)])
    )


def acc_qa(flags: list[bool]) -> float:
    if not flags:
        raise ValidationError("no answer flags")
    return sum(bool(f) for f in flags) / len(flags)


def acc_gqa(
    ranked_lists: list[list[Interval]],
    gts: list[Interval],
    flags: list[bool],
    iop_threshold: float = 0.5,
) -> float:
    """Grounded answer accuracy: correct answer AND top-1 IoP above threshold."""
    if not (len(ranked_lists) == len(gts) == len(flags)) or not flags:
        raise ValidationError("ranked lists, ground truths, and flags must align")
    hits = 0
    for ranked, gt, flag in zip(ranked_lists, gts, flags):
        if bool(flag) and iop(ranked[0], gt) >= iop_threshold:
            hits += 1
    return hits / len(flags)


@dataclass
class EvalConfig:
    recall_ns: tuple[int, ...] = (1, 5)
    iou_thresholds: tuple[float, ...] = (0.1, 0.3, 0.5, 0.7)
    iop_thresholds: tuple[float, ...] = (0.3, 0.5)

    def validate(self) -> None:
        if not self.recall_ns or any(n < 1 for n in self.recall_ns):
            raise ValidationError(f"recall_ns must be positive, got {self.recall_ns}")
        for name in ("iou_thresholds", "iop_thresholds"):
            ths = getattr(self, name)
            if not ths or any(not 0.0 < t <= 1.0 for t in ths):
                raise ValidationError(f"{name} must lie in (0, 1], got {ths}")


def _fmt(x: float) -> str:
    return f"{x:g}"


@dataclass
class MetricReport:
    """All metrics for one evaluation run; keys are stringified n / thresholds."""

    n_samples: int
    recall_tiou: dict[str, dict[str, float]]
    miou: dict[str, float]
    miop: float
    recall_iop: dict[str, float]
    acc_qa: float | None = None
    acc_gqa: float | None = None

    def validate(self) -> None:
        rates: list[float] = [self.miop]
        for per_n in self.recall_tiou.values():
            rates.extend(per_n.values())
        rates.extend(self.miou.values())
        rates.extend(self.recall_iop.values())
        if self.acc_qa is not None:
            rates.append(self.acc_qa)
        if self.acc_gqa is not None:
            rates.append(self.acc_gqa)
        for r in rates:
            if not (np.isfinite(r) and 0.0 <= r <= 1.0):
                raise ValidationError(f"metric value {r} outside [0, 1]")
        # recall grows with n and shrinks with threshold
        ns = sorted(self.recall_tiou, key=int)
        for lo, hi in zip(ns, ns[1:]):
            for thr in self.recall_tiou[lo]:
                if self.recall_tiou[lo][thr] > self.recall_tiou[hi][thr] + 1e-12:
                    raise ValidationError(f"recall@{lo} exceeds recall@{hi} at tIoU {thr}")
        for per_n in self.recall_tiou.values():
            ths = sorted(per_n, key=float)
            for lo, hi in zip(ths, ths[1:]):
                if per_n[hi] > per_n[lo] + 1e-12:
                    raise ValidationError(f"recall rises with threshold ({lo} -> {hi})")
        if self.acc_qa is not None and self.acc_gqa is not None:
            if self.acc_gqa > self.acc_qa + 1e-12:
                raise ValidationError("acc_gqa exceeds acc_qa")
            key = _fmt(0.5)
            if key in self.recall_iop and self.acc_gqa > self.recall_iop[key] + 1e-12:
                raise ValidationError("acc_gqa exceeds IoP recall at 0.5")

    def to_dict(self) -> dict:
        out = {
            "n_samples": self.n_samples,
            "recall_tiou": self.recall_tiou,
            "miou": self.miou,
            "miop": self.miop,
            "recall_iop": self.recall_iop,
        }
        if self.acc_qa is not None:
            out["acc_qa"] = self.acc_qa
        if self.acc_gqa is not None:
            out["acc_gqa"] = self.acc_gqa
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def format_report(report: MetricReport) -> str:
    lines = [f"samples: {report.n_samples}"]
    ths = sorted(next(iter(report.recall_tiou.values())), key=float)
    header = "      " + "".join(f"  tIoU>={t:<6}" for t in ths) + "  mIoU"
    lines.append(header)
    for n in sorted(report.recall_tiou, key=int):
        row = report.recall_tiou[n]
        cells = "".join(f"  {100 * row[t]:10.2f}" for t in ths)
        lines.append(f"R@{n:<4}{cells}  {100 * report.miou[n]:6.2f}")
    iop_cells = ", ".join(
        f"IoP>={t}: {100 * v:.2f}" for t, v in sorted(report.recall_iop.items(), key=lambda kv: float(kv[0]))
    )
    lines.append(f"top-1 mIoP: {100 * report.miop:.2f}  ({iop_cells})")
    if report.acc_qa is not None:
        lines.append(f"acc_qa: {100 * report.acc_qa:.2f}")
    if report.acc_gqa is not None:
        lines.append(f"acc_gqa: {100 * report.acc_gqa:.2f}")
    return "\n".join(lines)


def predict_sample(
    params: ModelParams, sample, base: BaseScorer | None = None
) -> tuple[list[Interval], list[float]]:
    """Ranked intervals and their scores for one sample (best first)."""
    if base is None:
        base = HingeAlignmentBase()
    enc = encode_query(params, sample.word_feats)
    proposals = propose(params, sample.video_feats, enc.hidden)
    scores = [float(base.score(p.pos_feat, p.neg_feat, enc.q)) for p in proposals]
    intervals = [interval_of(p, sample.duration) for p in proposals]
    order = sorted(range(len(scores)), key=lambda i: (scores[i], i))
    return [intervals[i] for i in order], [scores[i] for i in order]


def predict_corpus(
    params: ModelParams, corpus: Corpus, base: BaseScorer | None = None
) -> list[tuple[list[Interval], list[float]]]:
    return [predict_sample(params, s, base) for s in corpus.samples]


def evaluate_rankings(
    ranked_lists: list[list[Interval]],
    corpus: Corpus,
    config: EvalConfig | None = None,
) -> MetricReport:
    """Score pre-ranked interval lists against the corpus ground truth."""
    if config is None:
        config = EvalConfig()
    config.validate()
    if len(ranked_lists) != len(corpus):
        raise ValidationError(
            f"{len(ranked_lists)} ranked lists for {len(corpus)} samples"
        )
    if not corpus.has_gt():
        missing = [s.sample_id for s in corpus.samples if s.gt_interval is None]
        raise ValidationError(f"samples missing gt intervals: {missing[:5]}")
    gts = [s.gt_interval for s in corpus.samples]
    recall_grid = {
        str(n): {_fmt(t): recall_at(ranked_lists, gts, n, t) for t in config.iou_thresholds}
        for n in config.recall_ns
    }
    miou = {str(n): mean_best(ranked_lists, gts, n) for n in config.recall_ns}
    report = MetricReport(
        n_samples=len(corpus),
        recall_tiou=recall_grid,
        miou=miou,
        miop=mean_best(ranked_lists, gts, 1, measure=iop),
        recall_iop={
            _fmt(t): recall_at(ranked_lists, gts, 1, t, measure=iop)
            for t in config.iop_thresholds
        },
    )
    if corpus.has_answers():
        flags = [s.answer_correct for s in corpus.samples]
        report.acc_qa = acc_qa(flags)
        report.acc_gqa = acc_gqa(ranked_lists, gts, flags)
    report.validate()
    return report


def evaluate(
    corpus: Corpus,
    params: ModelParams,
    config: EvalConfig | None = None,
    base: BaseScorer | None = None,
) -> MetricReport:
    """Run the model over the corpus and score it. Touches no mining state."""
    ranked = [pred[0] for pred in predict_corpus(params, corpus, base)]
    return evaluate_rankings(ranked, corpus, config)


def write_predictions(
    path: str | Path,
    corpus: Corpus,
    predictions: list[tuple[list[Interval], list[float]]],
) -> None:
    """One JSONL record per sample: id plus ranked {start, end, score} triples."""
    if len(predictions) != len(corpus):
        raise ValidationError("predictions do not align with corpus")
    with open(path, "w", encoding="utf-8") as fh:
        for sample, (intervals, scores) in zip(corpus.samples, predictions):
            rec = {
                "id": sample.sample_id,
                "proposals": [
                    {"start": iv[0], "end": iv[1], "score": sc}
                    for iv, sc in zip(intervals, scores)
                ],
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_predictions(path: str | Path, corpus: Corpus) -> list[list[Interval]]:
    """Read a predictions file back as ranked lists aligned to corpus order."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing predictions file: {path}")
    by_id: dict[int, list[Interval]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                sid = int(rec["id"])
                ranked = [(float(p["start"]), float(p["end"])) for p in rec["proposals"]]
            except (KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
            if sid in by_id:
                raise FormatError(f"{path}:{lineno}: duplicate sample id {sid}")
            if not ranked:
                raise FormatError(f"{path}:{lineno}: empty proposal list")
            by_id[sid] = ranked
    missing = [s.sample_id for s in corpus.samples if s.sample_id not in by_id]
    if missing:
        raise FormatError(f"predictions missing sample ids: {missing[:5]}")
    return [by_id[s.sample_id] for s in corpus.samples]
