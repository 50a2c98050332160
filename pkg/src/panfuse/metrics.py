"""Panoptic quality (PQ), segmentation quality (SQ) and recognition quality (RQ)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ID_DIVISOR,
    VOID_ID,
    ClassCatalog,
    PanopticMap,
    Segment,
    ValidationError,
)

# pairs two packed ids into one key; packed ids stay below class_max * 1000 + 1000
_OFFSET = 1 << 32


@dataclass
class ClassStats:
    iou_sum: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ClassStats") -> "ClassStats":
        return ClassStats(self.iou_sum + other.iou_sum, self.tp + other.tp,
                          self.fp + other.fp, self.fn + other.fn)


@dataclass
class PqStats:
    per_class: dict[int, ClassStats] = field(default_factory=dict)

    def __getitem__(self, class_id: int) -> ClassStats:
        return self.per_class.setdefault(class_id, ClassStats())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PqStats):
            return NotImplemented
        keys = set(self.per_class) | set(other.per_class)
        zero = ClassStats()
        return all(self.per_class.get(k, zero) == other.per_class.get(k, zero) for k in keys)


@dataclass(frozen=True)
class Match:
    pred: Segment
    gt: Segment
    iou: float


@dataclass(frozen=True)
class MatchResult:
    matches: list[Match]
    unmatched_pred: list[Segment]
    unmatched_gt: list[Segment]
    # pred segment id -> pixels of it lying on gt void
    pred_void_overlap: dict[int, int]


def match_segments(pred: PanopticMap, gt: PanopticMap, catalog: ClassCatalog) -> MatchResult:
    """Pair same-class segments whose IoU exceeds 0.5.

    Pixels that are void in the ground truth are taken out of the predicted
    segment areas before computing IoU. Since IoU > 0.5 admits at most one
    partner per segment, matching is unambiguous.
    """
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    for seg in (*pred.segments, *gt.segments):
        if seg.class_id not in catalog:
            raise ValidationError(f"segment class {seg.class_id} not in catalog")

    joint = gt.segment_ids().ravel() * _OFFSET + pred.segment_ids().ravel()
    keys, counts = np.unique(joint, return_counts=True)
    inter: dict[tuple[int, int], int] = {}
    void_overlap: dict[int, int] = {}
    for key, n in zip(keys.tolist(), counts.tolist()):
        g, p = divmod(key, _OFFSET)
        if p == VOID_ID:
            continue
        if g == VOID_ID:
            void_overlap[p] = n
        elif g // ID_DIVISOR == p // ID_DIVISOR:
            inter[(g, p)] = n

    pred_by_id = {s.segment_id: s for s in pred.segments}
    gt_by_id = {s.segment_id: s for s in gt.segments}
    matches = []
    matched_pred, matched_gt = set(), set()
    for (g, p), n in sorted(inter.items()):
        ps, gs = pred_by_id[p], gt_by_id[g]
        union = ps.area - void_overlap.get(p, 0) + gs.area - n
        iou = n / union
        if iou > 0.5:
            matches.append(Match(ps, gs, iou))
            matched_pred.add(p)
            matched_gt.add(g)
    return MatchResult(
        matches,
        [s for s in pred.segments if s.segment_id not in matched_pred],
        [s for s in gt.segments if s.segment_id not in matched_gt],
        void_overlap,
    )


def accumulate(pred: PanopticMap, gt: PanopticMap, catalog: ClassCatalog) -> PqStats:
    result = match_segments(pred, gt, catalog)
    stats = PqStats()
    for m in result.matches:
        s = stats[m.gt.class_id]
        s.tp += 1
        s.iou_sum += m.iou
    for seg in result.unmatched_gt:
        stats[seg.class_id].fn += 1
    for seg in result.unmatched_pred:
        # mostly-void predictions are ignored rather than penalised
        if result.pred_void_overlap.get(seg.segment_id, 0) / seg.area > 0.5:
            continue
        stats[seg.class_id].fp += 1
    return stats


def merge_stats(a: PqStats, b: PqStats) -> PqStats:
    out = PqStats()
    for k in sorted(set(a.per_class) | set(b.per_class)):
        out.per_class[k] = a.per_class.get(k, ClassStats()) + b.per_class.get(k, ClassStats())
    return out


def tree_reduce(stats: list[PqStats]) -> PqStats:
    """Pairwise reduction in a fixed shape that depends only on ``len(stats)``."""
    if not stats:
        return PqStats()
    level = list(stats)
    while len(level) > 1:
        nxt = [merge_stats(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


@dataclass(frozen=True)
class ClassScore:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    """Dataset scores on a 0-100 scale plus per-class breakdown."""

    pq: float
    sq: float
    rq: float
    pq_things: float
    pq_stuff: float
    per_class: dict[int, ClassScore]
    n_classes: int = 0

    def to_dict(self) -> dict:
        return {
            "pq": self.pq,
            "sq": self.sq,
            "rq": self.rq,
            "pq_things": self.pq_things,
            "pq_stuff": self.pq_stuff,
            "per_class": {
                str(k): {"pq": v.pq, "sq": v.sq, "rq": v.rq, "tp": v.tp, "fp": v.fp, "fn": v.fn}
                for k, v in sorted(self.per_class.items())
            },
            "n_classes": self.n_classes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _mean(xs: list[float]) -> float:
    return sum(xs) / len(xs) if xs else 0.0


def report(stats: PqStats, catalog: ClassCatalog) -> MetricsReport:
    per_class = {}
    for cid in sorted(stats.per_class):
        s = stats.per_class[cid]
        if s.tp + s.fp + s.fn == 0:
            continue
        sq = 100.0 * s.iou_sum / s.tp if s.tp else 0.0
        rq = 100.0 * s.tp / (s.tp + 0.5 * s.fp + 0.5 * s.fn)
        per_class[cid] = ClassScore(sq * rq / 100.0, sq, rq, s.tp, s.fp, s.fn)

    def mean_of(attr, ids):
        return _mean([getattr(per_class[c], attr) for c in ids])

    ids = list(per_class)
    things = [c for c in ids if catalog.is_thing(c)]
    stuff = [c for c in ids if catalog.is_stuff(c)]
    return MetricsReport(
        pq=mean_of("pq", ids),
        sq=mean_of("sq", ids),
        rq=mean_of("rq", ids),
        pq_things=mean_of("pq", things),
        pq_stuff=mean_of("pq", stuff),
        per_class=per_class,
        n_classes=len(ids),
    )


def evaluate(pairs, catalog: ClassCatalog) -> MetricsReport:
    """Convenience: accumulate over (pred, gt) pairs and report."""
    return report(tree_reduce([accumulate(p, g, catalog) for p, g in pairs]), catalog)
