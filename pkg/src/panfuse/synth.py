"""Synthetic scenes and brute-force reference implementations.

Scenes are drawn from a seeded PCG64 generator. Ground truth is a stuff
background of horizontal bands (some split vertically) overlaid with
rectangular and elliptical things. At ``noise=0`` the semantic scores are
one-hot and every instance mask is exact, so fusion must reproduce the
ground truth.

The ``oracle_*`` functions reimplement fusion and PQ with plain per-pixel
loops. They are slow and only meant for differential tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

from .core import (
    VOID_ID,
    BoundingBox,
    ClassCatalog,
    ClassKind,
    InstanceDetection,
    InstanceSet,
    PanfuseError,
    PanopticMap,
    SemanticScoreMap,
    ValidationError,
)
from .fusion import FusionConfig
from .metrics import ClassScore, MetricsReport

SCORE_QUANTUM = 1 << 16
MASK_QUANTUM = 1 << 12
# visible stuff classes in a generated ground truth cover at least this share of the image
MIN_STUFF_FRACTION = Fraction(1, 256)


class GenerationError(PanfuseError):
    """The requested scene cannot be generated."""


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    height: int
    width: int
    n_instances: int
    noise: float = 0.0
    catalog: ClassCatalog | None = None

    def resolved_catalog(self) -> ClassCatalog:
        if self.catalog is not None:
            return self.catalog
        from .profiles import get_profile

        return get_profile("cityscapes").catalog()


@dataclass(frozen=True)
class Scene:
    gt: PanopticMap
    semantic: SemanticScoreMap
    instances: InstanceSet
    catalog: ClassCatalog


def _stuff_background(rng, h, w, stuff_ids):
    grid = np.empty((h, w), dtype=np.int32)
    n_bands = int(rng.integers(2, 5))
    cuts = np.sort(rng.choice(np.arange(1, h), size=min(n_bands - 1, h - 1), replace=False))
    edges = [0, *cuts.tolist(), h]
    for y0, y1 in zip(edges[:-1], edges[1:]):
        grid[y0:y1] = stuff_ids[rng.integers(len(stuff_ids))]
        if w > 1 and rng.random() < 0.4:
            xc = int(rng.integers(1, w))
            grid[y0:y1, xc:] = stuff_ids[rng.integers(len(stuff_ids))]
    return grid


def _thing_shape(rng, h, w):
    bh = int(rng.integers(max(2, h // 16), max(3, h // 4) + 1))
    bw = int(rng.integers(max(2, w // 16), max(3, w // 4) + 1))
    y0 = int(rng.integers(0, h - bh + 1))
    x0 = int(rng.integers(0, w - bw + 1))
    mask = np.zeros((h, w), dtype=bool)
    if rng.random() < 0.5:
        mask[y0:y0 + bh, x0:x0 + bw] = True
    else:
        yy, xx = np.mgrid[0:bh, 0:bw]
        cy, cx = (bh - 1) / 2, (bw - 1) / 2
        ry, rx = bh / 2, bw / 2
        mask[y0:y0 + bh, x0:x0 + bw] = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return mask


def _tight_box(mask):
    ys = np.flatnonzero(mask.any(axis=1))
    xs = np.flatnonzero(mask.any(axis=0))
    return BoundingBox(int(xs[0]), int(ys[0]), int(xs[-1]), int(ys[-1]))


def _jitter(rng, box, noise, h, w):
    if noise == 0:
        return box
    dy = max(1, round(noise * box.height / 2))
    dx = max(1, round(noise * box.width / 2))
    x0, x1 = (box.x0 + int(rng.integers(-dx, dx + 1)), box.x1 + int(rng.integers(-dx, dx + 1)))
    y0, y1 = (box.y0 + int(rng.integers(-dy, dy + 1)), box.y1 + int(rng.integers(-dy, dy + 1)))
    x0, x1 = sorted((min(max(x0, 0), w - 1), min(max(x1, 0), w - 1)))
    y0, y1 = sorted((min(max(y0, 0), h - 1), min(max(y1, 0), h - 1)))
    return BoundingBox(x0, y0, x1, y1)


def _soft_mask(rng, shape_mask, box, noise):
    m = shape_mask.astype(np.float64)
    if noise > 0:
        m = ndimage.gaussian_filter(m, sigma=4.0 * noise, mode="constant")
        m = m + noise * (rng.random(m.shape) - 0.5)
    crop = np.clip(m[box.slices], 0.0, 1.0)
    return np.round(crop * MASK_QUANTUM) / MASK_QUANTUM


def _quantized_scores(rng, labels, channel_order, noise):
    h, w = labels.shape
    c = len(channel_order)
    chan_of = {cid: k for k, cid in enumerate(channel_order)}
    lut = np.zeros(max(channel_order) + 1, dtype=np.intp)
    for cid, k in chan_of.items():
        lut[cid] = k
    p = np.zeros((h, w, c))
    np.put_along_axis(p, lut[labels][..., None], 1.0, axis=-1)
    if noise > 0:
        p += 3.0 * noise * rng.random((h, w, c))
        p /= p.sum(axis=-1, keepdims=True)
    # multiples of 2**-16 that sum to exactly 1 survive a float32 round trip
    q = np.floor(p * SCORE_QUANTUM)
    top = np.argmax(p, axis=-1)[..., None]
    rest = q.sum(axis=-1, keepdims=True) - np.take_along_axis(q, top, axis=-1)
    np.put_along_axis(q, top, SCORE_QUANTUM - rest, axis=-1)
    return q / SCORE_QUANTUM


def generate_scene(spec: SceneSpec) -> Scene:
    """Build a ground-truth panoptic map plus matching branch outputs.

    With ``noise > 0`` the scores get uniform perturbation, boxes jitter,
    masks blur and a few low-confidence spurious detections are added.
    """
    catalog = spec.resolved_catalog()
    h, w, n = spec.height, spec.width, spec.n_instances
    if not 0 <= spec.noise <= 1:
        raise ValidationError(f"noise {spec.noise} outside [0, 1]")
    if n < 0 or n >= 1000:
        raise ValidationError("n_instances must be in [0, 999]")
    if h < 1 or w < 1 or (n > 0 and (h < 4 or w < 4)):
        raise GenerationError(f"cannot place {n} instances in a {h}x{w} image")
    thing_ids, stuff_ids = catalog.thing_ids, catalog.stuff_ids
    if not stuff_ids or (n and not thing_ids):
        raise GenerationError("catalog lacks thing or stuff classes")

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    stuff = _stuff_background(rng, h, w, stuff_ids)

    things = []
    for k in range(n):
        cid = thing_ids[int(rng.integers(len(thing_ids)))]
        conf = float(np.float32(0.55 + 0.45 * rng.random()))
        things.append((cid, conf, _thing_shape(rng, h, w)))

    # later-painted instances win; this mirrors fusion tie-breaks on equal mask scores
    paint_order = sorted(range(n), key=lambda k: (things[k][1], -k))
    owner = np.full((h, w), -1, dtype=np.int32)
    for k in paint_order:
        owner[things[k][2]] = k

    free = owner < 0
    counts = {cid: int(np.count_nonzero(free & (stuff == cid))) for cid in np.unique(stuff).tolist()}
    min_area = math.ceil(MIN_STUFF_FRACTION * h * w)
    keep = [cid for cid, c in counts.items() if c >= min_area]
    if not keep:
        keep = [max(counts, key=lambda cid: (counts[cid], -cid))]
    dominant = max(keep, key=lambda cid: (counts[cid], -cid))
    stuff[~np.isin(stuff, keep)] = dominant

    class_ids = stuff.copy()
    instance_ids = np.zeros((h, w), dtype=np.int32)
    owned = np.bincount(owner[owner >= 0], minlength=n) if n else np.zeros(0, int)
    next_index: dict[int, int] = {}
    for k in sorted(range(n), key=lambda k: (-things[k][1], k)):
        if owned[k] == 0:
            continue
        cid = things[k][0]
        next_index[cid] = next_index.get(cid, 0) + 1
        sel = owner == k
        class_ids[sel] = cid
        instance_ids[sel] = next_index[cid]
    gt = PanopticMap.from_labels(class_ids, instance_ids)

    order = [c.id for c in catalog.classes]
    semantic = SemanticScoreMap(_quantized_scores(rng, class_ids, order, spec.noise), order)

    detections = []
    for cid, conf, shape in things:
        box = _jitter(rng, _tight_box(shape), spec.noise, h, w)
        detections.append(InstanceDetection(cid, conf, box, _soft_mask(rng, shape, box, spec.noise)))
    if spec.noise > 0 and thing_ids:
        for _ in range(int(rng.binomial(max(n, 1), spec.noise))):
            cid = thing_ids[int(rng.integers(len(thing_ids)))]
            shape = _thing_shape(rng, h, w)
            box = _tight_box(shape)
            conf = float(np.float32(0.2 + 0.6 * rng.random()))
            detections.append(InstanceDetection(cid, conf, box, _soft_mask(rng, shape, box, spec.noise)))
    return Scene(gt, semantic, InstanceSet(h, w, tuple(detections)), catalog)


# --------------------------------------------------------------------------
# reference implementations


def _ceil_fraction(f, n_pixels):
    frac = f if isinstance(f, Fraction) else Fraction(f).limit_denominator(1 << 20)
    return -((-frac.numerator * n_pixels) // frac.denominator)


def _first_max(values, candidates):
    """(index, value) of the first maximal entry among ``candidates``."""
    if not candidates:
        return None, None
    k = max(candidates, key=values.__getitem__)
    return k, values[k]


def oracle_fuse(sem: SemanticScoreMap, inst: InstanceSet, catalog: ClassCatalog,
                config: FusionConfig | None = None) -> PanopticMap:
    config = config or FusionConfig()
    h, w, c = sem.data.shape
    order = list(sem.channel_order)
    kind = {cl.id: cl.kind for cl in catalog.classes}
    stuff_ch = [k for k in range(c) if kind[order[k]] is ClassKind.STUFF]
    if not stuff_ch or not catalog.thing_ids:
        raise ValidationError("fusion needs thing and stuff classes")
    all_ch = list(range(c))

    rows = sem.data.tolist()
    is_dist = all(min(px) >= 0 and abs(sum(px) - 1.0) <= 1e-6 for row in rows for px in row)
    if not is_dist:
        for row in rows:
            for x, px in enumerate(row):
                m = max(px)
                e = [math.exp(v - m) for v in px]
                s = sum(e)
                row[x] = [v / s for v in e]

    # semantic branch
    labels = [[VOID_ID] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            px = rows[y][x]
            cid = order[max(all_ch, key=px.__getitem__)]
            if kind[cid] is ClassKind.THING:
                ks, v = _first_max(px, stuff_ch)
                cid = order[ks] if v >= config.alpha else VOID_ID
            labels[y][x] = cid

    counts: dict[int, int] = {}
    for y in range(h):
        for x in range(w):
            if labels[y][x] != VOID_ID:
                counts[labels[y][x]] = counts.get(labels[y][x], 0) + 1
    threshold = _ceil_fraction(config.stuff_fraction, h * w)
    removed = {cid for cid, n in counts.items() if n < threshold}
    surviving_ch = [k for k in stuff_ch if order[k] in counts and order[k] not in removed]
    if removed:
        for y in range(h):
            for x in range(w):
                if labels[y][x] in removed:
                    ks, v = _first_max(rows[y][x], surviving_ch)
                    labels[y][x] = order[ks] if ks is not None and v >= config.alpha else VOID_ID

    # instance branch
    claims: dict[tuple[int, int], list[tuple[float, float, int]]] = {}
    entries = []
    for det in inst.detections:
        if not det.box.within(inst.height, inst.width):
            raise ValidationError("box outside image")
        if det.confidence < config.min_confidence:
            continue
        k = len(entries)
        entries.append(det)
        mask = det.mask.tolist()
        for dy in range(det.box.height):
            for dx in range(det.box.width):
                s = mask[dy][dx]
                if s >= config.mask_bin_threshold and s > 0:
                    claims.setdefault((det.box.y0 + dy, det.box.x0 + dx), []).append(
                        (s, det.confidence, -k))
    owner = {p: -max(cands)[2] for p, cands in claims.items()}

    owned = [0] * len(entries)
    for k in owner.values():
        owned[k] += 1
    ranked = sorted(range(len(entries)), key=lambda k: (-entries[k].confidence, k))
    index_of, per_class = {}, {}
    for k in ranked:
        if owned[k]:
            cid = entries[k].class_id
            per_class[cid] = per_class.get(cid, 0) + 1
            index_of[k] = per_class[cid]

    inst_ids = [[0] * w for _ in range(h)]
    for (y, x), k in owner.items():
        labels[y][x] = entries[k].class_id
        inst_ids[y][x] = index_of[k]
    return PanopticMap.from_labels(np.array(labels, dtype=np.int32),
                                   np.array(inst_ids, dtype=np.int32))


def oracle_pq(pred, gt, catalog: ClassCatalog) -> MetricsReport:
    """Exhaustive-pairing PQ over one (pred, gt) pair or parallel sequences of them."""
    preds = [pred] if isinstance(pred, PanopticMap) else list(pred)
    gts = [gt] if isinstance(gt, PanopticMap) else list(gt)
    if len(preds) != len(gts):
        raise ValidationError("prediction and ground-truth counts differ")

    tot: dict[int, list] = {}  # class -> [iou_sum, tp, fp, fn]
    for p, g in zip(preds, gts):
        if p.shape != g.shape:
            raise ValidationError("shape mismatch")
        pid, gid = p.segment_ids(), g.segment_ids()
        gt_void = gid == VOID_ID
        pmask = {s.segment_id: pid == s.segment_id for s in p.segments}
        gmask = {s.segment_id: gid == s.segment_id for s in g.segments}
        pred_matched, gt_matched = set(), set()
        for ps in p.segments:
            for gs in g.segments:
                if ps.class_id != gs.class_id:
                    continue
                pm, gm = pmask[ps.segment_id], gmask[gs.segment_id]
                inter = int(np.count_nonzero(pm & gm))
                union = int(np.count_nonzero((pm & ~gt_void) | gm))
                iou = inter / union if union else 0.0
                if iou > 0.5:
                    if ps.segment_id in pred_matched or gs.segment_id in gt_matched:
                        raise AssertionError("IoU > 0.5 matched a segment twice")
                    pred_matched.add(ps.segment_id)
                    gt_matched.add(gs.segment_id)
                    acc = tot.setdefault(gs.class_id, [0.0, 0, 0, 0])
                    acc[0] += iou
                    acc[1] += 1
        for gs in g.segments:
            if gs.segment_id not in gt_matched:
                tot.setdefault(gs.class_id, [0.0, 0, 0, 0])[3] += 1
        for ps in p.segments:
            if ps.segment_id in pred_matched:
                continue
            on_void = int(np.count_nonzero(pmask[ps.segment_id] & gt_void))
            if on_void * 2 > ps.area:
                continue
            tot.setdefault(ps.class_id, [0.0, 0, 0, 0])[2] += 1

    per_class = {}
    for cid in sorted(tot):
        iou, tp, fp, fn = tot[cid]
        if tp + fp + fn == 0:
            continue
        denom = tp + fp / 2 + fn / 2
        per_class[cid] = ClassScore(
            pq=100 * iou / denom,
            sq=100 * iou / tp if tp else 0.0,
            rq=100 * tp / denom,
            tp=tp, fp=fp, fn=fn,
        )

    def avg(vals):
        vals = list(vals)
        return sum(vals) / len(vals) if vals else 0.0

    things = [c for c in per_class if catalog[c].kind is ClassKind.THING]
    stuff = [c for c in per_class if catalog[c].kind is ClassKind.STUFF]
    return MetricsReport(
        pq=avg(v.pq for v in per_class.values()),
        sq=avg(v.sq for v in per_class.values()),
        rq=avg(v.rq for v in per_class.values()),
        pq_things=avg(per_class[c].pq for c in things),
        pq_stuff=avg(per_class[c].pq for c in stuff),
        per_class=per_class,
        n_classes=len(per_class),
    )
