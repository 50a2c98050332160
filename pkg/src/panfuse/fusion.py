"""Merge semantic and instance predictions into a panoptic map.

Two branches feed the final overlay:

* instance branch: paste box-local masks into the image frame, then give
  every contested pixel to the mask scoring highest there;
* semantic branch: argmax, replace thing labels by a sufficiently likely
  stuff class (or void), then drop stuff classes covering too few pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from .core import (
    MAX_INSTANCES,
    VOID_ID,
    BoundingBox,
    CapacityError,
    ClassCatalog,
    ConfigurationError,
    InstanceSet,
    PanopticMap,
    SemanticScoreMap,
    ValidationError,
    argmax_map,
    normalize_scores,
)

Number = Union[float, Fraction]

NO_INSTANCE = -1


@dataclass(frozen=True)
class FusionConfig:
    """Knobs of the merging heuristics.

    ``alpha`` is the minimum stuff probability for a stuff label to replace a
    thing (or removed-stuff) pixel. ``stuff_fraction`` sets the minimum stuff
    class size as a fraction of the image area.
    """

    alpha: float = 0.25
    stuff_fraction: Number = Fraction(1, 512)
    mask_bin_threshold: float = 0.5
    min_confidence: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "stuff_fraction", "mask_bin_threshold", "min_confidence"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValidationError(f"{name}={v} outside [0, 1]")

    @classmethod
    def from_profile(cls, name: str, **overrides) -> "FusionConfig":
        from .profiles import get_profile

        prof = get_profile(name)
        kw = dict(alpha=prof.alpha, stuff_fraction=prof.stuff_fraction)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)


def stuff_threshold(stuff_fraction: Number, height: int, width: int) -> int:
    """Minimum pixel count for a stuff class to survive: ceil(f * H * W).

    Float fractions are snapped to the nearest simple rational first so that
    e.g. 0.1 * 30 yields 3 rather than 4.
    """
    if isinstance(stuff_fraction, Fraction):
        frac = stuff_fraction
    else:
        frac = Fraction(stuff_fraction).limit_denominator(1 << 20)
    return math.ceil(frac * height * width)


@dataclass(frozen=True, eq=False)
class PastedEntry:
    detection_index: int
    class_id: int
    confidence: float
    box: BoundingBox
    member: np.ndarray  # box-local bool, True where the mask claims the pixel
    scores: np.ndarray  # box-local raw mask scores

    def pixels(self) -> list[tuple[int, int, float]]:
        """Claimed pixels as (y, x, score) in the full-image frame."""
        ys, xs = np.nonzero(self.member)
        return [(int(y) + self.box.y0, int(x) + self.box.x0, float(self.scores[y, x]))
                for y, x in zip(ys, xs)]

    def layer(self, height: int, width: int) -> np.ndarray:
        """Dense full-image score layer, 0 where the entry does not claim."""
        out = np.zeros((height, width))
        out[self.box.slices] = np.where(self.member, self.scores, 0.0)
        return out


@dataclass(frozen=True)
class PastedInstances:
    height: int
    width: int
    entries: tuple[PastedEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def paste_masks(instances: InstanceSet, config: FusionConfig) -> PastedInstances:
    entries = []
    for i, det in enumerate(instances.detections):
        if not det.box.within(instances.height, instances.width):
            raise ValidationError(
                f"detection {i}: box {det.box.as_list()} outside "
                f"{instances.height}x{instances.width} image")
        if det.confidence < config.min_confidence:
            continue
        member = (det.mask >= config.mask_bin_threshold) & (det.mask > 0)
        entries.append(PastedEntry(i, det.class_id, det.confidence, det.box, member, det.mask))
    return PastedInstances(instances.height, instances.width, tuple(entries))


def resolve_overlaps(pasted: PastedInstances) -> np.ndarray:
    """Assign each claimed pixel to exactly one entry.

    Returns an H x W int32 grid of entry indices, ``NO_INSTANCE`` where no
    entry claims the pixel. The winner maximises (pixel score, detection
    confidence, -entry index).
    """
    shape = (pasted.height, pasted.width)
    owner = np.full(shape, NO_INSTANCE, dtype=np.int32)
    best_score = np.full(shape, -np.inf)
    best_conf = np.full(shape, -np.inf)
    for k, e in enumerate(pasted.entries):
        sl = e.box.slices
        bs, bc = best_score[sl], best_conf[sl]
        s = e.scores
        wins = e.member & ((s > bs) | ((s == bs) & (e.confidence > bc)))
        bs[wins] = s[wins]
        bc[wins] = e.confidence
        owner[sl][wins] = k
    return owner


def _stuff_channels(scores: SemanticScoreMap, catalog: ClassCatalog) -> np.ndarray:
    idx = [c for c, cid in enumerate(scores.channel_order) if catalog.is_stuff(cid)]
    if not catalog.stuff_ids or not idx:
        raise ConfigurationError("fusion needs at least one stuff class")
    return np.asarray(idx, dtype=np.intp)


def _best_among(scores: np.ndarray, channels: np.ndarray, channel_order: np.ndarray):
    """Highest score and its class over ``channels`` for rows of ``scores`` (N x C)."""
    sub = scores[:, channels]
    k = np.argmax(sub, axis=1)
    return sub[np.arange(len(k)), k], channel_order[channels[k]]


def suppress_things(scores: SemanticScoreMap, catalog: ClassCatalog,
                    config: FusionConfig, labels: np.ndarray | None = None) -> np.ndarray:
    """Replace thing labels by the best stuff class if it scores >= alpha, else void.

    ``scores`` must already be normalised. ``labels`` may pass a precomputed
    argmax grid.
    """
    stuff_ch = _stuff_channels(scores, catalog)
    order = np.asarray(scores.channel_order, dtype=np.int32)
    if labels is None:
        labels = argmax_map(scores)
    out = labels.copy()
    lut = catalog.kind_lut()
    thing_px = lut[labels] == 1
    if thing_px.any():
        best, cls = _best_among(scores.data[thing_px], stuff_ch, order)
        out[thing_px] = np.where(best >= config.alpha, cls, VOID_ID)
    return out


def remove_small_stuff(stuff_grid: np.ndarray, scores: SemanticScoreMap,
                       catalog: ClassCatalog, config: FusionConfig) -> np.ndarray:
    """Drop stuff classes covering fewer than ceil(f * H * W) pixels.

    Counts are taken once and all small classes are removed together. Their
    pixels move to the best-scoring surviving stuff class when it reaches
    alpha, otherwise to void.
    """
    h, w = stuff_grid.shape
    threshold = stuff_threshold(config.stuff_fraction, h, w)
    counts = np.bincount(stuff_grid.ravel())
    present = np.nonzero(counts)[0]
    present = present[present != VOID_ID]
    small = present[counts[present] < threshold]
    if len(small) == 0:
        return stuff_grid
    survivors = set(int(c) for c in present[counts[present] >= threshold])
    order = np.asarray(scores.channel_order, dtype=np.int32)
    surv_ch = np.asarray([c for c, cid in enumerate(order) if int(cid) in survivors], dtype=np.intp)

    out = stuff_grid.copy()
    removed = np.isin(stuff_grid, small)
    if len(surv_ch) == 0:
        out[removed] = VOID_ID
        return out
    best, cls = _best_among(scores.data[removed], surv_ch, order)
    out[removed] = np.where(best >= config.alpha, cls, VOID_ID)
    return out


def overlay(stuff_grid: np.ndarray, owner: np.ndarray, pasted: PastedInstances,
            catalog: ClassCatalog) -> PanopticMap:
    """Paint owned pixels with their instance over the stuff/void grid.

    Instance indices run 1, 2, ... per class in descending confidence (ties
    keep entry order); entries that own no pixel get no index.
    """
    if stuff_grid.shape != owner.shape:
        raise ValidationError("stuff grid and instance assignment differ in shape")
    class_ids = stuff_grid.astype(np.int32, copy=True)
    instance_ids = np.zeros_like(class_ids)
    n = len(pasted.entries)
    if n:
        owned = np.bincount(owner[owner >= 0], minlength=n)
        ranked = sorted(range(n), key=lambda k: (-pasted.entries[k].confidence, k))
        next_index: dict[int, int] = {}
        entry_class = np.zeros(n, dtype=np.int32)
        entry_index = np.zeros(n, dtype=np.int32)
        for k in ranked:
            if owned[k] == 0:
                continue
            cid = pasted.entries[k].class_id
            idx = next_index.get(cid, 0) + 1
            if idx > MAX_INSTANCES:
                raise CapacityError(f"more than {MAX_INSTANCES} instances of class {cid}")
            next_index[cid] = idx
            entry_class[k] = cid
            entry_index[k] = idx
        mask = owner >= 0
        class_ids[mask] = entry_class[owner[mask]]
        instance_ids[mask] = entry_index[owner[mask]]
    return PanopticMap.from_labels(class_ids, instance_ids)


def fuse(scores: SemanticScoreMap, instances: InstanceSet, catalog: ClassCatalog,
         config: FusionConfig | None = None) -> PanopticMap:
    config = config or FusionConfig()
    if not catalog.thing_ids or not catalog.stuff_ids:
        raise ConfigurationError("fusion needs at least one thing and one stuff class")
    if (scores.height, scores.width) != (instances.height, instances.width):
        raise ValidationError(
            f"score map is {scores.height}x{scores.width} but instances are "
            f"{instances.height}x{instances.width}")
    scores.validate(catalog)
    instances.validate(catalog)

    probs = normalize_scores(scores)
    pasted = paste_masks(instances, config)
    owner = resolve_overlaps(pasted)

    stuff = suppress_things(probs, catalog, config, labels=argmax_map(probs))
    stuff = remove_small_stuff(stuff, probs, catalog, config)
    return overlay(stuff, owner, pasted, catalog)
