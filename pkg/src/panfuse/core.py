"""Domain types, segment-id packing and elementary per-pixel transforms."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

VOID_ID = 0
ID_DIVISOR = 1000
MAX_INSTANCES = ID_DIVISOR - 1

# tolerance used to recognise a map that already holds per-pixel distributions
_DISTRIBUTION_ATOL = 1e-6


class PanfuseError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PanfuseError, ValueError):
    """Input violates a documented precondition."""


class ConfigurationError(ValidationError):
    """A catalog or config cannot support the requested operation."""


class CapacityError(ValidationError):
    """Too many instances of one class to pack into a segment id."""


class FormatError(PanfuseError):
    """An on-disk file is malformed."""


class ClassKind(str, enum.Enum):
    THING = "thing"
    STUFF = "stuff"


@dataclass(frozen=True)
class ClassInfo:
    id: int
    name: str
    kind: ClassKind


@dataclass(frozen=True)
class ClassCatalog:
    """The label universe. Class ids are strictly positive; 0 is void."""

    classes: tuple[ClassInfo, ...]
    void_id: int = VOID_ID

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.void_id != VOID_ID:
            raise ValidationError(f"void_id must be {VOID_ID}, got {self.void_id}")
        seen = set()
        for c in self.classes:
            if not isinstance(c.id, (int, np.integer)) or c.id <= 0:
                raise ValidationError(f"class id must be a positive integer, got {c.id!r}")
            if c.id in seen:
                raise ValidationError(f"duplicate class id {c.id}")
            seen.add(c.id)
        object.__setattr__(self, "_by_id", {c.id: c for c in self.classes})

    @classmethod
    def from_dict(cls, doc: dict) -> "ClassCatalog":
        try:
            classes = tuple(
                ClassInfo(int(c["id"]), str(c["name"]), ClassKind(c["kind"]))
                for c in doc["classes"]
            )
            return cls(classes, int(doc.get("void_id", VOID_ID)))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise ValidationError(f"malformed catalog: {e}") from e

    def to_dict(self) -> dict:
        return {
            "void_id": self.void_id,
            "classes": [{"id": c.id, "name": c.name, "kind": c.kind.value} for c in self.classes],
        }

    def __contains__(self, class_id) -> bool:
        return class_id in self._by_id

    def __getitem__(self, class_id: int) -> ClassInfo:
        try:
            return self._by_id[class_id]
        except KeyError:
            raise ValidationError(f"class id {class_id} not in catalog") from None

    def __len__(self) -> int:
        return len(self.classes)

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.classes]

    @property
    def thing_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.kind is ClassKind.THING]

    @property
    def stuff_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.kind is ClassKind.STUFF]

    def is_thing(self, class_id: int) -> bool:
        return self[class_id].kind is ClassKind.THING

    def is_stuff(self, class_id: int) -> bool:
        return self[class_id].kind is ClassKind.STUFF

    def kind_lut(self) -> np.ndarray:
        """Lookup table indexed by class id: 0 void/unknown, 1 thing, 2 stuff."""
        lut = np.zeros(max(self.ids, default=0) + 1, dtype=np.int8)
        for c in self.classes:
            lut[c.id] = 1 if c.kind is ClassKind.THING else 2
        return lut


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with inclusive pixel corners."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if self.x0 > self.x1 or self.y0 > self.y1 or self.x0 < 0 or self.y0 < 0:
            raise ValidationError(f"degenerate box {self.as_list()}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0 + 1

    @property
    def height(self) -> int:
        return self.y1 - self.y0 + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1 + 1), slice(self.x0, self.x1 + 1)

    def within(self, height: int, width: int) -> bool:
        return self.x1 < width and self.y1 < height

    def union(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.x0, other.x0), min(self.y0, other.y0),
            max(self.x1, other.x1), max(self.y1, other.y1),
        )

    def contains(self, other: "BoundingBox") -> bool:
        return (self.x0 <= other.x0 and self.y0 <= other.y0
                and self.x1 >= other.x1 and self.y1 >= other.y1)

    def as_list(self) -> list[int]:
        return [self.x0, self.y0, self.x1, self.y1]

    @classmethod
    def from_list(cls, xs: Sequence[int]) -> "BoundingBox":
        if len(xs) != 4:
            raise ValidationError(f"box needs 4 coordinates, got {list(xs)}")
        return cls(*(int(v) for v in xs))


@dataclass(frozen=True, eq=False)
class InstanceDetection:
    class_id: int
    confidence: float
    box: BoundingBox
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=np.float64)
        if mask.shape != self.box.shape:
            raise ValidationError(
                f"mask shape {mask.shape} does not match box extent {self.box.shape}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
        if not np.all(np.isfinite(mask)) or mask.min(initial=0.0) < 0 or mask.max(initial=0.0) > 1:
            raise ValidationError("mask scores must lie in [0, 1]")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)


@dataclass(frozen=True)
class InstanceSet:
    height: int
    width: int
    detections: tuple[InstanceDetection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))

    def __len__(self) -> int:
        return len(self.detections)

    def validate(self, catalog: ClassCatalog) -> None:
        for i, det in enumerate(self.detections):
            if det.class_id not in catalog or not catalog.is_thing(det.class_id):
                raise ValidationError(f"detection {i}: class {det.class_id} is not a thing class")
            if not det.box.within(self.height, self.width):
                raise ValidationError(
                    f"detection {i}: box {det.box.as_list()} outside {self.height}x{self.width} image")


@dataclass(frozen=True, eq=False)
class SemanticScoreMap:
    """H x W x C per-pixel class scores; ``channel_order[c]`` is the class of channel c."""

    data: np.ndarray
    channel_order: tuple[int, ...]

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValidationError(f"score map must be H x W x C, got shape {data.shape}")
        order = tuple(int(c) for c in self.channel_order)
        if len(order) != data.shape[2]:
            raise ValidationError(
                f"channel_order has {len(order)} entries for {data.shape[2]} channels")
        if len(set(order)) != len(order):
            raise ValidationError("channel_order repeats a class")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_order", order)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def validate(self, catalog: ClassCatalog) -> None:
        for c in self.channel_order:
            if c not in catalog:
                raise ValidationError(f"channel class {c} not in catalog")


@dataclass(frozen=True)
class Segment:
    segment_id: int
    class_id: int
    instance_index: int
    area: int


@dataclass(frozen=True, eq=False)
class PanopticMap:
    """Per-pixel (class_id, instance_index) labels plus derived segment list.

    Build through :meth:`from_labels`, which recomputes ``segments`` from the
    grids so the two can never disagree.
    """

    class_ids: np.ndarray
    instance_ids: np.ndarray
    segments: tuple[Segment, ...] = field(default=())

    @classmethod
    def from_labels(cls, class_ids, instance_ids=None) -> "PanopticMap":
        class_ids = np.ascontiguousarray(class_ids, dtype=np.int32)
        if instance_ids is None:
            instance_ids = np.zeros_like(class_ids)
        instance_ids = np.ascontiguousarray(instance_ids, dtype=np.int32)
        if class_ids.ndim != 2 or class_ids.shape != instance_ids.shape:
            raise ValidationError("class and instance grids must be equal-shaped 2-D arrays")
        if class_ids.min(initial=0) < 0 or instance_ids.min(initial=0) < 0:
            raise ValidationError("negative label")
        if instance_ids.max(initial=0) > MAX_INSTANCES:
            raise CapacityError(f"instance index exceeds {MAX_INSTANCES}")
        if np.any(instance_ids[class_ids == VOID_ID] != 0):
            raise ValidationError("void pixels must carry instance index 0")
        packed = class_ids.astype(np.int64) * ID_DIVISOR + instance_ids
        ids, counts = np.unique(packed, return_counts=True)
        segments = tuple(
            Segment(int(i), int(i) // ID_DIVISOR, int(i) % ID_DIVISOR, int(n))
            for i, n in zip(ids, counts) if i != VOID_ID
        )
        class_ids.setflags(write=False)
        instance_ids.setflags(write=False)
        return cls(class_ids, instance_ids, segments)

    @property
    def height(self) -> int:
        return self.class_ids.shape[0]

    @property
    def width(self) -> int:
        return self.class_ids.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.class_ids.shape

    def segment_ids(self) -> np.ndarray:
        """H x W grid of packed segment ids (0 for void)."""
        return self.class_ids.astype(np.int64) * ID_DIVISOR + self.instance_ids

    def validate(self, catalog: ClassCatalog) -> None:
        lut = catalog.kind_lut()
        if self.class_ids.max(initial=0) >= len(lut):
            raise ValidationError("label grid holds a class id outside the catalog")
        kinds = lut[self.class_ids]
        unknown = (kinds == 0) & (self.class_ids != VOID_ID)
        if unknown.any():
            raise ValidationError("label grid holds a class id outside the catalog")
        if np.any(self.instance_ids[kinds == 2] != 0):
            raise ValidationError("stuff pixels must have instance index 0")
        if np.any(self.instance_ids[kinds == 1] == 0):
            raise ValidationError("thing pixels must have instance index >= 1")

    def to_bytes(self) -> bytes:
        return self.class_ids.tobytes() + self.instance_ids.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, PanopticMap):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.class_ids, other.class_ids)
                and np.array_equal(self.instance_ids, other.instance_ids))

    __hash__ = None


def encode_segment_id(class_id: int, instance_index: int) -> int:
    if instance_index < 0 or class_id < 0:
        raise ValidationError(f"negative label ({class_id}, {instance_index})")
    if instance_index > MAX_INSTANCES:
        raise CapacityError(f"instance index {instance_index} exceeds {MAX_INSTANCES}")
    return class_id * ID_DIVISOR + instance_index


def decode_segment_id(packed: int) -> tuple[int, int]:
    if packed < 0:
        raise ValidationError(f"negative segment id {packed}")
    return packed // ID_DIVISOR, packed % ID_DIVISOR


def is_distribution(data: np.ndarray, atol: float = _DISTRIBUTION_ATOL) -> bool:
    """True if every pixel already holds non-negative scores summing to 1."""
    if data.size == 0:
        return True
    if data.min() < 0:
        return False
    return bool(np.all(np.abs(data.sum(axis=-1) - 1.0) <= atol))


def normalize_scores(scores: SemanticScoreMap) -> SemanticScoreMap:
    """Turn raw scores into per-pixel class probabilities.

    Logits go through a softmax over all channels. A map that is already a
    per-pixel distribution is returned unchanged, which keeps the operation
    idempotent.
    """
    data = scores.data
    if data.size == 0:
        return scores
    sums = data.sum(axis=-1)
    # a finite total implies finite entries; only fall back to the full scan otherwise
    if not np.all(np.isfinite(sums)) and not np.all(np.isfinite(data)):
        raise ValidationError("score map contains non-finite values")
    if np.all(np.abs(sums - 1.0) <= _DISTRIBUTION_ATOL) and data.min() >= 0:
        return scores
    shifted = data - data.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return SemanticScoreMap(shifted, scores.channel_order)


def argmax_map(scores: SemanticScoreMap) -> np.ndarray:
    """Per-pixel class id of the maximal channel; ties go to the lowest channel."""
    if scores.channels < 1:
        raise ValidationError("score map has no channels")
    order = np.asarray(scores.channel_order, dtype=np.int32)
    return order[np.argmax(scores.data, axis=-1)]


def make_catalog(things: Iterable[tuple[int, str]], stuff: Iterable[tuple[int, str]]) -> ClassCatalog:
    """Small convenience for tests and scripts."""
    classes = [ClassInfo(i, n, ClassKind.THING) for i, n in things]
    classes += [ClassInfo(i, n, ClassKind.STUFF) for i, n in stuff]
    return ClassCatalog(tuple(sorted(classes, key=lambda c: c.id)))
