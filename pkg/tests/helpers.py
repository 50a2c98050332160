import numpy as np

from panfuse.core import BoundingBox, InstanceDetection, InstanceSet, SemanticScoreMap

ROAD, BUILDING, SKY = 7, 11, 23
PERSON, CAR = 24, 26


def score_map(pixels, channel_order):
    """Build a SemanticScoreMap from a nested list of per-pixel score tuples."""
    return SemanticScoreMap(np.asarray(pixels, dtype=np.float64), tuple(channel_order))


def one_hot(labels, channel_order):
    labels = np.asarray(labels)
    data = np.zeros(labels.shape + (len(channel_order),))
    for k, cid in enumerate(channel_order):
        data[..., k] = labels == cid
    return SemanticScoreMap(data, tuple(channel_order))


def detection(class_id, confidence, box, mask=None):
    box = BoundingBox(*box)
    if mask is None:
        mask = np.ones(box.shape)
    return InstanceDetection(class_id, confidence, box, np.asarray(mask, dtype=np.float64))


def instance_set(h, w, *dets):
    return InstanceSet(h, w, tuple(dets))
