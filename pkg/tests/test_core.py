import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from panfuse.core import (
    BoundingBox,
    CapacityError,
    ClassCatalog,
    ClassInfo,
    ClassKind,
    InstanceDetection,
    PanopticMap,
    SemanticScoreMap,
    ValidationError,
    argmax_map,
    decode_segment_id,
    encode_segment_id,
    normalize_scores,
)
from helpers import CAR, PERSON, ROAD, SKY, score_map


@pytest.mark.parametrize("cls, idx, packed", [(26, 3, 26003), (7, 0, 7000), (0, 0, 0)])
def test_encode_examples(cls, idx, packed):
    assert encode_segment_id(cls, idx) == packed
    assert decode_segment_id(packed) == (cls, idx)


def test_decode_edge():
    assert decode_segment_id(999) == (0, 999)


def test_encode_capacity():
    with pytest.raises(CapacityError):
        encode_segment_id(26, 1000)


@given(st.integers(0, 250), st.integers(0, 999))
def test_encode_roundtrip(cls, idx):
    assert decode_segment_id(encode_segment_id(cls, idx)) == (cls, idx)


def test_catalog_rejects_void_and_duplicates():
    with pytest.raises(ValidationError):
        ClassCatalog((ClassInfo(0, "void", ClassKind.STUFF),))
    with pytest.raises(ValidationError):
        ClassCatalog((ClassInfo(3, "a", ClassKind.STUFF), ClassInfo(3, "b", ClassKind.THING)))


def test_catalog_dict_roundtrip(catalog):
    assert ClassCatalog.from_dict(catalog.to_dict()) == catalog
    assert catalog.thing_ids == [PERSON, CAR]
    assert catalog.is_stuff(ROAD)


def test_normalize_symmetric():
    out = normalize_scores(score_map([[[0.0, 0.0]]], (ROAD, CAR)))
    np.testing.assert_allclose(out.data[0, 0], [0.5, 0.5], atol=1e-12)


def test_normalize_closed_form():
    # softmax(ln 3, 0) = (3/4, 1/4)
    out = normalize_scores(score_map([[[math.log(3), 0.0]]], (ROAD, CAR)))
    np.testing.assert_allclose(out.data[0, 0], [0.75, 0.25], atol=1e-12)


def test_normalize_rejects_nonfinite():
    with pytest.raises(ValidationError):
        normalize_scores(score_map([[[np.nan, 0.0]]], (ROAD, CAR)))


def test_normalize_preserves_argmax_random_pixels():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=3.0, size=(1, 1000, 5))
    sm = SemanticScoreMap(logits, (1, 2, 3, 4, 5))
    out = normalize_scores(sm)
    assert np.array_equal(argmax_map(out), argmax_map(sm))
    np.testing.assert_allclose(out.data.sum(-1), 1.0, atol=1e-6)
    assert out.data.min() >= 0


# logits on a 1/8 grid: distinct values stay distinct after exp
logit_maps = hnp.arrays(np.float64, hnp.array_shapes(min_dims=3, max_dims=3, max_side=6),
                        elements=st.integers(-80, 80).map(lambda v: v / 8))


@given(logit_maps)
def test_normalize_properties(data):
    sm = SemanticScoreMap(data, tuple(range(1, data.shape[2] + 1)))
    once = normalize_scores(sm)
    twice = normalize_scores(once)
    np.testing.assert_allclose(once.data.sum(-1), 1.0, atol=1e-6)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-6)
    assert np.array_equal(argmax_map(once), argmax_map(sm))


def test_argmax_examples():
    assert argmax_map(score_map([[[0.9, 0.1]]], (ROAD, CAR)))[0, 0] == ROAD
    assert argmax_map(score_map([[[0.5, 0.5]]], (ROAD, CAR)))[0, 0] == ROAD
    grid = [[[1, 0, 0, 0], [0, 1, 0, 0]], [[0, 0, 1, 0], [0, 0, 0, 1]]]
    out = argmax_map(score_map(grid, (ROAD, SKY, PERSON, CAR)))
    assert out.tolist() == [[ROAD, SKY], [PERSON, CAR]]


def test_box_and_detection_invariants():
    b = BoundingBox(2, 1, 4, 3)
    assert b.shape == (3, 3)
    assert b.union(BoundingBox(0, 2, 3, 6)) == BoundingBox(0, 1, 4, 6)
    with pytest.raises(ValidationError):
        BoundingBox(3, 0, 2, 0)
    with pytest.raises(ValidationError):
        InstanceDetection(CAR, 0.9, b, np.ones((2, 3)))
    with pytest.raises(ValidationError):
        InstanceDetection(CAR, 1.5, b, np.ones((3, 3)))


def test_panoptic_map_segments(catalog):
    cls = np.array([[ROAD, ROAD, CAR], [0, CAR, CAR]])
    ins = np.array([[0, 0, 1], [0, 2, 2]])
    pm = PanopticMap.from_labels(cls, ins)
    assert [(s.segment_id, s.area) for s in pm.segments] == [(7000, 2), (26001, 1), (26002, 2)]
    pm.validate(catalog)


def test_panoptic_map_validation(catalog):
    with pytest.raises(ValidationError):
        PanopticMap.from_labels([[0]], [[1]])
    with pytest.raises(ValidationError):
        PanopticMap.from_labels([[ROAD]], [[1]]).validate(catalog)
    with pytest.raises(ValidationError):
        PanopticMap.from_labels([[CAR]], [[0]]).validate(catalog)
    with pytest.raises(ValidationError):
        PanopticMap.from_labels([[99]]).validate(catalog)
