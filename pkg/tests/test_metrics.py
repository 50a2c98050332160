import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from panfuse.core import VOID_ID, PanopticMap, ValidationError
from panfuse.metrics import (
    ClassStats,
    PqStats,
    accumulate,
    match_segments,
    merge_stats,
    report,
    tree_reduce,
)
from panfuse.synth import oracle_pq
from helpers import BUILDING, CAR, PERSON, ROAD, SKY


def strip(h, w, spans):
    """Map from (class, index, x0, x1) column spans over all rows; rest void."""
    cls = np.zeros((h, w), np.int32)
    ins = np.zeros((h, w), np.int32)
    for c, i, x0, x1 in spans:
        cls[:, x0:x1] = c
        ins[:, x0:x1] = i
    return PanopticMap.from_labels(cls, ins)


def test_identity_three_segments(catalog):
    gt = strip(1, 30, [(ROAD, 0, 0, 10), (CAR, 1, 10, 20), (CAR, 2, 20, 30)])
    res = match_segments(gt, gt, catalog)
    assert len(res.matches) == 3 and all(m.iou == 1.0 for m in res.matches)
    assert not res.unmatched_pred and not res.unmatched_gt


def test_low_iou_not_matched(catalog):
    # gt car 10 px, pred car 10 px sharing 6: IoU = 6 / 14
    gt = strip(1, 30, [(ROAD, 0, 0, 30), (CAR, 1, 10, 20)])
    pred = strip(1, 30, [(ROAD, 0, 0, 30), (CAR, 1, 14, 24)])
    res = match_segments(pred, gt, catalog)
    assert [m.pred.class_id for m in res.matches] == [ROAD]
    road_iou = res.matches[0].iou
    assert road_iou == pytest.approx(16 / 24)
    s = accumulate(pred, gt, catalog)
    assert (s[CAR].tp, s[CAR].fp, s[CAR].fn) == (0, 1, 1)


def test_high_iou_matched(catalog):
    # overlap 8 of 10: IoU = 8 / 12
    gt = strip(1, 30, [(ROAD, 0, 0, 30), (CAR, 1, 10, 20)])
    pred = strip(1, 30, [(ROAD, 0, 0, 30), (CAR, 1, 12, 22)])
    car = [m for m in match_segments(pred, gt, catalog).matches if m.gt.class_id == CAR]
    assert len(car) == 1 and car[0].iou == pytest.approx(8 / 12)


def test_void_excluded_from_union(catalog):
    # pred car spans 10 px, 4 of them on gt void; gt car 6 px fully covered -> IoU 1
    gt = strip(1, 20, [(ROAD, 0, 0, 10), (CAR, 1, 10, 16)])
    pred = strip(1, 20, [(ROAD, 0, 0, 10), (CAR, 1, 10, 20)])
    car = [m for m in match_segments(pred, gt, catalog).matches if m.gt.class_id == CAR]
    assert car[0].iou == 1.0


def test_shape_mismatch(catalog):
    with pytest.raises(ValidationError):
        match_segments(strip(1, 4, []), strip(2, 4, []), catalog)


def test_accumulate_identity(catalog):
    gt = strip(2, 30, [(ROAD, 0, 0, 10), (CAR, 1, 10, 20), (CAR, 2, 20, 30)])
    s = accumulate(gt, gt, catalog)
    assert s[ROAD] == ClassStats(1.0, 1, 0, 0)
    assert s[CAR] == ClassStats(2.0, 2, 0, 0)


def test_accumulate_empty_prediction(catalog):
    gt = strip(2, 20, [(ROAD, 0, 0, 10), (CAR, 1, 10, 20)])
    pred = strip(2, 20, [])
    s = accumulate(pred, gt, catalog)
    assert sum(c.fn for c in s.per_class.values()) == 2
    assert sum(c.tp + c.fp for c in s.per_class.values()) == 0


def test_prediction_on_void_ignored(catalog):
    gt = strip(2, 20, [(ROAD, 0, 0, 10)])
    pred = strip(2, 20, [(ROAD, 0, 0, 10), (CAR, 1, 12, 18)])
    s = accumulate(pred, gt, catalog)
    assert s[CAR].fp == 0


def test_report_single_class():
    stats = PqStats({ROAD: ClassStats(0.6, 1, 0, 0)})
    from panfuse.core import make_catalog
    rep = report(stats, make_catalog([(CAR, "car")], [(ROAD, "road")]))
    assert (rep.sq, rep.rq, rep.pq) == pytest.approx((60.0, 100.0, 60.0))
    assert rep.pq_stuff == pytest.approx(60.0) and rep.pq_things == 0.0


def test_report_zero_and_mean(catalog):
    rep = report(PqStats({CAR: ClassStats(0.0, 0, 1, 1)}), catalog)
    assert (rep.pq, rep.sq, rep.rq) == (0.0, 0.0, 0.0)
    # pq 40 (iou 0.4, tp 1) and pq 60 (iou 0.6, tp 1)
    rep = report(PqStats({CAR: ClassStats(0.4, 1, 0, 0), ROAD: ClassStats(0.6, 1, 0, 0)}), catalog)
    assert rep.pq == pytest.approx(50.0)
    assert rep.n_classes == 2


def test_report_no_classes(catalog):
    rep = report(PqStats(), catalog)
    assert (rep.pq, rep.sq, rep.rq, rep.n_classes) == (0.0, 0.0, 0.0, 0)
    assert rep.per_class == {}


def test_report_json_key_order(catalog):
    rep = report(PqStats({CAR: ClassStats(0.9, 1, 1, 0)}), catalog)
    doc = json.loads(rep.to_json())
    assert list(doc)[:6] == ["pq", "sq", "rq", "pq_things", "pq_stuff", "per_class"]


stats_strategy = st.dictionaries(
    st.sampled_from([ROAD, SKY, BUILDING, CAR, PERSON]),
    st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20), st.floats(0.5, 1.0)),
).map(lambda d: PqStats({k: ClassStats(tp * f, tp, fp, fn) for k, (tp, fp, fn, f) in d.items()}))


def close(a: PqStats, b: PqStats) -> bool:
    keys = set(a.per_class) | set(b.per_class)
    for k in keys:
        x, y = a[k], b[k]
        if (x.tp, x.fp, x.fn) != (y.tp, y.fp, y.fn) or not math.isclose(x.iou_sum, y.iou_sum, abs_tol=1e-9):
            return False
    return True


@given(stats_strategy)
def test_merge_identity(s):
    assert merge_stats(s, PqStats()) == s


@given(stats_strategy, stats_strategy)
def test_merge_commutative(a, b):
    assert merge_stats(a, b) == merge_stats(b, a)


@given(stats_strategy, stats_strategy, stats_strategy)
def test_merge_associative(a, b, c):
    assert close(merge_stats(merge_stats(a, b), c), merge_stats(a, merge_stats(b, c)))


@given(stats_strategy)
def test_product_identity(s):
    from panfuse.core import make_catalog
    cat = make_catalog([(CAR, "car"), (PERSON, "person")],
                       [(ROAD, "road"), (SKY, "sky"), (BUILDING, "building")])
    for v in report(s, cat).per_class.values():
        assert abs(v.pq - v.sq * v.rq / 100) <= 1e-9
        assert v.tp + v.fp + v.fn > 0


# --- random maps against the exhaustive oracle ---------------------------------

def random_map(rng, h, w, n_blobs):
    cls = np.full((h, w), rng.choice([ROAD, SKY, BUILDING]), np.int32)
    ins = np.zeros((h, w), np.int32)
    cls[: h // 2, : w // 3] = rng.choice([ROAD, SKY, BUILDING])
    counts = {}
    for _ in range(n_blobs):
        c = int(rng.choice([ROAD, SKY, CAR, PERSON, VOID_ID]))
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = y0 + rng.integers(1, h // 2 + 2), x0 + rng.integers(1, w // 2 + 2)
        cls[y0:y1, x0:x1] = c
        if c in (CAR, PERSON):
            counts[c] = counts.get(c, 0) + 1
            ins[y0:y1, x0:x1] = counts[c]
        else:
            ins[y0:y1, x0:x1] = 0
    return PanopticMap.from_labels(cls, ins)


def perturb(rng, pm, n_blobs):
    cls, ins = pm.class_ids.copy(), pm.instance_ids.copy()
    h, w = pm.shape
    for _ in range(n_blobs):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = y0 + rng.integers(1, h // 3 + 2), x0 + rng.integers(1, w // 3 + 2)
        c = int(rng.choice([ROAD, SKY, CAR, PERSON, VOID_ID]))
        cls[y0:y1, x0:x1] = c
        ins[y0:y1, x0:x1] = int(rng.integers(1, 4)) if c in (CAR, PERSON) else 0
    return PanopticMap.from_labels(cls, ins)


def assert_reports_equal(a, b):
    assert set(a.per_class) == set(b.per_class)
    for k in a.per_class:
        x, y = a.per_class[k], b.per_class[k]
        assert (x.tp, x.fp, x.fn) == (y.tp, y.fp, y.fn)
        for attr in ("pq", "sq", "rq"):
            assert abs(getattr(x, attr) - getattr(y, attr)) <= 1e-9
    for attr in ("pq", "sq", "rq", "pq_things", "pq_stuff"):
        assert abs(getattr(a, attr) - getattr(b, attr)) <= 1e-9


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_pq_matches_oracle(catalog, seed, n_images):
    rng = np.random.default_rng(seed)
    gts = [random_map(rng, int(rng.integers(4, 24)), int(rng.integers(4, 24)), 4) for _ in range(n_images)]
    preds = [perturb(rng, g, int(rng.integers(0, 4))) for g in gts]
    stats = [accumulate(p, g, catalog) for p, g in zip(preds, gts)]
    assert_reports_equal(report(tree_reduce(stats), catalog), oracle_pq(preds, gts, catalog))

    left = PqStats()
    for s in stats:
        left = merge_stats(left, s)
    assert close(left, tree_reduce(stats))


def relabel(rng, pm):
    ins = pm.instance_ids.copy()
    for cid in (CAR, PERSON):
        sel = pm.class_ids == cid
        ids = np.unique(ins[sel])
        perm = dict(zip(ids.tolist(), rng.permutation(ids).tolist()))
        ins[sel] = [perm[v] for v in ins[sel].tolist()]
    return PanopticMap.from_labels(pm.class_ids, ins)


@given(st.integers(0, 2**32 - 1))
def test_pq_invariant_to_instance_permutation(catalog, seed):
    rng = np.random.default_rng(seed)
    gt = random_map(rng, 16, 20, 5)
    pred = perturb(rng, gt, 2)
    base = report(accumulate(pred, gt, catalog), catalog)
    other = report(accumulate(relabel(rng, pred), relabel(rng, gt), catalog), catalog)
    assert_reports_equal(base, other)
