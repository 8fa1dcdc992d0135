import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from mona.errors import ValidationError, ZeroUnitAreaError
from mona.objects import (
    BoundingBox,
    BoxDynamics,
    BoxSegmenter,
    FilteredBoxSet,
    ObjectMask,
    PrecomputedSegmenter,
    adaptive_box_threshold,
    count_dynamic_in_box,
    decode_rle_row,
    encode_rle_row,
    filter_boxes,
    rasterize_masks,
    remove_masked_points,
    select_unit_box,
)


def box(x0, y0, x1, y1, t=0, **kw):
    return BoundingBox(t, x0, y0, x1, y1, **kw)


def bd(area, count):
    return BoxDynamics(box(0, 0, area, 1), count, math.inf)


def kept_set(boxes, width=640, height=480):
    return FilteredBoxSet(0, 1.0, tuple(BoxDynamics(b, 0, 1.0) for b in boxes), tuple(range(len(boxes))))


class TestCounting:
    def test_empty(self):
        assert count_dynamic_in_box(box(0, 0, 5, 5), []) == 0

    def test_edge_inclusive(self):
        assert count_dynamic_in_box(box(0, 0, 5, 5), [[5, 2.5], [0, 0], [5.0001, 1]]) == 2

    def test_matches_brute_force(self, rng):
        b = box(20.3, 11.0, 70.7, 63.2)
        pts = rng.uniform(0, 100, (200, 2))
        expected = sum(1 for x, y in pts if b.x_min <= x <= b.x_max and b.y_min <= y <= b.y_max)
        assert count_dynamic_in_box(b, pts) == expected

    def test_box_invariants(self):
        with pytest.raises(ValidationError):
            box(1, 0, 1, 5)
        with pytest.raises(ValidationError):
            box(0, 0, 1, 1, score=1.5)


class TestUnitBox:
    def test_none_qualifies(self):
        assert select_unit_box([bd(10, 1), bd(5, 2)], 3) is None

    def test_singleton(self):
        assert select_unit_box([bd(10, 1), bd(5, 4)], 3) == 1

    def test_smallest_area(self):
        assert select_unit_box([bd(100, 9), bd(50, 9), bd(80, 9)], 5) == 1

    def test_tie_breaks_by_index(self):
        assert select_unit_box([bd(100, 0), bd(50, 9), bd(50, 9)], 5) == 1

    def test_tau0_must_be_positive(self):
        with pytest.raises(ValidationError):
            select_unit_box([bd(1, 1)], 0)


class TestThreshold:
    def test_unit_ratio(self):
        assert adaptive_box_threshold(7.0, 30.0, 30.0) == 7.0

    def test_four_times_area(self):
        assert adaptive_box_threshold(10.0, 4 * 25.0, 25.0) == pytest.approx(40.0)

    def test_zero_unit_area(self):
        with pytest.raises(ZeroUnitAreaError):
            adaptive_box_threshold(5.0, 10.0, 0.0)


def frame_boxes(rng, n):
    boxes = []
    for _ in range(n):
        x0, y0 = rng.uniform(0, 500), rng.uniform(0, 350)
        boxes.append(box(x0, y0, x0 + rng.uniform(5, 140), y0 + rng.uniform(5, 130)))
    return boxes


class TestFilter:
    def test_distractor_excluded_unit_box_kept(self):
        person = box(100, 100, 140, 200)
        parked = box(300, 300, 420, 380)
        pts = [[110 + i, 150] for i in range(8)]
        out = filter_boxes([person, parked], pts, 5)
        assert out.kept_indices == (0,)
        assert out.unit_index == 0
        assert out.boxes[0].tau == 5
        assert out.boxes[1].count == 0

    def test_large_box_needs_proportionally_more(self):
        small = box(0, 0, 10, 10)
        big = box(50, 50, 90, 90)  # 16x area
        pts = [[5, 5]] * 5 + [[60, 60]] * 20
        out = filter_boxes([small, big], pts, 5)
        assert out.boxes[1].tau == pytest.approx(80)
        assert out.kept_indices == (0,)

    def test_no_unit_box_keeps_nothing(self):
        out = filter_boxes([box(0, 0, 10, 10)], [[1, 1]], 5)
        assert out.kept_indices == () and out.unit_box is None
        assert all(math.isinf(b.tau) for b in out.boxes)

    def test_tau0_must_be_positive(self):
        with pytest.raises(ValidationError):
            filter_boxes([box(0, 0, 1, 1)], [], 0)

    def test_tau0_limits(self, rng):
        boxes = frame_boxes(rng, 5)
        pts = rng.uniform(0, 640, (60, 2))
        assert filter_boxes(boxes, pts, 1e12).kept_indices == ()
        inside = [[boxes[0].x_min + 1, boxes[0].y_min + 1]]
        assert filter_boxes(boxes, inside, 1).kept_indices != ()

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 2.0, 10.0]))
    def test_scale_invariance(self, seed, s):
        r = np.random.default_rng(seed)
        boxes = frame_boxes(r, int(r.integers(1, 7)))
        pts = r.uniform(0, 640, (int(r.integers(0, 120)), 2))
        tau0 = float(r.integers(1, 8))
        base = filter_boxes(boxes, pts, tau0)
        scaled = filter_boxes([b.scaled(s) for b in boxes], pts * s, tau0)
        assert base.kept_indices == scaled.kept_indices

    @given(st.integers(0, 2**32 - 1))
    def test_monotone_in_points(self, seed):
        r = np.random.default_rng(seed)
        boxes = frame_boxes(r, 4)
        pts = r.uniform(0, 640, (80, 2))
        before = filter_boxes(boxes, pts, 3)
        for i in before.kept_indices:
            b = boxes[i]
            extra = np.vstack([pts, [[0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max)]]])
            after = filter_boxes(boxes, extra, 3)
            if after.unit_index == before.unit_index:
                assert i in after.kept_indices

    def test_kept_entries_satisfy_threshold(self, rng):
        for _ in range(50):
            out = filter_boxes(frame_boxes(rng, 6), rng.uniform(0, 640, (100, 2)), 4)
            for k in out.kept:
                assert k.count >= k.tau
            if out.unit_index is not None:
                assert out.boxes[out.unit_index].count >= 4


class TestRle:
    def test_examples(self):
        assert encode_rle_row([0, 0, 1, 1, 1, 0]) == (2, 3, 1)
        assert encode_rle_row([1, 0]) == (0, 1, 1)
        assert encode_rle_row([0, 0]) == (2,)

    @given(st.lists(st.booleans(), min_size=1, max_size=64))
    def test_round_trip(self, row):
        runs = encode_rle_row(row)
        assert sum(runs) == len(row)
        assert_array_equal(decode_rle_row(runs, len(row)), row)

    def test_mask_invariants(self):
        with pytest.raises(ValidationError):
            ObjectMask(0, 4, 1, ((3,),))
        with pytest.raises(ValidationError):
            ObjectMask(0, 4, 2, ((4,),))


class TestRasterize:
    def test_empty_kept_set(self):
        m = rasterize_masks(kept_set([]), 64, 48)
        assert m.population == 0
        assert m.to_array().shape == (48, 64)

    def test_ten_by_ten(self):
        assert rasterize_masks(kept_set([box(10, 20, 20, 30)]), 64, 48).population == 100

    def test_union_matches_pixel_oracle(self):
        a, b = box(2.5, 3.0, 20.2, 17.9), box(10.0, 8.4, 33.0, 30.0)
        m = rasterize_masks(kept_set([a, b]), 40, 40).to_array()
        oracle = np.zeros((40, 40), dtype=bool)
        for r in range(40):
            for c in range(40):
                for q in (a, b):
                    # cell [c, c+1) x [r, r+1) overlaps the box with positive area
                    if c + 1 > q.x_min and c < q.x_max and r + 1 > q.y_min and r < q.y_max:
                        oracle[r, c] = True
        assert_array_equal(m, oracle)
        sa = rasterize_masks(kept_set([a]), 40, 40).population
        sb = rasterize_masks(kept_set([b]), 40, 40).population
        assert m.sum() <= sa + sb

    def test_clipped_to_image(self):
        m = rasterize_masks(kept_set([box(-5, -5, 5, 5)]), 20, 20)
        assert m.population == 25

    def test_margin_dilates(self):
        m = rasterize_masks(kept_set([box(10, 10, 20, 20)]), 64, 48, BoxSegmenter(2))
        assert m.population == 14 * 14
        with pytest.raises(ValidationError):
            BoxSegmenter(-1)

    def test_precomputed_segmenter_crops_to_box(self):
        full = np.zeros((20, 20), dtype=bool)
        full[5:15, 5:15] = True
        seg = PrecomputedSegmenter([ObjectMask.from_array(0, full)])
        m = rasterize_masks(kept_set([box(0, 0, 10, 10)]), 20, 20, seg)
        assert m.population == 25


class TestRemovePoints:
    def test_all_zero_is_identity(self):
        pts = [(i, (float(i), 2.0)) for i in range(5)]
        assert remove_masked_points(pts, ObjectMask.empty(0, 10, 10)) == pts

    def test_all_ones_removes_everything(self):
        m = ObjectMask.from_array(0, np.ones((10, 10), dtype=bool))
        assert remove_masked_points([(1, (3.2, 4.9)), (2, (9.99, 0.0))], m) == []

    def test_matches_pixel_membership(self, rng):
        m = rasterize_masks(kept_set([box(10.5, 10.5, 30.2, 25.7)]), 50, 40)
        bitmap = m.to_array()
        pts = [(i, tuple(p)) for i, p in enumerate(rng.uniform(5, 35, (300, 2)))]
        kept = remove_masked_points(pts, m)
        expected = [p for p in pts if not bitmap[int(math.floor(p[1][1])), int(math.floor(p[1][0]))]]
        assert kept == expected

    def test_mask_filter_duality_for_pixel_aligned_boxes(self, rng):
        b = box(12, 7, 31, 22)
        m = rasterize_masks(kept_set([b]), 50, 40)
        pts = [(i, tuple(p)) for i, p in enumerate(rng.uniform(0, 40, (400, 2)))]
        kept = {tid for tid, _ in remove_masked_points(pts, m)}
        for tid, (x, y) in pts:
            interior = b.x_min < x < b.x_max and b.y_min < y < b.y_max
            outside = not (b.x_min <= x <= b.x_max and b.y_min <= y <= b.y_max)
            if interior:
                assert tid not in kept
            if outside:
                assert tid in kept

    def test_points_outside_image_are_kept(self):
        m = ObjectMask.from_array(0, np.ones((4, 4), dtype=bool))
        assert remove_masked_points([(0, (-0.5, 1)), (1, (4.0, 1))], m) == [(0, (-0.5, 1)), (1, (4.0, 1))]
