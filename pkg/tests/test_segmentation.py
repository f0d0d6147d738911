import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import argmax_scan, flood_fill_components, median3_clamped, semantic_edges_enumerated
from segfusion.segmentation import (
    INVALID_SEGMENT,
    MergeDirective,
    argmax_class_map,
    combine_edges,
    connected_components,
    median_filter_class_map,
    propagate_labels,
    semantic_edge_map,
    upsample_nearest,
)

class_maps = arrays(np.int64, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 3))


class TestClassMap:
    def test_ties_pick_lowest_index(self):
        pred = np.array([[[0.4, 0.4, 0.2], [0.2, 0.4, 0.4]]])
        np.testing.assert_array_equal(argmax_class_map(pred), [[0, 1]])

    def test_matches_scan(self, rng):
        pred = rng.integers(0, 5, size=(30, 40, 13)).astype(float)
        cmap = argmax_class_map(pred)
        for t in range(30):
            for s in range(40):
                assert cmap[t, s] == argmax_scan(pred[t, s])

    def test_median_removes_isolated_pixel(self):
        c = np.full((5, 5), 2)
        c[2, 2] = 5
        np.testing.assert_array_equal(median_filter_class_map(c), np.full((5, 5), 2))

    def test_median_keeps_straight_boundary(self):
        c = np.zeros((6, 8), dtype=np.int64)
        c[:, 4:] = 3
        np.testing.assert_array_equal(median_filter_class_map(c), c)

    @settings(max_examples=100, deadline=None)
    @given(class_maps)
    def test_median_matches_oracle(self, c):
        np.testing.assert_array_equal(median_filter_class_map(c), median3_clamped(c.tolist()))

    def test_upsample(self):
        up = upsample_nearest(np.array([[1, 2], [3, 4]]))
        assert up.shape == (16, 16)
        assert (up[:8, :8] == 1).all() and (up[8:, 8:] == 4).all()
        assert up[7, 8] == 2 and up[8, 7] == 3


class TestSemanticEdges:
    def test_uniform_has_no_edges(self):
        assert semantic_edge_map(np.full((9, 7), 4)).sum() == 0

    def test_vertical_split(self):
        c = np.zeros((6, 10), dtype=np.int64)
        c[:, 4:] = 1
        e = semantic_edge_map(c)
        assert (np.argwhere(e)[:, 1] == 3).all()
        assert e[:, 3].all()

    def test_single_pixel(self):
        c = np.zeros((7, 7), dtype=np.int64)
        c[3, 4] = 1
        got = {tuple(p) for p in np.argwhere(semantic_edge_map(c))}
        assert got == {(3, 4), (3, 3), (2, 4), (2, 3)}  # (y, x)

    @settings(max_examples=200, deadline=None)
    @given(class_maps)
    def test_matches_enumeration(self, c):
        np.testing.assert_array_equal(semantic_edge_map(c), semantic_edges_enumerated(c.tolist()))

    @settings(max_examples=200, deadline=None)
    @given(class_maps)
    def test_transpose_commutes(self, c):
        # right and down swap under transposition; the diagonal term maps to itself
        np.testing.assert_array_equal(semantic_edge_map(c.T), semantic_edge_map(c).T)

    def test_rotation_does_not_preserve_edge_count(self):
        # the neighbour pattern is one-sided, so a 180 degree rotation can change the count
        c = np.array([[0, 1], [1, 1]])
        assert semantic_edge_map(c).sum() == 1
        assert semantic_edge_map(np.rot90(c, 2)).sum() == 3

    def test_combine(self, rng):
        bg = rng.integers(0, 2, (20, 30)).astype(np.uint8)
        bs = rng.integers(0, 2, (20, 30)).astype(np.uint8)
        np.testing.assert_array_equal(combine_edges(bg, bs), bg | bs)
        with pytest.raises(ValueError):
            combine_edges(bg, bs[:, :-1])


class TestComponents:
    def test_edge_free(self):
        seg = connected_components(np.zeros((16, 16), np.uint8))
        assert seg.n_segments == 1 and (seg.ids == 0).all() and seg.counts[0] == 256

    def test_row_split(self):
        e = np.zeros((17, 16), np.uint8)
        e[8] = 1
        seg = connected_components(e)
        assert seg.n_segments == 2
        assert (seg.ids[8] == INVALID_SEGMENT).all()

    def test_small_pockets_dropped(self):
        e = np.zeros((20, 20), np.uint8)
        e[:, 2] = 1  # 20x2 strip = 40 px < 64
        seg = connected_components(e, min_segment_px=64)
        assert seg.n_segments == 1
        assert (seg.ids[:, :2] == INVALID_SEGMENT).all()

    def test_diagonal_does_not_connect(self):
        e = np.array([[0, 1], [1, 0]], np.uint8)
        assert connected_components(e, min_segment_px=1).n_segments == 2

    @pytest.mark.parametrize("seed", range(25))
    def test_matches_flood_fill(self, seed):
        rng = np.random.default_rng(seed)
        e = (rng.random((64, 64)) < rng.uniform(0.2, 0.5)).astype(np.uint8)
        min_size = int(rng.integers(1, 10))
        seg = connected_components(e, min_segment_px=min_size)
        comps = flood_fill_components(e.tolist(), min_size)
        assert seg.n_segments == len(comps)
        assert (seg.ids[e == 1] == INVALID_SEGMENT).all()
        for comp in comps:
            ids = {seg.ids[y, x] for y, x in comp}
            assert len(ids) == 1 and ids.pop() >= 0
        np.testing.assert_array_equal(np.bincount(seg.ids[seg.ids >= 0]), seg.counts)


def segments_from(ids):
    ids = np.asarray(ids, dtype=np.int64)
    from segfusion.segmentation import SegmentFrame

    return SegmentFrame(ids, np.bincount(ids[ids >= 0]))


class TestPropagation:
    def test_first_frame_all_fresh(self):
        seg = segments_from([[0, 0, 1], [2, 2, 1]])
        prop = propagate_labels(seg, np.full((2, 3), -1), next_label=5)
        np.testing.assert_array_equal(prop.assignment, [5, 6, 7])
        assert prop.n_fresh == 3 and prop.merges == ()

    def test_identical_frame_reuses_labels(self):
        seg = segments_from([[0, 0, 1], [2, 2, 1]])
        first = propagate_labels(seg, np.full((2, 3), -1), next_label=0)
        rendered = first.label_image(seg)
        again = propagate_labels(seg, rendered, next_label=3)
        np.testing.assert_array_equal(again.assignment, first.assignment)
        assert again.n_fresh == 0 and again.merges == ()

    def test_merge_two_heavy_labels(self):
        seg = segments_from(np.zeros((1, 10)))
        rendered = np.array([[4] * 5 + [9] * 3 + [-1] * 2])
        prop = propagate_labels(seg, rendered, next_label=10)
        assert prop.merges == (MergeDirective(9, 4),)
        np.testing.assert_array_equal(prop.assignment, [4])

    def test_light_overlap_does_not_merge(self):
        seg = segments_from(np.zeros((1, 10)))
        rendered = np.array([[4] * 8 + [9] * 1 + [-1]])
        assert propagate_labels(seg, rendered, next_label=10).merges == ()

    def test_below_rho_prop_gets_fresh(self):
        seg = segments_from(np.zeros((1, 10)))
        rendered = np.array([[4] * 2 + [-1] * 8])
        prop = propagate_labels(seg, rendered, next_label=10)
        np.testing.assert_array_equal(prop.assignment, [10])
        assert prop.n_fresh == 1

    def test_merges_resolve_chains(self):
        # segment 0 ties 5 and 8, segment 1 ties 8 and 2: all three collapse onto 2
        seg = segments_from([[0] * 4 + [1] * 4])
        rendered = np.array([[5, 5, 8, 8, 8, 8, 2, 2]])
        prop = propagate_labels(seg, rendered, next_label=20)
        assert {(m.retired, m.survivor) for m in prop.merges} == {(5, 2), (8, 2)}
        np.testing.assert_array_equal(prop.assignment, [2, 2])

    def test_deterministic(self, rng):
        ids = rng.integers(-1, 6, size=(24, 32))
        seg = segments_from(ids)
        rendered = rng.integers(-1, 9, size=(24, 32))
        a = propagate_labels(seg, rendered, 9)
        b = propagate_labels(seg, rendered.copy(), 9)
        np.testing.assert_array_equal(a.assignment, b.assignment)
        assert a.merges == b.merges
