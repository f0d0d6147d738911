"""Semantic-aware frame segmentation and propagation of segments into the map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import CELL

INVALID_SEGMENT = -1
UNLABELED = -1  # also the "unfilled" value of a rendered label map

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class SegmentFrame:
    ids: np.ndarray  # (H, W) int64, INVALID_SEGMENT on edges and dropped pockets
    counts: np.ndarray  # pixel count per segment id

    @property
    def n_segments(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class MergeDirective:
    retired: int
    survivor: int


@dataclass(frozen=True)
class Propagation:
    assignment: np.ndarray  # global label per frame segment
    n_fresh: int  # fresh labels minted, numbered from the ``next_label`` passed in
    merges: tuple[MergeDirective, ...]

    def label_image(self, segments: SegmentFrame) -> np.ndarray:
        """Per-pixel global label; UNLABELED where the segment id is invalid."""
        out = np.full(segments.ids.shape, UNLABELED, dtype=np.int64)
        ok = segments.ids >= 0
        out[ok] = self.assignment[segments.ids[ok]]
        return out


def argmax_class_map(pred: np.ndarray) -> np.ndarray:
    """Most probable class per cell; ties go to the lowest class index."""
    return np.argmax(pred, axis=-1).astype(np.int64)


def median_filter_class_map(cmap: np.ndarray) -> np.ndarray:
    """3x3 median over class indices with edge-replicated borders."""
    return ndimage.median_filter(np.asarray(cmap), size=3, mode="nearest")


def upsample_nearest(cmap: np.ndarray, factor: int = CELL) -> np.ndarray:
    return np.repeat(np.repeat(cmap, factor, axis=0), factor, axis=1)


def semantic_edge_map(classes: np.ndarray) -> np.ndarray:
    """Mark pixels whose class differs from the right, lower or lower-right neighbor."""
    c = np.asarray(classes)
    edge = np.zeros(c.shape, dtype=bool)
    edge[:, :-1] |= c[:, :-1] != c[:, 1:]
    edge[:-1, :] |= c[:-1, :] != c[1:, :]
    edge[:-1, :-1] |= c[:-1, :-1] != c[1:, 1:]
    return edge.astype(np.uint8)


def combine_edges(bg: np.ndarray, bs: np.ndarray) -> np.ndarray:
    if bg.shape != bs.shape:
        raise ValueError(f"edge maps differ in shape: {bg.shape} vs {bs.shape}")
    return np.logical_or(bg, bs).astype(np.uint8)


def connected_components(edges: np.ndarray, min_segment_px: int = 64) -> SegmentFrame:
    """4-connected regions of non-edge pixels, numbered in raster order.

    Regions smaller than ``min_segment_px`` get INVALID_SEGMENT.
    """
    labels, n = ndimage.label(np.asarray(edges) == 0, structure=_FOUR_CONNECTED)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    sizes[0] = 0
    keep = sizes >= min_segment_px
    remap = np.full(n + 1, INVALID_SEGMENT, dtype=np.int64)
    remap[keep] = np.arange(int(keep.sum()))
    return SegmentFrame(remap[labels], sizes[keep].astype(np.int64))


def propagate_labels(
    segments: SegmentFrame,
    rendered: np.ndarray,
    next_label: int,
    rho_prop: float = 0.3,
    rho_merge: float = 0.2,
) -> Propagation:
    """Match frame segments to global labels through their overlap with ``rendered``.

    A segment inherits the global label covering the largest share of its
    pixels (lowest id on ties) when that share reaches ``rho_prop``, otherwise
    it gets a fresh label ``next_label, next_label + 1, ...`` in segment order.
    Global labels that each cover at least ``rho_merge`` of one segment are
    unified under their smallest id. Assignments already point at survivors.
    """
    n = segments.n_segments
    ids = segments.ids
    both = (ids >= 0) & (rendered >= 0)
    seg = ids[both]
    lab = rendered[both].astype(np.int64)
    # one (segment, label) pair per key, sorted by segment then label
    pairs, counts = np.unique(np.stack([seg, lab], axis=1), axis=0, return_counts=True)

    parent: dict[int, int] = {}

    def find(x):
        root = x
        while parent.get(root, root) != root:
            root = parent[root]
        while parent.get(x, x) != root:
            parent[x], x = root, parent[x]
        return root

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            lo, hi = min(ra, rb), max(ra, rb)
            parent[hi] = lo

    assignment = np.full(n, -1, dtype=np.int64)
    starts = np.searchsorted(pairs[:, 0], np.arange(n)) if len(pairs) else np.zeros(n, dtype=int)
    ends = np.searchsorted(pairs[:, 0], np.arange(n), side="right") if len(pairs) else np.zeros(n, dtype=int)
    fresh = 0
    for s in range(n):
        area = segments.counts[s]
        lo, hi = starts[s], ends[s]
        if hi > lo:
            labels_s, counts_s = pairs[lo:hi, 1], counts[lo:hi]
            best = int(np.argmax(counts_s))  # labels sorted ascending, so ties pick lowest id
            if counts_s[best] >= rho_prop * area:
                assignment[s] = labels_s[best]
            heavy = labels_s[counts_s >= rho_merge * area]
            for other in heavy[1:]:
                union(int(heavy[0]), int(other))
        if assignment[s] < 0:
            assignment[s] = next_label + fresh
            fresh += 1

    merges = []
    for label in sorted(parent):
        root = find(label)
        if root != label:
            merges.append(MergeDirective(label, root))
    if merges:
        assignment = np.array([find(int(a)) for a in assignment], dtype=np.int64)
    return Propagation(assignment, fresh, tuple(merges))
