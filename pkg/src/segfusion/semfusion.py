"""Per-segment class-probability fusion and the per-surfel baseline it replaces.

Each global segment label carries one class distribution and a confidence
(accumulated evidence mass). A frame contributes through the low-resolution
prediction grid: every 8x8 block of the rendered label map splits the cell's
prediction among the labels visible in it, proportionally to pixel counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import CELL, normalize
from .segmentation import UNLABELED, MergeDirective

PHI = UNLABELED


class LabelTable:
    """Dense per-label records indexed by label id; merged labels are retired, never reused."""

    def __init__(self, n_classes: int, capacity: int = 64, dtype=np.float64):
        if n_classes < 2:
            raise ValueError("need at least two classes")
        self.n_classes = n_classes
        self._dist = np.full((capacity, n_classes), 1.0 / n_classes, dtype=dtype)
        self._conf = np.zeros(capacity, dtype=dtype)
        self._surfels = np.zeros(capacity, dtype=np.int64)
        self._alive = np.zeros(capacity, dtype=bool)
        self._next = 0

    @property
    def next_id(self) -> int:
        return self._next

    def allocate(self, count: int) -> np.ndarray:
        """Create ``count`` fresh labels with a uniform distribution and zero confidence."""
        ids = np.arange(self._next, self._next + count)
        need = self._next + count
        if need > len(self._alive):
            cap = max(need, 2 * len(self._alive))
            grow = cap - len(self._alive)
            self._dist = np.vstack([self._dist, np.full((grow, self.n_classes), 1.0 / self.n_classes, self._dist.dtype)])
            self._conf = np.concatenate([self._conf, np.zeros(grow, self._conf.dtype)])
            self._surfels = np.concatenate([self._surfels, np.zeros(grow, np.int64)])
            self._alive = np.concatenate([self._alive, np.zeros(grow, bool)])
        self._alive[ids] = True
        self._next = need
        return ids

    def __len__(self) -> int:
        return int(self._alive[: self._next].sum())

    def __contains__(self, label) -> bool:
        return 0 <= label < self._next and bool(self._alive[label])

    def live_labels(self) -> np.ndarray:
        return np.nonzero(self._alive[: self._next])[0]

    def _check(self, labels) -> None:
        labels = np.atleast_1d(np.asarray(labels))
        bad = (labels < 0) | (labels >= self._next)
        if not bad.any():
            bad = ~self._alive[labels]
        if bad.any():
            raise KeyError(f"unknown label(s) {labels[bad][:5].tolist()}")

    def distribution(self, label: int) -> np.ndarray:
        self._check(label)
        return self._dist[label].copy()

    def confidence(self, label: int) -> float:
        self._check(label)
        return float(self._conf[label])

    def surfel_count(self, label: int) -> int:
        self._check(label)
        return int(self._surfels[label])

    def set_record(self, label: int, distribution, confidence: float) -> None:
        self._check(label)
        self._dist[label] = distribution
        self._conf[label] = confidence

    def set_surfel_counts(self, surfel_labels: np.ndarray) -> None:
        labels = surfel_labels[surfel_labels >= 0]
        self._surfels[:] = 0
        counts = np.bincount(labels, minlength=self._next)
        self._surfels[: len(counts)] = counts[: len(self._surfels)]

    def distributions(self) -> dict[int, np.ndarray]:
        return {int(l): self._dist[l].copy() for l in self.live_labels()}

    @property
    def probability_bytes(self) -> int:
        """Bytes of class-probability storage held by live labels."""
        return len(self) * self.n_classes * self._dist.itemsize


@dataclass(frozen=True)
class CellOverlaps:
    """Per-cell label tallies of a rendered label map, as flat sorted arrays.

    ``cell`` (row-major cell index), ``label`` and ``count`` list every
    (cell, label) pair with a positive count, ordered by cell then label.
    """

    grid_shape: tuple[int, int]
    filled: np.ndarray  # (H/8, W/8) count of non-PHI pixels per cell
    cell: np.ndarray
    label: np.ndarray
    count: np.ndarray

    def labels_in(self, s: int, t: int) -> dict[int, int]:
        """Label -> pixel count for the cell in column ``s``, row ``t``."""
        idx = t * self.grid_shape[1] + s
        lo, hi = np.searchsorted(self.cell, [idx, idx + 1])
        return dict(zip(self.label[lo:hi].tolist(), self.count[lo:hi].tolist()))

    @property
    def mean_labels_per_cell(self) -> float:
        """Mean number of distinct labels over cells with at least one filled pixel."""
        n = int((self.filled > 0).sum())
        return len(self.label) / n if n else 0.0


def compute_cell_overlaps(rendered: np.ndarray) -> CellOverlaps:
    H, W = rendered.shape
    if H % CELL or W % CELL:
        raise ValueError(f"label map {H}x{W} is not divisible by {CELL}")
    Ht, Wt = H // CELL, W // CELL
    blocks = rendered.reshape(Ht, CELL, Wt, CELL).transpose(0, 2, 1, 3).reshape(Ht * Wt, CELL * CELL)
    flat = np.sort(blocks, axis=1).ravel()
    start = np.ones(flat.shape, dtype=bool)
    start[1:] = flat[1:] != flat[:-1]
    start[:: CELL * CELL] = True
    idx = np.nonzero(start)[0]
    count = np.diff(np.append(idx, flat.size))
    cell = idx // (CELL * CELL)
    label = flat[idx]
    keep = label != PHI
    cell, label, count = cell[keep], label[keep], count[keep]
    filled = np.bincount(cell, weights=count, minlength=Ht * Wt).astype(np.int64).reshape(Ht, Wt)
    return CellOverlaps((Ht, Wt), filled, cell, label, count)


def update_label_probabilities(table: LabelTable, overlaps: CellOverlaps, pred: np.ndarray) -> np.ndarray:
    """Confidence-weighted update of every label visible in the frame.

    For cell v and label l in it, gamma = |C_v,l| / |C_v| and
    P <- normalize((Gamma * P + gamma * P_t(v)) / (Gamma + gamma)), Gamma <- Gamma + gamma.
    Applying that per cell in sequence amounts to adding up the weighted
    predictions per label, so the arithmetic is done in one pass. Returns the
    labels that were updated.
    """
    if pred.shape[:2] != overlaps.grid_shape:
        raise ValueError(f"prediction grid {pred.shape[:2]} does not match overlaps {overlaps.grid_shape}")
    if not len(overlaps.label):
        return np.zeros(0, dtype=np.int64)
    table._check(overlaps.label)
    N = table.n_classes
    flat_pred = pred.reshape(-1, N)
    gamma = overlaps.count / overlaps.filled.ravel()[overlaps.cell]
    labels, inverse = np.unique(overlaps.label, return_inverse=True)
    mass = np.bincount(inverse, weights=gamma, minlength=len(labels))
    evidence = np.zeros((len(labels), N))
    np.add.at(evidence, inverse, gamma[:, None] * flat_pred[overlaps.cell])
    conf = table._conf[labels]
    new_conf = conf + mass
    dist = (conf[:, None] * table._dist[labels] + evidence) / new_conf[:, None]
    table._dist[labels] = normalize(dist)
    table._conf[labels] = new_conf
    return labels


def merge_label_records(table: LabelTable, directives: Iterable[MergeDirective]) -> None:
    """Fold each retired label into its survivor, weighting distributions by confidence."""
    for d in directives:
        if d.retired == d.survivor:
            raise ValueError(f"label {d.retired} cannot merge into itself")
        table._check([d.retired, d.survivor])
        a, b = d.survivor, d.retired
        ga, gb = table._conf[a], table._conf[b]
        if ga + gb > 0:
            table._dist[a] = normalize(ga * table._dist[a] + gb * table._dist[b])
        table._conf[a] = ga + gb
        table._surfels[a] += table._surfels[b]
        table._surfels[b] = 0
        table._alive[b] = False


def query_segment_class(table: LabelTable, label: int) -> tuple[int, float]:
    p = table.distribution(label)
    c = int(np.argmax(p))
    return c, float(p[c])


class PerSurfelBaseline:
    """Per-surfel class distributions with a multiplicative Bayesian update per rendered pixel."""

    def __init__(self, n_classes: int, dtype=np.float64):
        self.n_classes = n_classes
        self._dist = np.zeros((0, n_classes), dtype=dtype)
        self._n = 0

    def __len__(self) -> int:
        return self._n

    @property
    def distributions(self) -> np.ndarray:
        return self._dist[: self._n]

    def resize(self, n_surfels: int) -> None:
        """Track ``n_surfels`` surfels; new ones start uniform."""
        if n_surfels > len(self._dist):
            cap = max(n_surfels, 2 * len(self._dist))
            grown = np.full((cap, self.n_classes), 1.0 / self.n_classes, dtype=self._dist.dtype)
            grown[: self._n] = self._dist[: self._n]
            self._dist = grown
        self._n = n_surfels

    def update(self, likelihood: np.ndarray, surfel_index: np.ndarray) -> None:
        """``likelihood`` is (H, W, N) per-pixel class probability, ``surfel_index`` the rendered surfel id map."""
        hit = surfel_index >= 0
        ids = surfel_index[hit]
        post = self._dist[ids] * likelihood[hit]
        total = post.sum(axis=1, keepdims=True)
        ok = total[:, 0] > 0
        self._dist[ids[ok]] = post[ok] / total[ok]

    @property
    def probability_bytes(self) -> int:
        return self._n * self.n_classes * self._dist.itemsize


def baseline_per_surfel_update(baseline: PerSurfelBaseline, likelihood: np.ndarray, surfel_index: np.ndarray) -> None:
    baseline.update(likelihood, surfel_index)
