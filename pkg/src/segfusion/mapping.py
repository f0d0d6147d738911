"""Surfel map: projective fusion, z-buffered label rendering and label merges."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .core import CameraIntrinsics, Pose, project_points
from .geometry import NormalMap, VertexMap
from .segmentation import UNLABELED, MergeDirective

PHI = UNLABELED


class SurfelMap:
    """Growable struct-of-arrays surfel store. Surfel ids are row indices and never change."""

    def __init__(self, capacity: int = 1024):
        self._n = 0
        self._positions = np.zeros((capacity, 3))
        self._normals = np.zeros((capacity, 3))
        self._radii = np.zeros(capacity)
        self._weights = np.zeros(capacity)
        self._labels = np.full(capacity, UNLABELED, dtype=np.int64)

    def __len__(self) -> int:
        return self._n

    @property
    def positions(self) -> np.ndarray:
        return self._positions[: self._n]

    @property
    def normals(self) -> np.ndarray:
        return self._normals[: self._n]

    @property
    def radii(self) -> np.ndarray:
        return self._radii[: self._n]

    @property
    def weights(self) -> np.ndarray:
        return self._weights[: self._n]

    @property
    def labels(self) -> np.ndarray:
        return self._labels[: self._n]

    def add(self, positions, normals, radii, labels, weights=None) -> np.ndarray:
        """Append surfels and return their ids."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        k = len(positions)
        need = self._n + k
        if need > len(self._weights):
            cap = max(need, 2 * len(self._weights))
            for name in ("_positions", "_normals", "_radii", "_weights", "_labels"):
                old = getattr(self, name)
                new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
                if name == "_labels":
                    new[:] = UNLABELED
                new[: self._n] = old[: self._n]
                setattr(self, name, new)
        sl = slice(self._n, need)
        self._positions[sl] = positions
        self._normals[sl] = normals
        self._radii[sl] = radii
        self._weights[sl] = 1.0 if weights is None else weights
        self._labels[sl] = labels
        self._n = need
        return np.arange(sl.start, sl.stop)

    def copy(self) -> "SurfelMap":
        out = SurfelMap(capacity=max(len(self), 1))
        if len(self):
            out.add(self.positions, self.normals, self.radii, self.labels, self.weights)
        return out


@dataclass(frozen=True)
class RenderedLabelMap:
    labels: np.ndarray  # (H, W) global label or PHI
    depth: np.ndarray  # (H, W) meters, inf where nothing rendered
    index: np.ndarray  # (H, W) surfel id or -1

    @property
    def filled(self) -> np.ndarray:
        return self.index >= 0


def render_label_map(smap: SurfelMap, pose: Pose, intr: CameraIntrinsics) -> RenderedLabelMap:
    """Point-render every surfel with a z-buffer; nearer surfels win, ties go to the lower id.

    Unlabeled surfels still occlude but show up as PHI.
    """
    H, W = intr.shape
    index = np.full(H * W, -1, dtype=np.int64)
    depth = np.full(H * W, np.inf)
    if len(smap):
        cam = pose.inverse().transform(smap.positions)
        u, v, ok = project_points(cam, intr)
        ids = np.nonzero(ok)[0]
        pix = v[ok] * W + u[ok]
        z = cam[ok, 2]
        order = np.lexsort((ids, z, pix))
        pix_sorted = pix[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pix_sorted[1:] != pix_sorted[:-1]
        win = order[first]
        index[pix[win]] = ids[win]
        depth[pix[win]] = z[win]
    labels = np.full(H * W, PHI, dtype=np.int64)
    hit = index >= 0
    labels[hit] = smap.labels[index[hit]]
    return RenderedLabelMap(labels.reshape(H, W), depth.reshape(H, W), index.reshape(H, W))


def fuse_frame(
    smap: SurfelMap,
    vmap: VertexMap,
    nmap: NormalMap,
    labels: np.ndarray,
    pose: Pose,
    intr: CameraIntrinsics,
    *,
    max_distance: float = 0.05,
    max_angle: float = np.deg2rad(30.0),
    max_weight: float = 100.0,
    stride: int = 1,
    rendered: RenderedLabelMap | None = None,
) -> np.ndarray:
    """Fuse one frame into ``smap`` in place and return the surfel id per pixel (-1 if none).

    Each pixel with a valid vertex and normal is matched to the surfel
    rendered at the same pixel when the two agree within ``max_distance`` and
    ``max_angle``. Matches are averaged into the surfel, unmatched pixels on
    the ``stride`` lattice spawn new surfels. Unlabeled pixels leave a matched
    surfel's label untouched.
    """
    H, W = intr.shape
    if vmap.shape != (H, W) or nmap.shape != (H, W) or labels.shape != (H, W):
        raise ValueError("vertex map, normal map and label image must match the intrinsics")
    if rendered is None:
        rendered = render_label_map(smap, pose, intr)
    ok = vmap.valid & nmap.valid
    ys, xs = np.nonzero(ok)
    pts = pose.transform(vmap.points[ys, xs])
    nrm = pose.rotate(nmap.normals[ys, xs])
    lab = labels[ys, xs]
    sid = rendered.index[ys, xs]

    matched = sid >= 0
    if matched.any():
        m = np.nonzero(matched)[0]
        s = sid[m]
        close = np.linalg.norm(smap.positions[s] - pts[m], axis=1) <= max_distance
        aligned = np.einsum("ij,ij->i", smap.normals[s], nrm[m]) >= np.cos(max_angle)
        good = close & aligned
        matched[m[~good]] = False
        m, s = m[good], s[good]
        w = smap._weights[s][:, None]
        smap._positions[s] = (w * smap._positions[s] + pts[m]) / (w + 1.0)
        n = w * smap._normals[s] + nrm[m]
        smap._normals[s] = n / np.linalg.norm(n, axis=1, keepdims=True)
        smap._weights[s] = np.minimum(smap._weights[s] + 1.0, max_weight)
        relabel = lab[m] != UNLABELED
        smap._labels[s[relabel]] = lab[m][relabel]

    out = np.full((H, W), -1, dtype=np.int64)
    out[ys[matched], xs[matched]] = sid[matched]

    spawn = ~matched
    if stride > 1:
        spawn &= (ys % stride == 0) & (xs % stride == 0)
    if spawn.any():
        z = vmap.points[ys[spawn], xs[spawn], 2]
        nz = np.abs(nmap.normals[ys[spawn], xs[spawn], 2])
        radii = np.sqrt(2.0) * z / intr.fx / np.maximum(nz, 0.2)
        new = smap.add(pts[spawn], nrm[spawn], radii, lab[spawn])
        out[ys[spawn], xs[spawn]] = new
    return out


def resolve_directives(directives: Iterable[MergeDirective]) -> dict[int, int]:
    """Collapse ordered directives into a retired -> final survivor table."""
    final: dict[int, int] = {}
    for d in directives:
        if d.retired == d.survivor:
            raise ValueError(f"label {d.retired} cannot merge into itself")
        for k, v in final.items():
            if v == d.retired:
                final[k] = d.survivor
        final[d.retired] = d.survivor
    return final


def apply_merge_directives(smap: SurfelMap, directives: Iterable[MergeDirective], live_labels=None) -> None:
    """Rewrite retired labels to their survivors in order, in place.

    With ``live_labels`` given, every directive must name labels in it.
    """
    directives = list(directives)
    if live_labels is not None:
        live = set(int(x) for x in live_labels)
        for d in directives:
            for label in (d.retired, d.survivor):
                if label not in live:
                    raise KeyError(f"unknown label {label} in merge directive")
            live.discard(d.retired)
    final = resolve_directives(directives)
    if not final or not len(smap):
        return
    labels = smap._labels[: len(smap)]
    keys = np.fromiter(final.keys(), dtype=np.int64)
    vals = np.fromiter(final.values(), dtype=np.int64)
    order = np.argsort(keys)
    keys, vals = keys[order], vals[order]
    pos = np.clip(np.searchsorted(keys, labels), 0, len(keys) - 1)
    hit = keys[pos] == labels
    labels[hit] = vals[pos[hit]]
