"""PLY export and npz map snapshots."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mapping import SurfelMap
from .semfusion import LabelTable

# one RGB color per class, fixed so exports are comparable across runs
PALETTE = np.array(
    [
        [0, 0, 255],  # bed
        [232, 88, 47],  # books
        [0, 217, 0],  # ceiling
        [148, 0, 240],  # chair
        [222, 241, 23],  # floor
        [255, 205, 205],  # furniture
        [0, 223, 228],  # objects
        [106, 135, 204],  # painting
        [116, 28, 41],  # sofa
        [240, 35, 235],  # table
        [0, 166, 156],  # tv
        [249, 139, 0],  # wall
        [225, 228, 194],  # window
    ],
    dtype=np.uint8,
)
UNLABELED_COLOR = np.array([128, 128, 128], dtype=np.uint8)


def surfel_colors(smap: SurfelMap, table: LabelTable) -> np.ndarray:
    """Palette color of each surfel's segment argmax class; grey when unlabeled."""
    colors = np.tile(UNLABELED_COLOR, (len(smap), 1))
    labels = smap.labels
    live = np.zeros(table.next_id, dtype=bool)
    live[table.live_labels()] = True
    ok = labels >= 0
    ok[ok] = live[labels[ok]]
    classes = np.argmax(table._dist[labels[ok]], axis=1)
    colors[ok] = PALETTE[classes % len(PALETTE)]
    return colors


_VERTEX_DTYPE = np.dtype(
    [
        ("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
        ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
        ("label", "<i4"),
        ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ]
)  # fmt: skip
_PLY_TYPES = {"<f8": "double", "<f4": "float", "<i4": "int", "|u1": "uchar"}


def export_ply(smap: SurfelMap, table: LabelTable, path, binary: bool = True) -> None:
    if not len(smap):
        raise ValueError("refusing to export an empty map")
    verts = np.empty(len(smap), dtype=_VERTEX_DTYPE)
    for i, axis in enumerate("xyz"):
        verts[axis] = smap.positions[:, i]
        verts["n" + axis] = smap.normals[:, i]
    verts["label"] = smap.labels
    colors = surfel_colors(smap, table)
    verts["red"], verts["green"], verts["blue"] = colors.T

    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0", f"element vertex {len(verts)}"]
    for name in verts.dtype.names:
        header.append(f"property {_PLY_TYPES[verts.dtype[name].str]} {name}")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(verts.tobytes())
        else:
            for v in verts:
                fh.write(
                    (
                        " ".join(repr(float(v[n])) for n in ("x", "y", "z", "nx", "ny", "nz"))
                        + f" {int(v['label'])} {int(v['red'])} {int(v['green'])} {int(v['blue'])}\n"
                    ).encode("ascii")
                )


def save_snapshot(path, smap: SurfelMap, table: LabelTable) -> None:
    np.savez_compressed(
        path,
        positions=smap.positions,
        normals=smap.normals,
        radii=smap.radii,
        weights=smap.weights,
        labels=smap.labels,
        n_classes=table.n_classes,
        next_id=table.next_id,
        dist=table._dist[: table.next_id],
        conf=table._conf[: table.next_id],
        alive=table._alive[: table.next_id],
    )


def load_snapshot(path) -> tuple[SurfelMap, LabelTable]:
    with np.load(Path(path)) as z:
        smap = SurfelMap(capacity=max(len(z["labels"]), 1))
        if len(z["labels"]):
            smap.add(z["positions"], z["normals"], z["radii"], z["labels"], z["weights"])
        table = LabelTable(int(z["n_classes"]))
        n = int(z["next_id"])
        table.allocate(n)
        table._dist[:n] = z["dist"]
        table._conf[:n] = z["conf"]
        table._alive[:n] = z["alive"]
        table.set_surfel_counts(smap.labels)
    return smap, table
