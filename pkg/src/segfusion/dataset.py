"""Sequence manifests, depth images, prediction grids and trajectory files.

Manifest format (one record per line, ``#`` starts a comment)::

    intrinsics <fx> <fy> <cx> <cy> <width> <height>
    depth_scale <meters per raw unit>            # optional, default 1/5000
    <timestamp> <depth> <color|-> <prediction|-> [tx ty tz qx qy qz qw]

Paths are relative to the manifest. The optional pose is camera-to-world in
TUM order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .core import DEFAULT_DEPTH_SCALE, DEFAULT_MAX_DEPTH, CameraIntrinsics, Pose, sanitize_depth

SFPG_MAGIC = b"SFPG"


class ManifestError(ValueError):
    pass


class PredictionGridError(ValueError):
    pass


@dataclass
class FrameEntry:
    timestamp: float
    depth_path: Path
    color_path: Path | None = None
    prediction_path: Path | None = None
    pose: Pose | None = None


@dataclass
class Frame:
    index: int
    timestamp: float
    depth: np.ndarray  # meters, 0 invalid
    prediction: np.ndarray | None = None  # None means geometric-only for this frame
    pose: Pose | None = None
    color: np.ndarray | None = None

    @property
    def geometric_only(self) -> bool:
        return self.prediction is None


@dataclass
class SequenceManifest:
    path: Path
    intrinsics: CameraIntrinsics
    entries: list[FrameEntry] = field(default_factory=list)
    depth_scale: float = DEFAULT_DEPTH_SCALE

    def __len__(self) -> int:
        return len(self.entries)

    def frames(self, max_depth: float = DEFAULT_MAX_DEPTH, n_classes: int | None = None) -> Iterator[Frame]:
        for i, e in enumerate(self.entries):
            depth = read_depth(e.depth_path, self.depth_scale, max_depth)
            if depth.shape != self.intrinsics.shape:
                raise ManifestError(f"{e.depth_path}: shape {depth.shape} does not match intrinsics {self.intrinsics.shape}")
            pred = None
            if e.prediction_path is not None:
                pred = load_prediction_grid(e.prediction_path)
                if pred.shape[:2] != self.intrinsics.grid_shape:
                    raise ManifestError(f"{e.prediction_path}: grid {pred.shape[:2]} does not match {self.intrinsics.grid_shape}")
                if n_classes is not None and pred.shape[2] != n_classes:
                    raise ManifestError(f"{e.prediction_path}: {pred.shape[2]} classes, expected {n_classes}")
            color = None
            if e.color_path is not None:
                color = np.asarray(Image.open(e.color_path).convert("RGB"))
                if color.shape[:2] != depth.shape:
                    raise ManifestError(f"{e.color_path}: color and depth sizes differ")
            yield Frame(i, e.timestamp, depth, pred, e.pose, color)


def _parse_pose(fields: list[str]) -> Pose:
    vals = [float(x) for x in fields]
    return Pose.from_quaternion(vals[:3], vals[3:7])


def load_sequence(path) -> SequenceManifest:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    root = path.parent
    intr = None
    scale = DEFAULT_DEPTH_SCALE
    entries: list[FrameEntry] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        where = f"{path}:{lineno}"
        try:
            if parts[0] == "intrinsics":
                fx, fy, cx, cy = map(float, parts[1:5])
                w, h = map(int, parts[5:7])
                if len(parts) != 7:
                    raise ValueError("expected 6 values")
                intr = CameraIntrinsics(fx, fy, cx, cy, w, h)
            elif parts[0] == "depth_scale":
                scale = float(parts[1])
                if not scale > 0:
                    raise ValueError("depth scale must be positive")
            else:
                if len(parts) not in (4, 11):
                    raise ValueError(f"frame line needs 4 or 11 fields, got {len(parts)}")
                opt = lambda s: None if s == "-" else root / s  # noqa: E731
                entry = FrameEntry(
                    float(parts[0]),
                    root / parts[1],
                    opt(parts[2]),
                    opt(parts[3]),
                    _parse_pose(parts[4:]) if len(parts) == 11 else None,
                )
                for p in (entry.depth_path, entry.color_path, entry.prediction_path):
                    if p is not None and not p.exists():
                        raise ValueError(f"missing file {p}")
                if entries and entry.timestamp <= entries[-1].timestamp:
                    raise ValueError("timestamps must be strictly increasing")
                entries.append(entry)
        except (ValueError, IndexError) as e:
            raise ManifestError(f"{where}: {e}") from e
    if intr is None:
        raise ManifestError(f"{path}: no intrinsics line")
    return SequenceManifest(path, intr, entries, scale)


def write_manifest(path, intr: CameraIntrinsics, entries: list[FrameEntry], depth_scale: float = DEFAULT_DEPTH_SCALE) -> None:
    path = Path(path)
    root = path.parent
    rel = lambda p: "-" if p is None else str(Path(p).relative_to(root))  # noqa: E731
    out = [
        "# segfusion sequence manifest",
        f"intrinsics {intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r} {intr.width} {intr.height}",
        f"depth_scale {depth_scale!r}",
    ]
    for e in entries:
        fields = [f"{e.timestamp:.6f}", rel(e.depth_path), rel(e.color_path), rel(e.prediction_path)]
        if e.pose is not None:
            fields += [f"{x:.17g}" for x in (*e.pose.translation, *e.pose.quaternion())]
        out.append(" ".join(fields))
    path.write_text("\n".join(out) + "\n")


def read_depth(path, scale: float = DEFAULT_DEPTH_SCALE, max_depth: float = DEFAULT_MAX_DEPTH) -> np.ndarray:
    """Read a 16-bit single-channel depth image and convert it to meters."""
    try:
        with Image.open(path) as img:
            raw = np.asarray(img)
    except OSError as e:
        raise ManifestError(f"cannot read depth image {path}: {e}") from e
    if raw.ndim != 2:
        raise ManifestError(f"{path}: depth image must be single-channel")
    return sanitize_depth(raw.astype(np.float64) * scale, max_depth)


def write_depth(path, depth: np.ndarray, scale: float = DEFAULT_DEPTH_SCALE) -> None:
    raw = np.round(np.asarray(depth) / scale)
    if raw.max(initial=0) > 65535:
        raise ValueError("depth exceeds the 16-bit range at this scale")
    Image.fromarray(raw.astype(np.uint16)).save(path)


def load_prediction_grid(path) -> np.ndarray:
    """Read an SFPG file: magic, little-endian u32 (rows, cols, classes), float32 data.

    Cells are renormalized when within 1e-3 of summing to one.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise PredictionGridError(f"cannot read {path}: {e}") from e
    if data[:4] != SFPG_MAGIC:
        raise PredictionGridError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 16:
        raise PredictionGridError(f"{path}: truncated header")
    h, w, n = struct.unpack("<3I", data[4:16])
    expected = 16 + 4 * h * w * n
    if len(data) != expected:
        raise PredictionGridError(f"{path}: size mismatch, {len(data)} bytes for {h}x{w}x{n} (expected {expected})")
    grid = np.frombuffer(data, dtype="<f4", offset=16).astype(np.float64).reshape(h, w, n)
    if not np.all(np.isfinite(grid)):
        raise PredictionGridError(f"{path}: non-finite probabilities")
    if np.any(grid < 0):
        raise PredictionGridError(f"{path}: negative probabilities")
    sums = grid.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-3):
        raise PredictionGridError(f"{path}: cell sums deviate from 1 by up to {np.abs(sums - 1).max():.3g}")
    return grid / sums[..., None]


def write_prediction_grid(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    h, w, n = grid.shape
    Path(path).write_bytes(SFPG_MAGIC + struct.pack("<3I", h, w, n) + grid.astype("<f4").tobytes())


def read_trajectory(path) -> list[tuple[float, Pose]]:
    """TUM trajectory: ``timestamp tx ty tz qx qy qz qw`` per line."""
    out = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ManifestError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
        out.append((float(parts[0]), _parse_pose(parts[1:])))
    return out


def write_trajectory(path, stamped_poses) -> None:
    lines = ["# timestamp tx ty tz qx qy qz qw"]
    for stamp, pose in stamped_poses:
        vals = (*pose.translation, *pose.quaternion())
        lines.append(f"{stamp:.6f} " + " ".join(f"{x:.17g}" for x in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def write_synthetic_sequence(frames, intr: CameraIntrinsics, out_dir, depth_scale: float = DEFAULT_DEPTH_SCALE,
                             with_poses: bool = True) -> Path:
    """Dump synthetic frames as PNG depth, SFPG grids, a trajectory file and a manifest."""
    out = Path(out_dir)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    (out / "pred").mkdir(exist_ok=True)
    entries = []
    for i, f in enumerate(frames):
        dpath = out / "depth" / f"{i:06d}.png"
        ppath = out / "pred" / f"{i:06d}.sfpg"
        write_depth(dpath, f.depth, depth_scale)
        write_prediction_grid(ppath, f.prediction)
        entries.append(FrameEntry(f.timestamp, dpath, None, ppath, f.pose if with_poses else None))
    write_trajectory(out / "groundtruth.txt", [(f.timestamp, f.pose) for f in frames])
    manifest = out / "manifest.txt"
    write_manifest(manifest, intr, entries, depth_scale)
    return manifest
