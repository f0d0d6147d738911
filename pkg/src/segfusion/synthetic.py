"""Analytic ray-cast scenes built from axis-aligned rectangles and boxes.

World axes follow the camera convention at the identity pose: x right,
y down, z forward. Scenes carry per-pixel ground-truth classes and object
ids alongside the depth frames and noisy low-resolution prediction grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CELL, DEFAULT_MAX_DEPTH, CameraIntrinsics, Pose

# class indices of the 13-category NYUv2 label set
BED, BOOKS, CEILING, CHAIR, FLOOR, FURNITURE, OBJECTS, PAINTING, SOFA, TABLE, TV, WALL, WINDOW = range(13)
CLASS_NAMES = (
    "bed", "books", "ceiling", "chair", "floor", "furniture", "objects",
    "painting", "sofa", "table", "tv", "wall", "window",
)  # fmt: skip

_TIE = 1e-9


@dataclass(frozen=True)
class Rect:
    """Rectangle in the plane ``x[axis] == offset``.

    ``lo`` and ``hi`` bound the two remaining axes in increasing axis order;
    use +-inf for an unbounded plane.
    """

    axis: int
    offset: float
    class_id: int
    lo: tuple[float, float] = (-np.inf, -np.inf)
    hi: tuple[float, float] = (np.inf, np.inf)
    object_id: int = -1


def box(lo, hi, class_id: int, object_id: int = -1) -> list[Rect]:
    """The six faces of an axis-aligned box."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    faces = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        for off in (lo[axis], hi[axis]):
            faces.append(
                Rect(axis, float(off), class_id, tuple(lo[others]), tuple(hi[others]), object_id)
            )
    return faces


@dataclass
class Scene:
    intrinsics: CameraIntrinsics
    surfaces: list[Rect]
    trajectory: list[Pose]
    n_classes: int = 13
    noise: float = 0.0  # probability a prediction cell is given a wrong class
    softness: float = 0.0  # mass spread uniformly over all classes
    seed: int = 0
    max_depth: float = DEFAULT_MAX_DEPTH
    background_class: int = WALL
    timestamps: list[float] | None = None


@dataclass
class SyntheticFrame:
    depth: np.ndarray  # (H, W) meters, 0 invalid
    prediction: np.ndarray  # (H/8, W/8, N)
    pose: Pose
    classes: np.ndarray  # (H, W) ground-truth class, -1 where depth is invalid
    objects: np.ndarray  # (H, W) ground-truth object id, -1 where depth is invalid
    timestamp: float = 0.0


def raycast(surfaces: list[Rect], pose: Pose, intr: CameraIntrinsics, max_depth: float = DEFAULT_MAX_DEPTH):
    """Depth, class and object id per pixel.

    Later surfaces win exact ties, so a rectangle listed after a coplanar
    plane shows up on top of it.
    """
    H, W = intr.shape
    ys, xs = np.mgrid[0:H, 0:W]
    d_cam = np.stack([(xs - intr.cx) / intr.fx, (ys - intr.cy) / intr.fy, np.ones((H, W))], axis=-1)
    d = pose.rotate(d_cam)
    o = pose.translation
    depth = np.full((H, W), np.inf)
    classes = np.full((H, W), -1, dtype=np.int64)
    objects = np.full((H, W), -1, dtype=np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        for idx, r in enumerate(surfaces):
            lam = (r.offset - o[r.axis]) / d[..., r.axis]
            ok = np.isfinite(lam) & (lam > 1e-9)
            others = [a for a in range(3) if a != r.axis]
            for k, a in enumerate(others):
                coord = o[a] + lam * d[..., a]
                ok &= (coord >= r.lo[k]) & (coord <= r.hi[k])
            ok &= lam <= depth + _TIE
            depth[ok] = lam[ok]
            classes[ok] = r.class_id
            objects[ok] = r.object_id if r.object_id >= 0 else idx
    bad = ~np.isfinite(depth) | (depth > max_depth)
    depth[bad] = 0.0
    classes[bad] = -1
    objects[bad] = -1
    return depth, classes, objects


def majority_cell_classes(classes: np.ndarray, n_classes: int, background: int) -> np.ndarray:
    """Most frequent valid class in each 8x8 block (lowest index on ties)."""
    H, W = classes.shape
    c = np.where(classes >= 0, classes, background) % n_classes
    blocks = c.reshape(H // CELL, CELL, W // CELL, CELL).transpose(0, 2, 1, 3).reshape(-1, CELL * CELL)
    counts = np.zeros((len(blocks), n_classes), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(len(blocks)), CELL * CELL), blocks.ravel()), 1)
    return np.argmax(counts, axis=1).reshape(H // CELL, W // CELL)


def prediction_from_classes(cell_classes: np.ndarray, n_classes: int, noise: float, softness: float, rng) -> np.ndarray:
    c = cell_classes.copy()
    if noise > 0:
        flip = rng.random(c.shape) < noise
        wrong = (c + rng.integers(1, n_classes, size=c.shape)) % n_classes
        c = np.where(flip, wrong, c)
    pred = np.full(c.shape + (n_classes,), softness / n_classes)
    np.put_along_axis(pred, c[..., None], 1.0 - softness + softness / n_classes, axis=-1)
    return pred


def generate_synthetic_scene(scene: Scene) -> list[SyntheticFrame]:
    if not scene.surfaces:
        raise ValueError("scene has no surfaces")
    if not scene.trajectory:
        raise ValueError("scene trajectory is empty")
    for a, b in zip(scene.trajectory, scene.trajectory[1:]):
        if not (np.all(np.isfinite(b.translation)) and np.all(np.isfinite(a.translation))):
            raise ValueError("trajectory contains non-finite poses")
    stamps = scene.timestamps or [i / 30.0 for i in range(len(scene.trajectory))]
    if len(stamps) != len(scene.trajectory) or np.any(np.diff(stamps) <= 0):
        raise ValueError("timestamps must be strictly increasing, one per pose")
    rng = np.random.default_rng(scene.seed)
    frames = []
    for pose, stamp in zip(scene.trajectory, stamps):
        depth, classes, objects = raycast(scene.surfaces, pose, scene.intrinsics, scene.max_depth)
        if not (depth > 0).any():
            raise ValueError("camera sees no surface; degenerate trajectory")
        cells = majority_cell_classes(classes, scene.n_classes, scene.background_class)
        pred = prediction_from_classes(cells, scene.n_classes, scene.noise, scene.softness, rng)
        frames.append(SyntheticFrame(depth, pred, pose, classes, objects, float(stamp)))
    return frames


# --- archetypes -------------------------------------------------------------


def static_trajectory(n_frames: int, pose: Pose | None = None) -> list[Pose]:
    return [pose or Pose.identity()] * n_frames


def jitter_trajectory(n_frames: int, rng, step_m: float = 0.005, step_deg: float = 0.3) -> list[Pose]:
    """Random walk of small camera motions starting at the identity."""
    poses = [Pose.identity()]
    for _ in range(n_frames - 1):
        dt = rng.normal(scale=step_m, size=3)
        dr = np.deg2rad(rng.normal(scale=step_deg, size=3))
        poses.append(poses[-1] @ Pose.from_rotvec(dr, dt))
    return poses


def single_plane(depth: float = 1.0, class_id: int = WALL) -> list[Rect]:
    return [Rect(2, depth, class_id, object_id=0)]


def painting_on_wall(intr: CameraIntrinsics, wall_depth: float = 2.0, pixel_box=None) -> list[Rect]:
    """A fronto-parallel wall with a coplanar painting.

    The painting spans ``pixel_box = (x0, y0, x1, y1)`` (half-open pixel
    bounds) as seen from the identity pose; the default is cell-aligned
    and covers the central part of the image.
    """
    W, H = intr.width, intr.height
    if pixel_box is None:
        x0, x1 = (W // 4) // CELL * CELL, (3 * W // 4) // CELL * CELL
        y0, y1 = (H // 4) // CELL * CELL, (3 * H // 4) // CELL * CELL
    else:
        x0, y0, x1, y1 = pixel_box
    # boundaries sit halfway between pixel centers so no ray grazes them
    X = lambda px: (px - 0.5 - intr.cx) * wall_depth / intr.fx  # noqa: E731
    Y = lambda py: (py - 0.5 - intr.cy) * wall_depth / intr.fy  # noqa: E731
    return [
        Rect(2, wall_depth, WALL, object_id=0),
        Rect(2, wall_depth, PAINTING, (X(x0), Y(y0)), (X(x1), Y(y1)), object_id=1),
    ]


def two_plane_corner(right: float = 0.8, back: float = 2.5) -> list[Rect]:
    """Back wall meeting a right-hand wall at 90 degrees."""
    return [Rect(2, back, WALL, object_id=0), Rect(0, right, FURNITURE, object_id=1)]


def room_corner(right: float = 0.8, back: float = 2.5, floor: float = 0.7) -> list[Rect]:
    """Two walls and a floor meeting at a corner; constrains all six pose degrees of freedom."""
    return two_plane_corner(right, back) + [Rect(1, floor, FLOOR, object_id=2)]


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> Pose:
    """Camera pose at ``eye`` looking toward ``target`` with image rows along ``down``."""
    eye = np.asarray(eye, float)
    z = np.asarray(target, float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(down, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), eye)


def corner_view(right: float = 0.8, back: float = 2.5, floor: float = 0.7, distance: float = 2.0) -> Pose:
    """Pose looking diagonally into the room corner so all three faces are seen obliquely."""
    corner = np.array([right, floor, back])
    return look_at(corner - distance * np.ones(3) / np.sqrt(3.0), corner)


def random_room(rng, n_boxes: int = 3, n_classes: int = 13) -> list[Rect]:
    """Floor, back wall, a coplanar painting and a few boxes standing on the floor."""
    back = rng.uniform(2.5, 3.5)
    floor = rng.uniform(0.6, 0.9)
    cls = lambda c: c % n_classes  # noqa: E731
    surfaces = [
        Rect(2, back, cls(WALL), object_id=0),
        Rect(1, floor, cls(FLOOR), object_id=1),
        Rect(2, back, cls(PAINTING), (rng.uniform(-1.0, -0.3), rng.uniform(-0.8, -0.4)),
             (rng.uniform(0.1, 0.8), rng.uniform(-0.1, 0.2)), object_id=2),
    ]  # fmt: skip
    for i in range(n_boxes):
        cx, cz = rng.uniform(-0.9, 0.9), rng.uniform(1.4, back - 0.5)
        sx, sz, h = rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.6)
        c = cls(int(rng.choice([BED, CHAIR, FURNITURE, SOFA, TABLE, TV])))
        surfaces += box((cx - sx / 2, floor - h, cz - sz / 2), (cx + sx / 2, floor, cz + sz / 2), c, object_id=3 + i)
    return surfaces
