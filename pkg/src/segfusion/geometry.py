"""Per-frame geometry: vertex and normal maps, geometric edges, point-to-plane ICP."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import CameraIntrinsics, Pose, round_half_away

log = logging.getLogger(__name__)

# right, down, down-right
NEIGHBOR_OFFSETS = ((0, 1), (1, 0), (1, 1))


@dataclass(frozen=True)
class VertexMap:
    points: np.ndarray  # (H, W, 3) camera-frame meters
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.valid.shape


@dataclass(frozen=True)
class NormalMap:
    normals: np.ndarray  # (H, W, 3) unit vectors
    valid: np.ndarray

    @property
    def shape(self):
        return self.valid.shape


class DegenerateGeometryError(RuntimeError):
    """Raised when the ICP normal equations are too ill-conditioned to solve."""


class InsufficientInliersError(RuntimeError):
    pass


def compute_vertex_map(depth: np.ndarray, intr: CameraIntrinsics) -> VertexMap:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != intr.shape:
        raise ValueError(f"depth shape {depth.shape} does not match intrinsics {intr.shape}")
    valid = depth > 0
    ys, xs = np.mgrid[0 : intr.height, 0 : intr.width]
    pts = np.empty(depth.shape + (3,))
    pts[..., 0] = depth * (xs - intr.cx) / intr.fx
    pts[..., 1] = depth * (ys - intr.cy) / intr.fy
    pts[..., 2] = depth
    pts[~valid] = 0.0
    return VertexMap(pts, valid)


def compute_normal_map(vmap: VertexMap) -> NormalMap:
    """Normals from the cross product of central differences.

    A normal is valid only when the pixel and its four direct neighbors are
    valid, so the one-pixel image border is always invalid.
    """
    v, ok = vmap.points, vmap.valid
    H, W = ok.shape
    normals = np.zeros((H, W, 3))
    valid = np.zeros((H, W), dtype=bool)
    if H < 3 or W < 3:
        return NormalMap(normals, valid)

    dx = v[1:-1, 2:] - v[1:-1, :-2]
    dy = v[2:, 1:-1] - v[:-2, 1:-1]
    n = np.cross(dx, dy)
    length = np.linalg.norm(n, axis=-1)
    inner = ok[1:-1, 1:-1] & ok[1:-1, 2:] & ok[1:-1, :-2] & ok[2:, 1:-1] & ok[:-2, 1:-1] & (length > 1e-12)
    n = n / np.where(length > 0, length, 1.0)[..., None]
    # face the camera
    flip = np.einsum("ijk,ijk->ij", n, v[1:-1, 1:-1]) > 0
    n[flip] *= -1.0
    n[~inner] = 0.0
    normals[1:-1, 1:-1] = n
    valid[1:-1, 1:-1] = inner
    return NormalMap(normals, valid)


def geometric_edge_map(
    vmap: VertexMap,
    nmap: NormalMap,
    max_angle: float = np.deg2rad(20.0),
    max_distance: float = 0.05,
) -> np.ndarray:
    """Binary geometric edge map from normal-angle and point-to-plane tests.

    A pixel is an edge when, against any existing right, down or down-right
    neighbor that is itself valid, the normals differ by more than
    ``max_angle`` or the neighbor lies more than ``max_distance`` off the
    pixel's tangent plane. Pixels without a valid vertex and normal are edges.
    """
    if vmap.shape != nmap.shape:
        raise ValueError("vertex and normal maps must share dimensions")
    H, W = vmap.shape
    ok = vmap.valid & nmap.valid
    v, n = vmap.points, nmap.normals
    cos_max = np.cos(max_angle)
    edge = ~ok
    for dy, dx in NEIGHBOR_OFFSETS:
        a = (slice(0, H - dy), slice(0, W - dx))
        b = (slice(dy, H), slice(dx, W))
        both = ok[a] & ok[b]
        cosang = np.einsum("ijk,ijk->ij", n[a], n[b])
        dist = np.abs(np.einsum("ijk,ijk->ij", n[a], v[b] - v[a]))
        edge[a] |= both & ((cosang < cos_max) | (dist > max_distance))
    return edge.astype(np.uint8)


@dataclass
class IcpReport:
    residual: float  # final RMS point-to-plane residual, meters
    inliers: int
    condition: float
    iterations: list[int] = field(default_factory=list)  # per pyramid level, coarse first
    errors: list[float] = field(default_factory=list)  # mean squared residual after each accepted step


@dataclass(frozen=True)
class _Level:
    points: np.ndarray
    normals: np.ndarray
    valid: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float


def _pyramid(vmap: VertexMap, nmap: NormalMap, intr: CameraIntrinsics, levels: int) -> list[_Level]:
    out = []
    for lvl in range(levels):
        s = 2**lvl
        out.append(
            _Level(
                vmap.points[::s, ::s],
                nmap.normals[::s, ::s],
                (vmap.valid & nmap.valid)[::s, ::s],
                intr.fx / s,
                intr.fy / s,
                intr.cx / s,
                intr.cy / s,
            )
        )
    return out


def _associate(cur: _Level, ref: _Level, T: Pose, max_distance: float, cos_max: float):
    p = T.transform(cur.points[cur.valid])
    n = T.rotate(cur.normals[cur.valid])
    z = p[:, 2]
    zs = np.where(z > 0, z, 1.0)
    u = round_half_away(ref.fx * p[:, 0] / zs + ref.cx)
    v = round_half_away(ref.fy * p[:, 1] / zs + ref.cy)
    H, W = ref.valid.shape
    inframe = (z > 0) & (u >= 0) & (u < W) & (v >= 0) & (v < H)
    p, n, u, v = p[inframe], n[inframe], u[inframe].astype(int), v[inframe].astype(int)
    hit = ref.valid[v, u]
    p, n, u, v = p[hit], n[hit], u[hit], v[hit]
    q = ref.points[v, u]
    m = ref.normals[v, u]
    keep = (np.linalg.norm(p - q, axis=1) <= max_distance) & (np.einsum("ij,ij->i", n, m) >= cos_max)
    return p[keep], q[keep], m[keep]


def icp_point_to_plane(
    cur_vmap: VertexMap,
    cur_nmap: NormalMap,
    ref_vmap: VertexMap,
    ref_nmap: NormalMap,
    intr: CameraIntrinsics,
    init: Pose | None = None,
    *,
    levels: int = 3,
    max_iterations: int = 10,
    max_distance: float = 0.1,
    max_angle: float = np.deg2rad(30.0),
    min_inliers: int = 100,
    max_condition: float = 1e6,
) -> tuple[Pose, IcpReport]:
    """Align the current frame to a reference (model) frame.

    Both map pairs are in their own camera coordinates; the returned pose maps
    current-camera coordinates into reference-camera coordinates. Data
    association is projective, the solver is Gauss-Newton on the linearised
    point-to-plane error, run coarse to fine. A step that increases the error
    is rejected and ends that pyramid level.
    """
    if cur_vmap.shape != ref_vmap.shape or cur_vmap.shape != intr.shape:
        raise ValueError("current and reference maps must match the intrinsics resolution")
    T = init if init is not None else Pose.identity()
    cos_max = np.cos(max_angle)
    cur_pyr = _pyramid(cur_vmap, cur_nmap, intr, levels)
    ref_pyr = _pyramid(ref_vmap, ref_nmap, intr, levels)
    report = IcpReport(residual=np.inf, inliers=0, condition=np.inf)

    def error_at(cur, ref, pose):
        p, q, m = _associate(cur, ref, pose, max_distance, cos_max)
        if len(p) < min_inliers:
            raise InsufficientInliersError(f"only {len(p)} inliers (need {min_inliers})")
        r = np.einsum("ij,ij->i", m, p - q)
        return float(np.mean(r**2)), p, q, m, r

    for lvl in reversed(range(levels)):
        cur, ref = cur_pyr[lvl], ref_pyr[lvl]
        err, p, q, m, r = error_at(cur, ref, T)
        iters = 0
        for _ in range(max_iterations):
            J = np.hstack([np.cross(p, m), m])
            A = J.T @ J
            b = -J.T @ r
            cond = np.linalg.cond(A)
            report.condition = float(cond)
            if not np.isfinite(cond) or cond > max_condition:
                raise DegenerateGeometryError(f"normal equations condition number {cond:.3g} exceeds {max_condition:g}")
            xi = np.linalg.solve(A, b)
            T_new = Pose.exp(xi) @ T
            err_new, p_new, q_new, m_new, r_new = error_at(cur, ref, T_new)
            iters += 1
            if err_new > err:
                break
            T, err, p, q, m, r = T_new, err_new, p_new, q_new, m_new, r_new
            report.errors.append(err)
            if np.linalg.norm(xi) < 1e-10:
                break
        report.iterations.append(iters)
        report.residual = float(np.sqrt(err))
        report.inliers = len(p)
        log.debug("icp level %d: %d iterations, rms %.3g, %d inliers", lvl, iters, report.residual, len(p))
    return T, report
