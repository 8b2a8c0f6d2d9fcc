"""Non-learned 3D geometry: pose types, back-projection, sampling, alignment,
oriented-box IoU and pose-error metrics.

All functions are pure and operate on numpy arrays in the camera frame
(x right, y down, z forward, units of meters).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    DimensionMismatchError,
    EmptyMaskError,
    RankDeficientError,
)

ROT_TOL = 1e-6
MIN_EXTENT = 1e-3  # 1 mm floor applied when decoding diffused sizes


def is_rotation(R: np.ndarray, tol: float = ROT_TOL) -> bool:
    """True if R is orthonormal with det +1 within tol (Frobenius)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        return False
    ortho = np.linalg.norm(R.T @ R - np.eye(3)) <= tol
    return bool(ortho and abs(np.linalg.det(R) - 1.0) <= tol)


@dataclass(frozen=True)
class Pose9D:
    """Object pose: translation t (m), rotation R, full box extents s (m)."""

    t: np.ndarray
    R: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "s", np.asarray(self.s, dtype=np.float64).reshape(3))

    def validate(self) -> "Pose9D":
        if not is_rotation(self.R):
            raise DegenerateConfigurationError("R is not a rotation matrix")
        if not np.all(self.s > 0):
            raise DegenerateConfigurationError("extents must be positive")
        return self

    def to_flat(self) -> np.ndarray:
        """16 floats: t (3), row-major R (9), s (3), validity flag (1)."""
        return np.concatenate([self.t, self.R.reshape(9), self.s, [1.0]])

    @staticmethod
    def from_flat(v: np.ndarray) -> "Pose9D | None":
        v = np.asarray(v, dtype=np.float64).reshape(16)
        if v[15] == 0.0:
            return None
        return Pose9D(v[0:3], v[3:12].reshape(3, 3), v[12:15])


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @staticmethod
    def from_dict(d: dict) -> "Intrinsics":
        return Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


@dataclass(frozen=True)
class PointCloud:
    """N x 3 points, meters, camera frame."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise DimensionMismatchError(f"expected (N,3) points, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DegenerateConfigurationError("point cloud contains non-finite values")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class OrientedBox:
    """Oriented 3D box: center (m), rotation, full extents (m)."""

    center: np.ndarray
    R: np.ndarray
    extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "extents", np.asarray(self.extents, dtype=np.float64).reshape(3))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))


def pose_to_box(pose: Pose9D) -> OrientedBox:
    return OrientedBox(pose.t, pose.R, pose.s)


# Corner index encodes axis signs as bits (x<<2 | y<<1 | z); faces are quads
# ordered so (v1-v0) x (v2-v0) points outward.
_CORNER_SIGNS = np.array([[2 * ((i >> 2) & 1) - 1,
                           2 * ((i >> 1) & 1) - 1,
                           2 * (i & 1) - 1] for i in range(8)], dtype=np.float64)
_BOX_FACES = [
    [4, 6, 7, 5],  # +x
    [0, 1, 3, 2],  # -x
    [2, 3, 7, 6],  # +y
    [0, 4, 5, 1],  # -y
    [1, 5, 7, 3],  # +z
    [0, 2, 6, 4],  # -z
]


def box_corners(box: OrientedBox) -> np.ndarray:
    """8 corners, ordered by the sign-bit convention above."""
    local = _CORNER_SIGNS * (box.extents / 2.0)
    return box.center + local @ box.R.T


def _box_face_planes(box: OrientedBox):
    """Six half-spaces n.x <= d whose intersection is the box interior."""
    planes = []
    for axis in range(3):
        n = box.R[:, axis]
        c = float(n @ box.center)
        h = box.extents[axis] / 2.0
        planes.append((n, c + h))
        planes.append((-n, -(c - h)))
    return planes


def _clip_faces(faces, n, d, eps=1e-12):
    """Clip an outward-oriented convex polyhedron by the half-space n.x <= d."""
    kept = []
    cut = []
    for poly in faces:
        dist = poly @ n - d
        if np.all(dist <= eps):
            kept.append(poly)
            continue
        if np.all(dist >= -eps):
            continue
        out = []
        m = len(poly)
        for i in range(m):
            j = (i + 1) % m
            d0, d1 = dist[i], dist[j]
            if d0 <= eps:
                out.append(poly[i])
                if abs(d0) <= eps:
                    cut.append(poly[i])
            if (d0 < -eps and d1 > eps) or (d0 > eps and d1 < -eps):
                t = d0 / (d0 - d1)
                q = poly[i] + t * (poly[j] - poly[i])
                out.append(q)
                cut.append(q)
        if len(out) >= 3:
            kept.append(np.asarray(out))
    if len(cut) >= 3:
        cap = _order_cap(np.asarray(cut), n)
        if cap is not None:
            kept.append(cap)
    return kept


def _order_cap(points, n, tol=1e-9):
    """Deduplicate cut points and order them CCW around the outward normal n."""
    uniq = []
    for p in points:
        if not any(np.linalg.norm(p - q) < tol for q in uniq):
            uniq.append(p)
    if len(uniq) < 3:
        return None
    pts = np.asarray(uniq)
    centroid = pts.mean(axis=0)
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    # (e1, e2, n) is right-handed, so increasing angle is CCW about n and
    # the cap's outward normal stays aligned with n
    rel = pts - centroid
    ang = np.arctan2(rel @ e2, rel @ e1)
    return pts[np.argsort(ang)]


def _polyhedron_volume(faces) -> float:
    """Volume of an outward-oriented convex polyhedron (divergence theorem)."""
    vol = 0.0
    for poly in faces:
        v0 = poly[0]
        for i in range(1, len(poly) - 1):
            vol += float(v0 @ np.cross(poly[i], poly[i + 1]))
    return vol / 6.0


# Half-spaces are pulled in by a hair so exact face contact clips to the
# empty set instead of an unclosed zero-volume sliver.
_PLANE_SHRINK = 1e-11


def box_intersection_volume(a: OrientedBox, b: OrientedBox) -> float:
    """Exact intersection volume by clipping box a's polytope against b's faces."""
    corners = box_corners(a)
    faces = [corners[idx] for idx in _BOX_FACES]
    for n, d in _box_face_planes(b):
        faces = _clip_faces(faces, n, d - _PLANE_SHRINK)
        if not faces:
            return 0.0
    return max(_polyhedron_volume(faces), 0.0)


def iou3d(a: OrientedBox, b: OrientedBox) -> float:
    """3D IoU between oriented boxes; degenerate contact counts as 0."""
    inter = box_intersection_volume(a, b)
    inter = min(inter, a.volume, b.volume)
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def backproject(depth: np.ndarray, mask: np.ndarray, K: Intrinsics) -> PointCloud:
    """Back-project masked depth pixels into a camera-frame point cloud.

    One point per masked pixel with finite positive depth:
        x = (u - cx) z / fx,  y = (v - cy) z / fy,  z = depth[v, u]
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise DimensionMismatchError(
            f"depth {depth.shape} and mask {mask.shape} differ")
    valid = mask & np.isfinite(depth) & (depth > 0)
    if not np.any(valid):
        raise EmptyMaskError("no masked pixel with finite positive depth")
    v, u = np.nonzero(valid)
    z = depth[v, u]
    x = (u - K.cx) * z / K.fx
    y = (v - K.cy) * z / K.fy
    return PointCloud(np.stack([x, y, z], axis=1))


def project(points: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Perspective projection to pixel coordinates (u, v)."""
    pts = np.asarray(points, dtype=np.float64)
    u = pts[:, 0] * K.fx / pts[:, 2] + K.cx
    v = pts[:, 1] * K.fy / pts[:, 2] + K.cy
    return np.stack([u, v], axis=1)


def downsample(cloud: PointCloud, n: int = 1024, seed: int = 0) -> PointCloud:
    """Resample a cloud to exactly n points.

    N >= n draws a uniform random subset without replacement; N < n repeats
    every point floor(n/N) times and fills the remainder with a random
    subset, so the output's support always equals the input set.
    """
    pts = cloud.points
    N = pts.shape[0]
    rng = np.random.default_rng(seed)
    if N >= n:
        idx = rng.choice(N, size=n, replace=False)
    else:
        reps = np.tile(np.arange(N), n // N)
        extra = rng.choice(N, size=n % N, replace=False)
        idx = rng.permutation(np.concatenate([reps, extra]))
    return PointCloud(pts[idx])


def umeyama_align(src: PointCloud, dst: PointCloud):
    """Least-squares similarity transform: dst ~ scale * R @ src + t.

    Returns (scale, R, t) minimizing the sum of squared residuals, with
    det(R) = +1 enforced by sign correction on the smallest singular
    direction. Raises DegenerateConfigurationError when the source/target
    covariance has rank < 2 (collinear or coincident points).
    """
    X = np.asarray(src.points, dtype=np.float64)
    Y = np.asarray(dst.points, dtype=np.float64)
    if X.shape != Y.shape:
        raise DimensionMismatchError("source and target must have equal counts")
    N = X.shape[0]
    if N < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    mu_x = X.mean(axis=0)
    mu_y = Y.mean(axis=0)
    Xc = X - mu_x
    Yc = Y - mu_y
    cov = (Yc.T @ Xc) / N
    U, D, Vt = np.linalg.svd(cov)
    if np.sum(D > max(D[0], 1e-300) * 1e-9) < 2:
        raise DegenerateConfigurationError("covariance rank < 2")
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    var_x = float((Xc ** 2).sum() / N)
    scale = float((D * S).sum() / var_x)
    t = mu_y - scale * (R @ mu_x)
    return scale, R, t


def project_so3(M: np.ndarray) -> np.ndarray:
    """Nearest rotation to M in Frobenius norm via SVD."""
    M = np.asarray(M, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(M)):
        raise RankDeficientError("matrix has non-finite entries")
    U, S, Vt = np.linalg.svd(M)
    if S[2] < 1e-9:
        raise RankDeficientError(f"smallest singular value {S[2]:.3e} < 1e-9")
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


def rotation_angle_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations in degrees."""
    tr = np.trace(Ra @ Rb.T)
    return float(np.degrees(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0))))


def canonical_yaw(R: np.ndarray) -> np.ndarray:
    """Deterministic representative of the yaw orbit {R @ R_y(theta)}.

    Keeps the object's up axis (second column) and rebuilds the horizontal
    axes from a fixed world reference, so every member of the orbit maps to
    the same rotation. Gives yaw-symmetric objects a unique regression
    target instead of a circle of equally-correct ones. Any such section
    must switch reference somewhere; this one changes from world-x to
    world-z when the up axis leans within ~25 degrees of world-x.
    """
    R = np.asarray(R, dtype=np.float64)
    up = R[:, 1]
    ref = np.array([1.0, 0.0, 0.0])
    if abs(float(up @ ref)) > 0.9:
        ref = np.array([0.0, 0.0, 1.0])
    x = ref - float(ref @ up) * up
    x /= np.linalg.norm(x)
    return np.stack([x, up, np.cross(x, up)], axis=1)


def pose_errors(pred: Pose9D, gt: Pose9D, symmetric: bool = False):
    """(rotation error deg, translation error cm).

    With symmetric=True the rotation error is minimized over spins of the
    ground truth about its own y (up) axis, the convention for
    rotationally symmetric categories.
    """
    if symmetric:
        M = gt.R.T @ pred.R
        best_tr = M[1, 1] + float(np.hypot(M[0, 0] + M[2, 2], M[0, 2] - M[2, 0]))
        rot = float(np.degrees(np.arccos(np.clip((best_tr - 1.0) / 2.0, -1.0, 1.0))))
    else:
        rot = rotation_angle_deg(pred.R, gt.R)
    trans = float(np.linalg.norm(pred.t - gt.t) * 100.0)
    return rot, trans


# ---------------------------------------------------------------------------
# Pose vector codec: the 15-dim standardized diffusion state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoseStandardizer:
    """Per-channel standardization for the 15-dim pose vector.

    Layout: [t (3) | row-major R (9) | s (3)]. Translation is centered by
    the dataset mean and scaled by t_scale; rotation entries pass through
    raw; extents are scaled by s_scale.
    """

    t_mean: np.ndarray
    t_scale: float = 1.0
    s_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "t_mean", np.asarray(self.t_mean, dtype=np.float64).reshape(3))

    def encode(self, pose: Pose9D) -> np.ndarray:
        v = np.empty(15, dtype=np.float64)
        v[0:3] = (pose.t - self.t_mean) / self.t_scale
        v[3:12] = pose.R.reshape(9)
        v[12:15] = pose.s / self.s_scale
        return v

    def decode(self, v: np.ndarray) -> Pose9D:
        v = np.asarray(v, dtype=np.float64).reshape(15)
        t = v[0:3] * self.t_scale + self.t_mean
        M = v[3:12].reshape(3, 3)
        try:
            R = project_so3(M)
        except RankDeficientError:
            # nearly singular entries still pin down their dominant
            # directions; keep those instead of bailing to the identity
            U, _, Vt = np.linalg.svd(np.where(np.isfinite(M), M, 0.0))
            d = np.sign(np.linalg.det(U @ Vt)) or 1.0
            R = U @ np.diag([1.0, 1.0, d]) @ Vt
        s = np.maximum(np.abs(v[12:15]) * self.s_scale, MIN_EXTENT)
        return Pose9D(t, R, s)

    def to_dict(self) -> dict:
        return {"t_mean": self.t_mean.tolist(), "t_scale": self.t_scale,
                "s_scale": self.s_scale}

    @staticmethod
    def from_dict(d: dict) -> "PoseStandardizer":
        return PoseStandardizer(np.asarray(d["t_mean"]), d["t_scale"], d["s_scale"])


# ---------------------------------------------------------------------------
# On-disk point cloud format: raw little-endian float32 triples + JSON sidecar
# ---------------------------------------------------------------------------

def save_point_cloud(path, cloud: PointCloud) -> None:
    path = Path(path)
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    path.write_bytes(pts.tobytes())
    sidecar = {"count": int(len(cloud)), "frame": "camera", "units": "m"}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_point_cloud(path) -> PointCloud:
    path = Path(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    pts = raw.reshape(sidecar["count"], 3)
    return PointCloud(pts)
