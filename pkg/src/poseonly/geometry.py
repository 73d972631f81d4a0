"""Two-view and multi-view pose-only geometric primitives.

Conventions used throughout the package:

* A camera pose is a world-to-camera rotation ``R`` plus the camera
  center ``c`` expressed in the world frame; a world point maps into the
  camera frame as ``X_cam = R @ (X_world - c)``.
* A normalized image point is a plain ``(x, y)`` array on the ``z = 1``
  plane; the third homogeneous coordinate is always exactly 1 (see
  :func:`homogenize`) and is never stored.
* For a view pair ``(i, j)`` the relative pose is
  ``R_ij = R_j @ R_i.T`` and ``t_ij = R_j @ (c_i - c_j)`` (pose of view
  i expressed in view j's frame).
* The parallax indicator of a pair is
  ``theta = || X_j x (R_ij @ X_i) ||`` with both rays homogenized; it is
  zero exactly when the pair is related by a pure rotation.

All functions are pure and operate on immutable inputs; they are safe to
call concurrently.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePair, NonPositiveDepth

# Hard floor guarding divisions by theta**2; rays on the z=1 plane keep
# theta at O(1) scale, so anything at 1e-12 is rounding noise, not parallax.
THETA_FLOOR = 1e-12

# Depth at or below this counts as "behind the camera" for projection.
MIN_PROJECTION_DEPTH = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """3x3 antisymmetric matrix such that skew(v) @ w == cross(v, w)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def skew_batch(V: np.ndarray) -> np.ndarray:
    """Skew matrices for a batch of vectors, shape (N, 3) -> (N, 3, 3)."""
    out = np.zeros(V.shape[:-1] + (3, 3))
    out[..., 0, 1] = -V[..., 2]
    out[..., 0, 2] = V[..., 1]
    out[..., 1, 0] = V[..., 2]
    out[..., 1, 2] = -V[..., 0]
    out[..., 2, 0] = -V[..., 1]
    out[..., 2, 1] = V[..., 0]
    return out


def homogenize(points: np.ndarray) -> np.ndarray:
    """Append the implicit third coordinate 1 to (x, y) points.

    Accepts a single (2,) point or an (N, 2) batch.
    """
    points = np.asarray(points, dtype=float)
    out = np.empty(points.shape[:-1] + (3,))
    out[..., :2] = points
    out[..., 2] = 1.0
    return out


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors without ufunc dispatch overhead."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def cross_rows(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Row-wise cross product of two (N, 3) arrays."""
    out = np.empty_like(A)
    out[:, 0] = A[:, 1] * B[:, 2] - A[:, 2] * B[:, 1]
    out[:, 1] = A[:, 2] * B[:, 0] - A[:, 0] * B[:, 2]
    out[:, 2] = A[:, 0] * B[:, 1] - A[:, 1] * B[:, 0]
    return out


def rotation_about(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rotation matrix for a unit axis and an angle (Rodrigues form)."""
    axis = np.asarray(axis, dtype=float)
    K = skew(axis)
    return np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * (K @ K)


def rotation_geodesic_deg(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    cos_angle = (np.trace(R_a @ R_b.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cos_angle, -1.0, 1.0))))


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    """True when R is orthonormal and proper within ``tol``."""
    R = np.asarray(R)
    if R.shape != (3, 3):
        return False
    ortho = np.linalg.norm(R.T @ R - np.eye(3))
    return ortho < tol and abs(np.linalg.det(R) - 1.0) < tol


def check_rotation(R: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate a rotation matrix; returns it as a float64 array."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got shape {R.shape}")
    ortho = np.linalg.norm(R.T @ R - np.eye(3))
    if ortho >= tol:
        raise ValueError(f"matrix is not orthonormal (||R'R - I|| = {ortho:.3e})")
    det = np.linalg.det(R)
    if abs(det - 1.0) >= tol:
        raise ValueError(f"matrix is not a proper rotation (det = {det!r})")
    return R


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rotation plus camera center in the world frame."""

    rotation: np.ndarray  # (3, 3), world -> camera
    center: np.ndarray  # (3,), camera position in world units

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        center = np.asarray(self.center, dtype=float).reshape(3)
        object.__setattr__(self, "center", center)

    def to_camera(self, points_w: np.ndarray) -> np.ndarray:
        """Map world points (3,) or (N, 3) into this camera's frame."""
        return (np.asarray(points_w, dtype=float) - self.center) @ self.rotation.T


@dataclass(frozen=True)
class GlobalScale:
    """A global scale factor applied jointly to all centers and points."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"scale must be positive, got {self.alpha!r}")


@dataclass(frozen=True)
class Track:
    """All observations of one 3D feature across views.

    ``view_ids`` are strictly increasing and ``points[k]`` is the
    normalized image coordinate seen in ``view_ids[k]``.
    """

    track_id: int
    view_ids: np.ndarray  # (K,) int
    points: np.ndarray  # (K, 2) float

    def __post_init__(self):
        view_ids = np.asarray(self.view_ids, dtype=int).reshape(-1)
        points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(view_ids) < 2:
            raise ValueError(
                f"track {self.track_id} needs at least 2 observations"
            )
        if len(view_ids) != len(points):
            raise ValueError("view_ids and points lengths differ")
        if np.any(np.diff(view_ids) <= 0):
            raise ValueError(
                f"track {self.track_id}: view ids must be strictly increasing"
            )
        object.__setattr__(self, "view_ids", view_ids)
        object.__setattr__(self, "points", points)

    def __len__(self) -> int:
        return len(self.view_ids)

    def point_in_view(self, view_id: int) -> np.ndarray:
        k = int(np.searchsorted(self.view_ids, view_id))
        if k >= len(self.view_ids) or self.view_ids[k] != view_id:
            raise KeyError(f"track {self.track_id} has no view {view_id}")
        return self.points[k]


@dataclass(frozen=True)
class PairGeometry:
    """Derived two-view quantities for a pair (i, j).

    ``ray_i`` is the left ray rotated into the right frame
    (``R_ij @ X_i``), ``ray_j`` the homogenized right observation; both
    are cached because every linear residual form below consumes them.
    ``a_vec`` and ``b_vec`` are the vectors that express the left/right
    depths linearly in the relative translation:
    ``d_i = a_vec . t / theta**2`` and ``d_j = b_vec . t / theta**2``.
    """

    rel_rotation: np.ndarray  # (3, 3)
    rel_translation: np.ndarray  # (3,)
    theta: float
    a_vec: np.ndarray  # (3,)
    b_vec: np.ndarray  # (3,)
    ray_i: np.ndarray  # (3,)  R_ij @ homogenize(x_i)
    ray_j: np.ndarray  # (3,)  homogenize(x_j)


def project(pose: CameraPose, point_w: np.ndarray) -> np.ndarray:
    """Project a world point to a normalized image point.

    Raises NonPositiveDepth when the point sits behind or on the camera
    plane (depth <= 1e-12).
    """
    X_cam = pose.rotation @ (np.asarray(point_w, dtype=float) - pose.center)
    z = X_cam[2]
    if z <= MIN_PROJECTION_DEPTH:
        raise NonPositiveDepth(f"depth {z!r} is not positive")
    return X_cam[:2] / z


def project_points(
    rotations: np.ndarray, centers: np.ndarray, points_w: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Project M points into N cameras at once.

    Returns ``(obs, depths)`` with shapes (N, M, 2) and (N, M); no
    cheirality check is applied, callers inspect ``depths``.
    """
    rotations = np.asarray(rotations, dtype=float)
    centers = np.asarray(centers, dtype=float)
    points_w = np.asarray(points_w, dtype=float)
    # (N, M, 3): R_v @ (X_m - c_v)
    cam = np.einsum("vij,vmj->vmi", rotations, points_w[None, :, :] - centers[:, None, :])
    depths = cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        obs = cam[..., :2] / depths[..., None]
    return obs, depths


def relative_pose(pose_i: CameraPose, pose_j: CameraPose):
    """Pose of view i expressed in view j's frame: (R_ij, t_ij)."""
    R_ij = pose_j.rotation @ pose_i.rotation.T
    t_ij = pose_j.rotation @ (pose_i.center - pose_j.center)
    return R_ij, t_ij


def relative_from_arrays(R_i, R_j, c_i, c_j):
    """Array form of :func:`relative_pose` for hot paths."""
    return R_j @ R_i.T, R_j @ (np.asarray(c_i) - np.asarray(c_j))


def compute_pair_geometry(rel, x_i: np.ndarray, x_j: np.ndarray) -> PairGeometry:
    """Derive theta and the depth coefficient vectors for one pair.

    ``rel`` is the (R_ij, t_ij) tuple of :func:`relative_pose`. A zero
    theta is a valid output; degeneracy is flagged by the consumers.
    """
    R_ij, t_ij = rel
    u = R_ij @ homogenize(x_i)  # left ray in the right frame
    v = homogenize(x_j)
    theta = float(np.linalg.norm(np.cross(v, u)))
    uv = float(u @ v)
    a_vec = v * uv - u * float(v @ v)
    b_vec = v * float(u @ u) - u * uv
    return PairGeometry(
        rel_rotation=np.asarray(R_ij, dtype=float),
        rel_translation=np.asarray(t_ij, dtype=float),
        theta=theta,
        a_vec=a_vec,
        b_vec=b_vec,
        ray_i=u,
        ray_j=v,
    )


def pair_geometry(pose_i: CameraPose, pose_j: CameraPose, x_i, x_j) -> PairGeometry:
    """Convenience wrapper building the pair geometry from two poses."""
    return compute_pair_geometry(relative_pose(pose_i, pose_j), x_i, x_j)


def _require_theta(pg: PairGeometry, theta_min: float) -> float:
    floor = max(theta_min, THETA_FLOOR)
    if pg.theta <= floor:
        raise DegeneratePair(
            f"theta {pg.theta!r} at or below floor {floor!r} (pure-rotation pair)"
        )
    return floor


def pair_depths(pg: PairGeometry, theta_min: float = 0.0):
    """Closed-form depth magnitudes (d_i, d_j) of the pair's feature.

    ``d_i = ||X_j x t|| / theta`` and ``d_j = ||(R_ij X_i) x t|| / theta``.
    Values equal the signed linear forms of :func:`linear_depths` on
    consistent front-of-camera geometry.
    """
    _require_theta(pg, theta_min)
    t = pg.rel_translation
    d_i = float(np.linalg.norm(np.cross(pg.ray_j, t))) / pg.theta
    d_j = float(np.linalg.norm(np.cross(pg.ray_i, t))) / pg.theta
    return d_i, d_j


def linear_depths(pg: PairGeometry, theta_min: float = 0.0):
    """Signed depths (a.t / theta^2, b.t / theta^2).

    Reported unclamped: the sign carries the cheirality information the
    translation solver's disambiguation step relies on.
    """
    _require_theta(pg, theta_min)
    t = pg.rel_translation
    theta_sq = pg.theta * pg.theta
    return float(pg.a_vec @ t) / theta_sq, float(pg.b_vec @ t) / theta_sq


def pair_residual(pg: PairGeometry, x_i, x_j, theta_min: float = 0.0) -> np.ndarray:
    """Two-view pose-only constraint residual ``d_j X_j - d_i R_ij X_i - t``.

    Uses the signed linear depths; exactly zero (to rounding) on
    consistent geometry.
    """
    d_i, d_j = linear_depths(pg, theta_min)
    return (
        d_j * homogenize(x_j)
        - d_i * (pg.rel_rotation @ homogenize(x_i))
        - pg.rel_translation
    )


def linear_translation_residual(
    pair: PairGeometry, base: PairGeometry | None = None, form: str = "two_view"
) -> np.ndarray:
    """Linear-in-translation residual of one pair, or of a pair anchored
    to a base pair sharing the same left view.

    two_view:   (X_j b' - R_ij X_i a' - theta^2 I) t_ij         for ``pair``
    multi_view: th_p^2 (R X_left)(a_b . t_b) + th_b^2 th_p^2 t_p
                - th_b^2 X_right (b_p . t_p)
                where suffix ``p`` is ``pair`` (left, i) and ``b`` is the
                anchor ``base`` (left, right-anchor).

    In the multi-view form the depth of the shared left view is taken
    from the anchor pair, so the a-vector and the translation in the
    first term must both come from ``base``; pairing base's a-vector
    with pair's translation (or vice versa) breaks the identity.
    Both forms vanish on exact geometry and need no theta floor.
    """
    if form == "two_view":
        t = pair.rel_translation
        return (
            pair.ray_j * float(pair.b_vec @ t)
            - pair.ray_i * float(pair.a_vec @ t)
            - (pair.theta**2) * t
        )
    if form == "multi_view":
        if base is None:
            raise ValueError("multi_view form requires the anchor pair")
        th_p = pair.theta**2
        th_b = base.theta**2
        t_p = pair.rel_translation
        return (
            th_p * pair.ray_i * float(base.a_vec @ base.rel_translation)
            + th_b * th_p * t_p
            - th_b * pair.ray_j * float(pair.b_vec @ t_p)
        )
    raise ValueError(f"unknown form {form!r}")


def scale_scene(centers: np.ndarray, points_w: np.ndarray, scale: GlobalScale):
    """Apply a global scale to camera centers and world points jointly."""
    return centers * scale.alpha, points_w * scale.alpha
