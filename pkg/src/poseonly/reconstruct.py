"""Analytical 3D reconstruction from camera poses.

A track's position follows in closed form from its poses: each pair
(anchor-left, i) yields a signed depth of the feature in the anchor-left
view, the per-pair depths are fused with parallax weights proportional
to theta (zero-parallax pairs contribute nothing), and the fused depth
is pushed back along the anchor ray. An independent least-squares
triangulation is provided purely as a cross-check oracle.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AllPairsDegenerate, DegenerateTriangulation, NegativeDepth
from .geometry import THETA_FLOOR, Track, cross_rows, homogenize, skew
from .translation_solver import BaseViewPair, select_base_views

_REASON_SHORT = "below_min_track_len"
_REASON_DEGENERATE = "all_pairs_degenerate"
_REASON_NEGATIVE = "negative_depth"


@dataclass(frozen=True)
class ReconstructedPoint:
    """One accepted track position with its fusion diagnostics."""

    track_id: int
    position_w: np.ndarray  # (3,)
    fused_depth: float  # depth in the anchor-left view
    weight_sum: float  # sum of theta over contributing pairs
    contributing_views: int


@dataclass
class ReconstructionResult:
    """Accepted points (ordered by track_id) plus rejection bookkeeping."""

    points: list
    rejected: list  # (track_id, reason) pairs

    @property
    def counts(self) -> dict:
        out = {_REASON_DEGENERATE: 0, _REASON_NEGATIVE: 0, _REASON_SHORT: 0}
        for _, reason in self.rejected:
            out[reason] += 1
        return out

    def position_by_track(self) -> dict:
        return {p.track_id: p.position_w for p in self.points}


def _pose_arrays(poses):
    R = np.stack([p.rotation for p in poses])
    C = np.stack([p.center for p in poses])
    return R, C


def _anchored_depths(track: Track, base: BaseViewPair, R, C, floor):
    """Signed anchor-left depths and thetas of every pair (left, i)."""
    left = base.left
    x_left = track.point_in_view(left)
    g_left = R[left].T @ homogenize(x_left)
    mask = track.view_ids != left
    views = track.view_ids[mask]
    X = homogenize(track.points[mask])
    R_views = R[views]
    U = R_views @ g_left  # rotated anchor ray per pair
    T = (R_views @ (C[left] - C[views])[:, :, None])[:, :, 0]
    thetas = np.linalg.norm(cross_rows(X, U), axis=1)
    uv = np.einsum("ki,ki->k", U, X)
    a = X * uv[:, None] - U * np.einsum("ki,ki->k", X, X)[:, None]
    usable = thetas > floor
    depths = np.zeros(len(views))
    th_sq = thetas[usable] ** 2
    depths[usable] = np.einsum("ki,ki->k", a[usable], T[usable]) / th_sq
    return depths, thetas, usable


def _fused_depth(track, base, R, C, floor):
    depths, thetas, usable = _anchored_depths(track, base, R, C, floor)
    weight_sum = float(thetas[usable].sum())
    if not usable.any() or weight_sum <= floor:
        raise AllPairsDegenerate(f"track {track.track_id}: no pair carries parallax")
    fused = float((thetas[usable] / weight_sum) @ depths[usable])
    return fused, weight_sum, int(usable.sum())


def _reconstruct_with_arrays(track, base, R, C, floor) -> ReconstructedPoint:
    fused, weight_sum, contributing = _fused_depth(track, base, R, C, floor)
    if fused <= 0:
        raise NegativeDepth(
            f"track {track.track_id}: fused depth {fused!r} is not positive"
        )
    left = base.left
    ray_w = R[left].T @ homogenize(track.point_in_view(left))
    return ReconstructedPoint(
        track_id=track.track_id,
        position_w=fused * ray_w + C[left],
        fused_depth=fused,
        weight_sum=weight_sum,
        contributing_views=contributing,
    )


def weighted_depth(track: Track, base: BaseViewPair, poses, theta_min: float = 0.0):
    """Parallax-weighted fused depth of the track in its anchor-left view.

    Weights are theta / sum(theta) over usable pairs, so they sum to one
    and pairs nearing pure rotation fade out smoothly.
    """
    R, C = _pose_arrays(poses)
    fused, weight_sum, _ = _fused_depth(track, base, R, C, max(theta_min, THETA_FLOOR))
    return fused, weight_sum


def reconstruct_point(
    track: Track, base: BaseViewPair, poses, theta_min: float = 0.0
) -> ReconstructedPoint:
    """Push the fused depth back along the anchor-left ray into the world."""
    R, C = _pose_arrays(poses)
    return _reconstruct_with_arrays(track, base, R, C, max(theta_min, THETA_FLOOR))


def reconstruct_all(
    tracks,
    poses,
    bases: dict | None = None,
    theta_min: float = 0.0,
    min_track_len: int = 2,
) -> ReconstructionResult:
    """Reconstruct every track; rejected tracks are reported, not raised.

    ``bases`` maps track_id to a previously selected anchor pair; anchors
    for missing tracks are selected from the supplied poses. Raising
    ``min_track_len`` to 3 drops two-view tracks, which on weak data
    removes the least-constrained points.
    """
    R, C = _pose_arrays(poses)
    floor = max(theta_min, THETA_FLOOR)
    points, rejected = [], []
    for track in sorted(tracks, key=lambda t: t.track_id):
        if len(track) < min_track_len:
            rejected.append((track.track_id, _REASON_SHORT))
            continue
        base = bases.get(track.track_id) if bases else None
        try:
            if base is None:
                base = select_base_views(track, R, theta_min)
            points.append(_reconstruct_with_arrays(track, base, R, C, floor))
        except AllPairsDegenerate:
            rejected.append((track.track_id, _REASON_DEGENERATE))
        except NegativeDepth:
            rejected.append((track.track_id, _REASON_NEGATIVE))
    return ReconstructionResult(points=points, rejected=rejected)


def triangulate_dlt(track: Track, poses) -> np.ndarray:
    """Independent linear triangulation used as a cross-check oracle.

    Stacks ``[X_i]x R_i (X - c_i) = 0`` rows and solves the resulting
    least-squares system directly; shares no code path with the fused
    reconstruction above.
    """
    rows = []
    rhs = []
    for view, xy in zip(track.view_ids, track.points):
        pose = poses[view]
        K = skew(homogenize(xy)) @ pose.rotation
        rows.append(K)
        rhs.append(K @ pose.center)
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    s = np.linalg.svd(A, compute_uv=False)
    if s[2] <= 1e-10 * s[0]:
        raise DegenerateTriangulation(
            f"track {track.track_id}: stacked system rank < 3"
        )
    solution, *_ = np.linalg.lstsq(A, b, rcond=None)
    return solution
