"""Pose-only nonlinear refinement.

Minimizes reprojection error over camera poses alone: for each track the
feature's depth in its anchor-left view is expressed through the anchor
pair's observed rays and the current poses, so no 3D point parameters
exist. The parameter space is 6(n-1)-1: the reference pose is fixed
entirely and the scale-anchor view's center norm is frozen, which kills
the similarity gauge of the cost.

Rotation increments are axis-angle vectors applied as right-multiplied
perturbations of the current rotations; the scale anchor moves on its
sphere through a two-parameter tangent update. Damped (Levenberg-
Marquardt) normal equations with Marquardt diagonal scaling drive the
iteration; steps that do not lower the cost are rejected, so the cost
history is non-increasing by construction.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.spatial.transform import Rotation

from .errors import DegenerateBase, DivergedNumerically
from .geometry import THETA_FLOOR, CameraPose, homogenize, skew, skew_batch
from .translation_solver import select_base_views


@dataclass(frozen=True)
class PAConfig:
    max_iter: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    lm_lambda0: float = 1e-3
    lm_up: float = 10.0
    lm_down: float = 10.0
    theta_min: float = 0.0
    refine_rotations: bool = True


@dataclass
class OptimizeReport:
    iterations: int
    initial_cost: float
    final_cost: float
    cost_history: list
    converged: bool
    termination: str  # gradient | step | max_iter
    dropped_tracks: int = 0


@dataclass(frozen=True)
class ResidualLayout:
    """Slot bookkeeping: one 2-vector residual per (track, view != anchor
    left) pair, tracks ordered by id, views in track order."""

    track_ids: tuple
    slot_offsets: tuple  # per track, first slot index
    n_slots: int

    @property
    def n_residuals(self) -> int:
        return 2 * self.n_slots


def build_layout(tracks, bases) -> ResidualLayout:
    ids, offsets = [], []
    cursor = 0
    for track in sorted(tracks, key=lambda t: t.track_id):
        if track.track_id not in bases:
            continue
        ids.append(track.track_id)
        offsets.append(cursor)
        cursor += len(track) - 1
    return ResidualLayout(tuple(ids), tuple(offsets), cursor)


class PoseParameterization:
    """Maps a flat increment vector onto per-view pose updates.

    Layout per non-reference view (ascending id): 3 rotation parameters
    (when rotations are refined) then the translation parameters - 3 for
    free views, 2 tangent parameters for the scale-anchor view whose
    center norm stays at ``anchor_radius``.
    """

    def __init__(self, n_views, reference_view, anchor_view=None,
                 refine_rotations=True, anchor_radius=None):
        self.n_views = n_views
        self.reference_view = reference_view
        self.anchor_view = anchor_view
        self.refine_rotations = refine_rotations
        self.anchor_radius = anchor_radius
        if anchor_view is not None and not (anchor_radius and anchor_radius > 0):
            raise ValueError("anchor view requires a positive frozen radius")
        self.rot_col = np.full(n_views, -1, dtype=int)
        self.trans_col = np.full(n_views, -1, dtype=int)
        self.trans_width = np.zeros(n_views, dtype=int)
        cursor = 0
        for v in range(n_views):
            if v == reference_view:
                continue
            if refine_rotations:
                self.rot_col[v] = cursor
                cursor += 3
            width = 2 if v == anchor_view else 3
            self.trans_col[v] = cursor
            self.trans_width[v] = width
            cursor += width
        self.n_params = cursor

    def anchor_basis(self, center: np.ndarray) -> np.ndarray:
        """Orthonormal tangent basis (3, 2) of the anchor sphere at
        ``center``; deterministic in the center alone."""
        unit = center / np.linalg.norm(center)
        helper = np.array([1.0, 0.0, 0.0])
        if abs(unit @ helper) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        e1 = helper - (helper @ unit) * unit
        e1 = e1 / np.linalg.norm(e1)
        e2 = np.cross(unit, e1)
        return np.stack([e1, e2], axis=1)

    def apply(self, Rs: np.ndarray, Cs: np.ndarray, delta: np.ndarray):
        """New pose arrays after the increment; inputs are untouched."""
        Rs_new = Rs.copy()
        Cs_new = Cs.copy()
        if self.refine_rotations:
            views = [v for v in range(self.n_views) if self.rot_col[v] >= 0]
            if views:
                phis = np.stack([delta[self.rot_col[v]:self.rot_col[v] + 3] for v in views])
                mats = Rotation.from_rotvec(phis).as_matrix()
                Rs_new[views] = np.einsum("kij,kjl->kil", Rs[views], mats)
        for v in range(self.n_views):
            col = self.trans_col[v]
            if col < 0:
                continue
            if v == self.anchor_view:
                E = self.anchor_basis(Cs[v])
                moved = Cs[v] + E @ delta[col:col + 2]
                Cs_new[v] = self.anchor_radius * moved / np.linalg.norm(moved)
            else:
                Cs_new[v] = Cs[v] + delta[col:col + 3]
        return Rs_new, Cs_new


def select_anchor_view(tracks, n_views, reference_view, centers) -> int | None:
    """Scale anchor: the view sharing the most tracks with the reference
    (ties to the smallest id), skipping views whose center norm is too
    small to carry a scale constraint."""
    counts = np.zeros(n_views, dtype=int)
    for track in tracks:
        if reference_view in track.view_ids:
            counts[track.view_ids] += 1
    order = sorted(
        (v for v in range(n_views) if v != reference_view),
        key=lambda v: (-counts[v], v),
    )
    for v in order:
        if np.linalg.norm(centers[v]) > 1e-9:
            return v
    norms = [np.linalg.norm(centers[v]) for v in range(n_views)]
    fallback = int(np.argmax(norms))
    if fallback != reference_view and norms[fallback] > 1e-9:
        return fallback
    return None


@dataclass
class _TrackData:
    track_id: int
    left: int
    right: int
    x_left: np.ndarray
    x_right: np.ndarray
    views: np.ndarray  # observed views != left
    obs: np.ndarray  # (L, 2)
    slot: int  # first slot index


def _prepare(tracks, bases, layout):
    by_id = {t.track_id: t for t in tracks}
    data = []
    for tid, slot in zip(layout.track_ids, layout.slot_offsets):
        track = by_id[tid]
        base = bases[tid]
        mask = track.view_ids != base.left
        data.append(
            _TrackData(
                track_id=tid,
                left=base.left,
                right=base.right,
                x_left=track.point_in_view(base.left),
                x_right=track.point_in_view(base.right),
                views=track.view_ids[mask],
                obs=track.points[mask],
                slot=slot,
            )
        )
    return data


def _anchor_terms(td: _TrackData, Rs, Cs):
    g_left = Rs[td.left].T @ homogenize(td.x_left)
    u = Rs[td.right] @ g_left
    v = homogenize(td.x_right)
    w = np.cross(u, v)
    theta_sq = float(w @ w)
    a = v * float(u @ v) - u * float(v @ v)
    s_vec = Rs[td.right] @ (Cs[td.left] - Cs[td.right])
    return g_left, u, v, theta_sq, a, s_vec


def _residuals_arrays(data, Rs, Cs, n_slots, theta_min, on_degenerate):
    floor_sq = max(theta_min, THETA_FLOOR) ** 2
    res = np.zeros((n_slots, 2))
    dropped = []
    for td in data:
        g_left, _, _, theta_sq, a, s_vec = _anchor_terms(td, Rs, Cs)
        if theta_sq <= floor_sq:
            if on_degenerate == "raise":
                raise DegenerateBase(
                    f"track {td.track_id}: anchor pair theta^2 {theta_sq!r} "
                    f"collapsed below the floor"
                )
            dropped.append(td.track_id)
            continue
        d = float(a @ s_vec) / theta_sq
        U = np.einsum("kij,j->ki", Rs[td.views], g_left)
        T = np.einsum("kij,kj->ki", Rs[td.views], Cs[td.left] - Cs[td.views])
        Y = d * U + T
        with np.errstate(divide="ignore", invalid="ignore"):
            res[td.slot:td.slot + len(td.views)] = Y[:, :2] / Y[:, 2:3] - td.obs
    return res.reshape(-1), dropped


def pa_residuals(poses, tracks, bases, theta_min: float = 0.0,
                 on_degenerate: str = "raise"):
    """Residual vector of the pose-only cost at the given poses.

    Depths come from the anchor pair evaluated with the observed (noisy)
    rays and the current poses. ``on_degenerate`` chooses between
    raising DegenerateBase and dropping the track's slots (zero
    contribution) as the optimizer does; returns (residuals,
    dropped_track_ids).
    """
    Rs = np.stack([p.rotation for p in poses])
    Cs = np.stack([p.center for p in poses])
    layout = build_layout(tracks, bases)
    data = _prepare(tracks, bases, layout)
    return _residuals_arrays(data, Rs, Cs, layout.n_slots, theta_min, on_degenerate)


def _jacobian_arrays(data, Rs, Cs, layout, param: PoseParameterization, theta_min):
    floor_sq = max(theta_min, THETA_FLOOR) ** 2
    rows_parts, cols_parts, vals_parts = [], [], []

    def emit(slots, col_start, block):
        # block: (L, 2, width); col_start scalar or per-row array
        L, _, width = block.shape
        col_start = np.broadcast_to(np.asarray(col_start), (L,))
        keep = col_start >= 0
        if not keep.any():
            return
        block = block[keep]
        slots_k = slots[keep]
        cs = col_start[keep]
        rr = (2 * slots_k)[:, None, None] + np.arange(2)[None, :, None]
        cc = cs[:, None, None] + np.arange(width)[None, None, :]
        rows_parts.append(np.broadcast_to(rr, block.shape).reshape(-1))
        cols_parts.append(np.broadcast_to(cc, block.shape).reshape(-1))
        vals_parts.append(block.reshape(-1))

    def trans_block(slots, view_cols, views, block):
        # Contract anchor columns through the tangent basis.
        if param.anchor_view is not None:
            is_anchor = views == param.anchor_view
            if np.any(is_anchor):
                E = param.anchor_basis(Cs[param.anchor_view])
                emit(
                    slots[is_anchor],
                    view_cols[is_anchor],
                    np.einsum("kab,bc->kac", block[is_anchor], E),
                )
                emit(slots[~is_anchor], view_cols[~is_anchor], block[~is_anchor])
                return
        emit(slots, view_cols, block)

    for td in data:
        g_left, u, v, theta_sq, a, s_vec = _anchor_terms(td, Rs, Cs)
        if theta_sq <= floor_sq:
            continue
        d = float(a @ s_vec) / theta_sq
        L = len(td.views)
        slots = td.slot + np.arange(L)
        U = np.einsum("kij,j->ki", Rs[td.views], g_left)
        T = np.einsum("kij,kj->ki", Rs[td.views], Cs[td.left] - Cs[td.views])
        Y = d * U + T

        z = Y[:, 2]
        P = np.zeros((L, 2, 3))
        inv_z = 1.0 / z
        P[:, 0, 0] = inv_z
        P[:, 1, 1] = inv_z
        P[:, 0, 2] = -Y[:, 0] * inv_z * inv_z
        P[:, 1, 2] = -Y[:, 1] * inv_z * inv_z

        k_vec = (Rs[td.right].T @ a) / theta_sq

        # Translation groups.
        dY_dcl = np.einsum("ki,j->kij", U, k_vec) + Rs[td.views]
        dY_dcr = -np.einsum("ki,j->kij", U, k_vec)
        dY_dci = -Rs[td.views]
        trans_block(
            slots,
            np.full(L, param.trans_col[td.left]),
            np.full(L, td.left),
            np.einsum("kab,kbc->kac", P, dY_dcl),
        )
        trans_block(
            slots,
            np.full(L, param.trans_col[td.right]),
            np.full(L, td.right),
            np.einsum("kab,kbc->kac", P, dY_dcr),
        )
        trans_block(
            slots,
            param.trans_col[td.views],
            td.views,
            np.einsum("kab,kbc->kac", P, dY_dci),
        )

        if param.refine_rotations:
            Z = skew(g_left)
            RZ = Rs[td.right] @ Z
            # d(depth)/d(phi): chain through u, a, theta^2 and s.
            M_a = np.outer(v, v) - float(v @ v) * np.eye(3)
            q_row = s_vec @ M_a + 2.0 * d * a
            dd_dl = (q_row @ RZ) / theta_sq
            dd_dr = (-(q_row @ RZ) - a @ (Rs[td.right] @ skew(Cs[td.left] - Cs[td.right]))) / theta_sq

            RiZ = np.einsum("kij,jl->kil", Rs[td.views], Z)
            dY_dpl = np.einsum("ki,j->kij", U, dd_dl) + d * RiZ
            dY_dpr = np.einsum("ki,j->kij", U, dd_dr)
            Q = (d * g_left + Cs[td.left])[None, :] - Cs[td.views]
            dY_dpi = -np.einsum("kij,kjl->kil", Rs[td.views], skew_batch(Q))

            emit(slots, np.full(L, param.rot_col[td.left]),
                 np.einsum("kab,kbc->kac", P, dY_dpl))
            emit(slots, np.full(L, param.rot_col[td.right]),
                 np.einsum("kab,kbc->kac", P, dY_dpr))
            emit(slots, param.rot_col[td.views],
                 np.einsum("kab,kbc->kac", P, dY_dpi))

    if rows_parts:
        rows = np.concatenate(rows_parts)
        cols = np.concatenate(cols_parts)
        vals = np.concatenate(vals_parts)
    else:
        rows = cols = vals = np.zeros(0)
    mat = sp.coo_matrix(
        (vals, (rows, cols)), shape=(layout.n_residuals, param.n_params)
    )
    mat.sum_duplicates()
    return mat.tocsr()


def pa_jacobian(poses, tracks, bases, parameterization: PoseParameterization,
                theta_min: float = 0.0) -> sp.csr_matrix:
    """Analytic Jacobian of :func:`pa_residuals` at the given poses.

    Each residual slot touches at most the anchor-left, anchor-right and
    observing views; all other columns are structurally zero.
    """
    Rs = np.stack([p.rotation for p in poses])
    Cs = np.stack([p.center for p in poses])
    layout = build_layout(tracks, bases)
    data = _prepare(tracks, bases, layout)
    return _jacobian_arrays(data, Rs, Cs, layout, parameterization, theta_min)


def pa_optimize(initial_poses, tracks, config: PAConfig | None = None,
                bases: dict | None = None, reference_view: int = 0,
                anchor_view: int | None = None):
    """Levenberg-Marquardt refinement of camera poses.

    Anchor pairs are selected once from the initial poses and frozen for
    the whole optimization (re-selecting each iteration would make the
    cost discontinuous). Returns (poses, OptimizeReport); the cost
    history is non-increasing, and a non-finite cost at an accepted
    state raises DivergedNumerically instead of being clamped.
    """
    config = config or PAConfig()
    Rs = np.stack([p.rotation for p in initial_poses])
    Cs = np.stack([p.center for p in initial_poses])
    n_views = len(initial_poses)

    excluded = 0
    if bases is None:
        bases = {}
        for track in tracks:
            try:
                bases[track.track_id] = select_base_views(track, Rs, config.theta_min)
            except Exception:
                excluded += 1
    layout = build_layout(tracks, bases)
    data = _prepare(tracks, bases, layout)

    if anchor_view is None:
        used = [t for t in tracks if t.track_id in bases]
        anchor_view = select_anchor_view(used, n_views, reference_view, Cs)
    radius = float(np.linalg.norm(Cs[anchor_view])) if anchor_view is not None else None
    param = PoseParameterization(
        n_views, reference_view, anchor_view, config.refine_rotations, radius
    )

    res, dropped = _residuals_arrays(
        data, Rs, Cs, layout.n_slots, config.theta_min, "drop"
    )
    cost = float(res @ res)
    if not np.isfinite(cost):
        raise DivergedNumerically(f"initial cost is {cost!r}")
    history = [cost]
    lam = config.lm_lambda0
    termination = "max_iter"
    iterations = 0

    while iterations < config.max_iter:
        J = _jacobian_arrays(data, Rs, Cs, layout, param, config.theta_min)
        grad = J.T @ res
        if np.max(np.abs(grad), initial=0.0) <= config.gradient_tol:
            termination = "gradient"
            break
        G = (J.T @ J).toarray()
        diag = np.diag(G).copy()
        diag[diag < 1e-12] = 1e-12

        accepted = False
        while lam <= 1e15:
            H = G + lam * np.diag(diag)
            try:
                factor = scipy.linalg.cho_factor(H)
                delta = scipy.linalg.cho_solve(factor, -grad)
            except scipy.linalg.LinAlgError:
                lam *= config.lm_up
                continue
            Rs_try, Cs_try = param.apply(Rs, Cs, delta)
            res_try, dropped_try = _residuals_arrays(
                data, Rs_try, Cs_try, layout.n_slots, config.theta_min, "drop"
            )
            cost_try = float(res_try @ res_try)
            if np.isfinite(cost_try) and cost_try < cost:
                accepted = True
                break
            lam *= config.lm_up
        if not accepted:
            termination = "step"
            break

        Rs, Cs = Rs_try, Cs_try
        res, dropped, cost = res_try, dropped_try, cost_try
        history.append(cost)
        lam = max(lam / config.lm_down, 1e-15)
        iterations += 1
        if float(np.linalg.norm(delta)) <= config.step_tol:
            termination = "step"
            break

    poses = [CameraPose(R, c) for R, c in zip(Rs, Cs)]
    report = OptimizeReport(
        iterations=iterations,
        initial_cost=history[0],
        final_cost=history[-1],
        cost_history=history,
        converged=termination in ("gradient", "step"),
        termination=termination,
        dropped_tracks=excluded + len(dropped),
    )
    return poses, report


def reprojection_stats(poses, points_w, tracks):
    """BA-form reprojection error of supplied 3D points.

    ``points_w`` maps track_id to a world point; tracks without an entry
    are skipped (rejected points). Observations with non-positive depth
    are excluded from the RMS and counted as cheirality violations.
    Returns (rms, violations, observations_used). The RMS is the root
    mean square over observations of the residual 2-vector norm.
    """
    Rs = np.stack([p.rotation for p in poses])
    Cs = np.stack([p.center for p in poses])
    views, obs, pts = [], [], []
    for track in tracks:
        key = track.track_id
        if key not in points_w:
            continue
        views.append(track.view_ids)
        obs.append(track.points)
        pts.append(np.broadcast_to(np.asarray(points_w[key], dtype=float), (len(track), 3)))
    if not views:
        return 0.0, 0, 0
    V = np.concatenate(views)
    O = np.concatenate(obs)
    P = np.concatenate(pts)
    cam = np.einsum("nij,nj->ni", Rs[V], P - Cs[V])
    z = cam[:, 2]
    ok = z > 0
    violations = int((~ok).sum())
    if not ok.any():
        return float("inf"), violations, 0
    res = cam[ok, :2] / z[ok, None] - O[ok]
    rms = float(np.sqrt((res * res).sum() / ok.sum()))
    return rms, violations, int(ok.sum())


def reprojection_rms(poses, points_w, tracks) -> float:
    """RMS reprojection error; see :func:`reprojection_stats`."""
    return reprojection_stats(poses, points_w, tracks)[0]
