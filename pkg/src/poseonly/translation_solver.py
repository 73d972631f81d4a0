"""Linear global-translation solver.

Given per-view global rotations and tracked normalized image points,
every track contributes homogeneous linear constraints on the stacked
camera centers: with a track's anchor views (left, right) fixed, each
further observation i yields

    B @ t_right + C @ t_i + D @ t_left = 0
    B = [X_i]x R_(left,i) X_left a' R_right
    C = theta^2 [X_i]x R_i
    D = -(B + C)

where ``a`` and ``theta`` belong to the anchor pair. Stacking all rows
gives a sparse homogeneous system whose one-dimensional null space (after
fixing a reference view's center to zero) is the global translation, up
to sign and scale. The formulation needs no relative translations, which
is what keeps it well-posed under collinear motion and under views that
only rotate in place.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import AllPairsDegenerate, InsufficientParallax, RankDeficient
from .geometry import THETA_FLOOR, Track, cross3, cross_rows, homogenize, skew_batch

# Above this reduced-matrix size the dense SVD becomes a memory hazard;
# fall back to the Gram-matrix eigenvector path.
_DENSE_MAX_COLS = 1500
_DENSE_MAX_ENTRIES = 40_000_000

# sigma_2 / sigma_1 below this means the null space is not unique.
# Exact-data rank gaps exceed 1e6 and genuinely ambiguous systems sit
# near 1; healthy systems under 1e-3 observation noise measure gaps of
# roughly 30-100, so the refusal threshold must stay below that band.
RANK_RATIO_MIN = 10.0


@dataclass(frozen=True)
class BaseViewPair:
    """A track's anchor views: the observation pair of maximal theta."""

    left: int
    right: int
    theta: float


@dataclass(frozen=True)
class RowBlock:
    """One 3-row constraint block of a track: columns touch the anchor
    right view (B), the observing view (C), and the anchor left view (D).
    D == -(B + C) holds exactly by construction.

    When the observing ray is parallel to the rotated anchor ray, B
    vanishes but C does not (C carries the anchor pair's theta^2, not the
    row's own parallax); the surviving C(t_i - t_left) = 0 content is what
    pins a camera that only rotates in place to its co-located partner.
    """

    track_id: int
    row_view: int
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass(frozen=True)
class TranslationSolution:
    """Solved camera centers, gauge-fixed and unit-normalized.

    ``translations[reference_view]`` is exactly zero and the remaining
    centers concatenate to a unit-norm vector. ``spectrum`` holds the
    four smallest singular values of the reduced system, ascending.
    """

    translations: np.ndarray  # (n, 3)
    sign_votes: tuple  # (positive, negative)
    spectrum: np.ndarray
    scale_norm: float


class TranslationSystem:
    """Assembled sparse constraint system over stacked camera centers.

    Blocks are stored in deterministic (track_id, row_view) order; the
    reference view's columns are dropped from the reduced matrix, which
    fixes the translation gauge.
    """

    def __init__(
        self,
        n_views,
        reference_view,
        track_ids,
        row_views,
        lefts,
        rights,
        B,
        C,
        bases,
        sign_probes,
        rotations,
        theta_min,
    ):
        self.n_views = int(n_views)
        self.reference_view = int(reference_view)
        self.track_ids = track_ids
        self.row_views = row_views
        self.lefts = lefts
        self.rights = rights
        self.B = B
        self.C = C
        self.bases = bases  # dict: track_id -> BaseViewPair
        self.sign_probes = sign_probes  # list of (left, right, a_vec)
        self.rotations = rotations
        self.theta_min = float(theta_min)

    @property
    def n_blocks(self) -> int:
        return len(self.track_ids)

    @property
    def n_rows(self) -> int:
        return 3 * self.n_blocks

    @property
    def n_reduced_cols(self) -> int:
        return 3 * (self.n_views - 1)

    def row_order(self):
        return list(zip(self.track_ids.tolist(), self.row_views.tolist()))

    def _matrix(self, col_of_view, n_cols) -> sp.csr_matrix:
        # Direct CSR assembly: block k holds entries for the anchor-right,
        # observing and anchor-left views in that order, 9 per row before
        # the reference-view columns are masked out. Duplicate column
        # indices (observing view == anchor right) are left non-canonical;
        # downstream sparse ops sum them.
        m = self.n_blocks
        D = -(self.B + self.C)
        data = np.stack((self.B, self.C, D), axis=2)  # (k, row, block, col)
        cols = np.stack(
            (col_of_view[self.rights], col_of_view[self.row_views], col_of_view[self.lefts])
        )  # (3, m)
        valid = cols >= 0
        starts = 3 * np.where(valid, cols, 0)
        indices = (
            starts.T[:, None, :, None] + np.arange(3)[None, None, None, :]
        ).astype(np.int32)
        keep = np.broadcast_to(valid.T[:, None, :, None], (m, 3, 3, 3))
        entries_per_row = np.repeat(3 * valid.sum(axis=0), 3)
        indptr = np.zeros(3 * m + 1, dtype=np.int64)
        np.cumsum(entries_per_row, out=indptr[1:])
        keep_flat = keep.reshape(m, 3, 9)
        data_sel = np.broadcast_to(data, (m, 3, 3, 3)).reshape(m, 3, 9)[keep_flat]
        idx_sel = np.broadcast_to(indices, (m, 3, 3, 3)).reshape(m, 3, 9)[keep_flat]
        return sp.csr_matrix((data_sel, idx_sel, indptr), shape=(self.n_rows, n_cols))

    def reduced_matrix(self) -> sp.csr_matrix:
        """Constraint matrix with the reference view's columns removed."""
        col_of_view = np.full(self.n_views, -1, dtype=int)
        keep = [v for v in range(self.n_views) if v != self.reference_view]
        col_of_view[keep] = np.arange(self.n_views - 1)
        return self._matrix(col_of_view, self.n_reduced_cols)

    def full_matrix(self) -> sp.csr_matrix:
        """Constraint matrix over all 3n center coordinates (no gauge)."""
        return self._matrix(np.arange(self.n_views), 3 * self.n_views)


def _pair_theta_sq_table(g: np.ndarray) -> np.ndarray:
    """theta^2 for all ray pairs via the Gram identity
    ||g_i x g_j||^2 = |g_i|^2 |g_j|^2 - (g_i . g_j)^2.

    ``g`` are the world-frame rays R_v' X_v; rotating both rays into one
    frame leaves the cross-product norm unchanged.
    """
    gram = g @ g.T
    sq = np.einsum("ki,ki->k", g, g)
    table = np.multiply.outer(sq, sq) - gram * gram
    return np.maximum(table, 0.0)


@lru_cache(maxsize=128)
def _upper_pairs(k: int):
    iu, ju = np.triu_indices(k, 1)
    iu.setflags(write=False)
    ju.setflags(write=False)
    return iu, ju


def _canonical_theta(rotations, x_left, x_right, v_left, v_right) -> float:
    R_rel = rotations[v_right] @ rotations[v_left].T
    u = R_rel @ homogenize(x_left)
    v = homogenize(x_right)
    return float(np.linalg.norm(cross3(v, u)))


def select_base_views(track: Track, rotations: np.ndarray, theta_min: float = 0.0) -> BaseViewPair:
    """Pick the track's observation pair of maximal theta.

    Ties break to the lexicographically smallest (i, j); the winning
    theta is recomputed from the cross product itself so that a track
    whose apparent maximum is pure rounding noise is still rejected.
    """
    floor = max(theta_min, THETA_FLOOR)
    rays = homogenize(track.points)
    g = np.einsum("kji,kj->ki", rotations[track.view_ids], rays)
    table = _pair_theta_sq_table(g)
    iu, ju = _upper_pairs(len(track))
    flat = table[iu, ju]
    best = int(np.argmax(flat))
    p, q = int(iu[best]), int(ju[best])
    left, right = int(track.view_ids[p]), int(track.view_ids[q])
    theta = _canonical_theta(rotations, track.points[p], track.points[q], left, right)
    if theta <= floor:
        raise AllPairsDegenerate(
            f"track {track.track_id}: max theta {theta!r} at or below {floor!r}"
        )
    return BaseViewPair(left, right, theta)


def _row_block_arrays(track: Track, base: BaseViewPair, rotations: np.ndarray):
    """Vectorized B/C blocks for every observed view != anchor left.

    Returns (row_views, B, C, w_norms, a_vec); ``w_norms`` are the rows'
    own parallax indicators, consulted only when a positive theta_min
    asks for low-parallax rows to be dropped.
    """
    left, right = base.left, base.right
    g_left = rotations[left].T @ homogenize(track.point_in_view(left))
    u = rotations[right] @ g_left
    v = homogenize(track.point_in_view(right))
    a_vec = v * float(u @ v) - u * float(v @ v)
    theta_sq = base.theta * base.theta

    mask = track.view_ids != left
    views = track.view_ids[mask]
    X = homogenize(track.points[mask])
    R_views = rotations[views]
    U = R_views @ g_left
    W = cross_rows(X, U)
    w_norms = np.linalg.norm(W, axis=1)
    aR = rotations[right].T @ a_vec
    B = W[:, :, None] * aR[None, None, :]
    C = theta_sq * (skew_batch(X) @ R_views)
    return views, B, C, w_norms, a_vec


def build_row_blocks(
    track: Track, base: BaseViewPair, rotations: np.ndarray, theta_min: float = 0.0
) -> list:
    """Per-view constraint blocks of one track, in view order.

    With the default ``theta_min = 0`` every observation contributes a
    row; a positive threshold drops rows whose own parallax indicator
    falls below it (a conditioning knob that also discards the rows that
    glue rotating-in-place cameras to their partners, so it is off by
    default).
    """
    views, B, C, w_norms, _ = _row_block_arrays(track, base, rotations)
    blocks = []
    for k, view in enumerate(views):
        if theta_min > 0 and w_norms[k] <= theta_min:
            continue
        blocks.append(RowBlock(track.track_id, int(view), B[k], C[k], -(B[k] + C[k])))
    return blocks


def assemble_system(
    tracks: list,
    rotations: np.ndarray,
    reference_view: int,
    theta_min: float = 0.0,
    normalize_rows: bool = False,
) -> TranslationSystem:
    """Assemble the homogeneous system over stacked camera centers.

    Tracks whose every pair is parallax-free are dropped; at least two
    usable tracks are required (a globally rotating-in-place camera set
    cannot constrain translation at all). A positive ``theta_min`` also
    drops individual rows of low parallax, see :func:`build_row_blocks`.
    ``normalize_rows`` divides each track's blocks by the anchor theta^2,
    exposing the conditioning trade-off; default keeps the natural
    theta^2 weighting.
    """
    rotations = np.asarray(rotations, dtype=float)
    n_views = len(rotations)
    if not 0 <= reference_view < n_views:
        raise ValueError(f"reference view {reference_view} out of range")

    all_views, all_B, all_C, all_tids = [], [], [], []
    all_lefts, all_rights = [], []
    bases, sign_probes = {}, []
    for track in sorted(tracks, key=lambda t: t.track_id):
        try:
            base = select_base_views(track, rotations, theta_min)
        except AllPairsDegenerate:
            continue
        views, B, C, w_norms, a_vec = _row_block_arrays(track, base, rotations)
        keep = w_norms > theta_min if theta_min > 0 else np.ones(len(views), bool)
        if not keep.any():
            continue
        if normalize_rows:
            scale = 1.0 / (base.theta * base.theta)
            B = B * scale
            C = C * scale
        all_views.append(views[keep])
        all_B.append(B[keep])
        all_C.append(C[keep])
        all_tids.append(np.full(int(keep.sum()), track.track_id))
        all_lefts.append(np.full(int(keep.sum()), base.left))
        all_rights.append(np.full(int(keep.sum()), base.right))
        bases[track.track_id] = base
        sign_probes.append((base.left, base.right, a_vec))

    if len(bases) < 2:
        raise InsufficientParallax(
            f"only {len(bases)} track(s) carry parallax; need at least 2"
        )
    return TranslationSystem(
        n_views=n_views,
        reference_view=reference_view,
        track_ids=np.concatenate(all_tids),
        row_views=np.concatenate(all_views),
        lefts=np.concatenate(all_lefts),
        rights=np.concatenate(all_rights),
        B=np.concatenate(all_B),
        C=np.concatenate(all_C),
        bases=bases,
        sign_probes=sign_probes,
        rotations=rotations,
        theta_min=theta_min,
    )


def _pick_backend(matrix: sp.csr_matrix, backend: str) -> str:
    if backend != "auto":
        return backend
    rows, cols = matrix.shape
    if cols <= _DENSE_MAX_COLS and rows * cols <= _DENSE_MAX_ENTRIES:
        return "dense"
    return "normal"


def _smallest_singular(matrix: sp.csr_matrix, k: int, backend: str):
    """k smallest singular values (ascending), the right-singular vector
    of the smallest one, and the largest singular value."""
    backend = _pick_backend(matrix, backend)
    if backend == "dense":
        dense = matrix.toarray()
        if dense.shape[0] > 3 * dense.shape[1]:
            # A tall matrix shares singular values and right-singular
            # vectors with its QR triangle; factoring first avoids the
            # tall left factor entirely.
            dense = np.linalg.qr(dense, mode="r")
        _, s, Vt = np.linalg.svd(dense, full_matrices=False)
        sigma = s[::-1][:k]
        return np.asarray(sigma), Vt[-1], float(s[0])
    if backend == "normal":
        # Gram-matrix path: costs O(nnz * cols) to accumulate but never
        # materializes the tall dense matrix.
        G = (matrix.T @ matrix).toarray()
        w, V = np.linalg.eigh(G)
        sigma = np.sqrt(np.clip(w[:k], 0.0, None))
        sigma_max = float(np.sqrt(max(w[-1], 0.0)))
        return sigma, V[:, 0], sigma_max
    raise ValueError(f"unknown backend {backend!r}")


def floored_gap(sigma_1: float, sigma_2: float, sigma_max: float) -> float:
    """sigma2/sigma1 with both values floored at the numerical noise
    level of the factorization (~1e-14 of sigma_max).

    Singular values below that floor are indistinguishable from exact
    zeros, and the raw ratio of two rounding-level zeros is meaningless;
    flooring makes the gap test stable: a system with >= 2 true zeros
    reports a gap near 1, a well-posed one reports a huge gap.
    """
    floor = max(1e-14 * sigma_max, 1e-300)
    return max(sigma_2, floor) / max(sigma_1, floor)


def disambiguate_sign(translations: np.ndarray, system: TranslationSystem):
    """Resolve the global sign of a null-space solution.

    Each surviving track votes with the sign of ``a . t_rel`` of its
    anchor pair, which is positive exactly when the anchored depth is
    positive (feature in front of the camera). One vote per track; the
    majority wins.
    """

    def count(t):
        pos = neg = 0
        for left, right, a_vec in system.sign_probes:
            t_rel = system.rotations[right] @ (t[left] - t[right])
            s = float(a_vec @ t_rel)
            if s > 0:
                pos += 1
            elif s < 0:
                neg += 1
        return pos, neg

    pos, neg = count(translations)
    if neg > pos:
        translations = -translations
        translations[system.reference_view] = 0.0
        pos, neg = count(translations)
    return translations, (pos, neg)


def solve_translations(
    system: TranslationSystem,
    backend: str = "auto",
    rank_ratio_min: float = RANK_RATIO_MIN,
) -> TranslationSolution:
    """Solve for camera centers as the reduced system's null vector.

    Raises RankDeficient when the two smallest singular values are within
    ``rank_ratio_min`` of each other: the null space is then ambiguous
    and any single vector from it would be arbitrary.
    """
    reduced = system.reduced_matrix()
    k = min(4, reduced.shape[1])
    spectrum, null_vec, sigma_max = _smallest_singular(reduced, k, backend)
    if len(spectrum) >= 2:
        ratio = floored_gap(float(spectrum[0]), float(spectrum[1]), sigma_max)
        if ratio < rank_ratio_min:
            raise RankDeficient(
                f"singular gap sigma2/sigma1 = {ratio:.3g} < {rank_ratio_min:g}"
            )

    n = system.n_views
    translations = np.zeros((n, 3))
    others = [v for v in range(n) if v != system.reference_view]
    translations[others] = null_vec.reshape(-1, 3)
    translations, votes = disambiguate_sign(translations, system)
    scale_norm = float(np.linalg.norm(translations[others]))
    translations = translations / scale_norm
    translations[system.reference_view] = 0.0
    return TranslationSolution(
        translations=translations,
        sign_votes=votes,
        spectrum=np.asarray(spectrum),
        scale_norm=scale_norm,
    )


def singular_spectrum(system: TranslationSystem, k: int, backend: str = "auto") -> np.ndarray:
    """The k smallest singular values of the reduced system, ascending."""
    reduced = system.reduced_matrix()
    if k > reduced.shape[1]:
        raise ValueError(f"k={k} exceeds column count {reduced.shape[1]}")
    spectrum, _, _ = _smallest_singular(reduced, k, backend)
    return spectrum


def spectral_gap(system: TranslationSystem, backend: str = "auto") -> float:
    """Floored sigma2/sigma1 of the reduced system; the rank diagnostic."""
    reduced = system.reduced_matrix()
    spectrum, _, sigma_max = _smallest_singular(reduced, min(2, reduced.shape[1]), backend)
    if len(spectrum) < 2:
        return float("inf")
    return floored_gap(float(spectrum[0]), float(spectrum[1]), sigma_max)
