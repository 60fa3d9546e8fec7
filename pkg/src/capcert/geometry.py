"""Projection geometry of the capacity-achieving polytope and its direction cones.

A "valid direction" at a point p★ of the maximizer polytope is any unit
vector (p − p^Π)/‖p − p^Π‖ where p is a feasible input whose nearest
maximizer is p★.  The cone of valid directions at p★ depends only on which
coordinates of p★ vanish and which linear constraints are active there: it
is the intersection of the sum-zero/sign-constraint cone with the negative
dual of the cone K of directions that stay inside the maximizer set.  The
dual condition is checked by a small LP per query instead of enumerating
generators of K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from . import _polytope
from .capacity import ConstraintSet, PiSet
from .core import DegenerateCertificateError, Distribution, SolverError, TangentVector

__all__ = [
    "SupportSets",
    "ConeDescription",
    "project_to_pi",
    "batch_project",
    "support_sets",
    "valid_direction_cone",
    "cone_membership",
    "sample_valid_directions",
]

_DISCARD_DISTANCE = 1e-12


@dataclass(frozen=True)
class SupportSets:
    """Active-set data at a maximizer: zero coordinates and tight constraints."""

    x_zero: tuple
    a_zero: tuple

    @property
    def signature(self):
        return self.x_zero, self.a_zero


@dataclass(frozen=True)
class ConeDescription:
    """The cone of valid directions at maximizers with a given support signature.

    Membership of d requires: ⟨d, e⟩ = 0 for every equality vector
    (always including the all-ones vector), d(x) ≥ 0 on ``sign_index``,
    ⟨d, a⟩ ≥ 0 for a in ``sign_vectors``, and ⟨d, v⟩ ≤ 0 for every v in

        K = {v in span(v_basis) : v(x) ≥ 0 on sign_index,
                                  ⟨v, a⟩ ≥ 0 for a in sign_vectors},

    i.e. −d lies in the dual cone of K.  When K is a linear subspace the
    dual condition collapses to explicit equalities, which are then listed
    in ``equalities`` as well.
    """

    equalities: tuple
    sign_index: tuple
    sign_vectors: tuple
    v_basis_matrix: np.ndarray
    k_constraints: np.ndarray  # rows: constraints on z with v = v_basis_matrix @ z

    @property
    def dual_is_subspace(self) -> bool:
        return self.k_constraints.shape[0] == 0 or not self.k_constraints.any()


def _pi_projector(pi: PiSet):
    """Batch projector for a PiSet, or None when the set is a single point."""
    if pi.dim == 0:
        return None
    return _polytope.PolytopeProjector(
        pi.e_mat, pi.f_vec, pi.free_nonneg_indices(), pi.constraint_matrix()
    )


def batch_project(pi: PiSet, points: np.ndarray):
    """Vectorized projection of each row of ``points`` onto the maximizer set."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pi.dim == 0:
        rep = pi.representative.mass
        proj = np.broadcast_to(rep, pts.shape).copy()
        return proj, np.linalg.norm(pts - rep[None, :], axis=1)
    return _pi_projector(pi).project(pts)


def project_to_pi(p: Distribution, pi: PiSet):
    """Euclidean projection of p onto the maximizer polytope.

    Returns (projection, distance).  Solved as a strictly convex QP by
    primal active-set iteration with Bland tie-breaking; the polytope's
    interior representative provides the feasible start.  Distance 0 means
    p is itself a maximizer.
    """
    if p.n != pi.n:
        raise ValueError(f"dimension mismatch: {p.n} vs {pi.n}")
    if pi.dim == 0:
        rep = pi.representative
        return rep, float(np.linalg.norm(p.mass - rep.mass))
    g_rows = [_unit(pi.n, i) for i in pi.free_nonneg_indices()]
    g_extra = pi.constraint_matrix()
    if g_extra is not None:
        g_rows.extend(g_extra)
    g_mat = np.array(g_rows).reshape(-1, pi.n)
    proj, dist = _polytope.project_active_set(
        p.mass, pi.e_mat, pi.f_vec, g_mat, np.zeros(g_mat.shape[0]),
        pi.representative.mass,
    )
    proj = np.maximum(proj, 0.0)
    proj /= proj.sum()
    return Distribution(proj), dist


def _unit(n, i):
    row = np.zeros(n)
    row[i] = 1.0
    return row


def support_sets(
    p_star: Distribution, constraints: ConstraintSet | None = None, tol: float = 1e-9
) -> SupportSets:
    """Zero coordinates X₀(p★) and active constraints A₀(p★), tested at ``tol``."""
    x_zero = tuple(int(i) for i in np.nonzero(p_star.mass <= tol)[0])
    a_zero = ()
    if constraints is not None and len(constraints):
        vals = constraints.matrix @ p_star.mass
        a_zero = tuple(int(i) for i in np.nonzero(np.abs(vals) <= tol)[0])
    return SupportSets(x_zero=x_zero, a_zero=a_zero)


def valid_direction_cone(pi: PiSet, sets: SupportSets) -> ConeDescription:
    """The cone of valid directions for maximizers with the given signature.

    Depends only on (X₀, A₀): base points sharing the signature share the
    cone.
    """
    n = pi.n
    v_mat = (
        np.column_stack([v.delta for v in pi.v_basis])
        if pi.dim
        else np.zeros((n, 0))
    )
    a_rows = []
    if sets.a_zero and pi.constraint_set is not None:
        a_rows = [pi.constraint_set.vectors[i] for i in sets.a_zero]

    n_v = v_mat.shape[1]
    k_rows = []
    if n_v:
        for x in sets.x_zero:
            k_rows.append(v_mat[x, :])
        for a in a_rows:
            k_rows.append(a @ v_mat)
    if k_rows:
        k_constraints = np.array(k_rows, dtype=float)
        k_constraints = k_constraints[np.abs(k_constraints).max(axis=1) > 1e-12]
    else:
        k_constraints = np.zeros((0, n_v))

    equalities = [np.ones(n)]
    if k_constraints.shape[0] == 0:
        # K is the whole parallel subspace: the dual condition says d ⊥ V.
        equalities.extend(v_mat[:, k] for k in range(v_mat.shape[1]))
    return ConeDescription(
        equalities=tuple(_ro(e) for e in equalities),
        sign_index=tuple(sets.x_zero),
        sign_vectors=tuple(_ro(a) for a in a_rows),
        v_basis_matrix=_ro(v_mat),
        k_constraints=_ro(k_constraints),
    )


def _ro(a):
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


def cone_membership(d: TangentVector, cone: ConeDescription, tol: float = 1e-9) -> bool:
    """Whether d lies in the cone of valid directions.

    Equalities and sign constraints are checked directly; the dual-cone
    condition is checked by the LP  max ⟨d, v⟩ over v ∈ K with ‖v‖_∞ ≤ 1,
    with membership iff the optimum is ≤ tol.  Tolerances scale with
    max(1, ‖d‖) so membership is invariant under positive scaling.
    """
    vec = d.delta
    scale = max(1.0, float(np.linalg.norm(vec)))
    eps = tol * scale
    for e in cone.equalities:
        if abs(float(e @ vec)) > eps:
            return False
    for x in cone.sign_index:
        if vec[x] < -eps:
            return False
    for a in cone.sign_vectors:
        if float(a @ vec) < -eps:
            return False

    v_mat = cone.v_basis_matrix
    k = v_mat.shape[1]
    if k == 0 or cone.dual_is_subspace:
        return True  # subspace case already handled through the equalities
    c = v_mat.T @ vec
    a_ub = np.vstack([-cone.k_constraints, v_mat, -v_mat])
    b_ub = np.concatenate([
        np.zeros(cone.k_constraints.shape[0]),
        np.ones(2 * v_mat.shape[0]),
    ])
    res = linprog(-c, A_ub=a_ub, b_ub=b_ub, bounds=[(None, None)] * k, method="highs")
    if not res.success:
        raise SolverError(f"dual-cone LP failed: {res.message}")
    return float(-res.fun) <= eps


def sample_valid_directions(
    pi: PiSet,
    count: int,
    seed: int,
    constraints: ConstraintSet | None = None,
    stream: int = 0,
):
    """Sample (base point, unit direction) pairs of valid directions.

    Feasible inputs are drawn from the (possibly constrained) simplex with
    a mix of interior Dirichlet draws and boundary-biased draws on random
    faces, then projected onto the maximizer set; draws closer than 1e-12
    are discarded.  Each draw index has its own counter-based random
    stream derived from (seed, stream, index), so the sequence is
    deterministic and independent of batching or parallel scheduling.

    Raises DegenerateCertificateError when no draw leaves the maximizer set
    (the feasible polytope coincides with it, e.g. a channel whose rows are
    all equal).  May return fewer than ``count`` pairs if the attempt
    budget (50 per requested sample) is exhausted.
    """
    bases, dirs = sample_valid_direction_arrays(pi, count, seed, constraints, stream)
    return [
        (Distribution(bases[i]), TangentVector(dirs[i]))
        for i in range(bases.shape[0])
    ]


def sample_valid_direction_arrays(
    pi: PiSet,
    count: int,
    seed: int,
    constraints: ConstraintSet | None = None,
    stream: int = 0,
):
    """Array-valued core of :func:`sample_valid_directions`.

    Returns (bases, directions) with one row per sample; directions are
    unit norm and sum to zero.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if constraints is None:
        constraints = pi.constraint_set
    n = pi.n
    g_mat = constraints.matrix if constraints is not None and len(constraints) else None
    interior = None
    if g_mat is not None:
        interior, _ = _polytope.interior_point(np.ones((1, n)), [1.0], n, g_mat)
    projector = _pi_projector(pi)

    bases, dirs = [], []
    found = 0
    attempt = 0
    max_attempts = max(50 * count, 200)
    while found < count and attempt < max_attempts:
        todo = min(max(count - found, 64), max_attempts - attempt)
        idx = np.arange(attempt, attempt + todo)
        attempt += todo
        pts = draw_feasible_batch(n, seed, stream, idx, g_mat, interior)
        if projector is None:
            rep = pi.representative.mass
            proj = np.broadcast_to(rep, pts.shape)
            dist = np.linalg.norm(pts - rep[None, :], axis=1)
        else:
            proj, dist = projector.project(pts)
        delta = pts - proj
        delta -= delta.sum(axis=1, keepdims=True) / n
        norm = np.linalg.norm(delta, axis=1)
        keep = (dist >= _DISCARD_DISTANCE) & (norm >= _DISCARD_DISTANCE)
        if keep.any():
            take = min(int(keep.sum()), count - found)
            rows = np.nonzero(keep)[0][:take]
            bases.append(proj[rows])
            dirs.append(delta[rows] / norm[rows, None])
            found += take
    if found == 0:
        raise DegenerateCertificateError(
            "no valid directions exist: every feasible input is capacity-achieving"
        )
    return np.vstack(bases), np.vstack(dirs)


# ---------------------------------------------------------------------------
# Counter-based random draws: index i reads slots of a splitmix64 tape keyed
# by (seed, stream, slot), so any contiguous or scattered batch of indices
# yields identical values and parallel workers merge deterministically.
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z + _GOLDEN).astype(np.uint64)
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


def _uniforms(seed: int, stream: int, slot: int, indices: np.ndarray) -> np.ndarray:
    """Per-index uniforms in (0, 1), 53-bit resolution."""
    with np.errstate(over="ignore"):
        key = _mix64(np.asarray(seed & 0xFFFFFFFFFFFFFFFF, dtype=np.uint64))
        key = _mix64(key ^ np.uint64(stream & 0xFFFFFFFFFFFFFFFF))
        key = _mix64(key ^ np.uint64(slot & 0xFFFFFFFFFFFFFFFF))
        z = _mix64(key + np.asarray(indices, dtype=np.uint64) * _GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * (2.0**-53)


def normals_for_indices(seed: int, stream: int, indices: np.ndarray, dim: int) -> np.ndarray:
    """Per-index standard normal rows via Box-Muller on tape uniforms."""
    cols = []
    for j in range(0, dim, 2):
        u1 = _uniforms(seed, stream, 300 + j, indices)
        u2 = _uniforms(seed, stream, 301 + j, indices)
        r = np.sqrt(-2.0 * np.log(u1))
        cols.append(r * np.cos(2.0 * np.pi * u2))
        if j + 1 < dim:
            cols.append(r * np.sin(2.0 * np.pi * u2))
    return np.column_stack(cols[:dim]) if cols else np.zeros((indices.size, 0))


def uniforms_for_indices(seed: int, stream: int, indices: np.ndarray, slot: int = 0) -> np.ndarray:
    return _uniforms(seed, stream, 400 + slot, indices)


def draw_feasible_batch(
    n: int,
    seed: int,
    stream: int,
    indices: np.ndarray,
    g_mat: np.ndarray | None,
    interior: np.ndarray | None,
) -> np.ndarray:
    """Feasible inputs for the given draw indices (one row each).

    60% interior Dirichlet(1,…,1) draws, 40% boundary-biased draws that
    zero a random proper subset of coordinates; constrained draws are
    pulled inside the constraint polytope along the segment to an interior
    point (feasibility is linear, so the blend is closed-form).
    """
    indices = np.asarray(indices, dtype=np.uint64)
    m = indices.size
    if n == 1:
        return np.ones((m, 1))
    expo = np.empty((m, n))
    for j in range(n):
        expo[:, j] = -np.log(_uniforms(seed, stream, 100 + j, indices))
    interior_p = expo / expo.sum(axis=1, keepdims=True)

    keys = np.empty((m, n))
    for j in range(n):
        keys[:, j] = _uniforms(seed, stream, 200 + j, indices)
    n_zero = 1 + np.floor(_uniforms(seed, stream, 2, indices) * (n - 1)).astype(int)
    n_zero = np.minimum(n_zero, n - 1)
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    keep = ranks >= n_zero[:, None]
    face_e = expo * keep
    face_p = face_e / face_e.sum(axis=1, keepdims=True)

    mode = _uniforms(seed, stream, 1, indices)
    pts = np.where((mode < 0.6)[:, None], interior_p, face_p)

    if g_mat is not None:
        slack = pts @ g_mat.T
        bad = (slack < 0).any(axis=1)
        if bad.any():
            gi = np.maximum(g_mat @ interior, 1e-15)
            ratios = np.where(
                slack[bad] < 0,
                gi[None, :] / (gi[None, :] - slack[bad]),
                1.0,
            )
            lam = 0.95 * ratios.min(axis=1)
            pts[bad] = interior[None, :] + lam[:, None] * (pts[bad] - interior[None, :])
    pts = np.maximum(pts, 0.0)
    return pts / pts.sum(axis=1, keepdims=True)
