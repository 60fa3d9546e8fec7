"""Small dense polyhedral utilities: LPs, projections, centers, sphere quadratics.

Everything here operates on desk-scale problems (a handful of variables and
constraints), so the implementations favor exactness and determinism over
asymptotic cleverness.  Polytopes are given as

    {x : E x = f,  x >= 0,  G x >= h}

with the nonnegativity rows listed explicitly where a routine needs to
distinguish them.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import linprog

from .core import SolverError

_FEAS_TOL = 1e-9


def orthonormal_nullspace(a: np.ndarray, n: int, rcond: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of the null space of ``a`` in R^n."""
    if a is None or a.shape[0] == 0:
        return np.eye(n)
    return null_space(np.asarray(a, dtype=float), rcond=rcond)


def solve_lp_max(c, e_mat, f_vec, g_mat=None, bounds=(0.0, 1.0)):
    """Maximize ``c @ x`` over {E x = f, G x >= 0, bounds}; returns (x, value).

    Raises SolverError if the LP is infeasible or fails.
    """
    c = np.asarray(c, dtype=float)
    a_ub = b_ub = None
    if g_mat is not None and len(g_mat) > 0:
        a_ub = -np.asarray(g_mat, dtype=float)
        b_ub = np.zeros(a_ub.shape[0])
    res = linprog(
        -c,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=e_mat,
        b_eq=f_vec,
        bounds=[bounds] * c.size,
        method="highs",
    )
    if not res.success:
        raise SolverError(f"linear program failed: {res.message}")
    return res.x, float(-res.fun)


def interior_point(e_mat, f_vec, n, g_mat=None, slack_idx=None):
    """Point maximizing the least slack of selected constraints.

    Solves max s over {E x = f, 0 <= x <= 1, x_i >= s for i in slack_idx,
    g @ x >= s for each row g}.  Returns (x, s); s = 0 means the polytope
    has no strictly interior point with respect to the chosen slacks.
    Raises SolverError when the polytope itself is empty.
    """
    if slack_idx is None:
        slack_idx = range(n)
    slack_idx = list(slack_idx)
    g_mat = np.zeros((0, n)) if g_mat is None else np.asarray(g_mat, dtype=float)

    n_rows = len(slack_idx) + g_mat.shape[0]
    a_ub = np.zeros((n_rows, n + 1))
    for r, i in enumerate(slack_idx):
        a_ub[r, i] = -1.0
        a_ub[r, n] = 1.0
    if g_mat.shape[0]:
        a_ub[len(slack_idx):, :n] = -g_mat
        a_ub[len(slack_idx):, n] = 1.0
    b_ub = np.zeros(n_rows)

    e_mat = np.asarray(e_mat, dtype=float)
    a_eq = np.hstack([e_mat, np.zeros((e_mat.shape[0], 1))])
    c = np.zeros(n + 1)
    c[n] = -1.0
    res = linprog(
        c,
        A_ub=a_ub if n_rows else None,
        b_ub=b_ub if n_rows else None,
        A_eq=a_eq,
        b_eq=f_vec,
        bounds=[(0.0, 1.0)] * n + [(0.0, 1.0)],
        method="highs",
    )
    if not res.success:
        raise SolverError(f"feasibility program failed: {res.message}")
    return res.x[:n], float(res.x[n])


def analytic_center(e_mat, f_vec, start, free_idx, max_iter=100):
    """Maximize sum of log x_i over free coordinates subject to E x = f, x >= 0.

    ``start`` must be strictly positive on ``free_idx`` and satisfy the
    equalities.  Coordinates outside ``free_idx`` are assumed pinned by the
    equality system.  Damped Newton in the null-space parametrization.
    """
    free_idx = np.asarray(list(free_idx), dtype=int)
    nmat = orthonormal_nullspace(e_mat, start.size)
    if nmat.shape[1] == 0:
        return start
    x = start.astype(float).copy()
    nf = nmat[free_idx]
    for _ in range(max_iter):
        inv = 1.0 / x[free_idx]
        grad = nf.T @ inv
        hess = nf.T @ (inv[:, None] ** 2 * nf)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        dx = nmat @ step
        # keep strictly inside the positive orthant on free coordinates
        neg = dx[free_idx] < 0
        t = 1.0
        if neg.any():
            t = min(1.0, 0.9 * np.min(x[free_idx][neg] / -dx[free_idx][neg]))
        decrement = float(grad @ step)
        x = x + t * dx
        if decrement < 1e-14:
            break
    return x


def _affine_projection(p0, a_mat, b_vec):
    """Euclidean projection of p0 onto the affine set {x : A x = b}.

    Returns (x, ok) where ok is False when the system is inconsistent.
    """
    if a_mat.shape[0] == 0:
        return p0.copy(), True
    y, *_ = np.linalg.lstsq(a_mat, a_mat @ p0 - b_vec, rcond=None)
    x = p0 - y
    ok = np.allclose(a_mat @ x, b_vec, atol=1e-9)
    return x, ok


def project_active_set(p0, e_mat, f_vec, g_mat, h_vec, x_start, max_iter=None):
    """Projection of ``p0`` onto {E x = f, G x >= h} by primal active-set iteration.

    The Hessian is the identity (strictly convex), so the iteration is
    finite; ties are broken Bland-style (lowest constraint index) both when
    adding a blocking row and when dropping a row with negative multiplier.
    ``x_start`` must be feasible.
    """
    p0 = np.asarray(p0, dtype=float)
    e_mat = np.asarray(e_mat, dtype=float).reshape(-1, p0.size)
    g_mat = np.asarray(g_mat, dtype=float).reshape(-1, p0.size)
    h_vec = np.asarray(h_vec, dtype=float).reshape(-1)
    m = g_mat.shape[0]
    if max_iter is None:
        max_iter = 50 * (m + p0.size + 1)

    x = np.asarray(x_start, dtype=float).copy()
    working: list[int] = sorted(
        i for i in range(m) if g_mat[i] @ x - h_vec[i] <= 1e-11
    )
    n_eq = e_mat.shape[0]

    for _ in range(max_iter):
        a_mat = np.vstack([e_mat, g_mat[working]])
        b_vec = np.concatenate([f_vec, h_vec[working]])
        x_hat, _ = _affine_projection(p0, a_mat, b_vec)

        if np.linalg.norm(x_hat - x) <= 1e-12:
            if not working:
                return x_hat, float(np.linalg.norm(x_hat - p0))
            mult, *_ = np.linalg.lstsq(a_mat.T, p0 - x_hat, rcond=None)
            lam = -mult[n_eq:]
            neg = np.nonzero(lam < -1e-10)[0]
            if neg.size == 0:
                return x_hat, float(np.linalg.norm(x_hat - p0))
            working.pop(int(neg[0]))  # Bland: working is index-sorted
            continue

        d = x_hat - x
        alpha = 1.0
        blocker = -1
        for i in range(m):
            if i in working:
                continue
            gd = g_mat[i] @ d
            if gd < -1e-14:
                ai = (g_mat[i] @ x - h_vec[i]) / -gd
                if ai < alpha - 1e-15:
                    alpha = max(ai, 0.0)
                    blocker = i
        x = x + alpha * d
        if blocker >= 0:
            working.append(blocker)
            working.sort()
    raise SolverError("active-set projection did not converge")


class PolytopeProjector:
    """Vectorized exact projector onto {E x = f, x >= 0 (free coords), G x >= 0}.

    Enumerates candidate active sets of the inequality constraints; for a
    strictly convex objective the projection onto the affine hull of the
    true active set is the true projection, so taking the feasible
    candidate of least distance is exact.  Affine maps are precomputed once
    per polytope; ``project`` is then a handful of matrix products per
    subset for a whole batch of points.
    """

    MAX_INEQ = 16

    def __init__(self, e_mat, f_vec, nonneg_idx, g_mat=None):
        e_mat = np.asarray(e_mat, dtype=float)
        if e_mat.ndim != 2:
            raise ValueError("equality matrix must be 2-d")
        self.n = e_mat.shape[1]
        self.e_mat = e_mat
        self.f_vec = np.asarray(f_vec, dtype=float)
        self.nonneg_idx = list(nonneg_idx)
        g_mat = np.zeros((0, self.n)) if g_mat is None else np.asarray(g_mat, dtype=float)
        rows = [_unit_row(self.n, i) for i in self.nonneg_idx]
        self.ineq = np.vstack([np.array(rows).reshape(-1, self.n), g_mat])
        self.m = self.ineq.shape[0]
        if self.m > self.MAX_INEQ:
            raise SolverError(
                f"{self.m} inequality constraints exceed the enumeration budget"
            )
        self._maps = []
        for mask in range(1 << self.m):
            active = [i for i in range(self.m) if mask >> i & 1]
            a_mat = np.vstack([self.e_mat, self.ineq[active]])
            b_vec = np.concatenate([self.f_vec, np.zeros(len(active))])
            pinv = np.linalg.pinv(a_mat, rcond=1e-12)
            base = pinv @ b_vec
            if not np.allclose(a_mat @ base, b_vec, atol=1e-9):
                continue  # inconsistent active set
            self._maps.append((np.eye(self.n) - pinv @ a_mat, base))

    def project(self, points: np.ndarray):
        """Project each row of ``points``; returns (projections, distances)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        best_d2 = np.full(pts.shape[0], np.inf)
        best_x = np.zeros_like(pts)
        for lin, base in self._maps:
            cand = pts @ lin.T + base
            feas = (cand @ self.ineq.T >= -1e-10).all(axis=1)
            if not feas.any():
                continue
            d2 = ((cand - pts) ** 2).sum(axis=1)
            take = feas & (d2 < best_d2)
            best_d2[take] = d2[take]
            best_x[take] = cand[take]
        if not np.isfinite(best_d2).all():
            raise SolverError("batch projection found no feasible candidate")
        return best_x, np.sqrt(best_d2)


def _unit_row(n, i):
    row = np.zeros(n)
    row[i] = 1.0
    return row


def blend_into_polytope(point, interior, g_mat):
    """Pull ``point`` toward a strictly feasible ``interior`` until G x >= 0.

    Feasibility along the segment is linear per constraint, so the largest
    admissible blend is available in closed form; the returned point sits
    slightly inside the violated facets.
    """
    if g_mat is None or len(g_mat) == 0:
        return point
    gp = g_mat @ point
    if (gp >= 0).all():
        return point
    gi = g_mat @ interior
    lam = 1.0
    for v_p, v_i in zip(gp, gi):
        if v_p < 0:
            lam = min(lam, v_i / (v_i - v_p))
    return interior + 0.95 * lam * (point - interior)


def min_quadratic_on_sphere(a_mat, b_vec):
    """Global minimum of z' A z + b' z over the unit sphere.

    Classical secular-equation approach: stationary points satisfy
    (A − μ I) z = −b/2 with ‖z‖ = 1, and the global minimum is the
    stationary point with the smallest multiplier μ ≤ λ_min(A).
    Returns (value, z).
    """
    a_mat = np.asarray(a_mat, dtype=float)
    b_vec = np.asarray(b_vec, dtype=float)
    k = b_vec.size
    if k == 0:
        raise ValueError("empty sphere problem")
    lam, q = np.linalg.eigh(0.5 * (a_mat + a_mat.T))
    c = q.T @ (b_vec / 2.0)
    scale = max(1.0, float(np.max(np.abs(lam))), float(np.linalg.norm(c)))

    def z_of(mu):
        return c / (mu - lam)

    lam_min = lam[0]
    on_min = np.abs(lam - lam_min) <= 1e-12 * scale
    c_min_norm = float(np.linalg.norm(c[on_min]))

    if np.linalg.norm(c) <= 1e-14 * scale:
        z = q[:, 0]
        return float(z @ a_mat @ z + b_vec @ z), z

    hard = c_min_norm <= 1e-13 * scale
    if hard:
        zt = np.where(on_min, 0.0, c / (lam_min - lam + np.where(on_min, 1.0, 0.0)))
        rest = float(zt @ zt)
        if rest <= 1.0:
            tau = np.sqrt(max(1.0 - rest, 0.0))
            z = q @ zt + tau * q[:, 0]
            val = float(z @ a_mat @ z + b_vec @ z)
            z_alt = q @ zt - tau * q[:, 0]
            val_alt = float(z_alt @ a_mat @ z_alt + b_vec @ z_alt)
            return (val, z) if val <= val_alt else (val_alt, z_alt)
        hard = False  # interior norm exceeds 1: an ordinary root exists below lam_min

    def norm2(mu):
        return float(np.sum((c / (lam - mu)) ** 2))

    hi = lam_min - 1e-15 * scale
    while norm2(hi) < 1.0:
        gap = lam_min - hi
        hi = lam_min - gap / 2.0
        if lam_min - hi < 1e-18 * scale:
            break
    lo = lam_min - (np.linalg.norm(c) + scale)
    while norm2(lo) >= 1.0:
        lo = lam_min - 2.0 * (lam_min - lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm2(mid) >= 1.0:
            hi = mid
        else:
            lo = mid
    mu = 0.5 * (lo + hi)
    z = q @ z_of(mu)
    nz = np.linalg.norm(z)
    if nz > 0:
        z = z / nz
    return float(z @ a_mat @ z + b_vec @ z), z
