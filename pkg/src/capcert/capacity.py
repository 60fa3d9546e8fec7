"""Capacity solvers and polyhedral descriptions of the capacity-achieving set.

Two solvers live here.  The unconstrained one is the classical alternating
(Blahut–Arimoto) iteration, stopped by the certified bracket between the
achievable rate of the current iterate and the max-divergence upper bound.
The constrained one maximizes the information rate over a polytope cut out
of the simplex by halfspaces ⟨p, a⟩ ≥ 0, using conditional gradient with
away steps: the subproblem is a linear program over the constraint
polytope and the stopping criterion is the certified duality gap.

Both produce the data needed to describe the full solution set: the set of
maximizers is a polytope with a unique induced output distribution, and
``PiSet`` records its equality system, an orthonormal basis of the parallel
subspace, and an interior representative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from . import _polytope
from .core import (
    Channel,
    Distribution,
    SolverError,
    TangentVector,
    divergences_to_output,
    information_rate_batch,
    kernel_basis,
)

__all__ = [
    "CapacitySolution",
    "ConstraintSet",
    "PiSet",
    "blahut_arimoto",
    "capacity_achieving_set",
    "constrained_capacity",
    "constrained_pi_set",
]

# Zero thresholds for support identification and face probing; all the
# quantities involved are O(1) probabilities.
_ZERO_TOL = 1e-9


@dataclass(frozen=True)
class CapacitySolution:
    """Capacity value (nats) with its certificate and witnesses.

    ``capacity`` is the achievable rate of the final iterate (a lower bound
    on the true capacity); ``residual`` is the certified gap between the
    upper and lower capacity bounds at termination, so the true capacity
    lies in [capacity, capacity + residual].
    """

    capacity: float
    q_star: Distribution
    p_witness: Distribution
    iterations: int
    residual: float
    lower_bounds: tuple = ()


@dataclass(frozen=True)
class ConstraintSet:
    """Linear input constraints ⟨p, a⟩ ≥ 0, one vector a per row.

    Construction checks by LP that the constrained simplex is nonempty.
    An empty vector list is allowed and leaves the full simplex.
    """

    vectors: tuple

    def __init__(self, vectors):
        arrs = tuple(np.asarray(v, dtype=float) for v in vectors)
        if arrs:
            n = arrs[0].size
            if any(a.ndim != 1 or a.size != n for a in arrs):
                raise ValueError("constraint vectors must share one length")
            e_mat = np.ones((1, n))
            try:
                _, s = _polytope.interior_point(e_mat, [1.0], n, self.matrix_of(arrs))
            except SolverError as exc:
                raise SolverError(f"infeasible constraint set: {exc}") from exc
        object.__setattr__(self, "vectors", tuple(map(_freeze, arrs)))

    @staticmethod
    def matrix_of(arrs) -> np.ndarray:
        return np.array([np.asarray(a, dtype=float) for a in arrs]).reshape(len(arrs), -1)

    @property
    def matrix(self) -> np.ndarray:
        if not self.vectors:
            return np.zeros((0, 0))
        return self.matrix_of(self.vectors)

    def __len__(self) -> int:
        return len(self.vectors)


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PiSet:
    """Polyhedral description of the set of capacity-achieving inputs.

    The set is {p : E p = f, p ≥ 0 on free coordinates, G p ≥ 0} where the
    equality system pins the support, the induced output distribution, and
    normalization (unconstrained case) or the affine hull through the
    solver witness (constrained case).  ``v_basis`` is an orthonormal basis
    of the parallel subspace; its vectors sum to zero and lie in the kernel
    of the channel matrix.
    """

    x_max: tuple
    e_mat: np.ndarray
    f_vec: np.ndarray
    v_basis: tuple
    representative: Distribution
    constrained: bool = False
    constraint_set: ConstraintSet | None = None

    @property
    def equality_constraints(self):
        return self.e_mat, self.f_vec

    @property
    def dim(self) -> int:
        return len(self.v_basis)

    @property
    def n(self) -> int:
        return self.representative.n

    def free_nonneg_indices(self) -> list[int]:
        """Coordinates whose nonnegativity is a live inequality constraint."""
        if self.constrained:
            return list(range(self.n))
        return list(self.x_max)

    def constraint_matrix(self) -> np.ndarray | None:
        if self.constrained and self.constraint_set is not None and len(self.constraint_set):
            return self.constraint_set.matrix
        return None

    def contains(self, p: np.ndarray, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        if np.max(np.abs(self.e_mat @ p - self.f_vec)) > tol:
            return False
        if np.min(p) < -tol:
            return False
        g = self.constraint_matrix()
        return g is None or np.min(g @ p) >= -tol


def blahut_arimoto(channel: Channel, tol: float = 1e-9, max_iter: int = 200_000) -> CapacitySolution:
    """Capacity of a channel by the alternating maximization iteration.

    Stops once the certified bracket max_x D(W(·|x)‖q_k) − I(p_k) drops to
    ``tol``; the reported capacity is the achievable lower end.  The
    alternating iteration contracts like (1 − C) near channels of tiny
    capacity, so once the bracket is moderately small a Newton polish of
    the concave objective is attempted; it is accepted only if the bracket
    recomputed at the polished point certifies ``tol``, otherwise the plain
    iteration continues.  Raises SolverError when ``max_iter`` iterations
    do not reach the tolerance.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = channel.rows
    p = np.full(channel.n_inputs, 1.0 / channel.n_inputs)
    lower_bounds = []
    polish_at = 1e-6
    for it in range(1, max_iter + 1):
        q = p @ w
        d = divergences_to_output(channel, q)
        lb = float(p @ d)
        ub = float(d.max())
        lower_bounds.append(lb)
        if ub - lb <= tol:
            return CapacitySolution(
                capacity=lb,
                q_star=Distribution(q),
                p_witness=Distribution(p),
                iterations=it,
                residual=ub - lb,
                lower_bounds=tuple(lower_bounds),
            )
        if ub - lb <= polish_at:
            polish_at = max((ub - lb) / 100.0, tol)
            p2 = _newton_polish(channel, p)
            q2 = p2 @ w
            d2 = divergences_to_output(channel, q2)
            lb2 = float(p2 @ d2)
            ub2 = float(d2.max()) if np.isfinite(d2).all() else np.inf
            if ub2 - lb2 <= tol and lb2 >= lb:
                lower_bounds.append(lb2)
                return CapacitySolution(
                    capacity=lb2,
                    q_star=Distribution(q2),
                    p_witness=Distribution(p2),
                    iterations=it + 1,
                    residual=max(ub2 - lb2, 0.0),
                    lower_bounds=tuple(lower_bounds),
                )
        p = p * np.exp(d - ub)
        p /= p.sum()
    raise SolverError(
        f"Blahut-Arimoto did not reach tol={tol:g} within {max_iter} iterations"
    )


def _newton_polish(
    channel: Channel,
    p0: np.ndarray,
    g_mat: np.ndarray | None = None,
    active: set | None = None,
    max_steps: int = 60,
) -> np.ndarray:
    """Damped Newton ascent of the information rate from a near-optimal point.

    Maximizes over {Σp = 1, p ≥ 0} intersected with ⟨p, a⟩ ≥ 0 rows when
    ``g_mat`` is given; constraints in ``active`` are held as equalities.
    Coordinates and constraints hitting their bounds join the active set.
    Kernel directions of the channel make the Hessian singular, so steps
    use the least-squares (minimum-norm) Newton system.  Returns a feasible
    point with rate at least that of ``p0``; callers must re-certify.
    """
    n = p0.size
    p = p0.copy()
    support = [x for x in range(n) if p[x] > 1e-13]
    active = set() if active is None else set(active)

    def rate(vec):
        return float(information_rate_batch(channel, vec[None, :])[0])

    current = rate(p)
    for _ in range(max_steps):
        rows = [np.ones(n)]
        for x in range(n):
            if x not in support:
                row = np.zeros(n)
                row[x] = 1.0
                rows.append(row)
        if g_mat is not None:
            rows.extend(g_mat[i] for i in sorted(active))
        nmat = _polytope.orthonormal_nullspace(np.array(rows), n)
        if nmat.shape[1] == 0:
            break
        q = p @ channel.rows
        d = divergences_to_output(channel, q)
        d = np.where(np.isfinite(d), d, 0.0)
        grad_z = nmat.T @ d
        if np.linalg.norm(grad_z) <= 1e-13:
            break
        pos = q > 0
        wq = channel.rows[:, pos] / q[pos][None, :]
        hess = -(nmat.T @ (wq @ channel.rows[:, pos].T) @ nmat)
        step_z, *_ = np.linalg.lstsq(-hess, grad_z, rcond=None)
        if float(step_z @ grad_z) <= 0.0:
            step_z = grad_z
        direction = nmat @ step_z

        t_max = np.inf
        hit = None
        for x in support:
            if direction[x] < -1e-15:
                tx = p[x] / -direction[x]
                if tx < t_max:
                    t_max, hit = tx, ("coord", x)
        if g_mat is not None:
            for i in range(g_mat.shape[0]):
                if i in active:
                    continue
                speed = float(g_mat[i] @ direction)
                if speed < -1e-15:
                    ti = float(g_mat[i] @ p) / -speed
                    if ti < t_max:
                        t_max, hit = ti, ("constraint", i)
        t = min(1.0, t_max)
        improved = False
        for _ in range(40):
            cand = p + t * direction
            val = rate(np.maximum(cand, 0.0) / max(cand.sum(), 1e-300))
            if val >= current:
                p = np.maximum(cand, 0.0)
                p /= p.sum()
                current = val
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        if hit is not None and t >= 0.999 * t_max:
            kind, idx = hit
            if kind == "coord":
                p[idx] = 0.0
                p /= p.sum()
                support = [x for x in support if x != idx]
            else:
                active.add(idx)
    return p


def capacity_achieving_set(
    channel: Channel, sol: CapacitySolution, support_tol: float = 1e-7
) -> PiSet:
    """Polyhedral description of all capacity-achieving input distributions.

    The maximizers are exactly the distributions supported on
    x_max = {x : D(W(·|x)‖q★) = C} whose output marginal equals q★; the
    numerical x_max uses the threshold C − support_tol.  The representative
    is an analytic-center-style interior point of the polytope, and the
    parallel subspace is the null space of the equality system.
    """
    if sol.residual > 0.1 * support_tol:
        raise ValueError(
            f"solver residual {sol.residual:.3e} too large for support_tol={support_tol:g}"
        )
    q = sol.q_star.mass
    d = divergences_to_output(channel, q)
    x_max = set(np.nonzero(d >= sol.capacity - support_tol)[0])
    n = channel.n_inputs

    while True:
        e_mat, f_vec = _pi_equalities(channel, q, x_max)
        try:
            p_lp, slack = _polytope.interior_point(
                e_mat, f_vec, n, slack_idx=sorted(x_max)
            )
        except SolverError as exc:
            raise SolverError(
                f"empty capacity-achieving polytope; support_tol={support_tol:g} "
                f"is too small relative to the solver residual ({exc})"
            ) from exc
        if slack > _ZERO_TOL:
            break
        forced = set()
        for x in sorted(x_max):
            obj = np.zeros(n)
            obj[x] = 1.0
            _, top = _polytope.solve_lp_max(obj, e_mat, f_vec)
            if top <= _ZERO_TOL:
                forced.add(x)
        if not forced:
            break
        x_max -= forced

    nullb = _polytope.orthonormal_nullspace(e_mat, n)
    if nullb.shape[1] == 0:
        rep, *_ = np.linalg.lstsq(e_mat, f_vec, rcond=None)
        if np.min(rep) < -_ZERO_TOL:
            rep = p_lp
    else:
        rep = _polytope.analytic_center(e_mat, f_vec, p_lp, sorted(x_max))
    rep = np.maximum(rep, 0.0)
    rep /= rep.sum()

    v_basis = tuple(TangentVector(nullb[:, k]) for k in range(nullb.shape[1]))
    return PiSet(
        x_max=tuple(sorted(x_max)),
        e_mat=_freeze(e_mat),
        f_vec=_freeze(f_vec),
        v_basis=v_basis,
        representative=Distribution(rep),
    )


def _pi_equalities(channel: Channel, q: np.ndarray, x_max: set):
    """Equality system {supp(p) ⊆ x_max, p W = q, Σp = 1} as (E, f)."""
    n = channel.n_inputs
    rows = []
    rhs = []
    for x in range(n):
        if x not in x_max:
            row = np.zeros(n)
            row[x] = 1.0
            rows.append(row)
            rhs.append(0.0)
    rows.extend(channel.rows.T)
    rhs.extend(q)
    rows.append(np.ones(n))
    rhs.append(1.0)
    return np.array(rows), np.array(rhs)


def constrained_capacity(
    channel: Channel,
    constraints: ConstraintSet,
    tol: float = 1e-9,
    max_iter: int = 20_000,
) -> CapacitySolution:
    """Constrained capacity by conditional gradient with away steps.

    Maximizes the (concave) information rate over the polytope
    P_A = {p in the simplex : ⟨p, a⟩ ≥ 0 for a in the constraint set}.
    The linear subproblem is an LP over P_A; termination requires the
    duality gap max_s ⟨∇I(p), s − p⟩ ≤ tol, which certifies that the
    returned value is within ``tol`` of the optimum.  Away steps prevent
    the O(1/k) zig-zag of the plain method so the gap actually reaches
    desk-scale tolerances.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = channel.n_inputs
    g_mat = constraints.matrix if len(constraints) else None
    if g_mat is not None and g_mat.shape[1] != n:
        raise ValueError("constraint vectors do not match the input alphabet")
    e_mat = np.ones((1, n))
    f_vec = np.array([1.0])

    p_int, _ = _polytope.interior_point(e_mat, f_vec, n, g_mat)
    grad = _capped_gradient(channel, p_int)
    v0, _ = _polytope.solve_lp_max(grad, e_mat, f_vec, g_mat)
    weights = {_vertex_key(v0): (v0, 1.0)}

    p = v0.copy()
    lower_bounds = []
    polish_at = 1e-6
    for it in range(1, max_iter + 1):
        raw = divergences_to_output(channel, p @ channel.rows) - 1.0
        finite = np.isfinite(raw).all()
        grad = raw if finite else np.minimum(raw, 1e6)
        s_fw, _ = _polytope.solve_lp_max(grad, e_mat, f_vec, g_mat)
        gap = float(grad @ (s_fw - p))
        value = float(information_rate_batch(channel, p[None, :])[0])
        lower_bounds.append(value)
        if finite and gap <= tol:
            return CapacitySolution(
                capacity=value,
                q_star=Distribution(p @ channel.rows),
                p_witness=Distribution(p),
                iterations=it,
                residual=max(gap, 0.0),
                lower_bounds=tuple(lower_bounds),
            )
        if finite and gap <= polish_at:
            # Terminal Newton refinement on the guessed active face; only
            # accepted if the recomputed LP gap certifies the tolerance.
            polish_at = max(gap / 100.0, tol)
            active_guess = set()
            if g_mat is not None:
                active_guess = {
                    i for i in range(g_mat.shape[0]) if float(g_mat[i] @ p) <= 1e-7
                }
            p2 = _newton_polish(channel, p, g_mat=g_mat, active=active_guess)
            raw2 = divergences_to_output(channel, p2 @ channel.rows) - 1.0
            if np.isfinite(raw2).all():
                s2, _ = _polytope.solve_lp_max(raw2, e_mat, f_vec, g_mat)
                gap2 = float(raw2 @ (s2 - p2))
                value2 = float(information_rate_batch(channel, p2[None, :])[0])
                if gap2 <= tol and value2 >= value:
                    lower_bounds.append(value2)
                    return CapacitySolution(
                        capacity=value2,
                        q_star=Distribution(p2 @ channel.rows),
                        p_witness=Distribution(p2),
                        iterations=it + 1,
                        residual=max(gap2, 0.0),
                        lower_bounds=tuple(lower_bounds),
                    )

        away_key = min(weights, key=lambda k: float(grad @ weights[k][0]))
        v_away, lam_away = weights[away_key]
        gap_away = float(grad @ (p - v_away))
        use_away = gap_away > gap and len(weights) > 1 and lam_away < 1.0
        if use_away:
            direction = p - v_away
            t_max = lam_away / (1.0 - lam_away)
        else:
            direction = s_fw - p
            t_max = 1.0
        t = _exact_line_search(channel, p, direction, t_max)

        if use_away:
            # p_new = (1+t)·p − t·v_away
            scale = 1.0 + t
            weights = {k: (v, lam * scale) for k, (v, lam) in weights.items()}
            weights[away_key] = (v_away, lam_away * scale - t)
        else:
            weights = {k: (v, lam * (1.0 - t)) for k, (v, lam) in weights.items()}
            key = _vertex_key(s_fw)
            old = weights.get(key, (s_fw, 0.0))[1]
            weights[key] = (s_fw, old + t)
        weights = {k: (v, lam) for k, (v, lam) in weights.items() if lam > 1e-14}
        total = sum(lam for _, lam in weights.values())
        weights = {k: (v, lam / total) for k, (v, lam) in weights.items()}
        p = np.zeros(n)
        for v, lam in weights.values():
            p += lam * v
    raise SolverError(
        f"conditional gradient did not reach gap tol={tol:g} within {max_iter} iterations"
    )


def _vertex_key(v: np.ndarray):
    return np.round(v, 12).tobytes()


def _capped_gradient(channel: Channel, p: np.ndarray) -> np.ndarray:
    raw = divergences_to_output(channel, p @ channel.rows) - 1.0
    return np.minimum(raw, 1e6)


def _exact_line_search(channel: Channel, p, direction, t_max, iters=80) -> float:
    """Maximize the information rate along p + t·direction, t in [0, t_max].

    The rate is concave in t and its derivative is ⟨d, c⟩ − Σ_y (dW)_y ln q_y(t),
    monotone decreasing; bisect on its sign.
    """
    w = channel.rows
    c = xlogy(w, w).sum(axis=1)
    dc = float(direction @ c)
    dw = direction @ w
    q0 = p @ w

    def slope(t):
        q = np.maximum(q0 + t * dw, 1e-300)
        return dc - float(dw @ np.log(q))

    t_max = min(t_max, 1e12)
    if slope(t_max) >= 0.0:
        return t_max
    lo, hi = 0.0, t_max
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def constrained_pi_set(
    channel: Channel,
    constraints: ConstraintSet,
    sol: CapacitySolution,
    support_tol: float = 1e-7,
) -> PiSet:
    """Description of the constrained capacity-achieving set.

    Any two maximizers differ by a kernel vector of the channel matrix (the
    induced output distribution is unique), and a kernel direction v keeps
    the rate at the optimum iff ⟨∇I(p★), v⟩ = 0.  The set is therefore
    (p★ + V′) ∩ P_A with V′ = {v ∈ Ker(W) : ⟨∇I(p★), v⟩ = 0}, encoded here
    by equality rows spanning the orthogonal complement of V′.
    """
    if sol.residual > 0.1 * support_tol:
        raise ValueError(
            f"solver residual {sol.residual:.3e} too large for support_tol={support_tol:g}"
        )
    p_star = sol.p_witness.mass
    n = channel.n_inputs
    kb = kernel_basis(channel)

    if kb:
        d_vec = divergences_to_output(channel, sol.q_star.mass)
        if not np.isfinite(d_vec).all():
            raise SolverError(
                "constrained optimum induces an output distribution without full "
                "support; certificate machinery is not applicable"
            )
        b_mat = np.column_stack([v.delta for v in kb])
        tilt = b_mat.T @ d_vec
        z_basis = _polytope.orthonormal_nullspace(tilt[None, :], b_mat.shape[1])
        v_cols = b_mat @ z_basis
    else:
        v_cols = np.zeros((n, 0))

    u_basis = _polytope.orthonormal_nullspace(v_cols.T, n) if v_cols.shape[1] else np.eye(n)
    e_mat = u_basis.T
    f_vec = e_mat @ p_star

    g_mat = constraints.matrix if len(constraints) else None
    x_max = []
    for x in range(n):
        if v_cols.shape[1] == 0:
            if p_star[x] > _ZERO_TOL:
                x_max.append(x)
            continue
        obj = np.zeros(n)
        obj[x] = 1.0
        _, top = _polytope.solve_lp_max(obj, e_mat, f_vec, g_mat)
        if top > _ZERO_TOL:
            x_max.append(x)

    v_basis = tuple(TangentVector(v_cols[:, k]) for k in range(v_cols.shape[1]))
    return PiSet(
        x_max=tuple(x_max),
        e_mat=_freeze(e_mat),
        f_vec=_freeze(f_vec),
        v_basis=v_basis,
        representative=sol.p_witness,
        constrained=True,
        constraint_set=constraints,
    )
