"""Quadratic-decay certificates for the information rate function.

The rate function drops at least quadratically with the Euclidean distance
to the maximizer set: there are constants α, μ > 0 with

    I(p) ≤ C − α·‖p − p^Π‖²   whenever ‖p − p^Π‖ ≤ μ.

This module estimates the decay constant as the minimum of
α(d) = −(⟨grad, d⟩ + dᵀ·H·d)/2 over sampled valid directions (with local
refinement, and an exact sphere-quadratic solve on cone pieces that are
linear subspaces), derives μ by inverting the explicit remainder envelope,
and then verifies the inequality by structured sampling of the
μ-neighborhood.  The estimate is sampled, not certified; the verifier is
what closes the loop, and it is sensitive enough to reject inflated
constants (see the negative-control test).
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _polytope
from .capacity import (
    CapacitySolution,
    ConstraintSet,
    PiSet,
    blahut_arimoto,
    capacity_achieving_set,
    constrained_capacity,
    constrained_pi_set,
)
from .core import (
    Channel,
    DegenerateCertificateError,
    Distribution,
    SamplingError,
    SolverError,
    TangentVector,
    information_rate_batch,
)
from .expansion import ExpansionData, expansion_at
from .geometry import (
    SupportSets,
    batch_project,
    cone_membership,
    sample_valid_directions,
    valid_direction_cone,
)

__all__ = [
    "QuadraticCertificate",
    "VerificationReport",
    "Violation",
    "alpha_of_direction",
    "estimate_alpha",
    "compute_mu",
    "verify_theorem",
    "make_certificate",
    "run_pipeline",
    "PipelineResult",
]

# Distinct sub-stream tags so estimation and verification draws never overlap.
_STREAM_ESTIMATE = 0
_STREAM_MEMBERS = 9001
_STREAM_NEIGHBORHOOD = 9002
_STREAM_RADIAL = 9003


def worker_count() -> int:
    """Worker cap from CAPCERT_THREADS (default 1).

    Work is split by sample index with per-index random streams, so results
    are identical for any worker count.
    """
    try:
        return max(1, int(os.environ.get("CAPCERT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class QuadraticCertificate:
    """Estimated decay constant and the radius on which it is claimed.

    ``capacity`` is the value the decay is measured from.  ``mu`` solves
    f(mu) = alpha_hat for the remainder envelope f, so f(t) < alpha_hat on
    [0, mu).
    """

    alpha_hat: float
    mu: float
    min_direction: TangentVector
    base_point: Distribution
    sample_count: int
    seed: int
    constrained: bool
    capacity: float

    def __post_init__(self):
        if not self.alpha_hat > 0:
            raise ValueError("alpha_hat must be positive")
        if not self.mu > 0:
            raise ValueError("mu must be positive")


@dataclass(frozen=True)
class Violation:
    point: tuple
    value: float
    bound: float
    gap: float


@dataclass(frozen=True)
class VerificationReport:
    checked: int
    violations: tuple
    max_gap: float
    status: str

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def alpha_of_direction(d: TangentVector, exp: ExpansionData) -> float:
    """α(d) = −(⟨grad, d⟩ + dᵀ·H·d)/2 for a unit direction d."""
    v = d.delta
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValueError("direction must have unit Euclidean norm")
    return -0.5 * float(exp.grad @ v + v @ exp.half_hessian @ v)


def _alpha_batch(dirs: np.ndarray, exp: ExpansionData) -> np.ndarray:
    return -0.5 * (dirs @ exp.grad + np.einsum("ij,ij->i", dirs @ exp.half_hessian, dirs))


def estimate_alpha(channel: Channel, pi: PiSet, exp: ExpansionData, samples: int, seed: int):
    """Estimate min α over valid directions; returns (alpha_hat, direction, base).

    Sampled valid directions are grouped by the support signature of their
    base points (signatures share one cone).  Each group contributes its
    sampled minimum, projected-gradient refinements started from its ten
    best samples, and — when its cone is a linear subspace — the exact
    minimum of the quadratic over sphere ∩ subspace.  A nonpositive result
    aborts: it signals a misclassified maximizer polytope or a sampling
    failure, not a certifiable channel.
    """
    bases, dirs = sample_valid_direction_arrays(pi, samples, seed, stream=_STREAM_ESTIMATE)
    alphas = _alpha_batch(dirs, exp)

    best = int(np.argmin(alphas))
    alpha_hat = float(alphas[best])
    best_dir = dirs[best]
    best_base = bases[best]

    zero_tol = 1e-9
    x_zero_mat = bases <= zero_tol
    cons = pi.constraint_set
    if pi.constrained and cons is not None and len(cons):
        a_zero_mat = np.abs(bases @ cons.matrix.T) <= zero_tol
        signature_mat = np.hstack([x_zero_mat, a_zero_mat])
    else:
        a_zero_mat = np.zeros((bases.shape[0], 0), dtype=bool)
        signature_mat = x_zero_mat

    _, first_idx, inverse = np.unique(
        signature_mat, axis=0, return_index=True, return_inverse=True
    )
    for sig_id, rep_idx in enumerate(first_idx):
        members = np.nonzero(inverse == sig_id)[0]
        sets = SupportSets(
            x_zero=tuple(int(x) for x in np.nonzero(x_zero_mat[rep_idx])[0]),
            a_zero=tuple(int(a) for a in np.nonzero(a_zero_mat[rep_idx])[0]),
        )
        cone = valid_direction_cone(pi, sets)
        sig_base = bases[rep_idx]

        if not sets.x_zero and not sets.a_zero:
            cand = _exact_subspace_alpha(pi, exp)
            if cand is not None and cand[0] < alpha_hat:
                alpha_hat, best_dir = cand
                best_base = sig_base

        order = members[np.argsort(alphas[members])][:10]
        for idx in order:
            a_ref, d_ref = _refine_direction(dirs[idx], exp, cone)
            if a_ref < alpha_hat:
                alpha_hat, best_dir, best_base = a_ref, d_ref, bases[idx]

    if not alpha_hat > 0:
        raise SolverError(
            f"estimated decay constant is nonpositive ({alpha_hat:.3e}); the "
            "maximizer polytope is likely misclassified (support_tol) or the "
            "direction sampling failed"
        )
    best_dir = best_dir - best_dir.sum() / best_dir.size
    best_dir /= np.linalg.norm(best_dir)
    return alpha_hat, TangentVector(best_dir), Distribution(best_base)


def _exact_subspace_alpha(pi: PiSet, exp: ExpansionData):
    """Exact min of α over the unit sphere of {sum-zero} ∩ V-perp.

    This is the cone of valid directions at interior base points with no
    active constraints; minimizing the quadratic over a sphere is the
    classical secular-equation problem, solved exactly.
    """
    n = pi.n
    rows = [np.ones(n)]
    rows.extend(v.delta for v in pi.v_basis)
    basis = _polytope.orthonormal_nullspace(np.array(rows), n)
    if basis.shape[1] == 0:
        return None
    a_mat = basis.T @ exp.half_hessian @ basis
    b_vec = basis.T @ exp.grad
    val, z = _polytope.min_quadratic_on_sphere(-a_mat, -b_vec)
    d = basis @ z
    d = d - d.sum() / n
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        return None
    return 0.5 * val, d / norm


def _refine_direction(d0: np.ndarray, exp: ExpansionData, cone, steps: int = 80):
    """Projected-gradient descent of α over sphere ∩ cone from a valid start.

    The polyhedral part of the cone (equalities and sign constraints) is
    enforced by projection at every step; the dual-cone condition, when it
    is not a subspace, is enforced a posteriori: a failing endpoint is
    pulled back along the segment to the (feasible) start by bisection.
    """
    n = d0.size
    e_rows = np.array(cone.equalities).reshape(-1, n)
    f_vec = np.zeros(e_rows.shape[0])
    g_rows = [_unit(n, x) for x in cone.sign_index]
    g_rows.extend(cone.sign_vectors)
    g_mat = np.array(g_rows).reshape(-1, n)
    h_vec = np.zeros(g_mat.shape[0])

    def alpha_of(v):
        return -0.5 * float(exp.grad @ v + v @ exp.half_hessian @ v)

    d = d0 / np.linalg.norm(d0)
    a_best, d_best = alpha_of(d), d
    step = 0.2
    for _ in range(steps):
        grad = -0.5 * (exp.grad + 2.0 * exp.half_hessian @ d)
        y = d - step * grad
        try:
            y, _ = _polytope.project_active_set(y, e_rows, f_vec, g_mat, h_vec, d)
        except SolverError:
            break
        norm = np.linalg.norm(y)
        if norm < 1e-9:
            step *= 0.5
            continue
        y /= norm
        a_y = alpha_of(y)
        if a_y < a_best - 1e-15:
            d, a_best, d_best = y, a_y, y
            step = min(step * 1.3, 1.0)
        else:
            step *= 0.5
            if step < 1e-10:
                break

    if not cone.dual_is_subspace and not cone_membership(TangentVector(_center(d_best)), cone):
        d_best = _pull_back_into_cone(d0 / np.linalg.norm(d0), d_best, cone)
        a_best = alpha_of(d_best)
    return a_best, _center(d_best) / np.linalg.norm(_center(d_best))


def _center(v):
    return v - v.sum() / v.size


def _pull_back_into_cone(d_ok: np.ndarray, d_bad: np.ndarray, cone) -> np.ndarray:
    """Largest feasible point of the segment [d_ok, d_bad] in a convex cone."""
    lo, hi = 0.0, 1.0
    for _ in range(12):
        mid = 0.5 * (lo + hi)
        cand = _center(d_ok + mid * (d_bad - d_ok))
        norm = np.linalg.norm(cand)
        if norm < 1e-12:
            hi = mid
            continue
        if cone_membership(TangentVector(cand / norm), cone):
            lo = mid
        else:
            hi = mid
    out = _center(d_ok + lo * (d_bad - d_ok))
    return out / np.linalg.norm(out)


def _unit(n, i):
    row = np.zeros(n)
    row[i] = 1.0
    return row


def compute_mu(alpha_hat: float, exp: ExpansionData) -> float:
    """Radius μ with f(t) < alpha_hat on [0, μ): the unique root of f(μ) = α̂.

    Closed form from the rational envelope:
    μ = α̂·q_min² / (√|X| · (|X|·|Y| + α̂·q_min)); always below the envelope
    pole q_min/√|X|.
    """
    if alpha_hat <= 0:
        raise ValueError("alpha_hat must be positive")
    q = exp.q_min
    nx, ny = exp.n_inputs, exp.n_outputs
    return alpha_hat * q * q / (np.sqrt(nx) * (nx * ny + alpha_hat * q))


def make_certificate(
    channel: Channel,
    sol: CapacitySolution,
    pi: PiSet,
    exp: ExpansionData,
    samples: int = 10_000,
    seed: int = 0,
) -> QuadraticCertificate:
    """Estimate α over valid directions and pick the matching radius μ."""
    alpha_hat, direction, base = estimate_alpha(channel, pi, exp, samples, seed)
    mu = compute_mu(alpha_hat, exp)
    return QuadraticCertificate(
        alpha_hat=alpha_hat,
        mu=mu,
        min_direction=direction,
        base_point=base,
        sample_count=samples,
        seed=seed,
        constrained=pi.constrained,
        capacity=sol.capacity,
    )


def verify_theorem(
    channel: Channel,
    pi: PiSet,
    certificate: QuadraticCertificate,
    samples: int = 10_000,
    seed: int = 0,
    slack: float = 1e-9,
) -> VerificationReport:
    """Check I(p) ≤ C − α̂·dist(p, Π)² on sampled points of the μ-neighborhood.

    The sample mix: exact members of the maximizer polytope (distance 0),
    feasible draws that happen to land within μ, and radial points
    p★ + t·d along freshly sampled valid directions at distances
    t ∈ {μ, μ/2, μ/10, μ/100} (clipped to feasibility).  Distances are
    recomputed by projection, not trusted from construction.  A sample
    violates when I(p) > C − α̂·dist² + slack.
    """
    mu = certificate.mu
    alpha = certificate.alpha_hat
    cap = certificate.capacity
    n = pi.n

    n_members = min(max(samples // 50, 1), 200)
    member_pts = _member_samples(pi, n_members, seed)

    n_opp_attempts = samples // 4
    opp_pts = _neighborhood_samples(pi, n_opp_attempts, seed, mu)

    n_radial = max(samples - member_pts.shape[0] - opp_pts.shape[0], 0)
    radial_pts = _radial_samples(pi, n_radial, seed, mu)

    pts = np.vstack([member_pts, opp_pts, radial_pts])
    if pts.shape[0] == 0:
        raise SamplingError(
            "could not place any sample in the μ-neighborhood; μ may be too small"
        )
    _, dist = batch_project(pi, pts)
    values = information_rate_batch(channel, pts)
    bounds = cap - alpha * dist**2
    gaps = values - bounds

    violations = []
    for i in np.nonzero(gaps > slack)[0]:
        violations.append(
            Violation(
                point=tuple(float(v) for v in pts[i]),
                value=float(values[i]),
                bound=float(bounds[i]),
                gap=float(gaps[i]),
            )
        )
    return VerificationReport(
        checked=int(pts.shape[0]),
        violations=tuple(violations),
        max_gap=float(gaps.max()),
        status="pass" if not violations else "fail",
    )


def _member_samples(pi: PiSet, count: int, seed: int) -> np.ndarray:
    """Exact members of the maximizer polytope, the representative first."""
    rep = pi.representative.mass
    out = [rep]
    if pi.dim:
        v_mat = np.column_stack([v.delta for v in pi.v_basis])
        g_mat = pi.constraint_matrix()
        for i in range(count - 1):
            rng = np.random.default_rng([seed, _STREAM_MEMBERS, i])
            z = rng.standard_normal(pi.dim)
            v = v_mat @ z
            t_max = _feasible_step(rep, v, g_mat)
            out.append(rep + (0.95 * rng.random() * t_max) * v)
    return np.array(out)


def _feasible_step(p: np.ndarray, v: np.ndarray, g_mat) -> float:
    """Largest t with p + t·v keeping p ≥ 0 and G(p + t·v) ≥ 0."""
    t = np.inf
    for slack_val, speed in zip(p, v):
        if speed < -1e-15:
            t = min(t, slack_val / -speed)
    if g_mat is not None:
        for row in g_mat:
            speed = float(row @ v)
            if speed < -1e-15:
                t = min(t, float(row @ p) / -speed)
    return 0.0 if not np.isfinite(t) else t


def _neighborhood_samples(pi: PiSet, attempts: int, seed: int, mu: float) -> np.ndarray:
    """Feasible draws whose projection distance happens to be ≤ μ."""
    from .geometry import _draw_feasible

    n = pi.n
    cons = pi.constraint_set
    g_mat = cons.matrix if pi.constrained and cons is not None and len(cons) else None
    interior = None
    if g_mat is not None:
        interior, _ = _polytope.interior_point(np.ones((1, n)), [1.0], n, g_mat)

    def draw(i):
        return _draw_feasible(n, seed, _STREAM_NEIGHBORHOOD, i, g_mat, interior)

    pts = np.array(_indexed_map(draw, attempts))
    if pts.size == 0:
        return np.zeros((0, n))
    _, dist = batch_project(pi, pts)
    return pts[dist <= mu]


def _indexed_map(fn, count: int) -> list:
    """[fn(0), ..., fn(count-1)], split across CAPCERT_THREADS workers.

    fn must depend only on its index (per-index random streams), so the
    merged result is identical for any worker count.
    """
    workers = worker_count()
    if workers <= 1 or count < 256:
        return [fn(i) for i in range(count)]
    chunk = (count + workers - 1) // workers
    ranges = [range(s, min(s + chunk, count)) for s in range(0, count, chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = pool.map(lambda idx: [fn(i) for i in idx], ranges)
    return [x for part in parts for x in part]


def _radial_samples(pi: PiSet, count: int, seed: int, mu: float) -> np.ndarray:
    """Points p★ + t·d at controlled distances along fresh valid directions."""
    if count == 0:
        return np.zeros((0, pi.n))
    try:
        pairs = sample_valid_directions(pi, count, seed, stream=_STREAM_RADIAL)
    except DegenerateCertificateError:
        return np.zeros((0, pi.n))
    factors = (1.0, 0.5, 0.1, 0.01)
    g_mat = pi.constraint_matrix()
    out = []
    for i, (base, d) in enumerate(pairs):
        t_feas = _feasible_step(base.mass, d.delta, g_mat)
        t = min(factors[i % 4] * mu, 0.999 * t_feas)
        if t <= 0:
            continue
        p = np.maximum(base.mass + t * d.delta, 0.0)
        out.append(p / p.sum())
    return np.array(out).reshape(-1, pi.n)


@dataclass(frozen=True)
class PipelineResult:
    """Everything cmd-level callers need from the end-to-end pipeline."""

    solution: CapacitySolution
    pi_set: PiSet
    expansion: ExpansionData | None
    certificate: QuadraticCertificate | None
    report: VerificationReport | None
    degenerate: bool

    @property
    def status(self) -> str:
        if self.degenerate:
            return "degenerate"
        return self.report.status


def run_pipeline(
    channel: Channel,
    constraints: ConstraintSet | None = None,
    tol: float = 1e-9,
    support_tol: float = 1e-7,
    samples: int = 10_000,
    seed: int = 0,
    slack: float = 1e-9,
) -> PipelineResult:
    """Capacity → maximizer polytope → expansion → certificate → verification.

    The capacity solver runs at a tolerance ten times tighter than both
    ``tol`` and ``support_tol`` so that solver residual cannot eat into the
    verification slack.  A degenerate channel (every feasible input is
    optimal, so the decay statement is vacuous) short-circuits to a
    degenerate result instead of failing.
    """
    solver_tol = 0.1 * min(tol, support_tol)
    constrained = constraints is not None and len(constraints) > 0
    if constrained:
        sol = constrained_capacity(channel, constraints, tol=solver_tol)
        pi = constrained_pi_set(channel, constraints, sol, support_tol=support_tol)
    else:
        sol = blahut_arimoto(channel, tol=solver_tol)
        pi = capacity_achieving_set(channel, sol, support_tol=support_tol)

    if not constrained and pi.dim == channel.n_inputs - 1:
        return PipelineResult(sol, pi, None, None, None, True)

    exp = expansion_at(channel, sol)
    try:
        cert = make_certificate(channel, sol, pi, exp, samples=samples, seed=seed)
    except DegenerateCertificateError:
        return PipelineResult(sol, pi, exp, None, None, True)
    report = verify_theorem(channel, pi, cert, samples=samples, seed=seed, slack=slack)
    return PipelineResult(sol, pi, exp, cert, report, False)
