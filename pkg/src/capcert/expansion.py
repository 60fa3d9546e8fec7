"""Second-order expansion of the information rate at the maximizer set.

At any maximizer the rate function expands, along a unit direction d and
step t, as

    I(p★ + t·d) = C + ⟨grad, d⟩·t + (dᵀ·H·d)·t² + ρ(t),

where grad has entries D(W(·|x)‖q★) − 1, H is the *half*-Hessian
−Σ_y W(y|x₁)W(y|x₂)/(2 q★(y)) (the true Hessian is 2H), and the remainder
admits the explicit envelope |ρ(t)| ≤ f(t)·t² with

    f(t) = (|X|·|Y|/q_min) · (√|X|·t) / (q_min − √|X|·t)

valid on 0 ≤ t < q_min/√|X|.  The expansion depends on the maximizer only
through q★, so it is shared across the whole maximizer polytope.  ρ is
evaluated exactly through the rate function itself; the infinite tail
enters only through its envelope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capacity import CapacitySolution, PiSet
from .core import (
    Channel,
    Distribution,
    TangentVector,
    divergences_to_output,
    mutual_information,
)
from .geometry import project_to_pi

__all__ = [
    "ExpansionData",
    "OutputDirection",
    "expansion_at",
    "output_direction",
    "phi",
    "remainder_envelope",
    "taylor_remainder",
]


@dataclass(frozen=True)
class ExpansionData:
    """Gradient, half-Hessian and envelope constants at the maximizer set."""

    grad: np.ndarray
    half_hessian: np.ndarray
    q_min: float
    n_inputs: int
    n_outputs: int

    @property
    def envelope_domain(self) -> float:
        """Right end of the envelope's validity interval, q_min/√|X|."""
        return self.q_min / np.sqrt(self.n_inputs)


@dataclass(frozen=True)
class OutputDirection:
    """Image of an input direction under the channel: d_Y(y) = Σ_x W(y|x) d(x)."""

    d_y: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d_y, dtype=float)
        if abs(d.sum()) > 1e-9:
            raise ValueError("output direction entries must sum to 0")
        d = d.copy()
        d.flags.writeable = False
        object.__setattr__(self, "d_y", d)


def output_direction(channel: Channel, d: TangentVector) -> OutputDirection:
    if d.delta.size != channel.n_inputs:
        raise ValueError("dimension mismatch")
    return OutputDirection(d.delta @ channel.rows)


def expansion_at(channel: Channel, sol: CapacitySolution) -> ExpansionData:
    """Expansion data at the capacity-achieving output distribution.

    Requires q★ to have full support, which channel canonicalization
    guarantees for the unconstrained problem.
    """
    q = sol.q_star.mass
    if q.min() <= 0.0:
        raise ValueError("capacity-achieving output distribution lacks full support")
    w = channel.rows
    grad = divergences_to_output(channel, q) - 1.0
    half_hessian = -0.5 * (w / q[None, :]) @ w.T
    half_hessian = 0.5 * (half_hessian + half_hessian.T)
    grad = grad.copy()
    grad.flags.writeable = False
    half_hessian.flags.writeable = False
    return ExpansionData(
        grad=grad,
        half_hessian=half_hessian,
        q_min=float(q.min()),
        n_inputs=channel.n_inputs,
        n_outputs=channel.n_outputs,
    )


def phi(channel: Channel, p: Distribution, pi: PiSet, exp: ExpansionData) -> float:
    """Normalized first-plus-second-order functional at p ∉ Π.

    Φ(p) = (⟨grad, Δ⟩ + Δᵀ·H·Δ) / ‖Δ‖² with Δ = p − p^Π; the half-Hessian
    absorbs the conventional factor 1/2.  Strictly negative for feasible
    p off the maximizer set; undefined (raises) on it.
    """
    proj, dist = project_to_pi(p, pi)
    if dist <= 1e-12:
        raise ValueError("phi is undefined on the maximizer set (zero distance)")
    delta = p.mass - proj.mass
    num = float(exp.grad @ delta + delta @ exp.half_hessian @ delta)
    return num / dist**2


def remainder_envelope(exp: ExpansionData, t: float) -> float:
    """The explicit envelope f(t) bounding |ρ(t)|/t².

    Defined for 0 ≤ t < q_min/√|X|; f(0) = 0 and f is strictly increasing
    up to its pole at the right end of the domain.
    """
    limit = exp.envelope_domain
    if t < 0.0 or t >= limit:
        raise ValueError(f"t={t!r} outside the envelope domain [0, {limit!r})")
    s = np.sqrt(exp.n_inputs) * t
    return float(exp.n_inputs * exp.n_outputs / exp.q_min * s / (exp.q_min - s))


def taylor_remainder(
    channel: Channel,
    p_star: Distribution,
    d: TangentVector,
    t: float,
    exp: ExpansionData,
    capacity: float,
) -> float:
    """Exact expansion remainder ρ(t) = I(p★+t·d) − C − ⟨grad,d⟩t − (dᵀHd)t².

    Contract: |ρ(t)| ≤ remainder_envelope(exp, t)·t².  Requires a unit
    direction, a feasible end point, and t inside the envelope domain.
    """
    if abs(np.linalg.norm(d.delta) - 1.0) > 1e-9:
        raise ValueError("direction must have unit Euclidean norm")
    if t < 0.0 or t >= exp.envelope_domain:
        raise ValueError("t outside the envelope domain")
    point = p_star.mass + t * d.delta
    if point.min() < -1e-12:
        raise ValueError("p_star + t*d leaves the probability simplex")
    value = mutual_information(channel, Distribution(point))
    linear = float(exp.grad @ d.delta) * t
    quadratic = float(d.delta @ exp.half_hessian @ d.delta) * t**2
    return value - capacity - linear - quadratic
