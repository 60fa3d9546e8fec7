"""Finite-alphabet probability primitives and information measures.

Everything downstream (capacity solvers, polytope geometry, second-order
expansions, decay certificates) is built on the three value types defined
here: probability vectors over a finite input alphabet, row-stochastic
channel matrices, and sum-zero tangent vectors.

All information quantities are in nats.  The convention 0·ln 0 = 0 applies
throughout; a divergence D(p‖q) with supp(p) ⊄ supp(q) is an error, never
an infinite value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space
from scipy.special import rel_entr, xlogy

# Construction tolerance for the value types below.
ATOL = 1e-12

__all__ = [
    "ATOL",
    "CapcertError",
    "SolverError",
    "DegenerateCertificateError",
    "SamplingError",
    "Distribution",
    "Channel",
    "TangentVector",
    "mutual_information",
    "kl_divergence",
    "output_distribution",
    "kernel_basis",
]


class CapcertError(Exception):
    """Base class for all library errors."""


class SolverError(CapcertError):
    """An iterative solver failed to reach its requested tolerance."""


class DegenerateCertificateError(CapcertError):
    """The feasible polytope coincides with the capacity-achieving set.

    No valid direction exists, so the quadratic-decay statement is vacuous
    (e.g. a channel with identical rows, where every input distribution is
    capacity-achieving).
    """


class SamplingError(CapcertError):
    """A sampling routine exhausted its attempt budget without success."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Distribution:
    """A probability vector over a finite alphabet.

    Entries must be nonnegative and sum to 1 within ``ATOL``.  Negative
    entries no smaller than ``-ATOL`` (roundoff from projections and solver
    iterates) are clipped to zero.
    """

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim != 1 or m.size == 0:
            raise ValueError("distribution must be a nonempty vector")
        if np.min(m) < -ATOL:
            raise ValueError(f"negative probability {np.min(m):.3e}")
        if abs(m.sum() - 1.0) > ATOL:
            raise ValueError(f"probabilities sum to {m.sum()!r}, not 1")
        object.__setattr__(self, "mass", _readonly(np.maximum(m, 0.0)))

    @property
    def n(self) -> int:
        return self.mass.size

    @staticmethod
    def uniform(n: int) -> "Distribution":
        return Distribution(np.full(n, 1.0 / n))

    @staticmethod
    def point_mass(n: int, index: int) -> "Distribution":
        m = np.zeros(n)
        m[index] = 1.0
        return Distribution(m)


@dataclass(frozen=True)
class TangentVector:
    """A direction in the input simplex: a vector with entries summing to 0."""

    delta: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float)
        if d.ndim != 1 or d.size == 0:
            raise ValueError("tangent vector must be a nonempty vector")
        if abs(d.sum()) > ATOL:
            raise ValueError(f"tangent entries sum to {d.sum():.3e}, not 0")
        object.__setattr__(self, "delta", _readonly(d))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.delta))

    def unit(self) -> "TangentVector":
        n = self.norm
        if n == 0.0:
            raise ValueError("cannot normalize the zero tangent vector")
        return TangentVector(self.delta / n)


@dataclass(frozen=True)
class Channel:
    """A discrete memoryless channel: one conditional distribution per input.

    ``rows[x, y]`` is the probability of output ``y`` given input ``x``.
    Construction canonicalizes the matrix by removing output columns that
    no input can reach, so that every capacity-achieving output
    distribution has full support.
    """

    rows: np.ndarray
    input_alphabet: tuple = field(default=None)
    output_alphabet: tuple = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.rows, dtype=float)
        if w.ndim != 2 or w.size == 0:
            raise ValueError("channel matrix must be 2-d and nonempty")
        if np.min(w) < -ATOL:
            raise ValueError(f"negative channel entry {np.min(w):.3e}")
        sums = w.sum(axis=1)
        bad = np.argmax(np.abs(sums - 1.0))
        if abs(sums[bad] - 1.0) > ATOL:
            raise ValueError(f"row {bad} sums to {sums[bad]!r}, not 1")
        w = np.maximum(w, 0.0)

        inputs = self.input_alphabet
        outputs = self.output_alphabet
        if inputs is None:
            inputs = tuple(range(w.shape[0]))
        if outputs is None:
            outputs = tuple(range(w.shape[1]))
        if len(inputs) != w.shape[0] or len(outputs) != w.shape[1]:
            raise ValueError("alphabet sizes do not match the matrix shape")

        reachable = w.max(axis=0) > 0.0
        if not reachable.all():
            w = w[:, reachable]
            outputs = tuple(o for o, keep in zip(outputs, reachable) if keep)
        object.__setattr__(self, "rows", _readonly(w))
        object.__setattr__(self, "input_alphabet", tuple(inputs))
        object.__setattr__(self, "output_alphabet", tuple(outputs))

    @property
    def n_inputs(self) -> int:
        return self.rows.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.rows.shape[1]


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """Relative entropy D(p‖q) in nats.

    Requires supp(p) ⊆ supp(q); raises ValueError otherwise rather than
    returning infinity.
    """
    if p.n != q.n:
        raise ValueError(f"dimension mismatch: {p.n} vs {q.n}")
    pm, qm = p.mass, q.mass
    if np.any((pm > 0) & (qm == 0)):
        raise ValueError("support violation: supp(p) not contained in supp(q)")
    return float(rel_entr(pm, qm).sum())


def output_distribution(channel: Channel, p: Distribution) -> Distribution:
    """The output marginal q(y) = Σ_x W(y|x) p(x)."""
    if p.n != channel.n_inputs:
        raise ValueError(f"dimension mismatch: {p.n} inputs vs {channel.n_inputs}")
    return Distribution(p.mass @ channel.rows)


def mutual_information(channel: Channel, p: Distribution) -> float:
    """The information rate I(p) = Σ_x p(x) D(W(·|x) ‖ q_p) in nats.

    q_p is the induced output marginal.  Terms with p(x) = 0 contribute 0,
    so the value is finite for every input distribution; it is nonnegative
    and at most ln min(|X|, |Y|).
    """
    if p.n != channel.n_inputs:
        raise ValueError(f"dimension mismatch: {p.n} inputs vs {channel.n_inputs}")
    q = p.mass @ channel.rows
    support = p.mass > 0
    # For x in supp(p): W(y|x) > 0 forces q(y) > 0, so each divergence is finite.
    per_input = rel_entr(channel.rows[support], q[None, :]).sum(axis=1)
    return max(float(p.mass[support] @ per_input), 0.0)


def information_rate_batch(channel: Channel, batch: np.ndarray) -> np.ndarray:
    """Vectorized I(p) for each row of ``batch`` (shape: n_points × |X|).

    Uses the equivalent form I(p) = ⟨p, c⟩ + H(q) with c_x = Σ_y W ln W.
    Internal helper for samplers and verifiers; cross-checked against
    :func:`mutual_information` in the test suite.
    """
    w = channel.rows
    c = xlogy(w, w).sum(axis=1)
    q = batch @ w
    return batch @ c - xlogy(q, q).sum(axis=1)


def divergences_to_output(channel: Channel, q: np.ndarray) -> np.ndarray:
    """Vector of D(W(·|x) ‖ q) over inputs x, for an output vector q.

    Entries are +inf for inputs that reach outputs with q(y) = 0.
    """
    w = channel.rows
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)) - np.log(q[None, :]), 0.0)
    return np.where((w > 0) & (q[None, :] == 0), np.inf, ratio * w).sum(axis=1)


def information_gradient(channel: Channel, p: np.ndarray) -> np.ndarray:
    """∇I at an input vector p: entries D(W(·|x)‖q_p) − 1 (nats).

    Entries are +inf for inputs x that can reach outputs carrying zero
    mass under q_p; such x necessarily have p(x) = 0.
    """
    return divergences_to_output(channel, p @ channel.rows) - 1.0


def kernel_basis(channel: Channel) -> list[TangentVector]:
    """Orthonormal basis of Ker(W) ∩ {sum-zero vectors}.

    Ker(W) = {v : Σ_x W(y|x) v(x) = 0 for all y}.  Because channel rows sum
    to one, every kernel vector already sums to zero, so the intersection
    is Ker(W) itself; the sum-zero property is asserted.  Rank is decided
    with a relative singular-value threshold of 1e-10.
    """
    ns = null_space(channel.rows.T, rcond=1e-10)
    basis = []
    for k in range(ns.shape[1]):
        v = ns[:, k]
        assert abs(v.sum()) < 1e-9, "kernel vector does not sum to zero"
        basis.append(TangentVector(v - v.sum() / v.size))
    return basis
