"""capcert: capacity and quadratic-decay certificates for discrete channels.

For any finite discrete memoryless channel (optionally with linear input
constraints) the package computes the capacity, a polyhedral description
of the set of capacity-achieving input distributions, and an explicit
certificate (α̂, μ) for the quadratic decay of the information rate around
that set, then verifies the certificate by structured sampling against the
exact rate function.
"""

from .capacity import (
    CapacitySolution,
    ConstraintSet,
    PiSet,
    blahut_arimoto,
    capacity_achieving_set,
    constrained_capacity,
    constrained_pi_set,
)
from .certify import (
    QuadraticCertificate,
    VerificationReport,
    alpha_of_direction,
    compute_mu,
    estimate_alpha,
    make_certificate,
    run_pipeline,
    verify_theorem,
)
from .core import (
    CapcertError,
    Channel,
    DegenerateCertificateError,
    Distribution,
    SamplingError,
    SolverError,
    TangentVector,
    kernel_basis,
    kl_divergence,
    mutual_information,
    output_distribution,
)
from .expansion import (
    ExpansionData,
    OutputDirection,
    expansion_at,
    output_direction,
    phi,
    remainder_envelope,
    taylor_remainder,
)
from .geometry import (
    ConeDescription,
    SupportSets,
    cone_membership,
    project_to_pi,
    sample_valid_directions,
    support_sets,
    valid_direction_cone,
)

__version__ = "0.1.0"
