"""Command-line front end: channel ingestion, pipelines, machine-readable reports.

Channel files are JSON documents with keys ``X`` (input labels), ``Y``
(output labels), ``W`` (row-stochastic matrix, one row per input), an
optional ``A`` (list of constraint vectors a, meaning ⟨p, a⟩ ≥ 0) and
optional ``name``/``description`` metadata.

Reports are JSON on stdout (or ``--output``); every floating-point value
is serialized with 17 significant digits so runs are reproducible and
byte-comparable.  Exit codes: 0 pass/degenerate, 1 verification failure,
2 parse error, 3 solver failure.  The environment variable
``CAPCERT_THREADS`` caps verification workers; results do not depend on it.
"""

from __future__ import annotations

import csv
import io
import json
import sys
from dataclasses import dataclass, field

import click
import numpy as np

from . import __version__
from .capacity import ConstraintSet, blahut_arimoto, constrained_capacity
from .certify import run_pipeline
from .core import (
    CapcertError,
    Channel,
    DegenerateCertificateError,
    Distribution,
    SolverError,
    mutual_information,
)
from .expansion import remainder_envelope
from .geometry import sample_valid_directions

NATS_PER_BIT = float(np.log(2.0))


class ChannelSpecError(CapcertError):
    """The channel file cannot be parsed or fails validation."""


@dataclass
class ChannelSpecFile:
    """Parsed channel file, keeping the raw matrix for exact round-trips."""

    inputs: list
    outputs: list
    matrix: list
    constraints: list = field(default_factory=list)
    name: str | None = None
    description: str | None = None

    @classmethod
    def from_text(cls, text: str) -> "ChannelSpecFile":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ChannelSpecError(f"invalid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ChannelSpecError("top-level JSON value must be an object")
        for key in ("X", "Y", "W"):
            if key not in doc:
                raise ChannelSpecError(f"missing required key {key!r}")
        inputs = list(doc["X"])
        outputs = list(doc["Y"])
        matrix = doc["W"]
        if not isinstance(matrix, list) or len(matrix) != len(inputs):
            raise ChannelSpecError(
                f"W must have one row per input symbol ({len(inputs)} expected)"
            )
        rows = []
        for i, row in enumerate(matrix):
            if not isinstance(row, list) or len(row) != len(outputs):
                raise ChannelSpecError(f"row {i} must list {len(outputs)} probabilities")
            try:
                vals = [float(v) for v in row]
            except (TypeError, ValueError) as exc:
                raise ChannelSpecError(f"row {i} contains a non-numeric entry") from exc
            if min(vals) < 0.0:
                raise ChannelSpecError(f"row {i} contains a negative probability")
            total = sum(vals)
            if abs(total - 1.0) > 1e-9:
                raise ChannelSpecError(f"row {i} sums to {total!r}, expected 1")
            rows.append(vals)
        constraints = []
        for j, vec in enumerate(doc.get("A", []) or []):
            if not isinstance(vec, list) or len(vec) != len(inputs):
                raise ChannelSpecError(
                    f"constraint {j} must list {len(inputs)} coefficients"
                )
            try:
                constraints.append([float(v) for v in vec])
            except (TypeError, ValueError) as exc:
                raise ChannelSpecError(f"constraint {j} contains a non-numeric entry") from exc
        return cls(
            inputs=inputs,
            outputs=outputs,
            matrix=rows,
            constraints=constraints,
            name=doc.get("name"),
            description=doc.get("description"),
        )

    @classmethod
    def from_path(cls, path: str) -> "ChannelSpecFile":
        try:
            with open(path, "r", encoding="utf-8") as handle:
                return cls.from_text(handle.read())
        except OSError as exc:
            raise ChannelSpecError(f"cannot read {path}: {exc}") from exc

    def to_json_dict(self) -> dict:
        doc = {"X": self.inputs, "Y": self.outputs, "W": self.matrix}
        if self.constraints:
            doc["A"] = self.constraints
        if self.name is not None:
            doc["name"] = self.name
        if self.description is not None:
            doc["description"] = self.description
        return doc

    def to_json_text(self) -> str:
        return dumps_report(self.to_json_dict())

    def to_channel(self) -> Channel:
        w = np.array(self.matrix, dtype=float)
        w = w / w.sum(axis=1, keepdims=True)
        return Channel(w, tuple(self.inputs), tuple(self.outputs))

    def to_constraint_set(self) -> ConstraintSet | None:
        if not self.constraints:
            return None
        return ConstraintSet(self.constraints)


def _fmt_value(value, indent: int) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".16e")
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        items = list(value)
        if not items:
            return "[]"
        inner = ",\n".join(pad + "  " + _fmt_value(v, indent + 1) for v in items)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        inner = ",\n".join(
            pad + "  " + json.dumps(str(k)) + ": " + _fmt_value(v, indent + 1)
            for k, v in value.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(value)!r}")


def dumps_report(doc: dict) -> str:
    """Deterministic JSON with all floats at 17 significant digits."""
    return _fmt_value(doc, 0) + "\n"


def _emit(text: str, output: str | None):
    if output:
        with open(output, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    else:
        click.echo(text, nl=False)


def _rate_line(label: str, nats: float, bits: bool) -> str:
    if bits:
        return f"{label} = {nats / NATS_PER_BIT:.12g} bits"
    return f"{label} = {nats:.12g} nats"


@click.group()
@click.version_option(version=__version__)
def main():
    """Capacity and quadratic-decay certificates for discrete channels."""


@main.command("capacity")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", default=1e-9, show_default=True, help="Solver tolerance (nats).")
@click.option("--bits", is_flag=True, help="Display the capacity in bits (JSON stays in nats).")
@click.option("--output", type=click.Path(), default=None, help="Write the JSON report here.")
def cmd_capacity(file, tol, bits, output):
    """Compute the (possibly constrained) capacity of a channel file."""
    spec = _load_spec(file)
    channel = spec.to_channel()
    constraints = spec.to_constraint_set()
    try:
        if constraints is not None:
            sol = constrained_capacity(channel, constraints, tol=tol)
        else:
            sol = blahut_arimoto(channel, tol=tol)
    except SolverError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    doc = {
        "tool": "capcert",
        "version": __version__,
        "channel": _channel_block(spec),
        "parameters": {"tol": tol},
        "capacity": _capacity_block(sol, constraints is not None),
        "status": "ok",
    }
    click.echo(_rate_line("C", sol.capacity, bits), err=True)
    _emit(dumps_report(doc), output)


@main.command("certify")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", default=1e-9, show_default=True, help="Capacity tolerance (nats).")
@click.option("--support-tol", default=1e-7, show_default=True,
              help="Threshold below capacity for the maximal support set.")
@click.option("--samples", default=10_000, show_default=True,
              help="Sample count for estimation and for verification.")
@click.option("--seed", default=0, show_default=True, help="Root seed for all sampling.")
@click.option("--slack", default=1e-9, show_default=True,
              help="Tolerance when checking the decay inequality.")
@click.option("--bits", is_flag=True, help="Display rates in bits (JSON stays in nats).")
@click.option("--output", type=click.Path(), default=None, help="Write the JSON report here.")
def cmd_certify(file, tol, support_tol, samples, seed, slack, bits, output):
    """Full pipeline: capacity, maximizer set, certificate, verification."""
    spec = _load_spec(file)
    channel = spec.to_channel()
    constraints = spec.to_constraint_set()
    try:
        result = run_pipeline(
            channel,
            constraints,
            tol=tol,
            support_tol=support_tol,
            samples=samples,
            seed=seed,
            slack=slack,
        )
    except SolverError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)

    doc = {
        "tool": "capcert",
        "version": __version__,
        "channel": _channel_block(spec),
        "parameters": {
            "tol": tol,
            "support_tol": support_tol,
            "samples": samples,
            "seed": seed,
            "slack": slack,
        },
        "capacity": _capacity_block(result.solution, result.pi_set.constrained),
        "pi": _pi_block(result.pi_set, spec),
        "certificate": _certificate_block(result.certificate),
        "verification": _verification_block(result.report),
        "status": result.status,
    }
    click.echo(_rate_line("C", result.solution.capacity, bits), err=True)
    if result.degenerate:
        click.echo("certificate degenerate: every feasible input is optimal", err=True)
    else:
        click.echo(
            f"alpha_hat = {result.certificate.alpha_hat:.12g}, "
            f"mu = {result.certificate.mu:.12g}, "
            f"verification {result.report.status} "
            f"({result.report.checked} samples)",
            err=True,
        )
    _emit(dumps_report(doc), output)
    sys.exit(0 if result.status in ("pass", "degenerate") else 1)


@main.command("scan")
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
@click.option("--direction-index", default=0, show_default=True,
              help="Which sampled valid direction to scan along.")
@click.option("--t-grid", default="0:0.02:11", show_default=True,
              help="Distances: comma list '0,0.01,...' or linspace 'start:stop:num'.")
@click.option("--tol", default=1e-9, show_default=True)
@click.option("--support-tol", default=1e-7, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--output", type=click.Path(), default=None, help="Write the CSV here.")
def cmd_scan(file, direction_index, t_grid, tol, support_tol, seed, output):
    """Tabulate I(p★+t·d), its quadratic model, and the envelope bound as CSV."""
    spec = _load_spec(file)
    channel = spec.to_channel()
    constraints = spec.to_constraint_set()
    try:
        t_values = _parse_grid(t_grid)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    try:
        result = run_pipeline(
            channel, constraints, tol=tol, support_tol=support_tol,
            samples=max(64, direction_index + 1), seed=seed,
        )
        if result.degenerate:
            raise DegenerateCertificateError(
                "degenerate channel: no valid directions to scan"
            )
        pairs = sample_valid_directions(
            result.pi_set, direction_index + 1, seed, stream=0
        )
        if len(pairs) <= direction_index:
            raise SolverError(
                f"only {len(pairs)} valid directions found; "
                f"direction-index {direction_index} unavailable"
            )
    except (SolverError, DegenerateCertificateError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)

    base, direction = pairs[direction_index]
    exp = result.expansion
    sol = result.solution
    grad_term = float(exp.grad @ direction.delta)
    quad_term = float(direction.delta @ exp.half_hessian @ direction.delta)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "information_rate", "quadratic_model", "envelope_bound", "status"])
    for t in t_values:
        model = sol.capacity + grad_term * t + quad_term * t * t
        point = base.mass + t * direction.delta
        feasible = point.min() >= -1e-12 and (
            constraints is None or (constraints.matrix @ point).min() >= -1e-9
        )
        in_domain = 0.0 <= t < exp.envelope_domain
        if not feasible:
            writer.writerow([_csv_num(t), "", _csv_num(model), "", "infeasible"])
            continue
        value = mutual_information(channel, Distribution(np.maximum(point, 0.0) / point.sum()))
        if in_domain:
            bound = remainder_envelope(exp, t) * t * t
            writer.writerow(
                [_csv_num(t), _csv_num(value), _csv_num(model), _csv_num(bound), "ok"]
            )
        else:
            writer.writerow(
                [_csv_num(t), _csv_num(value), _csv_num(model), "", "out-of-domain"]
            )
    _emit(buf.getvalue(), output)


def _csv_num(x: float) -> str:
    return format(float(x), ".16e")


def _parse_grid(text: str) -> list:
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError("linspace grid must be 'start:stop:num'")
        start, stop, num = float(parts[0]), float(parts[1]), int(parts[2])
        if num < 1:
            raise ValueError("grid needs at least one point")
        return [float(v) for v in np.linspace(start, stop, num)]
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError("empty t grid")
    if min(values) < 0:
        raise ValueError("t values must be nonnegative")
    return values


def _load_spec(path: str) -> ChannelSpecFile:
    try:
        return ChannelSpecFile.from_path(path)
    except ChannelSpecError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


def _channel_block(spec: ChannelSpecFile) -> dict:
    return {
        "name": spec.name,
        "X": spec.inputs,
        "Y": spec.outputs,
        "W": spec.matrix,
        "A": spec.constraints,
    }


def _capacity_block(sol, constrained: bool) -> dict:
    return {
        "nats": sol.capacity,
        "q_star": list(sol.q_star.mass),
        "p_witness": list(sol.p_witness.mass),
        "iterations": sol.iterations,
        "residual": sol.residual,
        "constrained": constrained,
    }


def _pi_block(pi, spec: ChannelSpecFile) -> dict:
    return {
        "x_max": [spec.inputs[i] for i in pi.x_max],
        "dim_v": pi.dim,
        "representative": list(pi.representative.mass),
    }


def _certificate_block(cert) -> dict | None:
    if cert is None:
        return None
    return {
        "alpha_hat": cert.alpha_hat,
        "mu": cert.mu,
        "min_direction": list(cert.min_direction.delta),
        "base_point": list(cert.base_point.mass),
        "sample_count": cert.sample_count,
        "seed": cert.seed,
        "constrained": cert.constrained,
        "capacity": cert.capacity,
    }


def _verification_block(report) -> dict | None:
    if report is None:
        return None
    return {
        "checked": report.checked,
        "violations": [
            {
                "point": list(v.point),
                "value": v.value,
                "bound": v.bound,
                "gap": v.gap,
            }
            for v in report.violations
        ],
        "max_gap": report.max_gap,
        "status": report.status,
    }


if __name__ == "__main__":
    main()
