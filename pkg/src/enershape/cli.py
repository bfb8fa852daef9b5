"""Command-line front end: full shaping pipeline, grid export, builtins.

``synth`` runs chart adaptation, kinetic solving, integrability gating,
potential construction, and certification on a model file, emitting a
JSON report.  ``grid`` exports the shaped fields over a regular grid as
CSV.  ``builtin`` prints a ready-to-run model file.
"""

from __future__ import annotations

import argparse
import itertools
import json
import math
import random
import sys
import time
from typing import Optional

import numpy as np

from . import frame, kinetic, model, numerics, potential
from .expr import to_text


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 is reserved for errors, 2 for verdicts
        raise _UsageError(message)


class _StageError(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


def _matrix(arr) -> dict:
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    return {
        "rows": int(a.shape[0]),
        "cols": int(a.shape[1]),
        "data": [[_finite(v) for v in row] for row in a.tolist()],
    }


def _finite(v: float):
    return float(v) if math.isfinite(v) else None


def _fmt(v: float) -> str:
    if math.isnan(v):
        return "nan"
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# Shared pipeline


def _load(args) -> model.ModelSpec:
    overrides = {}
    for item in args.const:
        name, sep, value = item.partition("=")
        if not sep or not name:
            raise _UsageError(f"--const expects NAME=VALUE, got '{item}'")
        try:
            overrides[name] = float(value)
        except ValueError:
            raise _UsageError(f"--const {name}: '{value}' is not a number") from None
    return model.load_model(args.model, overrides=overrides or None)


def _prepare(spec: model.ModelSpec):
    """Apply the file's chart, center the equilibrium, adapt the order."""
    applied = spec.chart is not None
    if applied:
        spec = model.apply_affine(spec)
    centered = any(v != 0.0 for v in spec.equilibrium)
    if centered:
        spec = model.center_at_equilibrium(spec)
    adaptation = model.adapt_chart(spec)
    spec = model.apply_permutation(spec, adaptation.permutation)
    return spec, applied, centered, adaptation


def _solve_kinetic(spec, args) -> kinetic.KineticSolution:
    if args.kinetic_from:
        with open(args.kinetic_from, "rb") as fh:
            text = fh.read().decode("utf-8")
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        doc = tomllib.loads(text)
        entries = doc.get("kinetic")
        if not isinstance(entries, dict) or not entries:
            raise ValueError(f"{args.kinetic_from}: missing [kinetic] table")
        return kinetic.kinetic_from_expressions(spec, entries)
    return kinetic.solve_kinetic(spec)


def _diagnostics(spec, ksol, hhat, box: float):
    rng = random.Random(60221023)
    residual_k = 0.0
    residual_p = 0.0
    used = 0
    skipped = 0
    target = 20
    attempts = 0
    while used < target and attempts < 10 * target:
        attempts += 1
        q = tuple(rng.uniform(-box, box) for _ in range(spec.n))
        try:
            rk = abs(kinetic.kinetic_residual(spec, ksol, q))
            grad = numerics.fd_grad(hhat, q)
            u = potential.prescribed_gradient(spec, ksol, q)
            rp = float(np.max(np.abs(grad[: spec.unactuated] - u)))
        except (
            frame.OutsideDomainError,
            kinetic.SingularSegmentError,
            numerics.QuadratureError,
            numerics.NonFiniteSampleError,
        ):
            skipped += 1
            continue
        residual_k = max(residual_k, rk)
        residual_p = max(residual_p, rp)
        used += 1
    return {
        "kinetic_residual_max": _finite(residual_k),
        "potential_residual_max": _finite(residual_p),
        "points": used,
        "skipped": skipped,
    }


def _run_pipeline(args, want_diagnostics: bool = True):
    timings = {}
    t_all = time.perf_counter()

    def staged(stage, fn):
        t0 = time.perf_counter()
        try:
            out = fn()
        except _UsageError:
            raise
        except Exception as exc:
            raise _StageError(stage, exc) from exc
        timings[stage + "_s"] = round(time.perf_counter() - t0, 6)
        return out

    spec0 = staged("load", lambda: _load(args))
    spec, applied, centered, adaptation = staged("chart", lambda: _prepare(spec0))
    ksol = staged("kinetic", lambda: _solve_kinetic(spec, args))
    tol = args.tol
    integ = staged(
        "integrability", lambda: potential.integrability_residual(spec, ksol)
    )
    if integ > tol:
        raise _StageError(
            "integrability",
            potential.IntegrabilityError(integ, tol),
        )
    cert = staged(
        "certificate",
        lambda: potential.positivity_certificate(spec, ksol, varpi=args.varpi),
    )
    hhat = staged(
        "potential",
        lambda: potential.build_shaped_potential(
            spec, ksol, varpi=cert.varpi, integrability_tol=tol
        ),
    )
    report = {
        "schema": 1,
        "model": {
            "name": spec.name,
            "n": spec.n,
            "m": spec.m,
            "coords": list(spec.coords),
            "constants": {k: spec.constants[k] for k in sorted(spec.constants)},
        },
        "chart": {
            "applied": applied,
            "centered": centered,
            "permutation": list(adaptation.permutation),
            "determinant": adaptation.determinant,
        },
        "kinetic": {
            "mode": ksol.mode,
            "xi": to_text(ksol.xi),
            "validity_note": ksol.validity_note,
        },
        "integrability": {"residual": _finite(integ), "tolerance": tol},
    }
    if getattr(args, "gamma_check", False):
        report["gamma_check"] = {
            "m_positive": bool(cert.lambda_min > 0.0),
            "lambda_min": _finite(cert.lambda_min),
            "note": "unactuated Hessian block must be positive-definite "
            "for the equilibrium to be shapeable",
        }
    report["certificate"] = {
        "m_block": _matrix(cert.m_block),
        "a_block": _matrix(cert.a_block),
        "lambda_min": _finite(cert.lambda_min),
        "a_norm_sq": _finite(cert.a_norm_sq),
        "varpi_min": _finite(cert.varpi_min),
        "varpi": _finite(cert.varpi),
        "verdict": "pass" if cert.verdict else "fail",
        "reason": cert.reason,
        "hess0": _matrix(cert.hess0),
    }
    if want_diagnostics:
        report["diagnostics"] = staged(
            "diagnostics", lambda: _diagnostics(spec, ksol, hhat, args.box)
        )
    timings["total_s"] = round(time.perf_counter() - t_all, 6)
    report["timings"] = timings
    return spec, ksol, cert, hhat, report


def _emit(text: str, out: Optional[str]):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    spec, ksol, cert, hhat, report = _run_pipeline(args)
    _emit(json.dumps(report, indent=2) + "\n", args.out)
    return 0 if cert.verdict else 2


def cmd_grid(args) -> int:
    spec, ksol, cert, hhat, _ = _run_pipeline(args, want_diagnostics=False)
    nm = spec.unactuated
    names = [f"q{i + 1}" for i in range(spec.n)]
    names.append("hhat")
    names.extend(f"u{mu + 1}" for mu in range(nm))
    if nm == 1:
        names.append("K")
    else:
        names.extend(f"K{i + 1}{j + 1}" for i in range(nm) for j in range(i, nm))
    axis = np.linspace(-args.box, args.box, args.steps)
    lines = [",".join(names)]
    bad = 0
    total = 0
    for point in itertools.product(axis, repeat=spec.n):
        total += 1
        q = tuple(float(v) for v in point)
        row = [_fmt(v) for v in q]
        try:
            u = potential.prescribed_gradient(spec, ksol, q)
            kmat = ksol(q)
            h = hhat(q)
            row.append(_fmt(h))
            row.extend(_fmt(v) for v in u)
            if nm == 1:
                row.append(_fmt(kmat[0, 0]))
            else:
                row.extend(
                    _fmt(kmat[i, j]) for i in range(nm) for j in range(i, nm)
                )
        except (
            frame.OutsideDomainError,
            kinetic.SingularSegmentError,
            numerics.QuadratureError,
            numerics.NonFiniteSampleError,
        ):
            bad += 1
            pad = 1 + nm + (1 if nm == 1 else nm * (nm + 1) // 2)
            row.extend(["nan"] * pad)
        lines.append(",".join(row))
    _emit("\n".join(lines) + "\n", args.out)
    if bad:
        print(f"grid: {bad} of {total} rows outside the validity domain", file=sys.stderr)
    return 0


_PENDULUM_TEMPLATE = """\
# Planar inverted double pendulum, written in the two absolute bar
# angles.  The affine chart below re-aligns the coordinates so the
# unactuated direction comes first; the constant g is the alignment
# slope (it must exceed A/B for the equilibrium to be shapeable).

[model]
n = 2
coords = ["x", "y"]
equilibrium = [0.0, 0.0]

[constants]
A = {A!r}
B = {B!r}
C = {C!r}
D1 = {D1!r}
D2 = {D2!r}
g = {g!r}

[mass_inverse]
H11 = "C / (A*C - B^2*cos(x - y)^2)"
H12 = "-(B*cos(x - y)) / (A*C - B^2*cos(x - y)^2)"
H22 = "A / (A*C - B^2*cos(x - y)^2)"

[potential]
h = "D1*cos(x) + D2*cos(y)"

[actuation]
theta1 = ["0", "1"]

[chart]
T = [["1", "0"], ["g", "1"]]
c = [0.0, 0.0]
"""


def builtin_model_text(
    name: str,
    physical: Optional[list] = None,
    gravity: float = 9.8,
) -> str:
    """Model file text for a named builtin."""
    if name != "double-pendulum":
        raise ValueError(f"unknown builtin '{name}' (available: double-pendulum)")
    consts = {"A": 2.0, "B": 1.0, "C": 1.0, "D1": 1.0, "D2": 1.0, "g": 3.0}
    if physical is not None:
        l1, l2, m1, m2 = (float(v) for v in physical)
        consts.update(
            A=m1 * l1 * l1 + m2 * l2 * l2,
            B=m2 * l1 * l2,
            C=m2 * l2 * l2,
            D1=m2 * gravity * l2,
            D2=(m1 + m2) * gravity * l1,
        )
    return _PENDULUM_TEMPLATE.format(**consts)


def cmd_builtin(args) -> int:
    try:
        text = builtin_model_text(
            args.name, physical=args.physical, gravity=args.gravity
        )
    except ValueError as exc:
        raise _UsageError(str(exc)) from None
    _emit(text, args.out)
    return 0


# ---------------------------------------------------------------------------
# Entry point


def _add_common(sub):
    sub.add_argument("model", help="model file path")
    sub.add_argument("--out", help="write output to this file instead of stdout")
    sub.add_argument(
        "--const",
        action="append",
        default=[],
        metavar="NAME=VALUE",
        help="override a model constant (repeatable)",
    )
    sub.add_argument(
        "--varpi", type=float, default=None, help="well curvature on the actuated slice"
    )
    sub.add_argument(
        "--tol", type=float, default=1e-6, help="integrability gate tolerance"
    )
    sub.add_argument(
        "--box",
        type=float,
        default=0.1,
        help="half-width of the evaluation box around the equilibrium",
    )
    sub.add_argument(
        "--steps", type=int, default=9, help="grid points per axis (grid command)"
    )
    sub.add_argument(
        "--kinetic-from",
        metavar="FILE",
        help="TOML file with a [kinetic] table of K entry expressions",
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="enershape", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    synth = commands.add_parser("synth", help="run the shaping pipeline, emit JSON")
    _add_common(synth)
    synth.add_argument(
        "--gamma-check",
        action="store_true",
        help="report whether the unactuated Hessian block is positive-definite",
    )
    synth.set_defaults(fn=cmd_synth)

    grid = commands.add_parser("grid", help="export shaped fields over a grid as CSV")
    _add_common(grid)
    grid.set_defaults(fn=cmd_grid)

    builtin = commands.add_parser("builtin", help="print a builtin model file")
    builtin.add_argument("name", help="builtin model name (double-pendulum)")
    builtin.add_argument("--out", help="write output to this file instead of stdout")
    builtin.add_argument(
        "--physical",
        nargs=4,
        type=float,
        metavar=("L1", "L2", "M1", "M2"),
        help="derive constants from bar lengths and masses",
    )
    builtin.add_argument(
        "--gravity", type=float, default=9.8, help="gravity for --physical"
    )
    builtin.set_defaults(fn=cmd_builtin)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
