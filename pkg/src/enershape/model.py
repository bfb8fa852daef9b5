"""Model ingestion and chart management.

A model is the triple (inverse mass matrix, potential, actuation rows)
written as expressions over named coordinates and constants, together
with an equilibrium point and an optional affine chart.  Loading
validates the structural invariants every downstream stage relies on;
the chart operations rewrite the triple so that the unactuated
directions come first and the equilibrium sits at the origin.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import numerics
from .expr import (
    Expr,
    Num,
    Var,
    Neg,
    Bin,
    Fn,
    DomainError,
    evaluate,
    free_names,
    parse,
    _add,
    _mul,
)


class ModelError(Exception):
    """Base class for model-level failures."""


class ModelFormatError(ModelError):
    """The model file is malformed."""


class InvariantViolation(ModelError):
    """A validated model invariant does not hold."""

    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant


_MAX_DIM = 9  # mass entries are keyed H<i><j> with single digits


@dataclass(frozen=True)
class AffineChart:
    """New coordinates q' = T(q - c) with T constant and invertible."""

    t: tuple
    c: tuple

    def __post_init__(self):
        n = len(self.c)
        if len(self.t) != n or any(len(row) != n for row in self.t):
            raise ModelFormatError("chart matrix shape does not match offset")
        if abs(np.linalg.det(np.asarray(self.t))) <= 1e-12:
            raise ModelFormatError("chart matrix is singular")

    def forward(self, q) -> tuple:
        arr = np.asarray(self.t) @ (np.asarray(q, dtype=float) - np.asarray(self.c))
        return tuple(float(v) for v in arr)

    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(np.asarray(self.t, dtype=float))


@dataclass(frozen=True)
class ChartAdaptation:
    """Coordinate permutation plus the determinant certifying it."""

    permutation: tuple
    determinant: float


@dataclass(eq=False)
class ModelSpec:
    name: str
    n: int
    coords: tuple
    constants: dict
    mass_inverse: tuple  # n x n of Expr, symmetric
    potential: Expr
    actuation: tuple  # m rows of n Expr
    equilibrium: tuple
    chart: Optional[AffineChart] = None

    @property
    def m(self) -> int:
        return len(self.actuation)

    @property
    def unactuated(self) -> int:
        return self.n - self.m

    def env_at(self, q) -> dict:
        env = dict(self.constants)
        for name, value in zip(self.coords, q):
            env[name] = float(value)
        return env

    def mass_inverse_at(self, q) -> np.ndarray:
        env = self.env_at(q)
        return np.asarray(
            [[evaluate(e, env) for e in row] for row in self.mass_inverse]
        )

    def actuation_at(self, q) -> np.ndarray:
        env = self.env_at(q)
        return np.asarray([[evaluate(e, env) for e in row] for row in self.actuation])

    def potential_at(self, q) -> float:
        return evaluate(self.potential, self.env_at(q))


# ---------------------------------------------------------------------------
# Loading


def _as_expr(value, where: str) -> Expr:
    if isinstance(value, str):
        return parse(value)
    if isinstance(value, (int, float)):
        return Num(float(value))
    raise ModelFormatError(f"{where}: expected an expression string or number")


def _const_value(value, constants: Mapping, where: str) -> float:
    """Chart entries may be numbers or constant-expressions such as 'g'."""
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        node = parse(value)
        unknown = free_names(node) - set(constants)
        if unknown:
            raise ModelFormatError(
                f"{where}: names {sorted(unknown)} are not constants"
            )
        return evaluate(node, dict(constants))
    raise ModelFormatError(f"{where}: expected a number or constant expression")


def _require(table: Mapping, key: str, section: str):
    if key not in table:
        raise ModelFormatError(f"missing '{key}' in [{section}]")
    return table[key]


def parse_model_text(
    text: str,
    name: str = "<string>",
    overrides: Optional[Mapping] = None,
) -> ModelSpec:
    """Parse and validate a model from TOML text."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ModelFormatError(f"{name}: {exc}") from None

    model = doc.get("model")
    if not isinstance(model, dict):
        raise ModelFormatError("missing [model] section")
    n = _require(model, "n", "model")
    if not isinstance(n, int) or n < 2:
        raise ModelFormatError("n must be an integer >= 2")
    if n > _MAX_DIM:
        raise ModelFormatError(f"n must be <= {_MAX_DIM}")
    coords = _require(model, "coords", "model")
    if len(coords) != n or len(set(coords)) != n:
        raise ModelFormatError("coords must list n distinct names")
    equilibrium = tuple(float(v) for v in _require(model, "equilibrium", "model"))
    if len(equilibrium) != n:
        raise ModelFormatError("equilibrium must have n entries")

    constants = {
        str(k): float(v) for k, v in doc.get("constants", {}).items()
    }
    if overrides:
        for k, v in overrides.items():
            constants[str(k)] = float(v)
    clash = set(constants) & set(coords)
    if clash:
        raise ModelFormatError(f"names {sorted(clash)} are both coordinates and constants")

    mass_section = doc.get("mass_inverse")
    if not isinstance(mass_section, dict):
        raise ModelFormatError("missing [mass_inverse] section")
    grid = [[None] * n for _ in range(n)]
    for key, value in mass_section.items():
        if len(key) != 3 or key[0] != "H" or not key[1:].isdigit():
            raise ModelFormatError(f"unrecognized mass_inverse key '{key}'")
        i, j = int(key[1]) - 1, int(key[2]) - 1
        if not (0 <= i < n and 0 <= j < n):
            raise ModelFormatError(f"mass_inverse key '{key}' out of range")
        grid[i][j] = _as_expr(value, f"mass_inverse.{key}")
    for i in range(n):
        for j in range(n):
            if grid[i][j] is None:
                if grid[j][i] is None:
                    raise ModelFormatError(f"mass_inverse entry H{i + 1}{j + 1} missing")
                grid[i][j] = grid[j][i]  # symmetric completion
    mass_inverse = tuple(tuple(row) for row in grid)

    potential = _as_expr(
        _require(doc.get("potential", {}), "h", "potential"), "potential.h"
    )

    actuation_section = doc.get("actuation")
    if not isinstance(actuation_section, dict) or not actuation_section:
        raise ModelFormatError("missing [actuation] section")
    rows = []
    for a in range(1, len(actuation_section) + 1):
        key = f"theta{a}"
        row = _require(actuation_section, key, "actuation")
        if len(row) != n:
            raise ModelFormatError(f"{key} must have n entries")
        rows.append(tuple(_as_expr(v, f"actuation.{key}") for v in row))
    actuation = tuple(rows)

    chart = None
    if "chart" in doc:
        chart_section = doc["chart"]
        t_rows = _require(chart_section, "T", "chart")
        c_row = chart_section.get("c", [0.0] * n)
        t = tuple(
            tuple(_const_value(v, constants, "chart.T") for v in row) for row in t_rows
        )
        c = tuple(_const_value(v, constants, "chart.c") for v in c_row)
        if len(t) != n or len(c) != n:
            raise ModelFormatError("chart dimensions must match n")
        chart = AffineChart(t, c)

    spec = ModelSpec(
        name=name,
        n=n,
        coords=tuple(coords),
        constants=constants,
        mass_inverse=mass_inverse,
        potential=potential,
        actuation=actuation,
        equilibrium=equilibrium,
        chart=chart,
    )
    validate(spec)
    return spec


def load_model(path, overrides: Optional[Mapping] = None) -> ModelSpec:
    """Load and validate a model file."""
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    return parse_model_text(text, name=str(path), overrides=overrides)


# ---------------------------------------------------------------------------
# Validation


def _all_expressions(spec: ModelSpec):
    for row in spec.mass_inverse:
        yield from row
    yield spec.potential
    for row in spec.actuation:
        yield from row


def _sample_points(spec: ModelSpec, count: int, half_width: float = 0.5):
    rng = random.Random(20260822)
    q0 = spec.equilibrium
    for _ in range(count):
        yield tuple(
            q0[i] + rng.uniform(-half_width, half_width) for i in range(spec.n)
        )


def validate(spec: ModelSpec) -> None:
    """Check every structural invariant; raise InvariantViolation naming
    the first one that fails."""
    bound = set(spec.coords) | set(spec.constants)
    for e in _all_expressions(spec):
        unknown = free_names(e) - bound
        if unknown:
            raise InvariantViolation(
                "expressions bind only coordinates and constants",
                f"unbound name(s) {sorted(unknown)}",
            )

    if spec.m >= spec.n:
        raise InvariantViolation(
            "underactuation", f"m < n required, got m={spec.m}, n={spec.n}"
        )

    checked = 0
    for q in _sample_points(spec, 100):
        env = spec.env_at(q)
        try:
            for i in range(spec.n):
                for j in range(i + 1, spec.n):
                    vij = evaluate(spec.mass_inverse[i][j], env)
                    vji = evaluate(spec.mass_inverse[j][i], env)
                    if abs(vij - vji) > 1e-12 * (1.0 + abs(vij)):
                        raise InvariantViolation(
                            "mass-inverse symmetry",
                            f"H{i + 1}{j + 1} != H{j + 1}{i + 1} at q={q}",
                        )
        except DomainError:
            continue  # sampled outside the expressions' domain
        checked += 1
    if checked < 10:
        raise InvariantViolation(
            "mass-inverse symmetry",
            "fewer than 10 of 100 sample points were inside the domain",
        )

    try:
        hu0 = spec.mass_inverse_at(spec.equilibrium)
    except DomainError as exc:
        raise InvariantViolation(
            "mass-inverse defined at equilibrium", str(exc)
        ) from None
    lam = numerics.min_eigen_sym(hu0)
    if not lam > 0.0:
        raise InvariantViolation(
            "mass-inverse positive-definite at equilibrium",
            f"least eigenvalue {lam:.3e}",
        )

    theta0 = spec.actuation_at(spec.equilibrium)
    if np.linalg.matrix_rank(theta0) != spec.m:
        raise InvariantViolation(
            "actuation rows independent at equilibrium",
            f"rank {np.linalg.matrix_rank(theta0)} < m={spec.m}",
        )

    grad = numerics.fd_grad(spec.potential_at, spec.equilibrium)
    worst = float(np.max(np.abs(grad)))
    if worst > 1e-8:
        raise InvariantViolation(
            "equilibrium is a critical point of the potential",
            f"|grad h| = {worst:.3e}",
        )


# ---------------------------------------------------------------------------
# Chart operations


def _subst(node: Expr, mapping: Mapping) -> Expr:
    """Simultaneous substitution of coordinate names by expressions."""
    if isinstance(node, Var):
        return mapping.get(node.name, node)
    if isinstance(node, Neg):
        return Neg(_subst(node.child, mapping))
    if isinstance(node, Bin):
        return Bin(node.op, _subst(node.left, mapping), _subst(node.right, mapping))
    if isinstance(node, Fn):
        return Fn(node.name, _subst(node.arg, mapping))
    return node


def _scaled(coeff: float, e: Expr) -> Expr:
    return _mul(Num(float(coeff)), e)


def apply_affine(spec: ModelSpec, chart: Optional[AffineChart] = None) -> ModelSpec:
    """Rewrite the model in the chart's coordinates q' = T(q - c).

    Coordinate names are kept; only their meaning changes.  The stored
    chart is consumed when no explicit one is given.
    """
    if chart is None:
        chart = spec.chart
        if chart is None:
            raise ModelError("model has no chart to apply")
    n = spec.n
    t = np.asarray(chart.t, dtype=float)
    tinv = chart.inverse_matrix()

    # old coordinate i as an expression of the new ones: q = T^-1 q' + c
    mapping = {}
    for i, name in enumerate(spec.coords):
        acc: Expr = Num(float(chart.c[i]))
        for j in range(n):
            acc = _add(acc, _scaled(tinv[i, j], Var(spec.coords[j])))
        mapping[name] = acc

    def rewritten(e: Expr) -> Expr:
        return _subst(e, mapping)

    new_mass = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            acc: Expr = Num(0.0)
            for k in range(n):
                for l in range(n):
                    coeff = t[i, k] * t[j, l]
                    if coeff != 0.0:
                        acc = _add(acc, _scaled(coeff, spec.mass_inverse[k][l]))
            entry = rewritten(acc)
            new_mass[i][j] = entry
            new_mass[j][i] = entry

    new_rows = []
    for row in spec.actuation:
        entries = []
        for j in range(n):
            acc: Expr = Num(0.0)
            for k in range(n):
                if tinv[k, j] != 0.0:
                    acc = _add(acc, _scaled(tinv[k, j], row[k]))
            entries.append(rewritten(acc))
        new_rows.append(tuple(entries))

    out = replace(
        spec,
        mass_inverse=tuple(tuple(row) for row in new_mass),
        potential=rewritten(spec.potential),
        actuation=tuple(new_rows),
        equilibrium=chart.forward(spec.equilibrium),
        chart=None,
    )
    validate(out)
    return out


def center_at_equilibrium(spec: ModelSpec) -> ModelSpec:
    """Shift coordinates so the equilibrium is the origin."""
    if spec.chart is not None:
        raise ModelError("apply the chart before centering")
    if all(v == 0.0 for v in spec.equilibrium):
        return spec
    eye = tuple(
        tuple(1.0 if i == j else 0.0 for j in range(spec.n)) for i in range(spec.n)
    )
    return apply_affine(spec, AffineChart(eye, spec.equilibrium))


def adapt_chart(spec: ModelSpec) -> ChartAdaptation:
    """Find a coordinate order making the unactuated complement transverse
    to the actuation at the equilibrium.

    The certifying matrix stacks the first n-m rows of the mass matrix on
    top of the actuation rows; the identity order wins ties, then the
    lexicographically first admissible permutation.
    """
    if spec.chart is not None:
        raise ModelError("apply the chart before adapting coordinates")
    n, nm = spec.n, spec.unactuated
    hu0 = spec.mass_inverse_at(spec.equilibrium)
    hl0 = np.linalg.inv(hu0)
    theta0 = spec.actuation_at(spec.equilibrium)
    for perm in itertools.permutations(range(n)):
        idx = list(perm)
        stacked = np.vstack((hl0[np.ix_(idx[:nm], idx)], theta0[:, idx]))
        scale = 1.0
        for row in stacked:
            scale *= float(np.linalg.norm(row))
        det = float(np.linalg.det(stacked))
        if scale > 0.0 and abs(det) > 1e-10 * scale:
            return ChartAdaptation(permutation=tuple(perm), determinant=det)
    raise InvariantViolation(
        "chart adaptation", "no coordinate order makes the complement transverse"
    )


def apply_permutation(spec: ModelSpec, permutation: Sequence) -> ModelSpec:
    """Reorder coordinates; expressions keep their names."""
    if spec.chart is not None:
        raise ModelError("apply the chart before permuting")
    idx = list(permutation)
    if sorted(idx) != list(range(spec.n)):
        raise ModelError(f"not a permutation of 0..{spec.n - 1}: {permutation}")
    if idx == list(range(spec.n)):
        return spec
    return replace(
        spec,
        coords=tuple(spec.coords[i] for i in idx),
        equilibrium=tuple(spec.equilibrium[i] for i in idx),
        mass_inverse=tuple(
            tuple(spec.mass_inverse[i][j] for j in idx) for i in idx
        ),
        actuation=tuple(tuple(row[j] for j in idx) for row in spec.actuation),
    )
