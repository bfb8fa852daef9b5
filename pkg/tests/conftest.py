"""Shared fixtures: model corpus and closed-form reference values.

Every model here is small enough to reason about by hand; the reference
formulas live next to the fixtures so each test file can check against
them without redoing the algebra.
"""

import math
import random

import pytest

from enershape import cli, kinetic, model


def prepare(spec):
    """Run the standard chart pipeline on a freshly parsed model."""
    if spec.chart is not None:
        spec = model.apply_affine(spec)
    spec = model.center_at_equilibrium(spec)
    info = model.adapt_chart(spec)
    return model.apply_permutation(spec, info.permutation)


def sample_box(n, half_width, count, seed):
    rng = random.Random(seed)
    return [
        tuple(rng.uniform(-half_width, half_width) for _ in range(n))
        for _ in range(count)
    ]


# ---------------------------------------------------------------------------
# Inverted double pendulum (the builtin), in the aligned chart.


class PendOracle:
    """Closed forms for the aligned double pendulum.

    With b(x, y) = B cos((1+g) x - y) everything reduces to the stacked
    determinant w = A - g b:

        transport  G = -2 g^2 b_x / ((1+g) w)
        kinetic    K = |w(x, y) / w(0, y)| ^ (-2g / (1+g))
        slope      u = -D1 sin(x) K / w

    and the segment [0, x] x {tail} meets w = 0 exactly when
    |(1+g) x - y| exceeds acos(A / (g B)).
    """

    def __init__(self, a=2.0, b=1.0, c=1.0, d1=1.0, gamma=3.0):
        self.a = a
        self.bb = b
        self.c = c
        self.d1 = d1
        self.gamma = gamma

    def b(self, x, y):
        return self.bb * math.cos((1.0 + self.gamma) * x - y)

    def bx(self, x, y):
        return -self.bb * (1.0 + self.gamma) * math.sin((1.0 + self.gamma) * x - y)

    def w(self, x, y):
        return self.a - self.gamma * self.b(x, y)

    def transport(self, x, y):
        return (
            -2.0
            * self.gamma**2
            * self.bx(x, y)
            / ((1.0 + self.gamma) * self.w(x, y))
        )

    def kin(self, x, y):
        ratio = self.w(x, y) / self.w(0.0, y)
        return abs(ratio) ** (-2.0 * self.gamma / (1.0 + self.gamma))

    def slope(self, x, y):
        return -self.d1 * math.sin(x) * self.kin(x, y) / self.w(x, y)

    def segment_crosses(self, x, y):
        """True when [0, x] at fixed y meets the singular locus w = 0."""
        arg = self.a / (self.gamma * self.bb)
        if abs(arg) > 1.0:
            return False
        return abs((1.0 + self.gamma) * x - y) > math.acos(arg)


@pytest.fixture(scope="session")
def pend_oracle():
    return PendOracle()


@pytest.fixture(scope="session")
def pendulum():
    spec = model.parse_model_text(cli.builtin_model_text("double-pendulum"))
    return prepare(spec)


@pytest.fixture(scope="session")
def pendulum_k(pendulum):
    return kinetic.solve_kinetic(pendulum)


@pytest.fixture(scope="session")
def pendulum_lo():
    spec = model.parse_model_text(
        cli.builtin_model_text("double-pendulum"), overrides={"g": 1.0}
    )
    return prepare(spec)


@pytest.fixture(scope="session")
def pendulum_lo_k(pendulum_lo):
    return kinetic.solve_kinetic(pendulum_lo)


# ---------------------------------------------------------------------------
# Hand-written flat and near-flat models.

FLAT2_TEXT = """
[model]
n = 2
coords = ["x", "y"]
equilibrium = [0.0, 0.0]

[mass_inverse]
H11 = "1"
H12 = "0"
H22 = "1"

[potential]
h = "0.5*(x^2 + y^2)"

[actuation]
theta1 = ["0", "1"]
"""

FLAT2_MAX_TEXT = FLAT2_TEXT.replace('"0.5*(x^2 + y^2)"', '"-0.5*(x^2 + y^2)"')

FLAT3_TEXT = """
[model]
n = 3
coords = ["x", "y", "z"]
equilibrium = [0.0, 0.0, 0.0]

[mass_inverse]
H11 = "1"
H12 = "0"
H13 = "0"
H22 = "1"
H23 = "0"
H33 = "1"

[potential]
h = "0.4*x^2 + 0.3*y^2 + 0.5*z^2"

[actuation]
theta1 = ["0", "0", "1"]
"""

COUPLED3_TEXT = FLAT3_TEXT.replace(
    '"0.4*x^2 + 0.3*y^2 + 0.5*z^2"',
    '"0.4*x^2 + 0.3*y^2 + 0.5*z^2 + 0.3*x*z"',
)

CURL3_TEXT = FLAT3_TEXT.replace('"0.4*x^2 + 0.3*y^2 + 0.5*z^2"', '"x*y"')

WAVY3_TEXT = """
[model]
n = 3
coords = ["x", "y", "z"]
equilibrium = [0.0, 0.0, 0.0]

[mass_inverse]
H11 = "1 + 0.1*sin(x)"
H12 = "0.05*cos(y)"
H13 = "0"
H22 = "1"
H23 = "0.1*x"
H33 = "1 + 0.1*y^2"

[potential]
h = "cos(x) + 0.5*y^2 + 0.5*z^2 - 1"

[actuation]
theta1 = ["0", "1", "0.2*x"]
theta2 = ["0", "0", "1 + 0.1*y"]
"""

CAPPED_TEXT = """
[model]
n = 2
coords = ["x", "y"]
equilibrium = [0.0, 0.0]

[mass_inverse]
H11 = "1 + sqrt(0.25 - x^2)"
H12 = "0"
H22 = "1"

[potential]
h = "0.5*(x^2 + y^2)"

[actuation]
theta1 = ["0", "1"]
"""

SHIFTED_TEXT = """
[model]
n = 2
coords = ["x", "y"]
equilibrium = [0.3, -0.2]

[mass_inverse]
H11 = "1"
H12 = "0"
H22 = "1"

[potential]
h = "0.5*((x - 0.3)^2 + (y + 0.2)^2)"

[actuation]
theta1 = ["0", "1"]
"""

IDENTITY_K = {"K11": "1", "K12": "0", "K22": "1"}


@pytest.fixture(scope="session")
def flat2():
    return prepare(model.parse_model_text(FLAT2_TEXT, name="flat2"))


@pytest.fixture(scope="session")
def flat2_k(flat2):
    return kinetic.solve_kinetic(flat2)


@pytest.fixture(scope="session")
def flat2_max():
    return prepare(model.parse_model_text(FLAT2_MAX_TEXT, name="flat2-max"))


@pytest.fixture(scope="session")
def flat2_max_k(flat2_max):
    return kinetic.solve_kinetic(flat2_max)


@pytest.fixture(scope="session")
def flat3():
    return prepare(model.parse_model_text(FLAT3_TEXT, name="flat3"))


@pytest.fixture(scope="session")
def flat3_k(flat3):
    return kinetic.kinetic_from_expressions(flat3, IDENTITY_K)


@pytest.fixture(scope="session")
def coupled3():
    return prepare(model.parse_model_text(COUPLED3_TEXT, name="coupled3"))


@pytest.fixture(scope="session")
def coupled3_k(coupled3):
    return kinetic.kinetic_from_expressions(coupled3, IDENTITY_K)


@pytest.fixture(scope="session")
def curl3():
    return prepare(model.parse_model_text(CURL3_TEXT, name="curl3"))


@pytest.fixture(scope="session")
def curl3_k(curl3):
    entries = {"K11": "-1", "K12": "0", "K22": "1"}
    return kinetic.kinetic_from_expressions(curl3, entries, check_positive=False)


@pytest.fixture(scope="session")
def wavy3():
    return prepare(model.parse_model_text(WAVY3_TEXT, name="wavy3"))


@pytest.fixture(scope="session")
def wavy3_k(wavy3):
    return kinetic.solve_kinetic(wavy3)


@pytest.fixture(scope="session")
def capped():
    return prepare(model.parse_model_text(CAPPED_TEXT, name="capped"))


@pytest.fixture(scope="session")
def model_corpus(pendulum, pendulum_lo, flat2, flat2_max, flat3, coupled3, wavy3, capped):
    """(spec, box half-width) pairs safely inside each validity domain."""
    return [
        (pendulum, 0.15),
        (pendulum_lo, 0.15),
        (flat2, 0.3),
        (flat2_max, 0.3),
        (flat3, 0.3),
        (coupled3, 0.3),
        (wavy3, 0.3),
        (capped, 0.35),
    ]
