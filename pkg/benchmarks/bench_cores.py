"""Compare the compiled kernel against the pure-Python fallback.

Builds identical core models for both backends from the builtin
double-pendulum and times the hot call paths.  Run from the repository
root after an editable install:

    python benchmarks/bench_cores.py [--scale N]

``--scale`` multiplies every repetition count (default 1); use 3-5 for
steadier numbers on a quiet machine.
"""

import argparse
import random
import sys
import time

from enershape import model as emodel
from enershape._kernel import _purecore
from enershape._kernel.tape import compile_tape
from enershape.cli import builtin_model_text
from enershape.expr import differentiate, parse

try:
    from enershape._kernel import _fastcore
except ImportError:
    _fastcore = None


def prepared_pendulum():
    spec = emodel.parse_model_text(builtin_model_text("double-pendulum"))
    spec = emodel.apply_affine(spec)
    spec = emodel.center_at_equilibrium(spec)
    info = emodel.adapt_chart(spec)
    return emodel.apply_permutation(spec, info.permutation)


def build_for(backend, spec):
    n, m = spec.n, spec.m
    slots = {name: i for i, name in enumerate(spec.coords)}
    consts = dict(spec.constants)

    def tape(e):
        return compile_tape(e, slots, consts)

    hu = [[tape(spec.mass_inverse[i][j]) for j in range(n)] for i in range(n)]
    dhu = [
        [
            [tape(differentiate(spec.mass_inverse[i][j], c)) for c in spec.coords]
            for j in range(n)
        ]
        for i in range(n)
    ]
    th = [[tape(spec.actuation[a][i]) for i in range(n)] for a in range(m)]
    dth = [
        [
            [tape(differentiate(spec.actuation[a][i], c)) for c in spec.coords]
            for i in range(n)
        ]
        for a in range(m)
    ]
    dh = [tape(differentiate(spec.potential, c)) for c in spec.coords]
    xi = tape(parse("1"))
    cm = backend.build_model(n, m, hu, dhu, th, dth, dh, xi, 1e-10, 1e-10, 2**14)
    return cm, hu[0][0]


def timed(fn, reps):
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=int, default=1, help="repetition multiplier")
    args = ap.parse_args(argv)

    if _fastcore is None:
        print("compiled backend is not built; nothing to compare", file=sys.stderr)
        return 1

    spec = prepared_pendulum()
    rng = random.Random(7)
    points = [
        (rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)) for _ in range(64)
    ]

    benches = []
    for backend in (_purecore, _fastcore):
        cm, h11 = build_for(backend, spec)
        benches.append(
            {
                "tape eval (mass entry)": (
                    5000,
                    lambda b=backend, t=h11: [b.eval_tape(t, q) for q in points],
                ),
                "frame assembly": (
                    400,
                    lambda b=backend, c=cm: [b.frame(c, q) for q in points],
                ),
                "transport coefficient": (
                    300,
                    lambda b=backend, c=cm: [b.g_scalar(c, q) for q in points],
                ),
                "kinetic factor (quadrature)": (
                    4,
                    lambda b=backend, c=cm: [b.kin_value(c, q) for q in points],
                ),
                "shaped potential value": (
                    1,
                    lambda b=backend, c=cm: [
                        b.shaped_value(c, q, 2.0) for q in points
                    ],
                ),
            }
        )

    print(f"{'benchmark':<30} {'pure':>12} {'compiled':>12} {'speedup':>9}")
    print("-" * 66)
    for name in benches[0]:
        reps, _ = benches[0][name]
        reps = max(1, reps * args.scale)
        per = []
        for side in benches:
            _, fn = side[name]
            fn()  # warm up
            per.append(timed(fn, reps) / len(points))
        unit, factor = ("us", 1e6) if per[0] < 1e-3 else ("ms", 1e3)
        print(
            f"{name:<30} {per[0] * factor:>10.2f}{unit} "
            f"{per[1] * factor:>10.2f}{unit} {per[0] / per[1]:>8.1f}x"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
