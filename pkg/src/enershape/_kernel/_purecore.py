"""Pure-Python numeric core.

Implements the hot evaluation chain (mass data -> projection frame ->
transport coefficient -> kinetic factor -> shaping slope -> shaped
potential) plus the shared linear solver and adaptive quadrature.  The
compiled core in ``_fastcore.pyx`` mirrors this module operation for
operation; keep the two in lockstep when changing anything numeric.

Matrices are handled as flat row-major lists internally to keep the
arithmetic sequence identical to the C version; numpy only appears at the
public boundary.
"""

from __future__ import annotations

import math

import numpy as np

from .tape import (
    OP_ABS,
    OP_ADD,
    OP_CONST,
    OP_COS,
    OP_DIV,
    OP_EXP,
    OP_LOG,
    OP_MUL,
    OP_NEG,
    OP_POW,
    OP_SIN,
    OP_SQRT,
    OP_SUB,
    OP_TAN,
    OP_VAR,
    CoreConvergenceError,
    CoreDomainError,
    CoreNonFiniteError,
    CoreSingularError,
)

_NAN = float("nan")


def backend_name():
    return "pure"


# ---------------------------------------------------------------------------
# Tape evaluation.  Tapes are translated once into plain Python expressions;
# domain failures surface as NaN exactly as in the compiled interpreter.


def _div(a, b):
    if b == 0.0:
        return _NAN
    return a / b


def _pow(a, b):
    if math.isnan(a) or math.isnan(b):
        return _NAN
    if a == 0.0 and b < 0.0:
        return _NAN
    if a < 0.0 and b != math.floor(b):
        return _NAN
    try:
        return math.pow(a, b)
    except OverflowError:
        if a < 0.0 and math.fmod(b, 2.0) == 1.0:
            return -math.inf
        return math.inf
    except ValueError:
        return _NAN


def _log(a):
    if a <= 0.0:
        return _NAN
    return math.log(a)


def _sqrt(a):
    if a < 0.0:
        return _NAN
    return math.sqrt(a)


def _exp(a):
    try:
        return math.exp(a)
    except OverflowError:
        return math.inf


_GLOBALS = {
    "__builtins__": {},
    "sin": math.sin,
    "cos": math.cos,
    "tan": math.tan,
    "fabs": math.fabs,
    "_div": _div,
    "_pow": _pow,
    "_log": _log,
    "_sqrt": _sqrt,
    "_exp": _exp,
}


def _compile_func(tape):
    st = []
    ops, iarg, farg = tape.ops, tape.iarg, tape.farg
    for k in range(len(ops)):
        op = int(ops[k])
        if op == OP_CONST:
            st.append(repr(float(farg[k])))
        elif op == OP_VAR:
            st.append(f"q[{int(iarg[k])}]")
        elif op == OP_NEG:
            st.append(f"(-{st.pop()})")
        elif op == OP_SIN:
            st.append(f"sin({st.pop()})")
        elif op == OP_COS:
            st.append(f"cos({st.pop()})")
        elif op == OP_TAN:
            st.append(f"tan({st.pop()})")
        elif op == OP_EXP:
            st.append(f"_exp({st.pop()})")
        elif op == OP_LOG:
            st.append(f"_log({st.pop()})")
        elif op == OP_SQRT:
            st.append(f"_sqrt({st.pop()})")
        elif op == OP_ABS:
            st.append(f"fabs({st.pop()})")
        else:
            b = st.pop()
            a = st.pop()
            if op == OP_ADD:
                st.append(f"({a} + {b})")
            elif op == OP_SUB:
                st.append(f"({a} - {b})")
            elif op == OP_MUL:
                st.append(f"({a} * {b})")
            elif op == OP_DIV:
                st.append(f"_div({a}, {b})")
            elif op == OP_POW:
                st.append(f"_pow({a}, {b})")
            else:
                raise ValueError(f"bad opcode {op}")
    if len(st) != 1:
        raise ValueError("malformed tape")
    return eval(f"lambda q: {st[0]}", dict(_GLOBALS))


def _func(tape):
    f = getattr(tape, "_pyfunc", None)
    if f is None:
        f = _compile_func(tape)
        tape._pyfunc = f
    return f


def eval_tape(tape, q):
    """Evaluate a tape at coordinate vector ``q``."""
    v = _func(tape)(list(q))
    if math.isnan(v):
        raise CoreDomainError("expression left its domain")
    return v


# ---------------------------------------------------------------------------
# Dense LU with partial pivoting, flat row-major storage.

_PIVOT_RTOL = 1e-13


def _lu(a, n):
    """Factor in place; returns the pivot row list."""
    anorm = 0.0
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += abs(a[i * n + j])
        if s > anorm:
            anorm = s
    piv = [0] * n
    for k in range(n):
        p = k
        amax = abs(a[k * n + k])
        for i in range(k + 1, n):
            v = abs(a[i * n + k])
            if v > amax:
                amax = v
                p = i
        if not (amax > _PIVOT_RTOL * anorm):
            raise CoreSingularError(f"pivot {amax:.3e} below threshold at column {k}")
        piv[k] = p
        if p != k:
            for j in range(n):
                a[k * n + j], a[p * n + j] = a[p * n + j], a[k * n + j]
        akk = a[k * n + k]
        for i in range(k + 1, n):
            lik = a[i * n + k] / akk
            a[i * n + k] = lik
            if lik != 0.0:
                for j in range(k + 1, n):
                    a[i * n + j] -= lik * a[k * n + j]
    return piv


def _lu_solve(a, piv, n, b):
    """Solve with a factored matrix; ``b`` is overwritten with the result."""
    for k in range(n):
        p = piv[k]
        if p != k:
            b[k], b[p] = b[p], b[k]
    for k in range(n):
        bk = b[k]
        if bk != 0.0:
            for i in range(k + 1, n):
                b[i] -= a[i * n + k] * bk
    for k in range(n - 1, -1, -1):
        s = b[k]
        for j in range(k + 1, n):
            s -= a[k * n + j] * b[j]
        b[k] = s / a[k * n + k]


def solve(a, b):
    """Solve a dense square system; raises CoreSingularError on rank loss."""
    am = np.asarray(a, dtype=float)
    bv = np.asarray(b, dtype=float)
    n = am.shape[0]
    flat = [float(v) for v in am.reshape(-1)]
    piv = _lu(flat, n)
    x = [float(v) for v in bv]
    _lu_solve(flat, piv, n, x)
    return np.asarray(x)


# ---------------------------------------------------------------------------
# Gauss-Kronrod 7-15 panel and adaptive refinement.

_XGK = (
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
)
_WGK = (
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
)
_WG = (
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
)

_MAX_DEPTH = 60


def _gk15(f, a, b):
    """One Kronrod-15 / Gauss-7 panel; returns both scaled estimates."""
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    fc = f(c)
    resg = fc * _WG[3]
    resk = fc * _WGK[7]
    for j in range(3):
        x = h * _XGK[2 * j + 1]
        f1 = f(c - x)
        f2 = f(c + x)
        s = f1 + f2
        resg += _WG[j] * s
        resk += _WGK[2 * j + 1] * s
    for j in range(4):
        x = h * _XGK[2 * j]
        f1 = f(c - x)
        f2 = f(c + x)
        resk += _WGK[2 * j] * (f1 + f2)
    resk *= h
    resg *= h
    if not math.isfinite(resk):
        raise CoreNonFiniteError(f"non-finite integrand on [{a:.6g}, {b:.6g}]")
    return resk, resg


def _refine(f, a, b, k15, g7, tol, budget, depth):
    if abs(k15 - g7) <= tol:
        return k15
    c = 0.5 * (a + b)
    if c <= a or c >= b:
        # interval collapsed to roundoff; nothing further to resolve
        return k15
    if depth >= _MAX_DEPTH:
        raise CoreConvergenceError("quadrature refinement stalled")
    if budget[0] <= 0:
        raise CoreConvergenceError("quadrature subdivision budget exhausted")
    budget[0] -= 1
    kl, gl = _gk15(f, a, c)
    kr, gr = _gk15(f, c, b)
    half = 0.5 * tol
    left = _refine(f, a, c, kl, gl, half, budget, depth + 1)
    right = _refine(f, c, b, kr, gr, half, budget, depth + 1)
    return left + right


def _adaptive(f, a, b, atol, rtol, maxsub):
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b = b, a
        sign = -1.0
    k15, g7 = _gk15(f, a, b)
    tol = max(atol, rtol * abs(k15))
    budget = [maxsub]
    return sign * _refine(f, a, b, k15, g7, tol, budget, 0)


def quad(f, a, b, atol, rtol, maxsub):
    """Adaptive integral of a Python callable over [a, b]."""

    def sample(x):
        return float(f(x))

    return _adaptive(sample, float(a), float(b), atol, rtol, maxsub)


# ---------------------------------------------------------------------------
# Model chain


class CoreModel:
    """Compiled tapes plus quadrature policy for one model chart.

    Tape layout: ``hu`` is the full symmetric inverse-mass grid (entries
    shared across the diagonal), ``dhu[i][j][k]`` its coordinate
    derivatives, ``th``/``dth`` the actuation rows, ``dh`` the potential
    gradient, ``xi`` the optional kinetic profile.
    """

    __slots__ = (
        "n",
        "m",
        "nm",
        "hu_f",
        "dhu_f",
        "th_f",
        "dth_f",
        "dh_f",
        "xi_f",
        "atol",
        "rtol",
        "maxsub",
    )

    def __init__(self, n, m, hu, dhu, th, dth, dh, xi, atol, rtol, maxsub):
        self.n = n
        self.m = m
        self.nm = n - m
        self.hu_f = [_func(hu[i][j]) for i in range(n) for j in range(n)]
        self.dhu_f = [
            _func(dhu[i][j][k]) for i in range(n) for j in range(n) for k in range(n)
        ]
        self.th_f = [_func(th[a][i]) for a in range(m) for i in range(n)]
        self.dth_f = [
            _func(dth[a][i][k]) for a in range(m) for i in range(n) for k in range(n)
        ]
        self.dh_f = [_func(dh[k]) for k in range(n)]
        self.xi_f = _func(xi) if xi is not None else None
        self.atol = atol
        self.rtol = rtol
        self.maxsub = maxsub


def build_model(n, m, hu, dhu, th, dth, dh, xi, atol, rtol, maxsub):
    return CoreModel(n, m, hu, dhu, th, dth, dh, xi, atol, rtol, maxsub)


def _eval_grid(funcs, n, q):
    """Evaluate an n*n grid of callables, checking finiteness."""
    out = [0.0] * (n * n)
    for i in range(n):
        for j in range(n):
            v = funcs[i * n + j](q)
            if math.isnan(v):
                raise CoreDomainError("matrix entry left its domain")
            out[i * n + j] = v
    return out


def _frame_core(cm, q):
    """Shared frame assembly: inverse mass, mass, stacked matrix, projection.

    Returns (hu, hl, ls, piv, proj) with ls/piv the factored stacked
    matrix, all flat row-major lists.
    """
    n, m, nm = cm.n, cm.m, cm.nm
    hu = _eval_grid(cm.hu_f, n, q)
    work = hu[:]
    piv_h = _lu(work, n)
    hl = [0.0] * (n * n)
    col = [0.0] * n
    for j in range(n):
        for i in range(n):
            col[i] = 1.0 if i == j else 0.0
        _lu_solve(work, piv_h, n, col)
        for i in range(n):
            hl[i * n + j] = col[i]
    ls = [0.0] * (n * n)
    for t in range(nm):
        for i in range(n):
            ls[t * n + i] = hl[t * n + i]
    for a in range(m):
        for i in range(n):
            v = cm.th_f[a * n + i](q)
            if math.isnan(v):
                raise CoreDomainError("actuation entry left its domain")
            ls[(nm + a) * n + i] = v
    piv = _lu(ls, n)
    proj = [0.0] * (n * nm)
    for mu in range(nm):
        for i in range(n):
            col[i] = 1.0 if i == mu else 0.0
        _lu_solve(ls, piv, n, col)
        for i in range(n):
            proj[i * nm + mu] = col[i]
    return hu, hl, ls, piv, proj


def frame(cm, q):
    """Pointwise frame: inverse mass, mass, projection columns."""
    qq = [float(v) for v in q]
    hu, hl, _, _, proj = _frame_core(cm, qq)
    n, nm = cm.n, cm.nm
    return (
        np.asarray(hu).reshape(n, n),
        np.asarray(hl).reshape(n, n),
        np.asarray(proj).reshape(n, nm),
    )


def _dhu_at(cm, q, k):
    """Coordinate-k derivative of the inverse mass grid."""
    n = cm.n
    out = [0.0] * (n * n)
    for i in range(n):
        for j in range(n):
            v = cm.dhu_f[(i * n + j) * n + k](q)
            if math.isnan(v):
                raise CoreDomainError("matrix derivative left its domain")
            out[i * n + j] = v
    return out


def frame_derivs(cm, q):
    """Frame plus exact spatial derivatives of mass and projection.

    The projection derivative follows from differentiating the stacked
    linear system: dP = -S^{-1} (dS) P, with the mass derivative obtained
    by the sandwich rule d(H^-1) = -H^-1 (dH) H^-1.
    """
    qq = [float(v) for v in q]
    n, m, nm = cm.n, cm.m, cm.nm
    hu, hl, ls, piv, proj = _frame_core(cm, qq)
    dhl = [[0.0] * (n * n) for _ in range(n)]
    for k in range(n):
        dhu = _dhu_at(cm, qq, k)
        # dhl_k = -hl * dhu * hl
        tmp = [0.0] * (n * n)
        for i in range(n):
            for j in range(n):
                s = 0.0
                for l in range(n):
                    s += hl[i * n + l] * dhu[l * n + j]
                tmp[i * n + j] = s
        dst = dhl[k]
        for i in range(n):
            for j in range(n):
                s = 0.0
                for l in range(n):
                    s += tmp[i * n + l] * hl[l * n + j]
                dst[i * n + j] = -s
    dproj = [[0.0] * (n * nm) for _ in range(nm)]
    rhs = [0.0] * n
    for t in range(nm):
        ds = [0.0] * (n * n)
        src = dhl[t]
        for tau in range(nm):
            for i in range(n):
                ds[tau * n + i] = src[tau * n + i]
        for a in range(m):
            for i in range(n):
                v = cm.dth_f[(a * n + i) * n + t](qq)
                if math.isnan(v):
                    raise CoreDomainError("actuation derivative left its domain")
                ds[(nm + a) * n + i] = v
        for mu in range(nm):
            for i in range(n):
                s = 0.0
                for j in range(n):
                    s += ds[i * n + j] * proj[j * nm + mu]
                rhs[i] = -s
            _lu_solve(ls, piv, n, rhs)
            for i in range(n):
                dproj[t][i * nm + mu] = rhs[i]
    return (
        np.asarray(hu).reshape(n, n),
        np.asarray(hl).reshape(n, n),
        np.asarray(proj).reshape(n, nm),
        np.asarray([dhl[k] for k in range(n)]).reshape(n, n, n),
        np.asarray([dproj[t] for t in range(nm)]).reshape(nm, n, nm),
    )


def _g1(cm, q):
    """Scalar transport coefficient for one degree of underactuation."""
    n, m = cm.n, cm.m
    hu = _eval_grid(cm.hu_f, n, q)
    work = hu[:]
    piv_h = _lu(work, n)
    hl = [0.0] * (n * n)
    col = [0.0] * n
    for j in range(n):
        for i in range(n):
            col[i] = 1.0 if i == j else 0.0
        _lu_solve(work, piv_h, n, col)
        for i in range(n):
            hl[i * n + j] = col[i]
    ls = [0.0] * (n * n)
    for i in range(n):
        ls[i] = hl[i]
    for a in range(m):
        for i in range(n):
            v = cm.th_f[a * n + i](q)
            if math.isnan(v):
                raise CoreDomainError("actuation entry left its domain")
            ls[(1 + a) * n + i] = v
    piv = _lu(ls, n)
    p = [0.0] * n
    p[0] = 1.0
    _lu_solve(ls, piv, n, p)
    r = hl[0:n]  # mass row paired with the unactuated direction
    term1 = 0.0
    dhu_x = None
    for k in range(n):
        dhu = _dhu_at(cm, q, k)
        if k == 0:
            dhu_x = dhu
        s = 0.0
        for a in range(n):
            ra = r[a]
            if ra != 0.0:
                acc = 0.0
                for b in range(n):
                    acc += dhu[a * n + b] * r[b]
                s += ra * acc
        term1 += p[k] * (-s)
    # row 0 of d(hl)/dx = -(r * dhu_x) * hl
    srow = [0.0] * n
    for a in range(n):
        acc = 0.0
        for i in range(n):
            acc += r[i] * dhu_x[i * n + a]
        srow[a] = acc
    trow = [0.0] * n
    for b in range(n):
        acc = 0.0
        for a in range(n):
            acc += srow[a] * hl[a * n + b]
        trow[b] = -acc
    ds0 = [0.0] * (n * n)
    for i in range(n):
        ds0[i] = trow[i]
    for a in range(m):
        for i in range(n):
            v = cm.dth_f[(a * n + i) * n + 0](q)
            if math.isnan(v):
                raise CoreDomainError("actuation derivative left its domain")
            ds0[(1 + a) * n + i] = v
    w = [0.0] * n
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += ds0[i * n + j] * p[j]
        w[i] = -acc
    _lu_solve(ls, piv, n, w)
    t1 = 0.0
    t2 = 0.0
    for i in range(n):
        t1 += w[i] * r[i]
        t2 += p[i] * r[i]
    return -(term1 + 2.0 * t1 * t2)


def g_scalar(cm, q):
    if cm.nm != 1:
        raise ValueError("scalar transport needs one degree of underactuation")
    return _g1(cm, [float(v) for v in q])


def _kexp(cm, q):
    x = q[0]
    buf = q[:]

    def f(t):
        buf[0] = t
        return _g1(cm, buf)

    return _adaptive(f, 0.0, x, cm.atol, cm.rtol, cm.maxsub)


def kin_exponent(cm, q):
    """Integral of the transport coefficient from 0 to q[0] at fixed tail."""
    return _kexp(cm, [float(v) for v in q])


def _kin(cm, q):
    ex = _kexp(cm, q)
    if cm.xi_f is not None:
        xi = cm.xi_f(q)
        if math.isnan(xi):
            raise CoreDomainError("kinetic profile left its domain")
    else:
        xi = 1.0
    try:
        return xi * math.exp(-ex)
    except OverflowError:
        raise CoreNonFiniteError("kinetic factor overflowed") from None


def kin_value(cm, q):
    """Kinetic factor: profile times exp(-integral of transport)."""
    return _kin(cm, [float(v) for v in q])


def _u1(cm, q):
    n, m = cm.n, cm.m
    hu = _eval_grid(cm.hu_f, n, q)
    piv_h = _lu(hu, n)
    hl_row = [0.0] * n  # only stacked rows are needed, not the full inverse
    ls = [0.0] * (n * n)
    col = [0.0] * n
    for j in range(n):
        for i in range(n):
            col[i] = 1.0 if i == j else 0.0
        _lu_solve(hu, piv_h, n, col)
        hl_row[j] = col[0]
    for i in range(n):
        ls[i] = hl_row[i]
    for a in range(m):
        for i in range(n):
            v = cm.th_f[a * n + i](q)
            if math.isnan(v):
                raise CoreDomainError("actuation entry left its domain")
            ls[(1 + a) * n + i] = v
    piv = _lu(ls, n)
    p = [0.0] * n
    p[0] = 1.0
    _lu_solve(ls, piv, n, p)
    s = 0.0
    for k in range(n):
        v = cm.dh_f[k](q)
        if math.isnan(v):
            raise CoreDomainError("potential gradient left its domain")
        s += v * p[k]
    return s * _kin(cm, q)


def slope_value(cm, q):
    """Shaping slope u at q for one degree of underactuation."""
    if cm.nm != 1:
        raise ValueError("slope fast path needs one degree of underactuation")
    return _u1(cm, [float(v) for v in q])


def shaped_value(cm, q, varpi):
    """Shaped potential at q: path integral of the slope plus the
    quadratic actuated-block term."""
    if cm.nm != 1:
        raise ValueError("shaped fast path needs one degree of underactuation")
    qq = [float(v) for v in q]
    x = qq[0]
    buf = qq[:]

    def f(t):
        buf[0] = t
        return _u1(cm, buf)

    val = _adaptive(f, 0.0, x, cm.atol, cm.rtol, cm.maxsub)
    tail = 0.0
    for i in range(1, cm.n):
        tail += qq[i] * qq[i]
    return val + 0.5 * varpi * tail
