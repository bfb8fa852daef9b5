# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric core, the twin of ``_purecore``.

Every routine reproduces the pure module's arithmetic sequence exactly:
same panel ordering, same pivot and skip conditions, same domain
sentinels, same error messages.  A behavioral difference between the
two backends is a bug, and the cross-backend tests treat it as one.
"""

from libc.math cimport cos, exp, fabs, floor, log, pow, sin, sqrt, tan
from libc.math cimport INFINITY, NAN, isfinite, isnan
from libc.stdlib cimport free, malloc

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

cdef int _OP_CONST = OP_CONST
cdef int _OP_VAR = OP_VAR
cdef int _OP_NEG = OP_NEG
cdef int _OP_ADD = OP_ADD
cdef int _OP_SUB = OP_SUB
cdef int _OP_MUL = OP_MUL
cdef int _OP_DIV = OP_DIV
cdef int _OP_POW = OP_POW
cdef int _OP_SIN = OP_SIN
cdef int _OP_COS = OP_COS
cdef int _OP_TAN = OP_TAN
cdef int _OP_EXP = OP_EXP
cdef int _OP_LOG = OP_LOG
cdef int _OP_SQRT = OP_SQRT
cdef int _OP_ABS = OP_ABS

cdef enum:
    MAXN = 12        # coordinate cap; the model format stops at 9
    MAXNN = 144
    MAXSTACK = 64    # matches the tape compiler's depth check
    WHICH_PYF = 0
    WHICH_TRANSPORT = 1
    WHICH_SLOPE = 2

cdef double _PIVOT_RTOL = 1e-13
cdef int _MAX_DEPTH = 60


def backend_name():
    return "compiled"


# ---------------------------------------------------------------------------
# Tape interpretation.  Domain failures surface as NaN, mapped to
# CoreDomainError at the same call sites as in the pure twin.


cdef inline double _c_pow(double a, double b):
    if isnan(a) or isnan(b):
        return NAN
    if a == 0.0 and b < 0.0:
        return NAN
    if a < 0.0 and b != floor(b):
        return NAN
    return pow(a, b)


cdef double _run_tape(
    const int* ops, const int* iarg, const double* farg,
    Py_ssize_t count, const double* q,
):
    cdef double stack[MAXSTACK]
    cdef Py_ssize_t sp = 0, k
    cdef int op
    cdef double a, b
    for k in range(count):
        op = ops[k]
        if op == _OP_CONST:
            stack[sp] = farg[k]
            sp += 1
        elif op == _OP_VAR:
            stack[sp] = q[iarg[k]]
            sp += 1
        elif op == _OP_NEG:
            stack[sp - 1] = -stack[sp - 1]
        elif op == _OP_SIN:
            stack[sp - 1] = sin(stack[sp - 1])
        elif op == _OP_COS:
            stack[sp - 1] = cos(stack[sp - 1])
        elif op == _OP_TAN:
            stack[sp - 1] = tan(stack[sp - 1])
        elif op == _OP_EXP:
            stack[sp - 1] = exp(stack[sp - 1])
        elif op == _OP_LOG:
            a = stack[sp - 1]
            stack[sp - 1] = NAN if a <= 0.0 else log(a)
        elif op == _OP_SQRT:
            a = stack[sp - 1]
            stack[sp - 1] = NAN if a < 0.0 else sqrt(a)
        elif op == _OP_ABS:
            stack[sp - 1] = fabs(stack[sp - 1])
        else:
            sp -= 1
            b = stack[sp]
            a = stack[sp - 1]
            if op == _OP_ADD:
                stack[sp - 1] = a + b
            elif op == _OP_SUB:
                stack[sp - 1] = a - b
            elif op == _OP_MUL:
                stack[sp - 1] = a * b
            elif op == _OP_DIV:
                stack[sp - 1] = NAN if b == 0.0 else a / b
            else:
                stack[sp - 1] = _c_pow(a, b)
    return stack[0]


def eval_tape(tape, q):
    """Evaluate a tape at coordinate vector ``q``."""
    cdef const int[:] ops = tape.ops
    cdef const int[:] ia = tape.iarg
    cdef const double[:] fa = tape.farg
    cdef Py_ssize_t slots = tape.n_slots
    if slots > MAXN:
        raise ValueError(f"compiled core supports at most {MAXN} coordinates")
    cdef Py_ssize_t i, nq = len(q)
    if nq < slots:
        raise IndexError("coordinate vector shorter than tape slots")
    cdef double qa[MAXN]
    for i in range(slots):
        qa[i] = q[i]
    cdef double v = _run_tape(&ops[0], &ia[0], &fa[0], ops.shape[0], qa)
    if isnan(v):
        raise CoreDomainError("expression left its domain")
    return v


# ---------------------------------------------------------------------------
# Dense LU with partial pivoting, flat row-major storage.


cdef int _lu(double* a, Py_ssize_t n, Py_ssize_t* piv) except -1:
    """Factor in place; fills the pivot row array."""
    cdef double anorm = 0.0, s, amax, v, akk, lik
    cdef Py_ssize_t i, j, k, p
    for i in range(n):
        s = 0.0
        for j in range(n):
            s += fabs(a[i * n + j])
        if s > anorm:
            anorm = s
    for k in range(n):
        p = k
        amax = fabs(a[k * n + k])
        for i in range(k + 1, n):
            v = fabs(a[i * n + k])
            if v > amax:
                amax = v
                p = i
        if not (amax > _PIVOT_RTOL * anorm):
            raise CoreSingularError(f"pivot {amax:.3e} below threshold at column {k}")
        piv[k] = p
        if p != k:
            for j in range(n):
                v = a[k * n + j]
                a[k * n + j] = a[p * n + j]
                a[p * n + j] = v
        akk = a[k * n + k]
        for i in range(k + 1, n):
            lik = a[i * n + k] / akk
            a[i * n + k] = lik
            if lik != 0.0:
                for j in range(k + 1, n):
                    a[i * n + j] -= lik * a[k * n + j]
    return 0


cdef void _lu_solve(const double* a, const Py_ssize_t* piv, Py_ssize_t n, double* b):
    """Solve with a factored matrix; ``b`` is overwritten with the result."""
    cdef Py_ssize_t i, j, k, p
    cdef double bk, s
    for k in range(n):
        p = piv[k]
        if p != k:
            bk = b[k]
            b[k] = b[p]
            b[p] = bk
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
    cdef Py_ssize_t n = am.shape[0]
    cdef double* flat = <double*> malloc(n * n * sizeof(double))
    cdef double* x = <double*> malloc(n * sizeof(double))
    cdef Py_ssize_t* piv = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    if flat == NULL or x == NULL or piv == NULL:
        free(flat)
        free(x)
        free(piv)
        raise MemoryError()
    cdef Py_ssize_t i, j
    try:
        for i in range(n):
            for j in range(n):
                flat[i * n + j] = am[i, j]
        for i in range(n):
            x[i] = bv[i]
        _lu(flat, n, piv)
        _lu_solve(flat, piv, n, x)
        out = np.empty(n)
        for i in range(n):
            out[i] = x[i]
        return out
    finally:
        free(flat)
        free(x)
        free(piv)


# ---------------------------------------------------------------------------
# Gauss-Kronrod 7-15 panel and adaptive refinement.  One implementation
# serves the python-callback integrand and the two internal ones.

_XGK_VALUES = (
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
)
_WGK_VALUES = (
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
)
_WG_VALUES = (
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
)

cdef double _XGK[8]
cdef double _WGK[8]
cdef double _WG[4]
for _i in range(8):
    _XGK[_i] = _XGK_VALUES[_i]
    _WGK[_i] = _WGK_VALUES[_i]
for _i in range(4):
    _WG[_i] = _WG_VALUES[_i]


cdef double _sample(CoreModel cm, object f, double* buf, int which, double t) except *:
    if which == WHICH_PYF:
        return float(f(t))
    buf[0] = t
    if which == WHICH_TRANSPORT:
        return _g1(cm, buf)
    return _u1(cm, buf)


cdef double _gk15(
    CoreModel cm, object f, double* buf, int which,
    double a, double b, double* g7out,
) except *:
    """One Kronrod-15 / Gauss-7 panel; writes the Gauss estimate to g7out."""
    cdef double c = 0.5 * (a + b)
    cdef double h = 0.5 * (b - a)
    cdef double fc = _sample(cm, f, buf, which, c)
    cdef double resg = fc * _WG[3]
    cdef double resk = fc * _WGK[7]
    cdef double x, f1, f2, s
    cdef Py_ssize_t j
    for j in range(3):
        x = h * _XGK[2 * j + 1]
        f1 = _sample(cm, f, buf, which, c - x)
        f2 = _sample(cm, f, buf, which, c + x)
        s = f1 + f2
        resg += _WG[j] * s
        resk += _WGK[2 * j + 1] * s
    for j in range(4):
        x = h * _XGK[2 * j]
        f1 = _sample(cm, f, buf, which, c - x)
        f2 = _sample(cm, f, buf, which, c + x)
        resk += _WGK[2 * j] * (f1 + f2)
    resk *= h
    resg *= h
    if not isfinite(resk):
        raise CoreNonFiniteError(f"non-finite integrand on [{a:.6g}, {b:.6g}]")
    g7out[0] = resg
    return resk


cdef double _refine(
    CoreModel cm, object f, double* buf, int which,
    double a, double b, double k15, double g7, double tol,
    int* budget, int depth,
) except *:
    if fabs(k15 - g7) <= tol:
        return k15
    cdef double c = 0.5 * (a + b)
    if c <= a or c >= b:
        # interval collapsed to roundoff; nothing further to resolve
        return k15
    if depth >= _MAX_DEPTH:
        raise CoreConvergenceError("quadrature refinement stalled")
    if budget[0] <= 0:
        raise CoreConvergenceError("quadrature subdivision budget exhausted")
    budget[0] -= 1
    cdef double gl = 0.0, gr = 0.0
    cdef double kl = _gk15(cm, f, buf, which, a, c, &gl)
    cdef double kr = _gk15(cm, f, buf, which, c, b, &gr)
    cdef double half = 0.5 * tol
    cdef double left = _refine(cm, f, buf, which, a, c, kl, gl, half, budget, depth + 1)
    cdef double right = _refine(cm, f, buf, which, c, b, kr, gr, half, budget, depth + 1)
    return left + right


cdef double _adaptive(
    CoreModel cm, object f, double* buf, int which,
    double a, double b, double atol, double rtol, int maxsub,
) except *:
    if a == b:
        return 0.0
    cdef double sign = 1.0
    cdef double t
    if b < a:
        t = a
        a = b
        b = t
        sign = -1.0
    cdef double g7 = 0.0
    cdef double k15 = _gk15(cm, f, buf, which, a, b, &g7)
    cdef double tol = rtol * fabs(k15)
    if atol > tol:
        tol = atol
    cdef int budget = maxsub
    return sign * _refine(cm, f, buf, which, a, b, k15, g7, tol, &budget, 0)


def quad(f, a, b, atol, rtol, maxsub):
    """Adaptive integral of a Python callable over [a, b]."""
    return _adaptive(None, f, NULL, WHICH_PYF, a, b, atol, rtol, maxsub)


# ---------------------------------------------------------------------------
# Model storage: all tapes packed into flat instruction buffers.


cdef class CoreModel:
    """Packed tapes plus quadrature policy for one model chart.

    Function order matches the pure twin's flat lists: inverse-mass grid,
    its derivatives, actuation rows, their derivatives, the potential
    gradient, then the optional kinetic profile.
    """

    cdef public int n, m, nm
    cdef public double atol, rtol
    cdef public int maxsub
    cdef Py_ssize_t nfuncs
    cdef Py_ssize_t xi_idx         # -1 when absent
    cdef Py_ssize_t b_dhu, b_th, b_dth, b_dh
    cdef int* ops
    cdef int* iarg
    cdef double* farg
    cdef Py_ssize_t* start
    cdef Py_ssize_t* length

    def __cinit__(self):
        self.ops = NULL
        self.iarg = NULL
        self.farg = NULL
        self.start = NULL
        self.length = NULL

    def __init__(self, n, m, hu, dhu, th, dth, dh, xi, atol, rtol, maxsub):
        if n > MAXN:
            raise ValueError(f"compiled core supports n <= {MAXN}")
        self.n = n
        self.m = m
        self.nm = n - m
        self.atol = atol
        self.rtol = rtol
        self.maxsub = maxsub
        tapes = []
        cdef Py_ssize_t i, j, k, a
        for i in range(n):
            for j in range(n):
                tapes.append(hu[i][j])
        self.b_dhu = len(tapes)
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    tapes.append(dhu[i][j][k])
        self.b_th = len(tapes)
        for a in range(m):
            for i in range(n):
                tapes.append(th[a][i])
        self.b_dth = len(tapes)
        for a in range(m):
            for i in range(n):
                for k in range(n):
                    tapes.append(dth[a][i][k])
        self.b_dh = len(tapes)
        for k in range(n):
            tapes.append(dh[k])
        if xi is not None:
            self.xi_idx = len(tapes)
            tapes.append(xi)
        else:
            self.xi_idx = -1
        self.nfuncs = len(tapes)

        cdef Py_ssize_t total = 0
        for t in tapes:
            total += len(t.ops)
        self.ops = <int*> malloc(total * sizeof(int))
        self.iarg = <int*> malloc(total * sizeof(int))
        self.farg = <double*> malloc(total * sizeof(double))
        self.start = <Py_ssize_t*> malloc(self.nfuncs * sizeof(Py_ssize_t))
        self.length = <Py_ssize_t*> malloc(self.nfuncs * sizeof(Py_ssize_t))
        if (self.ops == NULL or self.iarg == NULL or self.farg == NULL
                or self.start == NULL or self.length == NULL):
            raise MemoryError()
        cdef Py_ssize_t pos = 0, f = 0, step
        for t in tapes:
            ops_arr = t.ops
            ia_arr = t.iarg
            fa_arr = t.farg
            step = len(ops_arr)
            self.start[f] = pos
            self.length[f] = step
            for i in range(step):
                self.ops[pos + i] = ops_arr[i]
                self.iarg[pos + i] = ia_arr[i]
                self.farg[pos + i] = fa_arr[i]
            pos += step
            f += 1

    def __dealloc__(self):
        free(self.ops)
        free(self.iarg)
        free(self.farg)
        free(self.start)
        free(self.length)

    cdef inline double _f(self, Py_ssize_t idx, const double* q):
        return _run_tape(
            self.ops + self.start[idx],
            self.iarg + self.start[idx],
            self.farg + self.start[idx],
            self.length[idx],
            q,
        )

    cdef inline double _hu(self, Py_ssize_t i, Py_ssize_t j, const double* q):
        return self._f(i * self.n + j, q)

    cdef inline double _dhu(self, Py_ssize_t i, Py_ssize_t j, Py_ssize_t k, const double* q):
        return self._f(self.b_dhu + (i * self.n + j) * self.n + k, q)

    cdef inline double _th(self, Py_ssize_t a, Py_ssize_t i, const double* q):
        return self._f(self.b_th + a * self.n + i, q)

    cdef inline double _dth(self, Py_ssize_t a, Py_ssize_t i, Py_ssize_t k, const double* q):
        return self._f(self.b_dth + (a * self.n + i) * self.n + k, q)

    cdef inline double _dh(self, Py_ssize_t k, const double* q):
        return self._f(self.b_dh + k, q)


def build_model(n, m, hu, dhu, th, dth, dh, xi, atol, rtol, maxsub):
    return CoreModel(n, m, hu, dhu, th, dth, dh, xi, atol, rtol, maxsub)


cdef int _copy_coords(CoreModel cm, q, double* out) except -1:
    cdef Py_ssize_t i, nq = len(q)
    if nq < cm.n:
        raise IndexError("coordinate vector shorter than model dimension")
    for i in range(cm.n):
        out[i] = q[i]
    return 0


# ---------------------------------------------------------------------------
# Model chain


cdef int _eval_hu(CoreModel cm, const double* q, double* out) except -1:
    """Evaluate the inverse-mass grid, checking finiteness."""
    cdef Py_ssize_t n = cm.n, i, j
    cdef double v
    for i in range(n):
        for j in range(n):
            v = cm._hu(i, j, q)
            if isnan(v):
                raise CoreDomainError("matrix entry left its domain")
            out[i * n + j] = v
    return 0


cdef int _eval_dhu(CoreModel cm, const double* q, Py_ssize_t k, double* out) except -1:
    """Coordinate-k derivative of the inverse mass grid."""
    cdef Py_ssize_t n = cm.n, i, j
    cdef double v
    for i in range(n):
        for j in range(n):
            v = cm._dhu(i, j, k, q)
            if isnan(v):
                raise CoreDomainError("matrix derivative left its domain")
            out[i * n + j] = v
    return 0


cdef int _frame_core(
    CoreModel cm, const double* q,
    double* hu, double* hl, double* ls, Py_ssize_t* piv, double* proj,
) except -1:
    """Shared frame assembly: inverse mass, mass, stacked matrix, projection.

    Fills hu, hl, proj and leaves ls/piv holding the factored stacked
    matrix, all flat row-major.
    """
    cdef Py_ssize_t n = cm.n, m = cm.m, nm = cm.nm
    cdef Py_ssize_t i, j, t, a, mu
    cdef double work[MAXNN]
    cdef Py_ssize_t piv_h[MAXN]
    cdef double col[MAXN]
    cdef double v
    _eval_hu(cm, q, hu)
    for i in range(n * n):
        work[i] = hu[i]
    _lu(work, n, piv_h)
    for j in range(n):
        for i in range(n):
            col[i] = 1.0 if i == j else 0.0
        _lu_solve(work, piv_h, n, col)
        for i in range(n):
            hl[i * n + j] = col[i]
    for t in range(nm):
        for i in range(n):
            ls[t * n + i] = hl[t * n + i]
    for a in range(m):
        for i in range(n):
            v = cm._th(a, i, q)
            if isnan(v):
                raise CoreDomainError("actuation entry left its domain")
            ls[(nm + a) * n + i] = v
    _lu(ls, n, piv)
    for mu in range(nm):
        for i in range(n):
            col[i] = 1.0 if i == mu else 0.0
        _lu_solve(ls, piv, n, col)
        for i in range(n):
            proj[i * nm + mu] = col[i]
    return 0


def frame(cm_obj, q):
    """Pointwise frame: inverse mass, mass, projection columns."""
    cdef CoreModel cm = cm_obj
    cdef double qq[MAXN]
    _copy_coords(cm, q, qq)
    cdef double hu[MAXNN]
    cdef double hl[MAXNN]
    cdef double ls[MAXNN]
    cdef Py_ssize_t piv[MAXN]
    cdef double proj[MAXNN]
    _frame_core(cm, qq, hu, hl, ls, piv, proj)
    cdef Py_ssize_t n = cm.n, nm = cm.nm
    cdef Py_ssize_t i, j
    hu_out = np.empty((n, n))
    hl_out = np.empty((n, n))
    proj_out = np.empty((n, nm))
    for i in range(n):
        for j in range(n):
            hu_out[i, j] = hu[i * n + j]
            hl_out[i, j] = hl[i * n + j]
        for j in range(nm):
            proj_out[i, j] = proj[i * nm + j]
    return hu_out, hl_out, proj_out


def frame_derivs(cm_obj, q):
    """Frame plus exact spatial derivatives of mass and projection.

    The projection derivative follows from differentiating the stacked
    linear system: dP = -S^{-1} (dS) P, with the mass derivative obtained
    by the sandwich rule d(H^-1) = -H^-1 (dH) H^-1.
    """
    cdef CoreModel cm = cm_obj
    cdef double qq[MAXN]
    _copy_coords(cm, q, qq)
    cdef Py_ssize_t n = cm.n, m = cm.m, nm = cm.nm
    cdef Py_ssize_t i, j, k, l, t, a, mu, tau
    cdef double hu[MAXNN]
    cdef double hl[MAXNN]
    cdef double ls[MAXNN]
    cdef Py_ssize_t piv[MAXN]
    cdef double proj[MAXNN]
    _frame_core(cm, qq, hu, hl, ls, piv, proj)
    cdef double* dhl = <double*> malloc(n * n * n * sizeof(double))
    cdef double* dproj = <double*> malloc(nm * n * nm * sizeof(double))
    cdef double* tmp = <double*> malloc(n * n * sizeof(double))
    cdef double* dhu = <double*> malloc(n * n * sizeof(double))
    cdef double* ds = <double*> malloc(n * n * sizeof(double))
    if dhl == NULL or dproj == NULL or tmp == NULL or dhu == NULL or ds == NULL:
        free(dhl)
        free(dproj)
        free(tmp)
        free(dhu)
        free(ds)
        raise MemoryError()
    cdef double rhs[MAXN]
    cdef double s, v
    cdef double* dst
    cdef double* src
    try:
        for k in range(n):
            _eval_dhu(cm, qq, k, dhu)
            # dhl_k = -hl * dhu * hl
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for l in range(n):
                        s += hl[i * n + l] * dhu[l * n + j]
                    tmp[i * n + j] = s
            dst = dhl + k * n * n
            for i in range(n):
                for j in range(n):
                    s = 0.0
                    for l in range(n):
                        s += tmp[i * n + l] * hl[l * n + j]
                    dst[i * n + j] = -s
        for t in range(nm):
            src = dhl + t * n * n
            for tau in range(nm):
                for i in range(n):
                    ds[tau * n + i] = src[tau * n + i]
            for a in range(m):
                for i in range(n):
                    v = cm._dth(a, i, t, qq)
                    if isnan(v):
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
                    dproj[(t * n + i) * nm + mu] = rhs[i]
        hu_out = np.empty((n, n))
        hl_out = np.empty((n, n))
        proj_out = np.empty((n, nm))
        dhl_out = np.empty((n, n, n))
        dproj_out = np.empty((nm, n, nm))
        for i in range(n):
            for j in range(n):
                hu_out[i, j] = hu[i * n + j]
                hl_out[i, j] = hl[i * n + j]
            for j in range(nm):
                proj_out[i, j] = proj[i * nm + j]
        for k in range(n):
            for i in range(n):
                for j in range(n):
                    dhl_out[k, i, j] = dhl[(k * n + i) * n + j]
        for t in range(nm):
            for i in range(n):
                for mu in range(nm):
                    dproj_out[t, i, mu] = dproj[(t * n + i) * nm + mu]
        return hu_out, hl_out, proj_out, dhl_out, dproj_out
    finally:
        free(dhl)
        free(dproj)
        free(tmp)
        free(dhu)
        free(ds)


cdef double _g1(CoreModel cm, const double* q) except *:
    """Scalar transport coefficient for one degree of underactuation."""
    cdef Py_ssize_t n = cm.n, m = cm.m
    cdef Py_ssize_t i, j, k, a, b
    cdef double hu[MAXNN]
    cdef double work[MAXNN]
    cdef double hl[MAXNN]
    cdef double ls[MAXNN]
    cdef double dhu[MAXNN]
    cdef double dhu_x[MAXNN]
    cdef double ds0[MAXNN]
    cdef Py_ssize_t piv_h[MAXN]
    cdef Py_ssize_t piv[MAXN]
    cdef double col[MAXN]
    cdef double p[MAXN]
    cdef double r[MAXN]
    cdef double srow[MAXN]
    cdef double trow[MAXN]
    cdef double w[MAXN]
    cdef double v, s, acc, ra, term1, t1, t2
    _eval_hu(cm, q, hu)
    for i in range(n * n):
        work[i] = hu[i]
    _lu(work, n, piv_h)
    for j in range(n):
        for i in range(n):
            col[i] = 1.0 if i == j else 0.0
        _lu_solve(work, piv_h, n, col)
        for i in range(n):
            hl[i * n + j] = col[i]
    for i in range(n):
        ls[i] = hl[i]
    for a in range(m):
        for i in range(n):
            v = cm._th(a, i, q)
            if isnan(v):
                raise CoreDomainError("actuation entry left its domain")
            ls[(1 + a) * n + i] = v
    _lu(ls, n, piv)
    for i in range(n):
        p[i] = 0.0
    p[0] = 1.0
    _lu_solve(ls, piv, n, p)
    for i in range(n):
        r[i] = hl[i]  # mass row paired with the unactuated direction
    term1 = 0.0
    for k in range(n):
        _eval_dhu(cm, q, k, dhu)
        if k == 0:
            for i in range(n * n):
                dhu_x[i] = dhu[i]
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
    for a in range(n):
        acc = 0.0
        for i in range(n):
            acc += r[i] * dhu_x[i * n + a]
        srow[a] = acc
    for b in range(n):
        acc = 0.0
        for a in range(n):
            acc += srow[a] * hl[a * n + b]
        trow[b] = -acc
    for i in range(n):
        ds0[i] = trow[i]
    for a in range(m):
        for i in range(n):
            v = cm._dth(a, i, 0, q)
            if isnan(v):
                raise CoreDomainError("actuation derivative left its domain")
            ds0[(1 + a) * n + i] = v
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


def g_scalar(cm_obj, q):
    cdef CoreModel cm = cm_obj
    if cm.nm != 1:
        raise ValueError("scalar transport needs one degree of underactuation")
    cdef double qq[MAXN]
    _copy_coords(cm, q, qq)
    return _g1(cm, qq)


cdef double _kexp(CoreModel cm, const double* q) except *:
    cdef double x = q[0]
    cdef double buf[MAXN]
    cdef Py_ssize_t i
    for i in range(cm.n):
        buf[i] = q[i]
    return _adaptive(
        cm, None, buf, WHICH_TRANSPORT, 0.0, x, cm.atol, cm.rtol, cm.maxsub
    )


def kin_exponent(cm_obj, q):
    """Integral of the transport coefficient from 0 to q[0] at fixed tail."""
    cdef CoreModel cm = cm_obj
    cdef double qq[MAXN]
    _copy_coords(cm, q, qq)
    return _kexp(cm, qq)


cdef double _kin(CoreModel cm, const double* q) except *:
    cdef double ex = _kexp(cm, q)
    cdef double xi, e
    if cm.xi_idx >= 0:
        xi = cm._f(cm.xi_idx, q)
        if isnan(xi):
            raise CoreDomainError("kinetic profile left its domain")
    else:
        xi = 1.0
    e = exp(-ex)
    if e == INFINITY:
        raise CoreNonFiniteError("kinetic factor overflowed")
    return xi * e


def kin_value(cm_obj, q):
    """Kinetic factor: profile times exp(-integral of transport)."""
    cdef CoreModel cm = cm_obj
    cdef double qq[MAXN]
    _copy_coords(cm, q, qq)
    return _kin(cm, qq)


cdef double _u1(CoreModel cm, const double* q) except *:
    cdef Py_ssize_t n = cm.n, m = cm.m
    cdef Py_ssize_t i, j, k, a
    cdef double hu[MAXNN]
    cdef double ls[MAXNN]
    cdef double hl_row[MAXN]  # only stacked rows are needed, not the full inverse
    cdef double col[MAXN]
    cdef double p[MAXN]
    cdef Py_ssize_t piv_h[MAXN]
    cdef Py_ssize_t piv[MAXN]
    cdef double v, s
    _eval_hu(cm, q, hu)
    _lu(hu, n, piv_h)
    for j in range(n):
        for i in range(n):
            col[i] = 1.0 if i == j else 0.0
        _lu_solve(hu, piv_h, n, col)
        hl_row[j] = col[0]
    for i in range(n):
        ls[i] = hl_row[i]
    for a in range(m):
        for i in range(n):
            v = cm._th(a, i, q)
            if isnan(v):
                raise CoreDomainError("actuation entry left its domain")
            ls[(1 + a) * n + i] = v
    _lu(ls, n, piv)
    for i in range(n):
        p[i] = 0.0
    p[0] = 1.0
    _lu_solve(ls, piv, n, p)
    s = 0.0
    for k in range(n):
        v = cm._dh(k, q)
        if isnan(v):
            raise CoreDomainError("potential gradient left its domain")
        s += v * p[k]
    return s * _kin(cm, q)


def slope_value(cm_obj, q):
    """Shaping slope u at q for one degree of underactuation."""
    cdef CoreModel cm = cm_obj
    if cm.nm != 1:
        raise ValueError("slope fast path needs one degree of underactuation")
    cdef double qq[MAXN]
    _copy_coords(cm, q, qq)
    return _u1(cm, qq)


def shaped_value(cm_obj, q, varpi):
    """Shaped potential at q: path integral of the slope plus the
    quadratic actuated-block term."""
    cdef CoreModel cm = cm_obj
    if cm.nm != 1:
        raise ValueError("shaped fast path needs one degree of underactuation")
    cdef double qq[MAXN]
    _copy_coords(cm, q, qq)
    cdef double x = qq[0]
    cdef double buf[MAXN]
    cdef Py_ssize_t i
    for i in range(cm.n):
        buf[i] = qq[i]
    cdef double val = _adaptive(
        cm, None, buf, WHICH_SLOPE, 0.0, x, cm.atol, cm.rtol, cm.maxsub
    )
    cdef double tail = 0.0
    for i in range(1, cm.n):
        tail += qq[i] * qq[i]
    return val + 0.5 * <double> varpi * tail
