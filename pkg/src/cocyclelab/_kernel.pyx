# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernels.

Line-for-line transcription of :mod:`cocyclelab._kernel_py`; see that module
for the model/opts tuple layout and return conventions.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, cos, sin, log, isfinite, fmax, fmin
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

cnp.import_array()

DEF MAXN = 200

cdef int OK = 0, STEP_FAILURE = 1, DIVERGENCE = 2, TIMEOUT = 3, NONFINITE = 4

cdef double C2 = 1.0 / 5, C3 = 3.0 / 10, C4 = 4.0 / 5, C5 = 8.0 / 9
cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double A71 = 35.0 / 384, A73 = 500.0 / 1113, A74 = 125.0 / 192, A75 = -2187.0 / 6784, A76 = 11.0 / 84
cdef double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200, E6 = 22.0 / 525, E7 = -1.0 / 40


cdef struct Model:
    int kind
    int block
    int n
    int m
    int K
    int N
    double params[12]
    double *C0
    double *W
    double *Cc
    double *Cs
    double L[MAXN]


cdef struct Stepper:
    double rtol, atol, max_step, max_norm
    int method
    double t, h, h_prev
    long nsteps
    double *buf
    double *y
    double *f
    double *y_prev
    double *f_prev
    double *ynew
    double *fnew
    double *k2
    double *k3
    double *k4
    double *k5
    double *k6
    double *tmp
    double *err


cdef int model_from_tuple(object model, Model *md, list keep) except -1:
    kind, params, block, n, m, C0, W, Cc, Cs = model
    cdef cnp.ndarray[double, ndim=1] pa = np.ascontiguousarray(params, dtype=np.float64)
    md.kind = kind
    md.block = block
    md.n = n
    md.m = m
    md.N = 3 + (n * m if block else 0)
    if n * n > MAXN:
        raise ValueError("block dimension too large for compiled kernel")
    cdef int i
    for i in range(12):
        md.params[i] = pa[i] if i < pa.shape[0] else 0.0
    cdef cnp.ndarray[double, ndim=1] c0 = np.ascontiguousarray(C0, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] w = np.ascontiguousarray(W, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] cc = np.ascontiguousarray(Cc, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] cs = np.ascontiguousarray(Cs, dtype=np.float64).ravel()
    keep.extend([c0, w, cc, cs])
    md.K = w.shape[0] // 3
    md.C0 = <double *> c0.data if c0.shape[0] else NULL
    md.W = <double *> w.data if w.shape[0] else NULL
    md.Cc = <double *> cc.data if cc.shape[0] else NULL
    md.Cs = <double *> cs.data if cs.shape[0] else NULL
    return 0


cdef void rhs(Model *md, double *y, double *f) noexcept nogil:
    cdef double x0 = y[0], x1 = y[1], x2 = y[2]
    cdef double s, r, b, ph, c, sn, acc
    cdef int i, j, k, q, n = md.n, m = md.m, nn
    cdef double *P = md.params
    cdef double *L = md.L
    if md.kind == 0:
        s = P[0]; r = P[1]; b = P[2]
        f[0] = s * (x1 - x0)
        f[1] = r * x0 - x1 - x0 * x2
        f[2] = x0 * x1 - b * x2
    else:
        for i in range(3):
            f[i] = P[3 * i] * x0 + P[3 * i + 1] * x1 + P[3 * i + 2] * x2 + P[9 + i]
    if md.block == 0:
        return
    if md.block == 1:
        if md.kind == 0:
            L[0] = -s; L[1] = s; L[2] = 0.0
            L[3] = r - x2; L[4] = -1.0; L[5] = -x0
            L[6] = x1; L[7] = x0; L[8] = -b
        else:
            for i in range(9):
                L[i] = P[i]
    else:
        nn = n * n
        if md.C0 != NULL:
            for i in range(nn):
                L[i] = md.C0[i]
        else:
            for i in range(nn):
                L[i] = 0.0
        for k in range(md.K):
            ph = md.W[3 * k] * x0 + md.W[3 * k + 1] * x1 + md.W[3 * k + 2] * x2
            c = cos(ph)
            sn = sin(ph)
            for i in range(nn):
                L[i] += md.Cc[k * nn + i] * c + md.Cs[k * nn + i] * sn
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for q in range(n):
                acc += L[i * n + q] * y[3 + q * m + j]
            f[3 + i * m + j] = acc


cdef void dp_step(Model *md, Stepper *st, double h, double *ynew, double *fnew, double *err) noexcept nogil:
    cdef int i, N = md.N
    cdef double *y = st.y
    cdef double *k1 = st.f
    cdef double *tmp = st.tmp
    for i in range(N):
        tmp[i] = y[i] + h * A21 * k1[i]
    rhs(md, tmp, st.k2)
    for i in range(N):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * st.k2[i])
    rhs(md, tmp, st.k3)
    for i in range(N):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * st.k2[i] + A43 * st.k3[i])
    rhs(md, tmp, st.k4)
    for i in range(N):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * st.k2[i] + A53 * st.k3[i] + A54 * st.k4[i])
    rhs(md, tmp, st.k5)
    for i in range(N):
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * st.k2[i] + A63 * st.k3[i] + A64 * st.k4[i]
                             + A65 * st.k5[i])
    rhs(md, tmp, st.k6)
    for i in range(N):
        ynew[i] = y[i] + h * (A71 * k1[i] + A73 * st.k3[i] + A74 * st.k4[i] + A75 * st.k5[i]
                              + A76 * st.k6[i])
    rhs(md, ynew, fnew)
    if err != NULL:
        for i in range(N):
            err[i] = h * (E1 * k1[i] + E3 * st.k3[i] + E4 * st.k4[i] + E5 * st.k5[i]
                          + E6 * st.k6[i] + E7 * fnew[i])


cdef void rk4_step(Model *md, Stepper *st, double h, double *ynew, double *fnew) noexcept nogil:
    cdef int i, N = md.N
    cdef double *y = st.y
    cdef double *f = st.f
    cdef double *tmp = st.tmp
    for i in range(N):
        tmp[i] = y[i] + 0.5 * h * f[i]
    rhs(md, tmp, st.k2)
    for i in range(N):
        tmp[i] = y[i] + 0.5 * h * st.k2[i]
    rhs(md, tmp, st.k3)
    for i in range(N):
        tmp[i] = y[i] + h * st.k3[i]
    rhs(md, tmp, st.k4)
    for i in range(N):
        ynew[i] = y[i] + (h / 6.0) * (f[i] + 2 * st.k2[i] + 2 * st.k3[i] + st.k4[i])
    rhs(md, ynew, fnew)


cdef double initial_step(Model *md, Stepper *st) noexcept nogil:
    cdef int i, N = md.N
    cdef double sc, d0 = 0, d1 = 0, d2 = 0, h0, h1
    for i in range(N):
        sc = st.atol + st.rtol * fabs(st.y[i])
        d0 += (st.y[i] / sc) ** 2
        d1 += (st.f[i] / sc) ** 2
    d0 = sqrt(d0 / N)
    d1 = sqrt(d1 / N)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    for i in range(N):
        st.tmp[i] = st.y[i] + h0 * st.f[i]
    rhs(md, st.tmp, st.k2)
    for i in range(N):
        sc = st.atol + st.rtol * fabs(st.y[i])
        d2 += ((st.k2[i] - st.f[i]) / sc) ** 2
    d2 = sqrt(d2 / N) / h0
    if fmax(d1, d2) <= 1e-15:
        h1 = fmax(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / fmax(d1, d2)) ** 0.2
    return fmin(fmin(100 * h0, h1), st.max_step)


cdef int stepper_init(Model *md, Stepper *st, object y0, object opts) except -1:
    cdef int N = md.N, i
    rtol, atol, max_step, h0, method, max_norm = opts
    st.rtol = rtol
    st.atol = atol
    st.max_step = max_step
    st.method = method
    st.max_norm = max_norm
    cdef double *buf = <double *> malloc(13 * N * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    st.buf = buf
    st.y = buf
    st.f = buf + N
    st.y_prev = buf + 2 * N
    st.f_prev = buf + 3 * N
    st.ynew = buf + 4 * N
    st.fnew = buf + 5 * N
    st.k2 = buf + 6 * N
    st.k3 = buf + 7 * N
    st.k4 = buf + 8 * N
    st.k5 = buf + 9 * N
    st.k6 = buf + 10 * N
    st.tmp = buf + 11 * N
    st.err = buf + 12 * N
    cdef cnp.ndarray[double, ndim=1] ya = np.ascontiguousarray(y0, dtype=np.float64)
    if ya.shape[0] != N:
        free(buf)
        raise ValueError("state length %d does not match model (%d)" % (ya.shape[0], N))
    for i in range(N):
        st.y[i] = ya[i]
    rhs(md, st.y, st.f)
    if st.method == 1:
        st.h = st.max_step
    elif h0 > 0:
        st.h = fmin(h0, st.max_step)
    else:
        st.h = initial_step(md, st)
    st.t = 0.0
    st.h_prev = 0.0
    st.nsteps = 0
    return 0


cdef void stepper_free(Stepper *st) noexcept nogil:
    free(st.buf)


cdef inline void swap(double **a, double **b) noexcept nogil:
    cdef double *t = a[0]
    a[0] = b[0]
    b[0] = t


cdef int stepper_step(Model *md, Stepper *st, double t_stop) noexcept nogil:
    cdef int i, N = md.N, clamped
    cdef double remaining, h, err, sc, fac, hn, e
    while True:
        remaining = t_stop - st.t
        h = fmin(st.h, remaining)
        clamped = h < st.h
        if st.method == 1:
            rk4_step(md, st, h, st.ynew, st.fnew)
            err = 0.0
        else:
            if h < 1e-14 * fmax(1.0, fabs(st.t)) and not clamped:
                return STEP_FAILURE
            dp_step(md, st, h, st.ynew, st.fnew, st.err)
            err = 0.0
            for i in range(N):
                sc = st.atol + st.rtol * fmax(fabs(st.y[i]), fabs(st.ynew[i]))
                e = st.err[i] / sc
                err += e * e
            err = sqrt(err / N)
            if not isfinite(err):
                return NONFINITE
            if err > 1.0:
                st.h = h * fmax(0.2, 0.9 * err ** -0.2)
                continue
        if clamped or h == remaining:
            st.t = t_stop
        else:
            st.t = st.t + h
        st.h_prev = h
        swap(&st.y_prev, &st.y)
        swap(&st.f_prev, &st.f)
        swap(&st.y, &st.ynew)
        swap(&st.f, &st.fnew)
        st.nsteps += 1
        if st.method == 0:
            if err == 0.0:
                fac = 10.0
            else:
                fac = fmin(10.0, fmax(0.2, 0.9 * err ** -0.2))
            hn = fmin(h * fac, st.max_step)
            if clamped:
                st.h = fmax(hn, st.h)
            else:
                st.h = hn
        if fabs(st.y[0]) + fabs(st.y[1]) + fabs(st.y[2]) > st.max_norm:
            return DIVERGENCE
        for i in range(N):
            if not isfinite(st.y[i]):
                return NONFINITE
        return OK


cdef object state_array(double *y, int N):
    cdef cnp.ndarray[double, ndim=1] out = np.empty(N)
    memcpy(<double *> out.data, y, N * sizeof(double))
    return out


def integrate(model, y0, double t_end, opts, bint record):
    cdef Model md
    cdef Stepper st
    keep = []
    model_from_tuple(model, &md, keep)
    stepper_init(&md, &st, y0, opts)
    cdef int N = md.N, status = OK
    cdef long cap = 1024, cnt = 0
    cdef double *rt = NULL
    cdef double *ry = NULL
    cdef double *rf = NULL
    if record:
        rt = <double *> malloc(cap * sizeof(double))
        ry = <double *> malloc(cap * N * sizeof(double))
        rf = <double *> malloc(cap * N * sizeof(double))
        rt[0] = 0.0
        memcpy(ry, st.y, N * sizeof(double))
        memcpy(rf, st.f, N * sizeof(double))
        cnt = 1
    with nogil:
        while st.t < t_end:
            status = stepper_step(&md, &st, t_end)
            if record:
                if cnt == cap:
                    cap *= 2
                    rt = <double *> realloc(rt, cap * sizeof(double))
                    ry = <double *> realloc(ry, cap * N * sizeof(double))
                    rf = <double *> realloc(rf, cap * N * sizeof(double))
                rt[cnt] = st.t
                memcpy(ry + cnt * N, st.y, N * sizeof(double))
                memcpy(rf + cnt * N, st.f, N * sizeof(double))
                cnt += 1
            if status != OK:
                break
    y = state_array(st.y, N)
    h = st.h
    nsteps = st.nsteps
    ts = ys = fs = None
    if record:
        ts = np.empty(cnt)
        ys = np.empty((cnt, N))
        fs = np.empty((cnt, N))
        memcpy(<double *> cnp.PyArray_DATA(ts), rt, cnt * sizeof(double))
        memcpy(<double *> cnp.PyArray_DATA(ys), ry, cnt * N * sizeof(double))
        memcpy(<double *> cnp.PyArray_DATA(fs), rf, cnt * N * sizeof(double))
        free(rt)
        free(ry)
        free(rf)
    stepper_free(&st)
    return status, y, h, nsteps, ts, ys, fs


cdef void single_step(Model *md, Stepper *st, double *y0, double *f0, double dt,
                      double *out) noexcept nogil:
    # borrows st buffers: y/f swapped in temporarily
    cdef double *sy = st.y
    cdef double *sf = st.f
    cdef double *fscratch = st.err
    if dt == 0.0:
        memcpy(out, y0, md.N * sizeof(double))
        return
    st.y = y0
    st.f = f0
    if st.method == 0:
        dp_step(md, st, dt, out, fscratch, NULL)
    else:
        rk4_step(md, st, dt, out, fscratch)
    st.y = sy
    st.f = sf


cdef int gram_schmidt(double *B, int n, int m, double *Q, double *R) noexcept nogil:
    cdef int i, j, q, p
    cdef double c, nrm
    for i in range(n * m):
        Q[i] = B[i]
    for i in range(m * m):
        R[i] = 0.0
    for j in range(m):
        for p in range(2):
            for i in range(j):
                c = 0.0
                for q in range(n):
                    c += Q[q * m + i] * Q[q * m + j]
                R[i * m + j] += c
                for q in range(n):
                    Q[q * m + j] -= c * Q[q * m + i]
        nrm = 0.0
        for q in range(n):
            nrm += Q[q * m + j] * Q[q * m + j]
        nrm = sqrt(nrm)
        R[j * m + j] = nrm
        if nrm == 0.0:
            return -1
        for q in range(n):
            Q[q * m + j] /= nrm
    return 0


cdef void right_solve_upper(double *B, int n, int m, double *R) noexcept nogil:
    # B <- B R^{-1}, R upper triangular (m x m)
    cdef int i, j, k
    cdef double acc
    for i in range(n):
        for j in range(m):
            acc = B[i * m + j]
            for k in range(j):
                acc -= B[i * m + k] * R[k * m + j]
            B[i * m + j] = acc / R[j * m + j]


cdef inline double hermite_g(double *y0, double *f0, double *y1, double *f1, double h,
                             double th, double *nrm, double off) noexcept nogil:
    cdef double th2 = th * th, th3 = th * th * th
    cdef double h00 = 2 * th3 - 3 * th2 + 1, h10 = th3 - 2 * th2 + th
    cdef double h01 = -2 * th3 + 3 * th2, h11 = th3 - th2
    cdef double g = -off
    cdef int i
    for i in range(3):
        g += nrm[i] * (h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i])
    return g


def integrate_events(model, y0, double t_max, pbase, normal, int direction, double tau_min,
                     int n_events, opts, bint renorm):
    cdef Model md
    cdef Stepper st
    keep = []
    model_from_tuple(model, &md, keep)
    stepper_init(&md, &st, y0, opts)
    cdef int N = md.N, n = md.n, m = md.m, status = OK, i, it, hit, cnt = 0
    cdef double nrm[3]
    cdef double off = 0.0
    for i in range(3):
        nrm[i] = normal[i]
        off += float(pbase[i]) * nrm[i]
    cdef cnp.ndarray[double, ndim=1] tsa = np.zeros(n_events)
    cdef cnp.ndarray[double, ndim=2] ysa = np.zeros((n_events, N))
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] gra = np.zeros(n_events, dtype=np.uint8)
    cdef cnp.ndarray[double, ndim=3] Rsa = np.zeros((n_events if renorm and md.block else 0, m, m))
    cdef double *ystar = <double *> malloc(N * sizeof(double))
    cdef double *fstar = <double *> malloc(N * sizeof(double))
    cdef double *Q = <double *> malloc((n * m + 1) * sizeof(double))
    cdef double *R = <double *> malloc((m * m + 1) * sizeof(double))
    cdef double last = 0.0, g_prev, g_new, t0, h, lo, hi, glo, mid, gm, dt, gdot, gs, tstar
    g_prev = -off
    for i in range(3):
        g_prev += st.y[i] * nrm[i]
    with nogil:
        while cnt < n_events:
            if st.t >= t_max:
                status = TIMEOUT
                break
            status = stepper_step(&md, &st, t_max)
            if status != OK:
                break
            g_new = -off
            for i in range(3):
                g_new += st.y[i] * nrm[i]
            if direction < 0:
                hit = g_prev > 0.0 and g_new <= 0.0
            else:
                hit = g_prev < 0.0 and g_new >= 0.0
            g_prev = g_new
            if not hit:
                continue
            h = st.h_prev
            t0 = st.t - h
            lo = 0.0
            hi = 1.0
            glo = -off
            for i in range(3):
                glo += st.y_prev[i] * nrm[i]
            for it in range(200):
                if (hi - lo) * h < 1e-13:
                    break
                mid = 0.5 * (lo + hi)
                gm = hermite_g(st.y_prev, st.f_prev, st.y, st.f, h, mid, nrm, off)
                if (gm > 0.0) == (glo > 0.0) and gm != 0.0:
                    lo = mid
                    glo = gm
                else:
                    hi = mid
            dt = 0.5 * (lo + hi) * h
            single_step(&md, &st, st.y_prev, st.f_prev, dt, ystar)
            gdot = 0.0
            for it in range(6):
                rhs(&md, ystar, fstar)
                gdot = 0.0
                gs = -off
                for i in range(3):
                    gdot += fstar[i] * nrm[i]
                    gs += ystar[i] * nrm[i]
                if gdot == 0.0 or fabs(gs) <= 1e-14 * (1.0 + fabs(off)):
                    break
                dt -= gs / gdot
                single_step(&md, &st, st.y_prev, st.f_prev, dt, ystar)
            tstar = t0 + dt
            if tstar - last < tau_min:
                continue
            tsa[cnt] = tstar
            for i in range(N):
                ysa[cnt, i] = ystar[i]
            gra[cnt] = fabs(gdot) < 1e-12
            last = tstar
            if renorm and md.block:
                gram_schmidt(ystar + 3, n, m, Q, R)
                for i in range(m * m):
                    Rsa[cnt, i // m, i % m] = R[i]
                right_solve_upper(st.y + 3, n, m, R)
                right_solve_upper(st.f + 3, n, m, R)
            cnt += 1
    free(ystar)
    free(fstar)
    free(Q)
    free(R)
    y_end = state_array(st.y, N)
    t_end = st.t
    h_next = st.h
    stepper_free(&st)
    Rs = Rsa[:cnt] if renorm and md.block else np.zeros((0, m, m))
    return status, tsa[:cnt].copy(), ysa[:cnt].copy(), gra[:cnt].astype(bool), np.array(Rs), y_end, t_end, h_next


def lyapunov_flow(model, y0, double dt, int n_intervals, opts):
    cdef Model md
    cdef Stepper st
    keep = []
    model_from_tuple(model, &md, keep)
    stepper_init(&md, &st, y0, opts)
    cdef int N = md.N, n = md.n, m = md.m, status = OK, i, j, done = 0
    cdef cnp.ndarray[double, ndim=2] logs = np.zeros((n_intervals, m))
    cdef double *Q = <double *> malloc((n * m + 1) * sizeof(double))
    cdef double *R = <double *> malloc((m * m + 1) * sizeof(double))
    with nogil:
        for i in range(n_intervals):
            st.t = 0.0
            while st.t < dt:
                status = stepper_step(&md, &st, dt)
                if status != OK:
                    break
            if status != OK:
                break
            gram_schmidt(st.y + 3, n, m, Q, R)
            for j in range(m):
                logs[i, j] = log(R[j * m + j])
            for j in range(n * m):
                st.y[3 + j] = Q[j]
            rhs(&md, st.y, st.f)
            done = i + 1
    free(Q)
    free(R)
    y_end = state_array(st.y, N)
    h_next = st.h
    stepper_free(&st)
    return status, logs, y_end, h_next, done


def qr(B):
    """Modified Gram-Schmidt QR with positive diagonal (shared by both kernels)."""
    cdef cnp.ndarray[double, ndim=2] Ba = np.ascontiguousarray(B, dtype=np.float64)
    cdef int n = Ba.shape[0], m = Ba.shape[1]
    cdef cnp.ndarray[double, ndim=2] Qa = np.empty((n, m))
    cdef cnp.ndarray[double, ndim=2] Ra = np.empty((m, m))
    gram_schmidt(<double *> Ba.data, n, m, <double *> Qa.data, <double *> Ra.data)
    return Qa, Ra
