"""Pure-Python integration kernels.

Reference implementation of the hot loops; :mod:`cocyclelab._kernel` is a
Cython transcription of this file with identical signatures and status codes.
Both operate on an extended state ``y = [p (3), vec(B) (n*m)]`` where ``p``
follows the vector field and the block ``B`` solves ``B' = L(p) B`` with
``L`` either the field Jacobian (block kind 1) or a trigonometric matrix
generator (block kind 2).

``model`` is the tuple ``(kind, params, block, n, m, C0, W, Cc, Cs)``:

kind
    0 for Lorenz (``params = sigma, r, b``), 1 for an affine field
    ``A p + c`` (``params`` = ``A`` row-major followed by ``c``).
block
    0 none, 1 tangent (``n == 3``), 2 generator field.
C0, W, Cc, Cs
    generator coefficients: ``G(p) = C0 + sum_k Cc[k] cos(W[k].p) +
    Cs[k] sin(W[k].p)``.

``opts`` is ``(rtol, atol, max_step, h0, method, max_norm)`` with method 0
for Dormand-Prince 5(4) and 1 for fixed-step RK4 (step ``max_step``).
"""

import math

import numpy as np

OK, STEP_FAILURE, DIVERGENCE, TIMEOUT, NONFINITE = 0, 1, 2, 3, 4

_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


def rhs(model, y):
    kind, params, block, n, m, C0, W, Cc, Cs = model
    x0, x1, x2 = y[0], y[1], y[2]
    f = np.empty_like(y)
    if kind == 0:
        s, r, b = params[0], params[1], params[2]
        f[0] = s * (x1 - x0)
        f[1] = r * x0 - x1 - x0 * x2
        f[2] = x0 * x1 - b * x2
    else:
        A = params[:9].reshape(3, 3)
        f[:3] = A @ y[:3] + params[9:12]
    if block:
        if block == 1:
            if kind == 0:
                L = np.array([[-s, s, 0.0], [r - x2, -1.0, -x0], [x1, x0, -b]])
            else:
                L = A
        else:
            ph = W @ y[:3]
            L = C0 + np.tensordot(np.cos(ph), Cc, 1) + np.tensordot(np.sin(ph), Cs, 1)
        f[3:] = (L @ y[3:].reshape(n, m)).ravel()
    return f


def _dp_step(model, y, f, h):
    k = [f]
    for i in range(1, 7):
        yi = y.copy()
        for j, a in enumerate(_A[i]):
            if a:
                yi += (h * a) * k[j]
        if i == 6:
            ynew = yi
        k.append(rhs(model, yi))
    err = np.zeros_like(y)
    for j, e in enumerate(_E):
        if e:
            err += e * k[j]
    return ynew, k[6], h * err


def _rk4_step(model, y, f, h):
    k2 = rhs(model, y + 0.5 * h * f)
    k3 = rhs(model, y + 0.5 * h * k2)
    k4 = rhs(model, y + h * k3)
    ynew = y + (h / 6.0) * (f + 2 * k2 + 2 * k3 + k4)
    return ynew, rhs(model, ynew)


def _single_step(model, y, f, h, method):
    if h == 0.0:
        return y.copy()
    if method == 0:
        return _dp_step(model, y, f, h)[0]
    return _rk4_step(model, y, f, h)[0]


def _initial_step(model, y, f, rtol, atol, max_step):
    sc = atol + rtol * np.abs(y)
    d0 = math.sqrt(np.mean((y / sc) ** 2))
    d1 = math.sqrt(np.mean((f / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y + h0 * f
    f1 = rhs(model, y1)
    d2 = math.sqrt(np.mean(((f1 - f) / sc) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step)


class _Stepper:
    """Accept/reject loop shared by all drivers."""

    def __init__(self, model, y0, opts):
        self.model = model
        self.rtol, self.atol, self.max_step, h0, self.method, self.max_norm = opts
        self.y = np.array(y0, dtype=float)
        self.f = rhs(model, self.y)
        if self.method == 1:
            self.h = self.max_step
        elif h0 > 0:
            self.h = min(h0, self.max_step)
        else:
            self.h = _initial_step(model, self.y, self.f, self.rtol, self.atol, self.max_step)
        self.t = 0.0
        self.nsteps = 0

    def step(self, t_stop):
        """Advance one accepted step without passing ``t_stop``; return status."""
        while True:
            remaining = t_stop - self.t
            h = min(self.h, remaining)
            clamped = h < self.h
            if self.method == 1:
                ynew, fnew = _rk4_step(self.model, self.y, self.f, h)
                err = 0.0
            else:
                if h < 1e-14 * max(1.0, abs(self.t)) and not clamped:
                    return STEP_FAILURE
                ynew, fnew, e = _dp_step(self.model, self.y, self.f, h)
                sc = self.atol + self.rtol * np.maximum(np.abs(self.y), np.abs(ynew))
                err = math.sqrt(np.mean((e / sc) ** 2))
                if not math.isfinite(err):
                    return NONFINITE
                if err > 1.0:
                    self.h = h * max(0.2, 0.9 * err ** -0.2)
                    continue
            self.t = t_stop if clamped or h == remaining else self.t + h
            self.y_prev, self.f_prev, self.h_prev = self.y, self.f, h
            self.y, self.f = ynew, fnew
            self.nsteps += 1
            if self.method == 0:
                fac = 10.0 if err == 0.0 else min(10.0, max(0.2, 0.9 * err ** -0.2))
                hn = min(h * fac, self.max_step)
                self.h = max(hn, self.h) if clamped else hn
            if abs(self.y[0]) + abs(self.y[1]) + abs(self.y[2]) > self.max_norm:
                return DIVERGENCE
            if not np.all(np.isfinite(self.y)):
                return NONFINITE
            return OK


def integrate(model, y0, t_end, opts, record):
    """Integrate the extended state over ``[0, t_end]``.

    Returns ``(status, y, h_next, nsteps, ts, ys, fs)``; the last three are
    ``None`` unless ``record``.
    """
    st = _Stepper(model, y0, opts)
    ts, ys, fs = ([0.0], [st.y], [st.f]) if record else (None, None, None)
    status = OK
    while st.t < t_end:
        status = st.step(t_end)
        if record:
            ts.append(st.t)
            ys.append(st.y)
            fs.append(st.f)
        if status != OK:
            break
    if record:
        ts, ys, fs = np.array(ts), np.array(ys), np.array(fs)
    return status, st.y, st.h, st.nsteps, ts, ys, fs


def _gram_schmidt(B):
    n, m = B.shape
    Q = B.copy()
    R = np.zeros((m, m))
    for j in range(m):
        v = Q[:, j]
        for i in range(j):
            R[i, j] = Q[:, i] @ v
            v = v - R[i, j] * Q[:, i]
        # second pass keeps orthogonality at strongly contracted columns
        for i in range(j):
            c = Q[:, i] @ v
            R[i, j] += c
            v = v - c * Q[:, i]
        R[j, j] = math.sqrt(v @ v)
        Q[:, j] = v / R[j, j]
    return Q, R


def qr(B):
    """Modified Gram-Schmidt QR with positive diagonal (shared by both kernels)."""
    return _gram_schmidt(np.asarray(B, dtype=float))


def _hermite_base(y0, f0, y1, f1, h, th):
    th2, th3 = th * th, th * th * th
    h00 = 2 * th3 - 3 * th2 + 1
    h10 = th3 - 2 * th2 + th
    h01 = -2 * th3 + 3 * th2
    h11 = th3 - th2
    return h00 * y0[:3] + h10 * h * f0[:3] + h01 * y1[:3] + h11 * h * f1[:3]


def integrate_events(model, y0, t_max, pbase, normal, direction, tau_min, n_events,
                     opts, renorm):
    """Integrate until ``n_events`` plane crossings in ``direction``.

    Crossings closer than ``tau_min`` to the previous event (or the start) are
    skipped.  Each event is bracketed on the cubic Hermite interpolant, then
    refined by a direct step from the bracketing step start plus Newton
    corrections, so the recorded state lies on the plane to rounding.  The
    main integration is never restarted.  With ``renorm`` the block is
    QR-renormalized at every event (the recorded state is pre-renormalization).

    Returns ``(status, ts, ys, grazing, Rs, y_end, t_end, h_next)``.
    """
    kind, params, block, n, m = model[:5]
    pbase = np.asarray(pbase, float)
    normal = np.asarray(normal, float)
    offset = pbase @ normal
    st = _Stepper(model, y0, opts)
    ts, ys, graz, Rs = [], [], [], []
    last = 0.0
    g_prev = st.y[:3] @ normal - offset
    status = OK
    while len(ts) < n_events:
        if st.t >= t_max:
            status = TIMEOUT
            break
        status = st.step(t_max)
        if status != OK:
            break
        g_new = st.y[:3] @ normal - offset
        hit = (g_prev > 0.0 >= g_new) if direction < 0 else (g_prev < 0.0 <= g_new)
        g_prev = g_new
        if not hit:
            continue
        t0, h = st.t - st.h_prev, st.h_prev
        y0s, f0s = st.y_prev, st.f_prev
        lo, hi = 0.0, 1.0
        glo = y0s[:3] @ normal - offset
        for _ in range(200):
            if (hi - lo) * h < 1e-13:
                break
            mid = 0.5 * (lo + hi)
            gm = _hermite_base(y0s, f0s, st.y, st.f, h, mid) @ normal - offset
            if (gm > 0.0) == (glo > 0.0) and gm != 0.0:
                lo, glo = mid, gm
            else:
                hi = mid
        dt = 0.5 * (lo + hi) * h
        ystar = _single_step(model, y0s, f0s, dt, st.method)
        gdot = 0.0
        for _ in range(6):
            fstar = rhs(model, ystar)
            gdot = fstar[:3] @ normal
            gs = ystar[:3] @ normal - offset
            if gdot == 0.0 or abs(gs) <= 1e-14 * (1.0 + abs(offset)):
                break
            dt -= gs / gdot
            ystar = _single_step(model, y0s, f0s, dt, st.method)
        tstar = t0 + dt
        if tstar - last < tau_min:
            continue
        ts.append(tstar)
        ys.append(ystar)
        graz.append(abs(gdot) < 1e-12)
        last = tstar
        if renorm and block:
            B = ystar[3:].reshape(n, m)
            _, R = _gram_schmidt(B)
            Rinv = np.linalg.inv(R)
            Rs.append(R)
            st.y = st.y.copy()
            st.f = st.f.copy()
            st.y[3:] = (st.y[3:].reshape(n, m) @ Rinv).ravel()
            st.f[3:] = (st.f[3:].reshape(n, m) @ Rinv).ravel()
    N = len(y0)
    ts = np.array(ts)
    ys = np.array(ys).reshape(len(ts), N)
    graz = np.array(graz, dtype=bool)
    Rs = np.array(Rs).reshape(len(Rs), m, m) if Rs else np.zeros((0, m, m))
    return status, ts, ys, graz, Rs, st.y, st.t, st.h


def lyapunov_flow(model, y0, dt, n_intervals, opts):
    """Evolve base plus frame, QR-renormalizing every ``dt``.

    Returns ``(status, logs, y_end, h_next, completed)`` where ``logs[i]`` holds
    ``log R_jj`` of interval ``i``.
    """
    n, m = model[3], model[4]
    logs = np.zeros((n_intervals, m))
    y = np.array(y0, dtype=float)
    h = opts[3]
    for i in range(n_intervals):
        o = (opts[0], opts[1], opts[2], h, opts[4], opts[5])
        status, y, h, _, _, _, _ = integrate(model, y, dt, o, False)
        if status != OK:
            return status, logs, y, h, i
        Q, R = _gram_schmidt(y[3:].reshape(n, m))
        logs[i] = np.log(np.diag(R))
        y = y.copy()
        y[3:] = Q.ravel()
    return OK, logs, y, h, n_intervals
