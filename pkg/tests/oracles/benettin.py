"""Independent Lorenz spectrum: fixed-step RK4 on state + tangent vectors,
Gram-Schmidt every ``k`` steps (classic Benettin scheme, numba-compiled).

Shares no code with the package.  ``python benettin.py`` prints the values
frozen in ``frozen.json``.
"""

import json
import sys

import numpy as np
from numba import njit


@njit(cache=True)
def _rhs(y, out, s, r, b):
    x, yy, z = y[0], y[1], y[2]
    out[0] = s * (yy - x)
    out[1] = r * x - yy - x * z
    out[2] = x * yy - b * z
    for j in range(3):
        u0, u1, u2 = y[3 + j], y[6 + j], y[9 + j]
        out[3 + j] = s * (u1 - u0)
        out[6 + j] = (r - z) * u0 - u1 - x * u2
        out[9 + j] = yy * u0 + x * u1 - b * u2


@njit(cache=True)
def spectrum(x0, T, dt, k, transient, s=10.0, r=28.0, b=8.0 / 3.0):
    y = np.zeros(12)
    y[:3] = x0
    for j in range(3):
        y[3 + 4 * j] = 1.0
    k1 = np.empty(12); k2 = np.empty(12); k3 = np.empty(12); k4 = np.empty(12)
    tmp = np.empty(12)
    sums = np.zeros(3)
    n = int(round(T / dt))
    n0 = int(round(transient / dt))
    for i in range(n0 + n):
        _rhs(y, k1, s, r, b)
        for m in range(12):
            tmp[m] = y[m] + 0.5 * dt * k1[m]
        _rhs(tmp, k2, s, r, b)
        for m in range(12):
            tmp[m] = y[m] + 0.5 * dt * k2[m]
        _rhs(tmp, k3, s, r, b)
        for m in range(12):
            tmp[m] = y[m] + dt * k3[m]
        _rhs(tmp, k4, s, r, b)
        for m in range(12):
            y[m] += dt / 6.0 * (k1[m] + 2 * k2[m] + 2 * k3[m] + k4[m])
        if (i + 1) % k == 0:
            # modified Gram-Schmidt on the columns of the 3x3 block
            for j in range(3):
                for q in range(j):
                    d = 0.0
                    for m in range(3):
                        d += y[3 + 3 * m + j] * y[3 + 3 * m + q]
                    for m in range(3):
                        y[3 + 3 * m + j] -= d * y[3 + 3 * m + q]
                nrm = 0.0
                for m in range(3):
                    nrm += y[3 + 3 * m + j] ** 2
                nrm = np.sqrt(nrm)
                for m in range(3):
                    y[3 + 3 * m + j] /= nrm
                if i >= n0:
                    sums[j] += np.log(nrm)
    return sums / (n * dt)


if __name__ == "__main__":
    T = float(sys.argv[1]) if len(sys.argv) > 1 else 1e5
    lam = spectrum(np.array([1.0, 1.0, 20.0]), T, 0.002, 25, 100.0)
    print(json.dumps({"T": T, "dt": 0.002, "exponents": lam.tolist(), "sum": float(lam.sum())}))
