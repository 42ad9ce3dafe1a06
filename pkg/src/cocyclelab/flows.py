"""Vector fields, flow integration and tangent (variational) dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ComplexSpectrum, Divergence, NumericalFailure, StepFailure

LORENZ = "lorenz"
LINEAR_SINGULARITY = "linear_singularity"
AFFINE = "affine"

_EMPTY_GEN = (np.zeros((0, 0)), np.zeros((0, 3)), np.zeros((0, 0, 0)), np.zeros((0, 0, 0)))


@dataclass(frozen=True)
class VectorFieldSpec:
    """A parametrized vector field on R^3.

    ``lorenz`` uses ``(sigma (y-x), r x - y - x z, x y - b z)``.  The
    ``linear_singularity`` kind is the linear part of the normal form at a
    hyperbolic equilibrium, ``(alpha_ss x, alpha_u y, alpha_s z)``.  ``affine``
    (``A p + c``) exists for synthetic checks such as flow boxes.
    """

    kind: str = LORENZ
    sigma: float = 10.0
    r: float = 28.0
    b: float = 8.0 / 3.0
    alpha_ss: float = -3.0
    alpha_s: float = -1.0
    alpha_u: float = 2.0
    matrix: tuple = ()
    offset: tuple = ()

    def __post_init__(self):
        if self.kind not in (LORENZ, LINEAR_SINGULARITY, AFFINE):
            raise ValueError(f"unknown vector field kind {self.kind!r}")
        if self.kind == LINEAR_SINGULARITY:
            if not (self.alpha_ss < 0 and self.alpha_s < 0 and self.alpha_u > 0):
                raise ValueError("linear singularity needs alpha_ss < 0, alpha_s < 0 < alpha_u")
        if self.kind == AFFINE:
            A = np.asarray(self.matrix, dtype=float)
            c = np.asarray(self.offset if len(self.offset) else (0.0, 0.0, 0.0), dtype=float)
            if A.shape != (3, 3) or c.shape != (3,):
                raise ValueError("affine field needs a 3x3 matrix and a 3-vector offset")
            object.__setattr__(self, "matrix", tuple(map(tuple, A.tolist())))
            object.__setattr__(self, "offset", tuple(c.tolist()))

    @classmethod
    def lorenz(cls, sigma=10.0, r=28.0, b=8.0 / 3.0):
        return cls(LORENZ, sigma=sigma, r=r, b=b)

    @classmethod
    def linear_singularity(cls, alpha_ss, alpha_s, alpha_u):
        return cls(LINEAR_SINGULARITY, alpha_ss=alpha_ss, alpha_s=alpha_s, alpha_u=alpha_u)

    @classmethod
    def affine(cls, matrix, offset=(0.0, 0.0, 0.0)):
        return cls(AFFINE, matrix=matrix, offset=offset)

    @property
    def linear_part(self):
        """Matrix of the linear (or affine) field; ``None`` for Lorenz."""
        if self.kind == LINEAR_SINGULARITY:
            return np.diag([self.alpha_ss, self.alpha_u, self.alpha_s])
        if self.kind == AFFINE:
            return np.array(self.matrix, dtype=float)
        return None

    @property
    def divergence(self):
        """Constant divergence of the field (all supported kinds have one)."""
        if self.kind == LORENZ:
            return -(self.sigma + 1.0 + self.b)
        return float(np.trace(self.linear_part))

    def kernel_params(self):
        if self.kind == LORENZ:
            return 0, np.array([self.sigma, self.r, self.b], dtype=float)
        c = np.zeros(3) if self.kind == LINEAR_SINGULARITY else np.array(self.offset)
        return 1, np.concatenate([self.linear_part.ravel(), c])

    def to_dict(self):
        if self.kind == LORENZ:
            # the z-equation form is echoed so every output records which system ran
            return {"kind": LORENZ, "sigma": self.sigma, "r": self.r, "b": self.b,
                    "z_equation": "xy - b*z"}
        if self.kind == LINEAR_SINGULARITY:
            return {"kind": LINEAR_SINGULARITY, "alpha_ss": self.alpha_ss,
                    "alpha_s": self.alpha_s, "alpha_u": self.alpha_u}
        return {"kind": AFFINE, "matrix": [list(r) for r in self.matrix],
                "offset": list(self.offset)}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", LORENZ)
        d.pop("z_equation", None)
        return cls(kind, **d)


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "dopri5"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float = 0.1
    max_time: float = 1e6
    max_norm: float = 1e6

    def __post_init__(self):
        if self.method not in ("dopri5", "rk4"):
            raise ValueError("method must be 'dopri5' or 'rk4'")
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.max_step > 0):
            raise ValueError("abs_tol, rel_tol and max_step must be positive")

    def opts(self, h0=0.0):
        return (self.rel_tol, self.abs_tol, self.max_step, float(h0),
                0 if self.method == "dopri5" else 1, self.max_norm)

    def to_dict(self):
        return {"method": self.method, "abs_tol": self.abs_tol, "rel_tol": self.rel_tol,
                "max_step": self.max_step, "max_time": self.max_time, "max_norm": self.max_norm}


DEFAULT_CONFIG = IntegratorConfig()


def kernel_model(spec, block=0, n=0, m=0, gen=_EMPTY_GEN):
    kind, params = spec.kernel_params()
    if block == 1:
        n = 3
    C0, W, Cc, Cs = gen
    return (kind, params, block, n, m, C0, W, Cc, Cs)


def check_status(status, what="integration"):
    if status == kernels.OK:
        return
    if status == kernels.STEP_FAILURE:
        raise StepFailure(f"{what}: step size underflow")
    if status == kernels.DIVERGENCE:
        raise Divergence(f"{what}: state norm exceeded bound")
    if status == kernels.NONFINITE:
        raise NumericalFailure(f"{what}: non-finite state")
    raise NumericalFailure(f"{what}: kernel status {status}")


def evaluate_field(spec, p):
    p = np.asarray(p, dtype=float)
    if spec.kind == LORENZ:
        x, y, z = p
        return np.array([spec.sigma * (y - x), spec.r * x - y - x * z, x * y - spec.b * z])
    _, params = spec.kernel_params()
    return params[:9].reshape(3, 3) @ p + params[9:]


def jacobian_field(spec, p):
    if spec.kind == LORENZ:
        x, y, z = np.asarray(p, dtype=float)
        s, b = spec.sigma, spec.b
        return np.array([[-s, s, 0.0], [spec.r - z, -1.0, -x], [y, x, -b]])
    return spec.linear_part.copy()


@dataclass
class Trajectory:
    """Accepted integrator steps with cubic Hermite dense output."""

    times: np.ndarray
    points: np.ndarray
    derivatives: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        self.derivatives = np.asarray(self.derivatives, dtype=float)

    def __len__(self):
        return len(self.times)

    @property
    def end(self):
        return self.points[-1]

    def __call__(self, t):
        """State at time(s) ``t`` from the Hermite interpolant."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        if np.any(t < self.times[0]) or np.any(t > self.times[-1]):
            raise ValueError("time outside trajectory span")
        i = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        h = self.times[i + 1] - self.times[i]
        th = ((t - self.times[i]) / h)[:, None]
        h = h[:, None]
        th2, th3 = th * th, th * th * th
        out = ((2 * th3 - 3 * th2 + 1) * self.points[i]
               + (th3 - 2 * th2 + th) * h * self.derivatives[i]
               + (-2 * th3 + 3 * th2) * self.points[i + 1]
               + (th3 - th2) * h * self.derivatives[i + 1])
        return out[0] if scalar else out

    def resample(self, dt):
        ts = np.arange(self.times[0], self.times[-1], dt)
        return ts, self(ts)


def integrate_flow(spec, x0, T, cfg=None):
    """Integrate ``x0`` over ``[0, T]`` and keep every accepted step."""
    cfg = cfg or DEFAULT_CONFIG
    x0 = np.asarray(x0, dtype=float)
    if not T > 0:
        raise ValueError("T must be positive")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    status, y, _, _, ts, ys, fs = kernels.backend.integrate(
        kernel_model(spec), x0, float(T), cfg.opts(), True)
    check_status(status, "integrate_flow")
    return Trajectory(ts, ys, fs)


def flow_map(spec, x0, t, cfg=None):
    """Endpoint ``X^t(x0)`` without recording the path."""
    cfg = cfg or DEFAULT_CONFIG
    status, y, *_ = kernels.backend.integrate(
        kernel_model(spec), np.asarray(x0, dtype=float), float(t), cfg.opts(), False)
    check_status(status, "flow_map")
    return y


class VariationalPath(NamedTuple):
    trajectory: Trajectory
    matrices: np.ndarray
    log_abs_det: np.ndarray


def integrate_variational(spec, x0, T, cfg=None, chunk=0.25):
    """Co-integrate the flow with ``M' = J(X^t x0) M``.

    The tangent block is restarted from the identity every ``chunk`` time
    units and the chunk propagators are multiplied, so ``matrices[i]`` is
    ``DX^{t_i}(x0)``.  ``log_abs_det`` accumulates ``log|det|`` chunk by
    chunk and stays accurate after ``DX^t`` itself has become numerically
    singular.
    """
    cfg = cfg or DEFAULT_CONFIG
    if not T > 0:
        raise ValueError("T must be positive")
    model = kernel_model(spec, block=1, m=3)
    p = np.asarray(x0, dtype=float)
    eye = np.eye(3).ravel()
    acc = np.eye(3)
    logdet = 0.0
    times, points, derivs, mats, lds = [0.0], [p], [evaluate_field(spec, p)], [np.eye(3)], [0.0]
    t0, h = 0.0, 0.0
    backend = kernels.backend
    while t0 < T - 1e-15 * max(1.0, T):
        dt = min(chunk, T - t0)
        status, y, h, _, ts, ys, fs = backend.integrate(
            model, np.concatenate([p, eye]), dt, cfg.opts(h), True)
        check_status(status, "integrate_variational")
        Ms = ys[1:, 3:].reshape(-1, 3, 3)
        for M, yy, ff, tt in zip(Ms, ys[1:], fs[1:], ts[1:]):
            mats.append(M @ acc)
            lds.append(logdet + math.log(abs(np.linalg.det(M))))
            times.append(t0 + tt)
            points.append(yy[:3])
            derivs.append(ff[:3])
        acc = mats[-1]
        logdet = lds[-1]
        p = y[:3]
        t0 += dt
        times[-1] = t0
    traj = Trajectory(np.array(times), np.array(points), np.array(derivs))
    return VariationalPath(traj, np.array(mats), np.array(lds))


def tangent_map(spec, x0, t, cfg=None, chunk=0.25):
    """``(X^t(x0), DX^t(x0))`` without keeping the path."""
    cfg = cfg or DEFAULT_CONFIG
    model = kernel_model(spec, block=1, m=3)
    p = np.asarray(x0, dtype=float)
    acc = np.eye(3)
    t0, h = 0.0, 0.0
    while t0 < t - 1e-15 * max(1.0, t):
        dt = min(chunk, t - t0)
        status, y, h, *_ = kernels.backend.integrate(
            model, np.concatenate([p, np.eye(3).ravel()]), dt, cfg.opts(h), False)
        check_status(status, "tangent_map")
        acc = y[3:].reshape(3, 3) @ acc
        p = y[:3]
        t0 += dt
    return p, acc


def singularity_eigen(spec, rtol=1e-12):
    """Eigenvalues of the Jacobian at the origin and the ordering check.

    Returns ``(eigs_ascending, ok)`` where ``ok`` tests
    ``alpha_ss < alpha_s < 0 < -alpha_s < alpha_u`` with the eigenvalues
    assigned in ascending order.
    """
    J = jacobian_field(spec, np.zeros(3))
    ev = np.linalg.eigvals(J)
    scale = max(1.0, float(np.max(np.abs(ev))))
    if np.any(np.abs(ev.imag) > rtol * scale):
        raise ComplexSpectrum(f"eigenvalues at the origin are not real: {ev}")
    a_ss, a_s, a_u = np.sort(ev.real)
    ok = bool(a_ss < a_s < 0 < -a_s < a_u)
    return np.array([a_ss, a_s, a_u]), ok
