"""Linear cocycles over the flow, generated by matrix fields along orbits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import SingularMatrix
from .flows import DEFAULT_CONFIG, check_status, kernel_model, tangent_map

DYNAMICAL = "dynamical"
GENERATOR = "generator"

# frequency vectors of the default trigonometric modes; phases w.p vary by a
# few radians across the Lorenz attractor
DEFAULT_FREQUENCIES = np.array([
    [0.15, 0.0, 0.0],
    [0.0, 0.12, 0.07],
    [0.09, -0.11, 0.05],
])

FORMAT_VERSION = "1"


def _traceless(C):
    d = C.shape[-1]
    tr = np.trace(C, axis1=-2, axis2=-1)
    return C - (tr / d)[..., None, None] * np.eye(d)


def _realify(C):
    """Real 2d x 2d representation of complex d x d matrices (works on stacks)."""
    X, Y = C.real, C.imag
    top = np.concatenate([X, -Y], axis=-1)
    bottom = np.concatenate([Y, X], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def _complexify(R, d):
    return R[..., :d, :d] + 1j * R[..., d:, :d]


class CocycleGenerator:
    """Matrix-valued field ``G(p) = C0 + sum_k Ccos_k cos(w_k.p) + Csin_k sin(w_k.p)``.

    The cocycle ``A^t(x)`` solves ``M' = G(X^s x) M`` with ``M(0) = I``.  The
    ``dynamical`` kind instead stands for the derivative cocycle ``DX^t``
    (``dim`` 3, real).  With ``traceless`` every coefficient is projected to
    zero trace, so ``det A^t = 1``.  Instances are immutable.
    """

    def __init__(self, dim=2, C0=None, frequencies=None, Ccos=None, Csin=None,
                 scalars="real", traceless=False, kind=GENERATOR, _project=True):
        if kind not in (GENERATOR, DYNAMICAL):
            raise ValueError(f"unknown cocycle kind {kind!r}")
        if scalars not in ("real", "complex"):
            raise ValueError("scalars must be 'real' or 'complex'")
        if kind == DYNAMICAL:
            dim, scalars = 3, "real"
        if dim < 2:
            raise ValueError("cocycle dimension must be at least 2")
        dtype = complex if scalars == "complex" else float
        W = np.zeros((0, 3)) if frequencies is None else np.array(frequencies, dtype=float).reshape(-1, 3)
        K = len(W)
        C0 = np.zeros((dim, dim), dtype) if C0 is None else np.array(C0, dtype=dtype)
        Ccos = np.zeros((K, dim, dim), dtype) if Ccos is None else np.array(Ccos, dtype=dtype)
        Csin = np.zeros((K, dim, dim), dtype) if Csin is None else np.array(Csin, dtype=dtype)
        if C0.shape != (dim, dim) or Ccos.shape != (K, dim, dim) or Csin.shape != (K, dim, dim):
            raise ValueError("coefficient shapes do not match dim and number of modes")
        if traceless and _project:
            C0, Ccos, Csin = _traceless(C0), _traceless(Ccos), _traceless(Csin)
        for a in (C0, W, Ccos, Csin):
            a.setflags(write=False)
        self.kind = kind
        self.dim = dim
        self.scalars = scalars
        self.traceless = bool(traceless)
        self.C0, self.frequencies, self.Ccos, self.Csin = C0, W, Ccos, Csin

    # constructors -------------------------------------------------------
    @classmethod
    def dynamical(cls):
        return cls(kind=DYNAMICAL)

    @classmethod
    def zero(cls, dim=2, frequencies=DEFAULT_FREQUENCIES, scalars="real", traceless=True):
        """The identity cocycle, carrying a mode structure for later perturbation."""
        return cls(dim, frequencies=frequencies, scalars=scalars, traceless=traceless)

    @classmethod
    def constant(cls, matrix, traceless=False):
        M = np.asarray(matrix)
        scalars = "complex" if np.iscomplexobj(M) else "real"
        return cls(M.shape[0], C0=M, scalars=scalars, traceless=traceless)

    @classmethod
    def random(cls, dim=2, seed=0, scale=1.0, frequencies=DEFAULT_FREQUENCIES,
               scalars="real", traceless=True):
        """Seed-deterministic trigonometric generator with coefficient norm ``scale``."""
        base = cls.zero(dim, frequencies, scalars, traceless)
        return perturb_generator(base, scale, seed)

    # properties -----------------------------------------------------------
    @property
    def n_modes(self):
        return len(self.frequencies)

    @property
    def n_terms(self):
        """Number of coefficient matrices (constant term plus cos/sin pairs)."""
        return 1 + 2 * self.n_modes

    @property
    def real_dim(self):
        return 2 * self.dim if self.scalars == "complex" else self.dim

    def coefficient_norm(self):
        return math.sqrt(float(np.sum(np.abs(self.C0) ** 2) + np.sum(np.abs(self.Ccos) ** 2)
                               + np.sum(np.abs(self.Csin) ** 2)))

    def evaluate(self, p):
        """``G(p)`` in the native scalar field."""
        if self.kind == DYNAMICAL:
            raise TypeError("the dynamical cocycle has no generator field; use jacobian_field")
        ph = self.frequencies @ np.asarray(p, dtype=float)
        return (self.C0 + np.tensordot(np.cos(ph), self.Ccos, 1)
                + np.tensordot(np.sin(ph), self.Csin, 1))

    def kernel_arrays(self):
        if self.scalars == "complex":
            return (_realify(self.C0), self.frequencies, _realify(self.Ccos), _realify(self.Csin))
        return (np.asarray(self.C0, float), self.frequencies,
                np.asarray(self.Ccos, float), np.asarray(self.Csin, float))

    def kernel_model(self, spec, m=None):
        if self.kind == DYNAMICAL:
            return kernel_model(spec, block=1, m=3 if m is None else m)
        n = self.real_dim
        return kernel_model(spec, block=2, n=n, m=n if m is None else m, gen=self.kernel_arrays())

    def from_real(self, R):
        return _complexify(R, self.dim) if self.scalars == "complex" else R

    def same_coefficients(self, other):
        return (self.kind == other.kind and self.dim == other.dim
                and self.scalars == other.scalars and self.traceless == other.traceless
                and np.array_equal(self.frequencies, other.frequencies)
                and np.array_equal(self.C0, other.C0)
                and np.array_equal(self.Ccos, other.Ccos)
                and np.array_equal(self.Csin, other.Csin))

    def __eq__(self, other):
        return isinstance(other, CocycleGenerator) and self.same_coefficients(other)

    __hash__ = None

    def __repr__(self):
        return (f"CocycleGenerator(kind={self.kind!r}, dim={self.dim}, scalars={self.scalars!r}, "
                f"traceless={self.traceless}, n_modes={self.n_modes}, "
                f"norm={self.coefficient_norm():.4g})")

    # serialization --------------------------------------------------------
    def to_dict(self):
        def mat(C):
            C = np.asarray(C)
            out = {"re": C.real.ravel().tolist()}
            if self.scalars == "complex":
                out["im"] = C.imag.ravel().tolist()
            return out["re"] if self.scalars == "real" else out

        d = {"format_version": FORMAT_VERSION, "kind": self.kind, "dim": self.dim,
             "scalars": self.scalars, "traceless": self.traceless}
        if self.kind == DYNAMICAL:
            return d
        d["C0"] = mat(self.C0)
        d["modes"] = [{"w": w.tolist(), "Ccos": mat(c), "Csin": mat(s)}
                      for w, c, s in zip(self.frequencies, self.Ccos, self.Csin)]
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind", GENERATOR)
        if kind == DYNAMICAL:
            return cls.dynamical()
        dim, scalars = int(d["dim"]), d.get("scalars", "real")

        def mat(x):
            if scalars == "complex":
                a = np.array(x["re"], float) + 1j * np.array(x.get("im", np.zeros(len(x["re"]))), float)
            else:
                a = np.array(x, float)
            return a.reshape(dim, dim)

        modes = d.get("modes", [])
        W = [m["w"] for m in modes]
        Cc = [mat(m["Ccos"]) for m in modes]
        Cs = [mat(m["Csin"]) for m in modes]
        dtype = complex if scalars == "complex" else float
        return cls(dim, C0=mat(d["C0"]), frequencies=np.array(W, float).reshape(-1, 3),
                   Ccos=np.array(Cc, dtype).reshape(-1, dim, dim),
                   Csin=np.array(Cs, dtype).reshape(-1, dim, dim),
                   scalars=scalars, traceless=bool(d.get("traceless", False)),
                   _project=False)  # stored coefficients are already projected

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


def rng_for(seed, *key):
    """Counter-based stream keyed by ``seed`` and an integer key path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def perturb_generator(gen, epsilon, seed, key=()):
    """Return ``gen`` with ``epsilon * R`` added to every coefficient.

    ``R`` is a seed-deterministic random field on the same frequency set,
    with total Frobenius norm 1 over all coefficient matrices (after the
    traceless projection when ``gen.traceless``).
    """
    if gen.kind == DYNAMICAL:
        raise TypeError("the dynamical cocycle cannot be perturbed as a generator field")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return CocycleGenerator(gen.dim, gen.C0, gen.frequencies, gen.Ccos, gen.Csin,
                                gen.scalars, gen.traceless)
    rng = rng_for(seed, *key)
    d, K = gen.dim, gen.n_modes
    shape = (1 + 2 * K, d, d)
    R = rng.standard_normal(shape)
    if gen.scalars == "complex":
        R = R + 1j * rng.standard_normal(shape)
    if gen.traceless:
        R = _traceless(R)
    R = R / math.sqrt(float(np.sum(np.abs(R) ** 2)))
    return CocycleGenerator(d, gen.C0 + epsilon * R[0], gen.frequencies,
                            gen.Ccos + epsilon * R[1:1 + K], gen.Csin + epsilon * R[1 + K:],
                            gen.scalars, gen.traceless)


def evolve_cocycle(gen, spec, x0, t, cfg=None):
    """``A^t(x0)``; the identity at ``t == 0``."""
    cfg = cfg or DEFAULT_CONFIG
    if t < 0:
        raise ValueError("t must be non-negative")
    if gen.kind == DYNAMICAL:
        return tangent_map(spec, x0, t, cfg)[1] if t > 0 else np.eye(3)
    n = gen.real_dim
    if t == 0:
        return gen.from_real(np.eye(n)) if gen.scalars == "complex" else np.eye(n)
    y0 = np.concatenate([np.asarray(x0, float), np.eye(n).ravel()])
    status, y, *_ = kernels.backend.integrate(gen.kernel_model(spec), y0, float(t), cfg.opts(), False)
    check_status(status, "evolve_cocycle")
    return gen.from_real(y[3:].reshape(n, n))


def evolve_cocycle_path(gen, spec, x0, times, cfg=None):
    """``[A^t(x0) for t in times]`` from one orbit, composing consecutive legs."""
    cfg = cfg or DEFAULT_CONFIG
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or np.any(times < 0):
        raise ValueError("times must be non-negative and ascending")
    n = gen.real_dim
    model = gen.kernel_model(spec)
    p = np.asarray(x0, float)
    acc = np.eye(n)
    t_prev, out = 0.0, []
    for t in times:
        dt = t - t_prev
        if dt > 0:
            y0 = np.concatenate([p, np.eye(n).ravel()])
            status, y, *_ = kernels.backend.integrate(model, y0, dt, cfg.opts(), False)
            check_status(status, "evolve_cocycle_path")
            acc = y[3:].reshape(n, n) @ acc
            p = y[:3]
        out.append(gen.from_real(acc.copy()))
        t_prev = t
    return out


def induce_map_cocycle(gen, spec, samples, cfg=None):
    """``A_f(x) = A^{tau(x)}(x)`` for every non-censored return sample."""
    out = []
    for i, s in enumerate(samples):
        if s.censored:
            continue
        out.append((i, evolve_cocycle(gen, spec, s.point, s.tau, cfg)))
    return out


@dataclass
class HoelderEstimate:
    eta: float
    constant: float
    t_used: float
    n_pairs: int
    running: np.ndarray = field(repr=False)


def estimate_hoelder(gen, spec, pairs, eta, t, cfg=None):
    """Running sup of ``|A^t(x) - A^t(y)| / d(x, y)^eta`` over the given pairs.

    A lower bound for the eta-Hoelder seminorm of ``A^t``.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    if not t > 0:
        raise ValueError("t must be positive")
    running, best = [], 0.0
    for x, y in pairs:
        x, y = np.asarray(x, float), np.asarray(y, float)
        dist = float(np.linalg.norm(x - y))
        if dist == 0:
            raise ValueError("pairs must be distinct")
        Ax = evolve_cocycle(gen, spec, x, t, cfg)
        Ay = evolve_cocycle(gen, spec, y, t, cfg)
        best = max(best, float(np.linalg.norm(Ax - Ay, 2)) / dist ** eta)
        running.append(best)
    return HoelderEstimate(eta, best, t, len(running), np.array(running))


@dataclass
class BunchingReport:
    """Certificate for the fiber-bunching inequality over a finite sample set.

    ``verdict`` is ``gamma_star < 1``: some ``gamma`` in ``(0, 1)`` bounds
    every sampled ``kappa``.  ``margin = -log(gamma_star)`` (positive means
    slack).
    """

    form: str
    theta: float
    eta: float
    gamma_star: float
    margin: float
    verdict: bool
    n_samples: int
    times: np.ndarray
    kappas: np.ndarray = field(repr=False)
    running_gamma: np.ndarray = field(repr=False)
    short_return_count: int = 0
    note: str = "gamma read in (0, 1)"

    def to_dict(self):
        return {"form": self.form, "theta": self.theta, "eta": self.eta,
                "gamma_star": self.gamma_star, "margin": self.margin, "verdict": self.verdict,
                "n_samples": self.n_samples, "times": np.asarray(self.times).tolist(),
                "short_return_count": self.short_return_count, "note": self.note}


def _cond(A):
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] == 0 or s[0] / s[-1] > 1e12:
        raise SingularMatrix(f"cocycle matrix numerically singular (condition {s[0] / max(s[-1], 1e-300):.3g})")
    return s[0] / s[-1]


def _check_theta(theta):
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0,1)")


def check_bunching_flow(gen, spec, points, theta, eta, t_grid, cfg=None):
    """Flow form: ``kappa(x, t) = |A^t(x)| |A^t(x)^-1| theta^(t eta)`` over points x t_grid.

    ``gamma_star`` is the largest ``kappa(x, t)^(1/t)``.
    """
    _check_theta(theta)
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    if np.any(t_grid <= 0):
        raise ValueError("t_grid must be positive")
    kappas, running, best = [], [], 0.0
    for x in points:
        mats = evolve_cocycle_path(gen, spec, x, t_grid, cfg)
        for t, A in zip(t_grid, mats):
            k = _cond(A) * theta ** (t * eta)
            kappas.append(k)
            best = max(best, k ** (1.0 / t))
            running.append(best)
    return BunchingReport("flow", theta, eta, best, -math.log(best), best < 1, len(points),
                          t_grid, np.array(kappas), np.array(running))


def check_bunching_map(pairs, theta, eta):
    """Map form: ``kappa = |A_f| |A_f^-1| (theta^tau)^eta`` per return.

    Uses ``theta(x) = theta^tau(x)``; returns with ``tau <= 1`` (where that
    choice stops being ``< theta``) are counted in ``short_return_count``.
    """
    _check_theta(theta)
    kappas, taus, running, best = [], [], [], 0.0
    for A, tau in pairs:
        if not tau > 0:
            raise ValueError("return times must be positive")
        k = _cond(np.asarray(A)) * (theta ** tau) ** eta
        kappas.append(k)
        taus.append(tau)
        best = max(best, k)
        running.append(best)
    taus = np.array(taus)
    return BunchingReport("map", theta, eta, best, -math.log(best) if best > 0 else math.inf,
                          best < 1, len(kappas), taus, np.array(kappas), np.array(running),
                          short_return_count=int(np.sum(taus <= 1)))


def sup_norm_difference(gen_a, gen_b, points):
    """``max_p |G_a(p) - G_b(p)|`` (spectral norm) over sample points."""
    return max(float(np.linalg.norm(gen_a.evaluate(p) - gen_b.evaluate(p), 2)) for p in points)


def induce_along_orbit(gen, spec, section, x_start, n_returns, cfg=None, tau_min=0.05,
                       tau_max=50.0):
    """Induced matrices ``A_f(x_j)`` along ``n_returns`` consecutive returns.

    One continuous integration: at every crossing the cocycle block ``B_j``
    is QR-factored and replaced by its orthogonal factor, so it never
    overflows.  With ``Q_j`` the frame carried into return ``j``,
    ``A_f(x_j) = B_j Q_j^T``.  Returns ``(taus, points, matrices)`` where
    ``points[j]`` is the 3D start of return ``j``; matrices are in the native
    scalar field.
    """
    cfg = cfg or DEFAULT_CONFIG
    model = gen.kernel_model(spec)
    n = model[3]
    p0 = section.embed(x_start)
    y0 = np.concatenate([p0, np.eye(n).ravel()])
    status, ts, ys, graz, Rs, _, _, _ = kernels.backend.integrate_events(
        model, y0, float(tau_max) * n_returns, np.asarray(section.base, float),
        np.asarray(section.normal, float), section.direction, float(tau_min), int(n_returns),
        cfg.opts(), True)
    if len(ts) < n_returns:
        check_status(status, "induce_along_orbit")
        raise ValueError("orbit did not complete the requested returns")
    Q = np.eye(n)
    mats = []
    for y, R in zip(ys, Rs):
        B = y[3:].reshape(n, n)
        mats.append(gen.from_real(B @ Q.T))
        Q = np.linalg.solve(R.T, B.T).T
    taus = np.diff(np.concatenate([[0.0], ts]))
    points = np.vstack([p0[None], ys[:-1, :3]])
    return taus, points, mats
