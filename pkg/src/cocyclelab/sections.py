"""Cross-sections, return maps and their derivatives, return-time statistics
and the one-dimensional stable quotient."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import (AllCensored, DegenerateProjection, FoliationEstimateUnavailable,
                     InsufficientSamples, NonTransversal, OutsideSection)
from .flows import DEFAULT_CONFIG, check_status, evaluate_field, kernel_model

GRAZING_TOL = 1e-12


@dataclass(frozen=True)
class GammaLine:
    """Straight piece of the singular line: ``point + s * direction`` in section coordinates."""

    point: tuple
    direction: tuple
    jump: float = math.nan

    def distance(self, x):
        p, d = np.asarray(self.point), np.asarray(self.direction)
        v = np.asarray(x, float) - p
        return float(abs(v[0] * d[1] - v[1] * d[0]) / np.linalg.norm(d))


@dataclass(frozen=True)
class CrossSection:
    """Planar rectangle ``base + a u1 + b u2`` crossed in ``direction`` of ``normal``.

    ``direction = -1`` counts crossings where ``(p - base).normal`` goes from
    positive to non-positive.  ``gamma`` holds straight pieces of the singular
    line; returns closer than ``gamma_band_halfwidth`` to any of them are
    censored.  The constructor samples the field on a grid of the rectangle
    and raises ``NonTransversal`` if ``F.normal`` changes sign, unless
    ``require_transversal`` is false, in which case the fraction of grid points
    with the wrong sign is kept in ``tangency_fraction``.
    """

    spec: object
    base: tuple
    normal: tuple
    u1: tuple
    u2: tuple
    bounds: tuple = ((-20.0, 20.0), (-25.0, 25.0))
    direction: int = -1
    gamma: tuple = ()
    gamma_band_halfwidth: float = 1e-4
    require_transversal: bool = True
    grid: int = 21
    tangency_fraction: float = field(default=0.0, init=False)

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        u1 = np.asarray(self.u1, float)
        u2 = np.asarray(self.u2, float)
        for v in (n, u1, u2):
            if abs(np.linalg.norm(v) - 1) > 1e-12:
                raise ValueError("normal and frame vectors must be unit")
        if max(abs(n @ u1), abs(n @ u2), abs(u1 @ u2)) > 1e-12:
            raise ValueError("normal, u1, u2 must be mutually orthogonal")
        if self.direction not in (-1, 1):
            raise ValueError("direction must be -1 or +1")
        (a0, a1), (b0, b1) = self.bounds
        if not (a0 < a1 and b0 < b1):
            raise ValueError("empty section bounds")
        a = np.linspace(a0, a1, self.grid)
        b = np.linspace(b0, b1, self.grid)
        s = np.array([evaluate_field(self.spec, self.embed((i, j))) @ n for i in a for j in b])
        wrong = float(np.mean(s * self.direction <= 0))
        object.__setattr__(self, "tangency_fraction", wrong)
        if wrong > 0 and self.require_transversal:
            raise NonTransversal(
                f"flow not transversal on the section: {wrong:.1%} of grid points have the wrong sign")

    @classmethod
    def plane(cls, spec, base, normal, u1=None, **kw):
        n = np.asarray(normal, float)
        n = n / np.linalg.norm(n)
        if u1 is None:
            e = np.eye(3)[int(np.argmin(np.abs(n)))]
            u1 = e - (e @ n) * n
        u1 = np.asarray(u1, float)
        u1 = u1 / np.linalg.norm(u1)
        u2 = np.cross(n, u1)
        return cls(spec, tuple(map(float, base)), tuple(n), tuple(u1), tuple(u2), **kw)

    @classmethod
    def lorenz_default(cls, spec, **kw):
        """Plane ``z = r - 1`` through the non-trivial equilibria, crossed downwards."""
        kw.setdefault("require_transversal", False)
        return cls(spec, (0.0, 0.0, spec.r - 1.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0),
                   (0.0, 1.0, 0.0), **kw)

    @property
    def frame(self):
        return np.column_stack([self.u1, self.u2])

    def embed(self, x):
        return np.asarray(self.base, float) + self.frame @ np.asarray(x, float)

    def coords(self, p):
        return self.frame.T @ (np.asarray(p, float) - np.asarray(self.base, float))

    def height(self, p):
        return float((np.asarray(p, float) - np.asarray(self.base)) @ np.asarray(self.normal))

    def in_bounds(self, x):
        (a0, a1), (b0, b1) = self.bounds
        return bool(a0 <= x[0] <= a1 and b0 <= x[1] <= b1)

    def gamma_distance(self, x):
        if not self.gamma:
            return math.inf
        return min(g.distance(x) for g in self.gamma)

    def in_gamma_band(self, x):
        return self.gamma_distance(x) < self.gamma_band_halfwidth

    def with_gamma(self, lines):
        return replace(self, gamma=tuple(lines))

    def to_dict(self):
        return {"base": list(self.base), "normal": list(self.normal), "u1": list(self.u1),
                "u2": list(self.u2), "bounds": [list(b) for b in self.bounds],
                "direction": self.direction, "gamma_band_halfwidth": self.gamma_band_halfwidth,
                "gamma": [{"point": list(g.point), "direction": list(g.direction)}
                          for g in self.gamma],
                "tangency_fraction": self.tangency_fraction}


@dataclass
class ReturnSample:
    """One return to the section.

    ``point``/``image_point`` are the 3D states, ``dflow`` is ``DX^tau`` at
    ``point``.  Censored samples carry a ``reason`` and may have nan fields.
    """

    x: np.ndarray
    fx: np.ndarray
    tau: float
    d_return: np.ndarray
    censored: bool
    point: np.ndarray = field(repr=False, default=None)
    image_point: np.ndarray = field(repr=False, default=None)
    dflow: np.ndarray = field(repr=False, default=None)
    reason: str = ""


def _nan2():
    return np.full(2, np.nan)


def detect_crossing(traj, sec, direction=None):
    """Crossings of the section plane by a recorded trajectory.

    Sign changes of ``(p - base).normal`` between stored points are located
    by bisection on the cubic Hermite interpolant to 1e-12 in time.  Returns
    ``[(t_star, p_star, grazing)]`` in time order; ``grazing`` marks roots
    where the event derivative is below 1e-12.
    """
    direction = sec.direction if direction is None else direction
    n = np.asarray(sec.normal, float)
    off = float(np.asarray(sec.base) @ n)
    g = traj.points @ n - off
    out = []
    for i in range(len(g) - 1):
        a, b = g[i], g[i + 1]
        hit = (a > 0 >= b) if direction < 0 else (a < 0 <= b)
        if not hit:
            continue
        lo, hi = traj.times[i], traj.times[i + 1]
        glo = a
        while hi - lo > 1e-12:
            mid = 0.5 * (lo + hi)
            gm = traj(mid) @ n - off
            if gm != 0 and (gm > 0) == (glo > 0):
                lo, glo = mid, gm
            else:
                hi = mid
        ts = 0.5 * (lo + hi)
        p = traj(ts)
        dt = 1e-7 * (traj.times[i + 1] - traj.times[i])
        gdot = (traj(min(ts + dt, traj.times[-1])) - traj(max(ts - dt, traj.times[0]))) @ n / (2 * dt)
        out.append((ts, p, abs(gdot) < GRAZING_TOL))
    return out


def return_derivative(spec, sec, image_point, dflow):
    """Derivative of the return map in section coordinates.

    ``U^T (I - F n^T / (n.F)) DX^tau U`` with ``F`` the field at the image
    point: the tangent image is projected back to the plane along the flow,
    which accounts for the dependence of the return time on the start point.
    """
    n = np.asarray(sec.normal, float)
    F = evaluate_field(spec, image_point)
    nf = float(n @ F)
    if abs(nf) < 1e-8 * max(np.linalg.norm(F), 1e-300):
        raise DegenerateProjection("flow nearly tangent to the section at the return point")
    P = np.eye(3) - np.outer(F, n) / nf
    U = sec.frame
    return U.T @ P @ np.asarray(dflow, float) @ U


def project_to_section(spec, sec, p, v):
    """Section-coordinate direction of ``v`` projected along the flow at ``p`` (unit)."""
    n = np.asarray(sec.normal, float)
    F = evaluate_field(spec, p)
    w = np.asarray(v, float) - F * (n @ v) / (n @ F)
    c = sec.frame.T @ w
    return c / np.linalg.norm(c)


def _check_start(sec, x):
    x = np.asarray(x, float)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise OutsideSection("section point must be a finite 2-vector")
    if not sec.in_bounds(x):
        raise OutsideSection(f"point {x.tolist()} outside section bounds")
    if sec.in_gamma_band(x):
        raise OutsideSection(f"point {x.tolist()} inside the singular-line band")
    return x


def poincare_return(spec, sec, x, cfg=None, tau_min=0.05, tau_max=50.0, n_returns=1):
    """Return of the section point ``x``.

    Integrates from ``embed(x)`` with the tangent flow until the
    ``n_returns``-th crossing in the section direction, ignoring crossings
    less than ``tau_min`` after the previous one.  ``tau_max`` caps the total
    search time.  The sample is censored on timeout, grazing, a landing
    outside the bounds, or inside the singular-line band.
    """
    cfg = cfg or DEFAULT_CONFIG
    x = _check_start(sec, x)
    if not 0 < tau_min < tau_max:
        raise ValueError("need 0 < tau_min < tau_max")
    p0 = sec.embed(x)
    model = kernel_model(spec, block=1, m=3)
    y0 = np.concatenate([p0, np.eye(3).ravel()])
    status, ts, ys, graz, _, _, _, _ = kernels.backend.integrate_events(
        model, y0, float(tau_max), np.asarray(sec.base, float), np.asarray(sec.normal, float),
        sec.direction, float(tau_min), int(n_returns), cfg.opts(), False)
    if status == kernels.TIMEOUT or len(ts) < n_returns:
        return ReturnSample(x, _nan2(), math.nan, np.full((2, 2), np.nan), True, p0,
                            reason="no return before tau_max")
    check_status(status, "poincare_return")
    tau = float(ts[-1])
    y = ys[-1]
    q = y[:3]
    fx = sec.coords(q)
    D = y[3:].reshape(3, 3)
    reason = ""
    if graz[-1]:
        reason = "grazing"
    elif not sec.in_bounds(fx):
        reason = "outside bounds"
    elif sec.in_gamma_band(fx):
        reason = "gamma band"
    if reason == "grazing":
        dret = np.full((2, 2), np.nan)
    else:
        dret = return_derivative(spec, sec, q, D)
    return ReturnSample(x, fx, tau, dret, bool(reason), p0, q, D, reason)


def sample_orbit(spec, sec, x_start, n, cfg=None, tau_min=0.05, tau_max=50.0):
    """``n`` consecutive returns along one orbit (each starts at the previous image).

    Stops early at a sample without a usable image (timeout or landing out of
    bounds); a return inside the singular-line band is kept as censored and
    the orbit continues from its image when that image is still a legal start.
    """
    out = []
    x = np.asarray(x_start, float)
    for _ in range(n):
        s = poincare_return(spec, sec, x, cfg, tau_min, tau_max)
        out.append(s)
        if not np.all(np.isfinite(s.fx)) or not sec.in_bounds(s.fx) or sec.in_gamma_band(s.fx):
            break
        x = s.fx
    return out


def attractor_point(spec, sec, x0=(1.0, 1.0, 20.0), transient=100.0, cfg=None):
    """Section coordinates of the first crossing after ``transient`` time units."""
    cfg = cfg or DEFAULT_CONFIG
    model = kernel_model(spec)
    status, y, *_ = kernels.backend.integrate(model, np.asarray(x0, float), float(transient),
                                              cfg.opts(), False)
    check_status(status, "attractor_point")
    status, ts, ys, *_ = kernels.backend.integrate_events(
        model, y, 1e3, np.asarray(sec.base, float), np.asarray(sec.normal, float),
        sec.direction, 0.0, 1, cfg.opts(), False)
    check_status(status, "attractor_point")
    return sec.coords(ys[0, :3])


@dataclass
class ReturnMapStats:
    n_samples: int
    mean_tau: float
    min_tau: float
    max_tau: float
    censored_count: int
    std_tau: float = math.nan

    def to_dict(self):
        return dict(self.__dict__)


def return_time_stats(samples):
    taus = np.array([s.tau for s in samples if not s.censored], dtype=float)
    cens = sum(1 for s in samples if s.censored)
    if len(taus) == 0:
        raise AllCensored("every sample is censored")
    return ReturnMapStats(len(taus), float(taus.mean()), float(taus.min()), float(taus.max()),
                          cens, float(taus.std(ddof=1)) if len(taus) > 1 else 0.0)


# stable / unstable directions on the section ---------------------------------

def section_directions(spec, sec, samples, skip=20):
    """Stable and unstable section directions along consecutive returns.

    Uses the forward and time-reversed leading vectors of the return-time
    tangent maps ``DX^tau`` (the 3D covariant vectors E^u and E^s), projected
    along the flow onto the section.  ``samples`` must be consecutive returns
    of one orbit.  The first and last ``skip`` samples serve as burn-in and
    are dropped; returns ``(kept_samples, s_dirs, u_dirs)`` with directions
    at each kept sample's start point, plus the same at its image as
    ``(s_img, u_img)``.
    """
    from .spectra import backward_vectors, forward_vectors

    ok = [s for s in samples if not s.censored]
    if len(ok) != len(samples):
        raise FoliationEstimateUnavailable("censored sample breaks the orbit")
    for a, b in zip(samples[:-1], samples[1:]):
        if np.linalg.norm(a.image_point - b.point) > 1e-9 * (1 + np.linalg.norm(a.image_point)):
            raise FoliationEstimateUnavailable("samples are not consecutive returns")
    if len(samples) <= 2 * skip + 1:
        raise InsufficientSamples("orbit too short for the burn-in")
    props = [s.dflow for s in samples]
    fw = forward_vectors(props, np.array([1.0, 0.3, -0.2]))
    bw = backward_vectors(props, np.array([1.0, 0.3, -0.2]))
    pts = [s.point for s in samples] + [samples[-1].image_point]
    S = np.array([project_to_section(spec, sec, p, v) for p, v in zip(pts, bw)])
    U = np.array([project_to_section(spec, sec, p, v) for p, v in zip(pts, fw)])
    sl = slice(skip, len(samples) - skip)
    sl1 = slice(skip + 1, len(samples) - skip + 1)
    return samples[sl], S[sl], U[sl], S[sl1], U[sl1]


@dataclass
class ReturnHyperbolicity:
    """Contraction along E^s_Sigma and expansion along E^u_Sigma per return.

    The thresholds are per sample: contraction ``< theta^tau`` and expansion
    ``> theta^-tau``.  ``theta_regression`` is ``exp(slope)`` of the
    regression of log contraction on tau; ``theta_fit`` is the smallest
    per-unit-time theta for which ``fit_fraction`` of samples pass both.
    """

    theta: float
    n_samples: int
    contraction: np.ndarray = field(repr=False)
    expansion: np.ndarray = field(repr=False)
    taus: np.ndarray = field(repr=False)
    contraction_pass: float = 0.0
    expansion_pass: float = 0.0
    worst_contraction_margin: float = 0.0
    worst_expansion_margin: float = 0.0
    theta_regression: float = math.nan
    theta_fit: float = math.nan
    fit_fraction: float = 0.95

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items()
                if k not in ("contraction", "expansion", "taus")}


def hyperbolicity_report(samples, theta, s_dirs, u_dirs, s_img=None, u_img=None,
                         per_unit_time=True, fit_fraction=0.95):
    """Test ``|Df e_s| < theta`` and ``|Df e_u| > 1/theta`` per return.

    ``s_dirs``/``u_dirs`` are unit section directions at the sample points.
    With ``per_unit_time`` the thresholds become ``theta^tau(x)``, the
    convention under which a rate per unit time is compared with returns of
    varying length.
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0,1)")
    ok = [i for i, s in enumerate(samples) if not s.censored]
    if len(ok) < 10:
        raise InsufficientSamples("need at least 10 non-censored samples")
    D = [samples[i].d_return for i in ok]
    c = np.array([np.linalg.norm(d @ s_dirs[i]) for d, i in zip(D, ok)])
    e = np.array([np.linalg.norm(d @ u_dirs[i]) for d, i in zip(D, ok)])
    taus = np.array([samples[i].tau for i in ok])
    expo = taus if per_unit_time else np.ones_like(taus)
    thr = theta ** expo
    cp = float(np.mean(c < thr))
    ep = float(np.mean(e > 1 / thr))
    slope = np.polyfit(taus, np.log(c), 1)[0] if np.ptp(taus) > 0 else math.nan
    # per-sample smallest theta passing both, in the same convention
    need = np.maximum(np.log(c), -np.log(e)) / expo
    q = np.quantile(need, fit_fraction, method="higher")
    # nudge above the quantile sample so the strict inequalities admit it
    fit = float(np.exp(np.nextafter(q, np.inf)))
    return ReturnHyperbolicity(
        theta, len(ok), c, e, taus, cp, ep,
        float(np.min(np.log(thr) - np.log(c))), float(np.min(np.log(e) + np.log(thr))),
        float(np.exp(slope)), fit, fit_fraction)


# stable quotient ---------------------------------------------------------------

@dataclass
class QuotientData:
    """Samples projected along stable leaves to a transverse coordinate.

    ``xi``/``h_xi`` are paired coordinates of ``x`` and ``f(x)`` sorted by
    ``xi``.  ``breaks`` split the coordinate into branches: the detected
    discontinuities of ``h`` (``gamma_breaks``) plus seams between separate
    pieces of the section.  ``lines`` holds ``(origin, axis)`` per piece.
    """

    xi: np.ndarray
    h_xi: np.ndarray
    breaks: np.ndarray
    gamma_breaks: np.ndarray
    lines: np.ndarray = field(repr=False)
    resolution: float = 0.0
    order: np.ndarray = field(repr=False, default=None)
    offsets: np.ndarray = field(repr=False, default=None)

    def branch(self, xi):
        return np.searchsorted(self.breaks, xi)

    def __call__(self, xi):
        """Piecewise-linear interpolation of ``h`` within each branch."""
        xi = np.atleast_1d(np.asarray(xi, float))
        out = np.empty_like(xi)
        br = self.branch(self.xi)
        for k, v in enumerate(xi):
            b = self.branch(v)
            m = br == b
            out[k] = np.interp(v, self.xi[m], self.h_xi[m]) if m.any() else np.nan
        return out

    def order_violations(self):
        """Fraction of adjacent pairs (within a branch) breaking the dominant monotonicity."""
        br = self.branch(self.xi)
        bad = tot = 0
        for b in np.unique(br):
            d = np.diff(self.h_xi[br == b])
            if len(d) == 0:
                continue
            sgn = 1 if np.sum(d > 0) >= np.sum(d < 0) else -1
            bad += int(np.sum(d * sgn < 0))
            tot += len(d)
        return bad / max(tot, 1)

    def semiconjugacy_residuals(self):
        """``|h(xi_i) - pi(f(x_i))|`` with ``h`` interpolated from the other samples."""
        br = self.branch(self.xi)
        res = np.full(len(self.xi), np.nan)
        for i in range(len(self.xi)):
            m = br == br[i]
            m[i] = False
            if np.sum(m) < 2:
                continue
            x, y = self.xi[m], self.h_xi[m]
            if not (x[0] <= self.xi[i] <= x[-1]):
                continue
            res[i] = abs(np.interp(self.xi[i], x, y) - self.h_xi[i])
        return res


def _leaf_coordinate(points, dirs, origin, axis):
    """Where the line ``p + s d`` meets the reference line ``origin + xi axis``."""
    out = np.empty(len(points))
    for k, (p, d) in enumerate(zip(points, dirs)):
        M = np.column_stack([axis, -d])
        if abs(np.linalg.det(M)) < 1e-12:
            out[k] = np.nan
            continue
        out[k] = np.linalg.solve(M, p - origin)[0]
    return out


def _pca_line(P):
    c = P.mean(axis=0)
    if len(P) < 2:
        return c, np.array([1.0, 0.0])
    _, _, vt = np.linalg.svd(P - c)
    a = vt[0]
    # fixed orientation so coordinates do not depend on the SVD sign convention
    if a[0] < 0 or (a[0] == 0 and a[1] < 0):
        a = -a
    return c, a


def _clusters(P, radius, min_share=0.05):
    """Connected components of the ``radius`` neighbour graph; small ones join the nearest big one."""
    from scipy.sparse.csgraph import connected_components
    from scipy.spatial import cKDTree

    tree = cKDTree(P)
    _, lab = connected_components(tree.sparse_distance_matrix(tree, radius), directed=False)
    counts = np.bincount(lab)
    big = np.flatnonzero(counts >= min_share * len(P))
    if len(big) == 0:
        return np.zeros(len(P), int)
    keep = np.isin(lab, big)
    near = cKDTree(P[keep]).query(P[~keep])[1]
    lab[~keep] = lab[keep][near]
    _, lab = np.unique(lab, return_inverse=True)
    return lab


def _median_jumps(h, piece, w=3):
    """Jump between the medians of ``w`` values left and right of each gap.

    Robust to a single stray point next to a discontinuity; gaps between
    different pieces get -1.
    """
    n = len(h)
    out = np.full(max(n - 1, 0), -1.0)
    for k in range(n - 1):
        if piece[k] != piece[k + 1]:
            continue
        lo = k + 1 - w
        while lo < 0 or np.any(piece[max(lo, 0):k + 1] != piece[k]):
            lo += 1
        hi = k + 1 + w
        while hi > n or np.any(piece[k + 1:min(hi, n)] != piece[k]):
            hi -= 1
        out[k] = abs(np.median(h[k + 1:hi]) - np.median(h[lo:k + 1]))
    return out


def stable_projection(samples, s_dirs, s_img, split_radius=None, n_breaks=1, resolution=None):
    """Project ``x`` and ``f(x)`` along stable directions onto reference lines.

    Leaves are approximated by straight lines through each sample along its
    estimated stable direction.  By default one reference line, the principal
    axis of the sample cloud, serves every sample.  With ``split_radius`` the
    cloud is split into connected pieces at that neighbour distance (the
    separate arcs of a section through a two-winged attractor) and each piece
    gets its own principal axis, which keeps the straight-leaf projections
    short.  The pieces are laid end to end on the coordinate axis.  The
    ``n_breaks`` largest jumps of ``h`` between neighbours inside a piece are
    reported as discontinuities.
    """
    if s_dirs is None or s_img is None:
        raise FoliationEstimateUnavailable("stable directions are required")
    ok = [i for i, s in enumerate(samples) if not s.censored]
    if len(ok) < 3:
        raise InsufficientSamples("need at least 3 samples")
    X = np.array([samples[i].x for i in ok])
    FX = np.array([samples[i].fx for i in ok])
    S = np.asarray(s_dirs, float)[ok]
    SI = np.asarray(s_img, float)[ok]
    if split_radius:
        from scipy.spatial import cKDTree

        lab = _clusters(X, split_radius)
        lab_img = lab[cKDTree(X).query(FX)[1]]
    else:
        lab = np.zeros(len(X), int)
        lab_img = lab.copy()
    _, gaxis = _pca_line(X)
    pieces = []
    for k in range(lab.max() + 1):
        c, a = _pca_line(X[lab == k])
        pieces.append((float(c @ gaxis), c, a))
    # order pieces along the global axis
    rank = np.argsort([t[0] for t in pieces], kind="stable")
    lines = [pieces[k][1:] for k in rank]
    relabel = np.empty_like(rank)
    relabel[rank] = np.arange(len(rank))
    lab, lab_img = relabel[lab], relabel[lab_img]
    raw_x = np.array([_leaf_coordinate(p[None], d[None], *lines[k])[0]
                      for p, d, k in zip(X, S, lab)])
    raw_f = np.array([_leaf_coordinate(p[None], d[None], *lines[k])[0]
                      for p, d, k in zip(FX, SI, lab_img)])
    # lay pieces end to end with unit gaps
    offsets, pos = [], 0.0
    for k in range(len(lines)):
        m = lab == k
        lo, hi = np.nanmin(raw_x[m]), np.nanmax(raw_x[m])
        offsets.append(pos - lo)
        pos += (hi - lo) + 1.0
    offsets = np.array(offsets)
    xi = raw_x + offsets[lab]
    hx = raw_f + offsets[lab_img]
    good = np.isfinite(xi) & np.isfinite(hx)
    order = np.argsort(xi[good], kind="stable")
    xi, hx, piece = xi[good][order], hx[good][order], lab[good][order]
    idx = np.array(ok)[good][order]
    jumps = _median_jumps(hx, piece)
    chosen = []
    for k in np.argsort(-jumps, kind="stable"):
        if len(chosen) == n_breaks or jumps[k] < 0:
            break
        # one break per discontinuity: skip gaps next to an accepted one
        if all(abs(k - c) > 3 for c in chosen):
            chosen.append(int(k))
    brk = np.sort(np.array(chosen, int))
    seams = np.flatnonzero(np.diff(piece) != 0)
    breaks = np.array([0.5 * (xi[k] + xi[k + 1]) for k in brk])
    seam_pts = np.array([0.5 * (xi[k] + xi[k + 1]) for k in seams])
    if resolution is None:
        dx = np.diff(xi)
        pos_dx = dx[dx > 0]
        spacing = np.median(pos_dx) if len(pos_dx) else 0.0
        slope = np.median(np.abs(np.diff(hx))[dx > 0] / pos_dx) if len(pos_dx) else 0.0
        resolution = float(max(10 * spacing * slope, 1e-9))
    return QuotientData(xi, hx, np.sort(np.concatenate([breaks, seam_pts])), breaks,
                        np.array(lines), resolution, idx, offsets)


def locate_gamma(spec, sec, samples, s_dirs, quotient, cfg=None, tol=1e-10, tau_max=50.0,
                 min_jump=0.5):
    """Singular-line pieces through the detected breaks of the quotient map.

    For each break the two flanking samples are joined by a segment and the
    point where the image jumps from one side to the other is found by
    bisection (a return is assigned to whichever flanking image it lands
    closer to).  The returned line runs along the stable direction of the
    flanking sample, i.e. along the stable leaf that the singular line is.
    A break is kept only when the images at the two ends of the final
    bracket are still at least ``min_jump`` times the flanking image
    distance apart; a break produced by sparse sampling of a continuous
    stretch of the map fails this test.
    """
    lines = []
    for b in quotient.gamma_breaks:
        k = int(np.searchsorted(quotient.xi, b))
        ia, ib = int(quotient.order[k - 1]), int(quotient.order[k])
        a, c = samples[ia], samples[ib]
        pa, pb = np.asarray(a.x, float), np.asarray(c.x, float)
        fa, fb = np.asarray(a.fx, float), np.asarray(c.fx, float)
        lo, hi = 0.0, 1.0
        f_lo, f_hi = fa, fb
        while (hi - lo) * np.linalg.norm(pb - pa) > tol:
            mid = 0.5 * (lo + hi)
            s = poincare_return(spec, sec, pa + mid * (pb - pa), cfg, tau_max=tau_max)
            if not np.all(np.isfinite(s.fx)):
                break
            if np.linalg.norm(s.fx - fa) <= np.linalg.norm(s.fx - fb):
                lo, f_lo = mid, s.fx
            else:
                hi, f_hi = mid, s.fx
        jump = float(np.linalg.norm(f_hi - f_lo))
        if jump < min_jump * np.linalg.norm(fb - fa):
            continue
        p = pa + 0.5 * (lo + hi) * (pb - pa)
        d = np.asarray(s_dirs[ia], float)
        lines.append(GammaLine(tuple(p.tolist()), tuple((d / np.linalg.norm(d)).tolist()), jump))
    return lines


@dataclass
class BandCover:
    covered: list
    cover_fraction: float
    passed: bool
    epsilon: float

    def to_dict(self):
        return dict(self.__dict__)


def band_cover_check(xi, h_xi, partition, eps=None, threshold=0.95):
    """Whether the sampled image of each partition interval covers a full element.

    An interval ``I`` covers element ``J`` when the images of samples in
    ``I`` reach within ``eps`` of both ends of ``J`` and leave no gap wider
    than ``eps`` inside it.  ``cover_fraction`` is the share of intervals
    covering at least one element.
    """
    xi, h_xi = np.asarray(xi, float), np.asarray(h_xi, float)
    part = [tuple(map(float, p)) for p in partition]
    if eps is None:
        span = max(b for _, b in part) - min(a for a, _ in part)
        eps = 4.0 * span / max(len(xi), 1) * len(part)
    covered = []
    for a, b in part:
        img = np.sort(h_xi[(xi >= a) & (xi < b)])
        hits = []
        for j, (c, d) in enumerate(part):
            v = img[(img >= c - eps) & (img <= d + eps)]
            if len(v) == 0:
                continue
            pts = np.concatenate([[c], np.clip(v, c, d), [d]])
            if np.max(np.diff(pts)) <= eps:
                hits.append(j)
        covered.append(hits)
    frac = float(np.mean([len(h) > 0 for h in covered])) if covered else 0.0
    return BandCover(covered, frac, frac >= threshold, float(eps))


CSV_COLUMNS = ["x1", "x2", "fx1", "fx2", "tau", "d11", "d12", "d21", "d22", "censored"]


def samples_to_csv(samples):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for s in samples:
        d = np.asarray(s.d_return).ravel()
        w.writerow([repr(float(v)) for v in (*s.x, *s.fx, s.tau, *d)] + [int(s.censored)])
    return buf.getvalue()
