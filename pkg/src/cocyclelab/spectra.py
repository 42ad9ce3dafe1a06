"""Lyapunov spectra by QR re-orthonormalization, covariant splittings and
checks of the singular-hyperbolic inequalities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .cocycles import DYNAMICAL, _realify
from .errors import (DimensionMismatch, InsufficientSamples, SingularMatrix)
from .flows import DEFAULT_CONFIG, LORENZ, check_status, evaluate_field, kernel_model

N_BLOCKS = 20


@dataclass
class LyapunovSpectrum:
    """Exponent estimates sorted in descending order.

    ``half_widths`` are twice the standard error of the batch means over
    ``n_blocks`` equal blocks.  ``horizon`` is the averaging time (flow) or
    number of iterates (map) after the transient.
    """

    exponents: np.ndarray
    half_widths: np.ndarray
    horizon: float
    renorm_interval: float
    kind: str = "flow"
    transient: float = 0.0
    block_means: np.ndarray = field(default=None, repr=False)
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.exponents = np.asarray(self.exponents, dtype=float)
        self.half_widths = np.asarray(self.half_widths, dtype=float)

    @property
    def gaps(self):
        return -np.diff(self.exponents)

    @property
    def dim(self):
        return len(self.exponents)

    def to_dict(self):
        return {"exponents": self.exponents.tolist(), "half_widths": self.half_widths.tolist(),
                "horizon": self.horizon, "gaps": self.gaps.tolist(),
                "renorm": self.renorm_interval, "kind": self.kind,
                "transient": self.transient, "flags": dict(self.flags)}


def _batch_stats(logs, scale):
    """Means per column and 2-SE half-widths from ``N_BLOCKS`` batch means."""
    n = len(logs)
    means = logs.sum(axis=0) / scale
    nb = min(N_BLOCKS, n)
    if nb < 2:
        return means, np.full(logs.shape[1], np.nan), None, False
    edges = np.linspace(0, n, nb + 1).astype(int)
    per_step = scale / n
    blocks = np.array([logs[a:b].sum(axis=0) / ((b - a) * per_step)
                       for a, b in zip(edges[:-1], edges[1:])])
    hw = 2.0 * blocks.std(axis=0, ddof=1) / math.sqrt(nb)
    half = nb // 2
    first, second = blocks[:half].mean(axis=0), blocks[half:].mean(axis=0)
    nonconv = bool(np.any(np.abs(first - second) > 3 * hw + 1e-12))
    return means, hw, blocks, nonconv


def _finish(means, hw, blocks, complex_pairs):
    order = np.argsort(-means, kind="stable")
    means, hw = means[order], hw[order]
    if blocks is not None:
        blocks = blocks[:, order]
    if complex_pairs:
        # each complex exponent appears twice in the real representation
        means = 0.5 * (means[0::2] + means[1::2])
        hw = np.maximum(hw[0::2], hw[1::2])
        if blocks is not None:
            blocks = 0.5 * (blocks[:, 0::2] + blocks[:, 1::2])
    return means, hw, blocks


def default_transient(T, spec=None):
    t = 0.05 * T
    if spec is None or spec.kind == LORENZ:
        t = max(t, 50.0)
    return t


def qr_lyapunov_flow(gen, spec, x0, T, renorm_dt=0.5, transient=None, cfg=None):
    """Full spectrum of the cocycle generated by ``gen`` along the orbit of ``x0``.

    The first ``transient`` time units move base point and frame without
    recording.  After that a frame is QR-renormalized every ``renorm_dt`` and
    the logs of the R-diagonals are time-averaged over the remaining
    ``T - transient`` (rounded down to whole intervals).
    """
    cfg = cfg or DEFAULT_CONFIG
    if transient is None:
        transient = default_transient(T, spec)
    if not (T > transient > 0):
        raise ValueError("need T > transient > 0")
    if not renorm_dt > 0:
        raise ValueError("renorm_dt must be positive")
    model = gen.kernel_model(spec)
    n = model[3]
    y = np.concatenate([np.asarray(x0, dtype=float), np.eye(n).ravel()])
    be = kernels.backend
    n_tr = max(1, int(round(transient / renorm_dt)))
    status, _, y, h, _ = be.lyapunov_flow(model, y, renorm_dt, n_tr, cfg.opts())
    check_status(status, "qr_lyapunov_flow transient")
    n_iv = int(math.floor((T - transient) / renorm_dt + 1e-9))
    if n_iv < 1:
        raise ValueError("T - transient shorter than one renormalization interval")
    status, logs, y, h, _ = be.lyapunov_flow(model, y, renorm_dt, n_iv, cfg.opts(h))
    check_status(status, "qr_lyapunov_flow")
    horizon = n_iv * renorm_dt
    means, hw, blocks, nonconv = _batch_stats(logs, horizon)
    cplx = gen.kind != DYNAMICAL and gen.scalars == "complex"
    means, hw, blocks = _finish(means, hw, blocks, cplx)
    return LyapunovSpectrum(means, hw, horizon, renorm_dt, "flow", n_tr * renorm_dt, blocks,
                            {"nonconvergence": nonconv, "x_end": y[:3].tolist()})


def _qr_pos(B):
    Q, R = np.linalg.qr(B)
    d = np.diag(R)
    if np.any(d == 0) or not np.all(np.isfinite(d)):
        raise SingularMatrix("zero or non-finite R diagonal in QR accumulation")
    s = np.sign(d)
    return Q * s, np.abs(d)


def qr_lyapunov_map(matrices, renorm_every=1, discard=0):
    """Exponents per iterate of ``A_{n-1} ... A_0`` by QR accumulation.

    ``matrices[k]`` is applied at step ``k``.  The first ``discard`` matrices
    only move the frame (a transient); averages run over the rest.
    """
    mats = [np.asarray(A) for A in matrices]
    if len(mats) < 100:
        raise ValueError("need at least 100 matrices")
    if not (isinstance(renorm_every, (int, np.integer)) and renorm_every >= 1):
        raise ValueError("renorm_every must be a positive integer")
    if not 0 <= discard < len(mats):
        raise ValueError("discard must leave at least one matrix")
    cplx = any(np.iscomplexobj(A) for A in mats)
    if cplx:
        mats = [_realify(np.asarray(A, complex)) for A in mats]
    d = mats[0].shape[0]
    if any(A.shape != (d, d) for A in mats):
        raise DimensionMismatch("matrices must share one square shape")
    Q = np.eye(d)
    logs = []
    i = 0
    while i < len(mats):
        B = Q
        j = min(i + renorm_every, len(mats))
        if i < discard:
            j = min(j, discard)
        for A in mats[i:j]:
            B = A @ B
        Q, r = _qr_pos(B)
        if i >= discard:
            logs.append(np.log(r))
        i = j
    logs = np.array(logs)
    n = len(mats) - discard
    means, hw, blocks, nonconv = _batch_stats(logs, n)
    means, hw, blocks = _finish(means, hw, blocks, cplx)
    return LyapunovSpectrum(means, hw, n, renorm_every, "map", discard, blocks,
                            {"nonconvergence": nonconv})


def simplicity_verdict(spec, gap_floor):
    """``(simple, min_gap, resolved)``.

    A spectrum is resolved as simple when every gap exceeds twice the sum of
    its two adjacent half-widths, and resolved as degenerate when some gap
    plus that uncertainty still lies below ``gap_floor``.  Anything else is
    unresolved and never called simple.
    """
    ex, hw = spec.exponents, spec.half_widths
    if len(ex) < 2:
        return True, math.inf, True
    gaps = -np.diff(ex)
    min_gap = float(gaps.min())
    hw = np.nan_to_num(hw, nan=math.inf)
    unc = 2.0 * (hw[:-1] + hw[1:])
    separated = bool(np.all(gaps > unc))
    degenerate = bool(np.any(gaps + unc < gap_floor))
    simple = bool(separated and min_gap > gap_floor)
    return simple, min_gap, separated or degenerate


@dataclass
class RelationCheck:
    errors: np.ndarray
    compared: list
    mean_tau: float
    degenerate: bool

    @property
    def max_error(self):
        return float(np.max(self.errors))

    def to_dict(self):
        return {"errors": self.errors.tolist(), "compared": self.compared,
                "mean_tau": self.mean_tau, "degenerate": self.degenerate,
                "max_error": self.max_error}


def exponent_relation_check(flow_spec, map_spec, mean_tau, floor=1e-3):
    """Relative errors of ``map_i`` against ``mean_tau * flow_i``.

    When the flow spectrum has one more exponent than the map spectrum (the
    derivative cocycle against the return derivative) the flow exponent
    closest to zero is dropped first.
    """
    fl = np.asarray(flow_spec.exponents, float)
    mp = np.asarray(map_spec.exponents, float)
    if len(fl) == len(mp) + 1:
        fl = np.delete(fl, int(np.argmin(np.abs(fl))))
    elif len(fl) != len(mp):
        raise DimensionMismatch(f"flow has {len(fl)} exponents, map has {len(mp)}")
    scaled = mean_tau * fl
    errors = np.abs(mp - scaled) / np.maximum(np.abs(scaled), floor)
    compared = [[float(a), float(b)] for a, b in zip(mp, scaled)]
    return RelationCheck(errors, compared, float(mean_tau), mean_tau <= 0)


# covariant directions ------------------------------------------------------

def _unit(v):
    return v / np.linalg.norm(v)


def forward_vectors(propagators, v0):
    """Push ``v0`` through ``propagators`` normalizing at every node."""
    out = [_unit(np.asarray(v0, float))]
    for P in propagators:
        out.append(_unit(P @ out[-1]))
    return np.array(out)


def backward_vectors(propagators, w_end):
    """Pull ``w_end`` back through the inverses, i.e. the time-reversed tangent flow."""
    out = [_unit(np.asarray(w_end, float))]
    for P in propagators[::-1]:
        out.append(_unit(np.linalg.solve(P, out[-1])))
    return np.array(out[::-1])


def _angle(a, b):
    """Angle between lines spanned by ``a`` and ``b`` (rows), in radians."""
    c = np.abs(np.sum(a * b, axis=-1)) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return np.arccos(np.clip(c, 0.0, 1.0))


@dataclass
class SplittingEstimate:
    """Unit vectors along E^s, the flow and E^u at orbit sample points."""

    times: np.ndarray
    points: np.ndarray
    e_s: np.ndarray
    e_flow: np.ndarray
    e_u: np.ndarray
    field_norm: np.ndarray
    flags: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def angles(self):
        return {"s_u": _angle(self.e_s, self.e_u), "s_flow": _angle(self.e_s, self.e_flow),
                "u_flow": _angle(self.e_u, self.e_flow)}


def orbit_propagators(spec, x0, dt, n_segments, cfg=None):
    """Orbit nodes ``X^{k dt}(x0)`` and one-segment tangent maps between them."""
    cfg = cfg or DEFAULT_CONFIG
    model = kernel_model(spec, block=1, m=3)
    be = kernels.backend
    p = np.asarray(x0, float)
    pts, props = [p], []
    h = 0.0
    eye = np.eye(3).ravel()
    for _ in range(n_segments):
        status, y, h, *_ = be.integrate(model, np.concatenate([p, eye]), dt, cfg.opts(h), False)
        check_status(status, "orbit_propagators")
        p = y[:3]
        pts.append(p)
        props.append(y[3:].reshape(3, 3))
    return np.array(pts), props


_PROBES = (np.array([1.0, 0.3, -0.2]), np.array([-0.4, 1.0, 0.7]))


def covariant_splitting(spec, x0, T_forward, T_backward, cfg=None, sample_dt=0.1,
                        n_samples=100, conv_tol=1e-6):
    """Estimate E^s, E^X, E^u at ``n_samples`` points spaced ``sample_dt`` apart.

    Samples start ``T_forward`` after ``x0`` and the orbit runs ``T_backward``
    past the last one.  ``e_u`` is the leading vector of the forward tangent
    flow, ``e_s`` the leading vector of the time-reversed one; the flags
    record whether two different probe vectors converged to the same lines.
    """
    cfg = cfg or DEFAULT_CONFIG
    if n_samples < 1 or sample_dt <= 0:
        raise ValueError("need n_samples >= 1 and sample_dt > 0")
    k_f = int(math.ceil(T_forward / sample_dt - 1e-9))
    k_b = int(math.ceil(T_backward / sample_dt - 1e-9))
    n_seg = k_f + (n_samples - 1) + k_b
    pts, props = orbit_propagators(spec, x0, sample_dt, n_seg, cfg)
    sl = slice(k_f, k_f + n_samples)
    fw = [forward_vectors(props, v)[sl] for v in _PROBES]
    bw = [backward_vectors(props, v)[sl] for v in _PROBES]
    e_u, e_s = fw[0], bw[0]
    P = pts[sl]
    F = np.array([evaluate_field(spec, p) for p in P])
    fn = np.linalg.norm(F, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        e_flow = F / fn[:, None]
    flags = {
        "forward_converged": bool(np.max(_angle(fw[0], fw[1])) < conv_tol),
        "backward_converged": bool(np.max(_angle(bw[0], bw[1])) < conv_tol),
        "zero_field_samples": int(np.sum(fn == 0)),
    }
    times = (k_f + np.arange(n_samples)) * sample_dt
    return SplittingEstimate(times, P, e_s, e_flow, e_u, fn, flags)


@dataclass
class HyperbolicityCheck:
    """Pass fractions of the three splitting inequalities at ``theta``."""

    theta: float
    t_grid: list
    n_samples: int
    pass_fraction: dict
    worst_margin: dict
    literal_domination_pass: float
    theta_certified: float
    required_fraction: float
    theta_required: np.ndarray = field(repr=False)

    def fraction_at(self, theta):
        return float(np.mean(self.theta_required <= theta))

    def to_dict(self):
        return {"theta": self.theta, "t_grid": list(self.t_grid), "n_samples": self.n_samples,
                "pass_fraction": self.pass_fraction, "worst_margin": self.worst_margin,
                "literal_domination_pass": self.literal_domination_pass,
                "theta_certified": self.theta_certified,
                "required_fraction": self.required_fraction}


def tangent_maps_at(spec, x0, t_grid, cfg=None, chunk=0.25):
    """``DX^t(x0)`` for ascending ``t_grid`` along one orbit."""
    cfg = cfg or DEFAULT_CONFIG
    model = kernel_model(spec, block=1, m=3)
    p, acc, t0, h = np.asarray(x0, float), np.eye(3), 0.0, 0.0
    out = []
    for t in t_grid:
        while t0 < t - 1e-15 * max(1.0, t):
            dt = min(chunk, t - t0)
            status, y, h, *_ = kernels.backend.integrate(
                model, np.concatenate([p, np.eye(3).ravel()]), dt, cfg.opts(h), False)
            check_status(status, "tangent_maps_at")
            acc = y[3:].reshape(3, 3) @ acc
            p = y[:3]
            t0 += dt
        out.append(acc.copy())
    return out


def check_singular_hyperbolicity(split, spec, t_grid, theta, cfg=None, required=0.9):
    """Test domination (conorm form), contraction of E^s and volume expansion of E^cu.

    E^cu is ``span(e_flow, e_u)``.  Per sample and ``t``:

    1. ``|DX^t e_s| / m(DX^t|E^cu) <= theta^t`` with ``m`` the conorm,
    2. ``|DX^t e_s| < theta^t``,
    3. ``|det DX^t|E^cu| >= exp(-theta t)``.

    The literal product ``|DX^t e_s| |DX^t|E^cu|`` is reported alongside.
    ``theta_certified`` is the smallest theta in (0, 1) for which at least
    ``required`` of all (sample, t) cells satisfy all three (nan if none).
    """
    if not 0 < theta < 1:
        raise ValueError("theta must lie in (0,1)")
    ok = np.isfinite(split.e_flow).all(axis=1)
    if int(ok.sum()) < 1:
        raise InsufficientSamples("no samples with a defined flow direction")
    t_grid = sorted(float(t) for t in t_grid)
    if any(t <= 0 for t in t_grid):
        raise ValueError("t_grid must be positive")
    rows = []
    for p, es, ef, eu in zip(split.points[ok], split.e_s[ok], split.e_flow[ok], split.e_u[ok]):
        Bcu, _ = np.linalg.qr(np.column_stack([ef, eu]))
        for t, D in zip(t_grid, tangent_maps_at(spec, p, t_grid, cfg)):
            s_rate = float(np.linalg.norm(D @ es))
            sv = np.linalg.svd(D @ Bcu, compute_uv=False)
            rows.append((t, s_rate, sv[0], sv[1]))
    rows = np.array(rows)
    t, s_rate, big, small = rows.T
    th_t = theta ** t
    dom = s_rate / small <= th_t
    con = s_rate < th_t
    vol = big * small >= np.exp(-theta * t)
    literal = s_rate * big <= th_t
    allp = dom & con & vol
    # smallest theta satisfying each inequality per cell
    req = np.maximum.reduce([(s_rate / small) ** (1 / t), s_rate ** (1 / t),
                             np.maximum(0.0, -np.log(big * small) / t)])
    q = float(np.quantile(req, required, method="higher"))
    margins = {
        "domination": float(np.min(np.log(th_t) - np.log(s_rate / small))),
        "contraction": float(np.min(np.log(th_t) - np.log(s_rate))),
        "volume": float(np.min(np.log(big * small) + theta * t)),
    }
    fr = {"domination": float(dom.mean()), "contraction": float(con.mean()),
          "volume": float(vol.mean()), "all": float(allp.mean())}
    return HyperbolicityCheck(theta, t_grid, int(ok.sum()), fr, margins, float(literal.mean()),
                              q if q < 1 else math.nan, required, req)
