"""Command line entry point: ``cocyclelab run|validate|demo``.

``run`` writes three files into the output directory:

* ``results.json``: the experiment result plus the resolved config; keys
  sorted, non-finite numbers as ``null``, no timing data, so reruns are
  byte-identical;
* ``aggregates.csv``: plot-ready rows;
* ``manifest.json``: config echo, wall time, library versions, seed streams
  and any error.

Exit codes: 0 success, 2 invalid config, 3 numerical failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import time
import traceback

import numpy as np

from . import __version__, config as config_mod, kernels
from .errors import CocycleLabError, ConfigError, NumericalFailure

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2, 3


# builders ------------------------------------------------------------------

def build_spec(c):
    from .flows import VectorFieldSpec

    s = c["system"]
    if s["kind"] == "lorenz":
        return VectorFieldSpec.lorenz(s["sigma"], s["r"], s["b"])
    return VectorFieldSpec.linear_singularity(s["alpha_ss"], s["alpha_s"], s["alpha_u"])


def build_integrator(c):
    from .flows import IntegratorConfig

    return IntegratorConfig(**c["integrator"])


def build_generator(c):
    from .cocycles import CocycleGenerator

    g = c["generator"]
    kind = g["kind"]
    if kind == "dynamical":
        return CocycleGenerator.dynamical()
    if kind == "zero":
        return CocycleGenerator.zero(g["dim"], scalars=g["scalars"], traceless=g["traceless"])
    if kind == "constant":
        return CocycleGenerator.constant(np.array(g["matrix"], float), traceless=g["traceless"])
    if kind == "explicit":
        return CocycleGenerator.from_dict(g["record"])
    return CocycleGenerator.random(g["dim"], seed=g["seed"], scale=g["scale"],
                                   scalars=g["scalars"], traceless=g["traceless"])


def build_section(c, spec):
    from .sections import CrossSection

    return CrossSection.lorenz_default(
        spec, gamma_band_halfwidth=c["section"]["gamma_band_halfwidth"])


def _gen_stream(c):
    g = c["generator"]
    if g["kind"] != "random":
        return {}
    return {"generator": {"seed": g["seed"], "spawn_key": []}}


# experiment runners: each returns (result, csv rows, seed streams) ----------

def run_flow_spectrum(c, jobs):
    from .spectra import qr_lyapunov_flow, simplicity_verdict

    p = c["params"]
    spec, cfg, gen = build_spec(c), build_integrator(c), build_generator(c)
    s = qr_lyapunov_flow(gen, spec, p["x0"], p["T"], p["renorm_dt"], p["transient"], cfg)
    simple, gap, resolved = simplicity_verdict(s, p["gap_floor"])
    res = {"spectrum": s.to_dict(), "sum": float(np.sum(s.exponents)),
           "simple": simple, "min_gap": gap, "resolved": resolved}
    if gen.kind == "dynamical":
        res["divergence"] = spec.divergence
    rows = [{"index": i, "exponent": e, "half_width": h}
            for i, (e, h) in enumerate(zip(s.exponents, s.half_widths))]
    return res, rows, _gen_stream(c)


def run_map_oracle(c, jobs):
    from .experiments import map_oracle_check

    p = c["params"]
    r = map_oracle_check(p["n_matrices"], tuple(p["dims"]), p["n_iterates"], p["discard"],
                         p["min_separation"], p["seed"])
    rows = [{"dim": e["dim"], "index": e["index"], "error": e["error"]} for e in r.errors]
    streams = {"matrices": {"seed": p["seed"], "spawn_key": "[4, dim, index]"}}
    return r.to_dict(), rows, streams


def run_section_sample(c, jobs):
    from .experiments import DEFAULT_THETA
    from .sections import (attractor_point, hyperbolicity_report, locate_gamma,
                           return_time_stats, sample_orbit, section_directions,
                           stable_projection)

    p, sc = c["params"], c["section"]
    spec, cfg = build_spec(c), build_integrator(c)
    sec = build_section(c, spec)
    x = attractor_point(spec, sec, p["x0"], p["transient"], cfg)
    samples = sample_orbit(spec, sec, x, p["n_returns"], cfg, sc["tau_min"], sc["tau_max"])
    res = {"section": sec.to_dict(), "system": spec.to_dict(),
           "stats": return_time_stats(samples).to_dict(), "n_requested": p["n_returns"],
           "n_collected": len(samples)}
    theta = p["theta"] if p["theta"] is not None else DEFAULT_THETA
    try:
        kept, S, U, SI, UI = section_directions(spec, sec, samples)
        res["hyperbolicity"] = hyperbolicity_report(kept, theta, S, U, SI, UI).to_dict()
        q = stable_projection(kept, S, SI, split_radius=0.7, n_breaks=2)
        res["quotient"] = {"breaks": q.breaks.tolist(), "gamma_breaks": q.gamma_breaks.tolist(),
                           "order_violations": q.order_violations(),
                           "resolution": q.resolution}
        r = q.semiconjugacy_residuals()
        r = r[np.isfinite(r)]
        res["quotient"]["within_resolution"] = float(np.mean(r <= q.resolution)) if len(r) else None
        if sc["locate_gamma"]:
            lines = locate_gamma(spec, sec, kept, S, q, cfg, tau_max=sc["tau_max"])
            res["gamma_lines"] = [{"point": list(g.point), "direction": list(g.direction),
                                   "jump": g.jump}
                                  for g in lines]
    except CocycleLabError as e:
        if isinstance(e, NumericalFailure):
            raise
        res["diagnostics_error"] = f"{type(e).__name__}: {e}"
    rows = [{"x1": s.x[0], "x2": s.x[1], "fx1": s.fx[0], "fx2": s.fx[1], "tau": s.tau,
             "d11": s.d_return[0, 0], "d12": s.d_return[0, 1], "d21": s.d_return[1, 0],
             "d22": s.d_return[1, 1], "censored": int(s.censored)} for s in samples]
    return res, rows, {}


def run_bunching(c, jobs):
    from .cocycles import check_bunching_flow
    from .experiments import bunching_transfer
    from .sections import attractor_point, sample_orbit

    p, sc = c["params"], c["section"]
    spec, cfg, gen = build_spec(c), build_integrator(c), build_generator(c)
    sec = build_section(c, spec)
    x = attractor_point(spec, sec, p["x0"], 100.0, cfg)
    need = p["n_returns"] * p["return_order"]
    samples = sample_orbit(spec, sec, x, need, cfg, sc["tau_min"], sc["tau_max"])
    res = {}
    if p["form"] == "flow":
        pts = [s.point for s in samples[:p["n_points"]]]
        res["flow"] = check_bunching_flow(gen, spec, pts, p["theta"], p["eta"], p["t_grid"],
                                          cfg).to_dict()
    else:
        t = bunching_transfer(gen, spec, samples, p["theta"], p["eta"], p["t_grid"], cfg,
                              p["return_order"])
        res = t.to_dict()
        if p["form"] == "map":
            res.pop("flow")
    rows = [{"form": k, "gamma_star": v["gamma_star"], "verdict": int(v["verdict"])}
            for k, v in sorted(res.items()) if isinstance(v, dict) and "gamma_star" in v]
    return res, rows, _gen_stream(c)


def run_splitting_check(c, jobs):
    from .flows import flow_map
    from .spectra import check_singular_hyperbolicity, covariant_splitting

    p = c["params"]
    spec, cfg = build_spec(c), build_integrator(c)
    x0 = flow_map(spec, p["x0"], p["transient"], cfg) if p["transient"] > 0 else p["x0"]
    split = covariant_splitting(spec, x0, p["T_forward"], p["T_backward"], cfg,
                                p["sample_dt"], p["n_samples"])
    chk = check_singular_hyperbolicity(split, spec, p["t_grid"], p["theta"], cfg,
                                       p["required_fraction"])
    res = {"system": spec.to_dict(), "splitting_flags": split.flags, "check": chk.to_dict()}
    th = chk.theta_certified
    if math.isfinite(th):
        at = check_singular_hyperbolicity(split, spec, p["t_grid"], th, cfg,
                                          p["required_fraction"])
        res["at_theta_certified"] = at.to_dict()
    ang = split.angles
    rows = [{"time": float(t), **{k: float(v[i]) for k, v in ang.items()}}
            for i, t in enumerate(split.times)]
    return res, rows, {}


def run_relation_check(c, jobs):
    from .experiments import relation_experiment

    p, sc = c["params"], c["section"]
    spec, cfg, gen = build_spec(c), build_integrator(c), build_generator(c)
    sec = build_section(c, spec)
    from .sections import attractor_point

    x = attractor_point(spec, sec, p["x0"], 100.0, cfg)
    r = relation_experiment(gen, spec, sec, p["n_returns"], cfg, x, p["discard_returns"],
                            p["flow_horizon"], p["x0"], p["renorm_dt"], sc["tau_min"],
                            sc["tau_max"], jobs=jobs)
    rows = [{"index": i, "map": a, "scaled_flow": b, "error": e}
            for i, ((a, b), e) in enumerate(zip(
                zip(r.map["exponents"], [r.mean_tau * f for f in r.flow["exponents"]]),
                r.errors))]
    return r.to_dict(), rows, _gen_stream(c)


def run_suspension_check(c, jobs):
    from .experiments import suspension_consistency
    from .sections import attractor_point

    p, sc = c["params"], c["section"]
    spec, cfg, gen = build_spec(c), build_integrator(c), build_generator(c)
    sec = build_section(c, spec)
    x = attractor_point(spec, sec, p["x0"], 100.0, cfg)
    r = suspension_consistency(gen, spec, sec, p["n_returns"], cfg, x, sc["tau_min"],
                               sc["tau_max"], p["n_matrix"])
    rows = [{"legs": k + 1, "matrix_error": e} for k, e in enumerate(r.matrix_errors)]
    return r.to_dict(), rows, _gen_stream(c)


def _scan_config(c, base):
    from .experiments import ScanConfig

    p = c["params"]
    return ScanConfig(dim=base.dim, epsilon_grid=tuple(p.get("epsilon_grid", (0.1,))),
                      n_seeds=p["n_seeds"], gap_floor=p["gap_floor"], horizon=p["horizon"],
                      renorm_dt=p["renorm_dt"], transient=p["transient"], base_generator=base,
                      spec=build_spec(c), x0=tuple(p["x0"]), integrator=build_integrator(c),
                      seed_offset=p["seed_offset"], theta=p.get("theta", 0.86),
                      eta=p.get("eta", 1.0),
                      target_fraction=p.get("target_fraction", 0.95))


def run_simplicity_scan(c, jobs):
    from .experiments import SCAN_ID, simplicity_scan

    base = build_generator(c)
    cfg = _scan_config(c, base)
    r = simplicity_scan(cfg, jobs)
    rows = [e.to_dict() for e in r.per_epsilon]
    for row in rows:
        q = row.pop("gap_quantiles")
        row.update(gap_q10=q[0], gap_q50=q[1], gap_q90=q[2])
    streams = {"perturbations": {"seeds": [cfg.seed_offset, cfg.seed_offset + cfg.n_seeds - 1],
                                 "spawn_key": f"[{SCAN_ID}, epsilon_index]"}}
    return r.to_dict(), rows, streams


def run_openness_probe(c, jobs):
    from .experiments import OPENNESS_ID, openness_probe

    p = c["params"]
    base = build_generator(c)
    cfg = _scan_config(c, base)
    r = openness_probe(base, p["delta_grid"], p["n_seeds"], cfg, p["mean_tau"], jobs)
    rows = [{"delta": d, "retention": f, "min_gap": g}
            for d, f, g in zip(r.deltas, r.retention, r.min_gaps)]
    streams = dict(_gen_stream(c))
    streams["perturbations"] = {"seeds": [cfg.seed_offset, cfg.seed_offset + p["n_seeds"] - 1],
                                "spawn_key": f"[{OPENNESS_ID}, delta_index]"}
    return r.to_dict(), rows, streams


def run_birkhoff(c, jobs):
    from .experiments import birkhoff_check, random_initial_points

    p = c["params"]
    spec, cfg = build_spec(c), build_integrator(c)
    x0s = random_initial_points(p["n_points"], p["seed"])
    reps = birkhoff_check(spec, list(p["observables"]), x0s, p["T"], cfg, p["transient"],
                          p["dt"], jobs)
    res = {"system": spec.to_dict(), "initial_points": [list(x) for x in x0s],
           "observables": {r.observable: r.to_dict() for r in reps}}
    rows = [{"observable": r.observable, "mean": float(np.mean(r.averages)),
             "spread": r.spread, "relative_spread": r.relative_spread} for r in reps]
    return res, rows, {"initial_points": {"seed": p["seed"], "spawn_key": [3]}}


RUNNERS = {
    "flow-spectrum": run_flow_spectrum,
    "map-oracle": run_map_oracle,
    "section-sample": run_section_sample,
    "bunching": run_bunching,
    "splitting-check": run_splitting_check,
    "relation-check": run_relation_check,
    "suspension-check": run_suspension_check,
    "simplicity-scan": run_simplicity_scan,
    "openness-probe": run_openness_probe,
    "birkhoff": run_birkhoff,
}


# output --------------------------------------------------------------------

def to_jsonable(obj):
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return {"re": to_jsonable(obj.real), "im": to_jsonable(obj.imag)}
    return obj


def dumps(obj):
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def rows_to_csv(rows):
    buf = io.StringIO()
    if not rows:
        return ""
    cols = list(rows[0])
    for r in rows[1:]:
        cols += [k for k in r if k not in cols]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        out = []
        for k in cols:
            v = to_jsonable(r.get(k))
            out.append("" if v is None else repr(v) if isinstance(v, float) else v)
        w.writerow(out)
    return buf.getvalue()


def _versions():
    import scipy

    return {"cocyclelab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "kernel_backend": kernels.BACKEND_NAME}


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def apply_overrides(raw, output=None, seed_offset=None):
    """Command line overrides applied to the raw config before validation."""
    raw = dict(raw)
    if output is not None:
        raw["output_dir"] = output
    if seed_offset:
        params = dict(raw.get("params") or {})
        if raw.get("experiment") in ("simplicity-scan", "openness-probe"):
            params["seed_offset"] = params.get("seed_offset", 0) + seed_offset
        elif raw.get("experiment") in ("map-oracle", "birkhoff"):
            params["seed"] = params.get("seed", 0) + seed_offset
        raw["params"] = params
        gen = dict(raw.get("generator") or {})
        gen["seed"] = gen.get("seed", 0) + seed_offset
        raw["generator"] = gen
    return raw


def execute(cfg, jobs=None):
    """Run a resolved config and write its output files; returns the exit code."""
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    jobs = jobs or os.cpu_count() or 1
    manifest = {"format_version": config_mod.FORMAT_VERSION, "config": cfg,
                "versions": _versions(), "jobs": jobs, "errors": []}
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        result, rows, streams = RUNNERS[cfg["experiment"]](cfg, jobs)
        manifest["seed_streams"] = streams
        # output_dir is left out so results do not depend on where they were written
        echo = {k: v for k, v in cfg.items() if k != "output_dir"}
        _write(os.path.join(out, "results.json"),
               dumps({"format_version": config_mod.FORMAT_VERSION,
                      "experiment": cfg["experiment"], "config": echo, "result": result}))
        _write(os.path.join(out, "aggregates.csv"), rows_to_csv(rows))
        manifest["outputs"] = ["results.json", "aggregates.csv", "manifest.json"]
    except NumericalFailure as e:
        code = EXIT_NUMERICAL
        manifest["errors"].append(f"{type(e).__name__}: {e}")
    except Exception as e:  # noqa: BLE001 - recorded in the manifest
        code = EXIT_OTHER
        manifest["errors"].append(f"{type(e).__name__}: {e}")
        manifest["traceback"] = traceback.format_exc()
    manifest["wall_time_s"] = time.perf_counter() - t0
    manifest["exit_code"] = code
    _write(os.path.join(out, "manifest.json"), dumps(manifest))
    for msg in manifest["errors"]:
        print(f"error: {msg}", file=sys.stderr)
    return code


def _parser():
    ap = argparse.ArgumentParser(prog="cocyclelab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the experiment in a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    r.add_argument("--output", default=None, help="override output_dir")
    r.add_argument("--seed-offset", type=int, default=0)
    v = sub.add_parser("validate", help="check a config without running it")
    v.add_argument("--config", required=True)
    d = sub.add_parser("demo", help="print a ready-made config")
    d.add_argument("experiment", choices=config_mod.EXPERIMENTS)
    d.add_argument("--output", default=None, help="write to this file instead of stdout")
    return ap


def _read_raw(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError([f"invalid JSON: {e}"]) from e
    except OSError as e:
        raise ConfigError([f"cannot read config: {e}"]) from e


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "demo":
        text = json.dumps(config_mod.demo(args.experiment), indent=2, sort_keys=True) + "\n"
        if args.output:
            _write(args.output, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    try:
        raw = _read_raw(args.config)
        if args.command == "run":
            raw = apply_overrides(raw, args.output, args.seed_offset)
        cfg = config_mod.resolve(raw)
    except ConfigError as e:
        for v in e.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print("ok")
        return EXIT_OK
    if args.jobs is not None and args.jobs < 1:
        print("violation: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
