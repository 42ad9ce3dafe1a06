"""Run configuration: strict JSON schema, validation and defaults.

A config is a JSON object with a required ``format_version`` and an
``experiment`` name.  Optional blocks: ``system``, ``integrator``,
``section``, ``generator`` and ``params`` (experiment specific).  Unknown
keys anywhere are violations; validation reports every violation found.
"""

from __future__ import annotations

import copy
import json
import math

from .errors import ConfigError

FORMAT_VERSION = "1"

EXPERIMENTS = (
    "flow-spectrum", "map-oracle", "section-sample", "bunching", "splitting-check",
    "relation-check", "suspension-check", "simplicity-scan", "openness-probe", "birkhoff",
)

_NUM = (int, float)


def _is_num(v):
    return isinstance(v, _NUM) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


# validators return an error message or None
def number(v):
    return None if _is_num(v) else "must be a finite number"


def positive(v):
    return None if _is_num(v) and v > 0 else "must be a positive number"


def nonneg(v):
    return None if _is_num(v) and v >= 0 else "must be a non-negative number"


def unit_open(v):
    return None if _is_num(v) and 0 < v < 1 else "must lie in (0,1)"


def eta_range(v):
    return None if _is_num(v) and 0 < v <= 1 else "must lie in (0,1]"


def fraction(v):
    return None if _is_num(v) and 0 <= v <= 1 else "must lie in [0,1]"


def pos_int(v):
    return None if _is_int(v) and v >= 1 else "must be a positive integer"


def nonneg_int(v):
    return None if _is_int(v) and v >= 0 else "must be a non-negative integer"


def integer(v):
    return None if _is_int(v) else "must be an integer"


def boolean(v):
    return None if isinstance(v, bool) else "must be true or false"


def vec3(v):
    ok = isinstance(v, list) and len(v) == 3 and all(_is_num(x) for x in v)
    return None if ok else "must be a list of 3 numbers"


def optional(check):
    def f(v):
        return None if v is None else check(v)
    return f


def one_of(*choices):
    def f(v):
        return None if v in choices else f"must be one of {list(choices)}"
    return f


def num_list(ascending=False, positive_only=False, nonneg_only=False, min_len=1):
    def f(v):
        if not isinstance(v, list) or len(v) < min_len or not all(_is_num(x) for x in v):
            return f"must be a list of at least {min_len} number(s)"
        if positive_only and any(x <= 0 for x in v):
            return "entries must be positive"
        if nonneg_only and any(x < 0 for x in v):
            return "entries must be non-negative"
        if ascending and any(b <= a for a, b in zip(v, v[1:])):
            return "must be strictly ascending"
        return None
    return f


def str_list(choices):
    def f(v):
        if not isinstance(v, list) or not v or any(x not in choices for x in v):
            return f"must be a non-empty list drawn from {sorted(choices)}"
        return None
    return f


SYSTEM = {
    "kind": ("lorenz", one_of("lorenz", "linear_singularity")),
    "sigma": (10.0, positive),
    "r": (28.0, positive),
    "b": (8.0 / 3.0, positive),
    "alpha_ss": (-3.0, number),
    "alpha_s": (-1.0, number),
    "alpha_u": (2.0, number),
}

INTEGRATOR = {
    "method": ("dopri5", one_of("dopri5", "rk4")),
    "abs_tol": (1e-10, positive),
    "rel_tol": (1e-10, positive),
    "max_step": (0.1, positive),
    "max_time": (1e6, positive),
    "max_norm": (1e6, positive),
}

SECTION = {
    "preset": ("lorenz", one_of("lorenz")),
    "gamma_band_halfwidth": (1e-4, positive),
    "tau_min": (0.05, positive),
    "tau_max": (50.0, positive),
    "locate_gamma": (True, boolean),
    "calibration_returns": (400, pos_int),
}

GENERATOR = {
    "kind": ("random", one_of("random", "zero", "constant", "dynamical", "explicit")),
    "dim": (2, lambda v: None if _is_int(v) and v >= 2 else "must be an integer >= 2"),
    "scalars": ("real", one_of("real", "complex")),
    "traceless": (None, optional(boolean)),
    "seed": (0, integer),
    "scale": (1.0, nonneg),
    "matrix": (None, optional(lambda v: None if isinstance(v, list) else "must be a nested list")),
    "record": (None, optional(lambda v: None if isinstance(v, dict) else "must be an object")),
}

PARAMS = {
    "flow-spectrum": {
        "x0": ([1.0, 1.0, 20.0], vec3),
        "T": (10000.0, positive),
        "renorm_dt": (0.5, positive),
        "transient": (None, optional(positive)),
        "gap_floor": (1e-3, nonneg),
    },
    "map-oracle": {
        "n_matrices": (100, pos_int),
        "dims": ([2, 3], lambda v: None if isinstance(v, list) and v and all(
            _is_int(d) and d >= 2 for d in v) else "must be a list of integers >= 2"),
        "n_iterates": (1000, lambda v: None if _is_int(v) and v >= 100 else "must be an integer >= 100"),
        "discard": (500, nonneg_int),
        "min_separation": (0.1, positive),
        "seed": (0, integer),
    },
    "section-sample": {
        "x0": ([1.0, 1.0, 20.0], vec3),
        "n_returns": (1000, pos_int),
        "transient": (100.0, nonneg),
        "theta": (None, optional(unit_open)),
    },
    "bunching": {
        "form": ("both", one_of("flow", "map", "both")),
        "theta": (0.86, unit_open),
        "eta": (1.0, eta_range),
        "t_grid": ([0.5, 1.0, 2.0], num_list(ascending=True, positive_only=True)),
        "n_points": (20, pos_int),
        "n_returns": (200, pos_int),
        "return_order": (2, pos_int),
        "x0": ([1.0, 1.0, 20.0], vec3),
    },
    "splitting-check": {
        "x0": ([1.0, 1.0, 20.0], vec3),
        "transient": (100.0, nonneg),
        "T_forward": (20.0, positive),
        "T_backward": (5.0, positive),
        "sample_dt": (0.5, positive),
        "n_samples": (500, pos_int),
        "t_grid": ([0.5, 1.0], num_list(ascending=True, positive_only=True)),
        "theta": (0.9, unit_open),
        "required_fraction": (0.9, fraction),
    },
    "relation-check": {
        "n_returns": (20000, lambda v: None if _is_int(v) and v >= 100 else "must be an integer >= 100"),
        "discard_returns": (100, nonneg_int),
        "flow_horizon": (None, optional(positive)),
        "renorm_dt": (0.5, positive),
        "x0": ([1.0, 1.0, 20.0], vec3),
    },
    "suspension-check": {
        "x0": ([1.0, 1.0, 20.0], vec3),
        "n_returns": (100, pos_int),
        "n_matrix": (20, pos_int),
    },
    "simplicity-scan": {
        "epsilon_grid": ([0.05, 0.1, 0.2], num_list(ascending=True, nonneg_only=True)),
        "n_seeds": (50, pos_int),
        "gap_floor": (1e-4, nonneg),
        "horizon": (1000.0, positive),
        "renorm_dt": (0.5, positive),
        "transient": (50.0, positive),
        "x0": ([1.0, 1.0, 20.0], vec3),
        "theta": (0.86, unit_open),
        "eta": (1.0, eta_range),
        "target_fraction": (0.95, fraction),
        "seed_offset": (0, nonneg_int),
    },
    "openness-probe": {
        "delta_grid": ([0.001, 0.003, 0.01, 0.03], num_list(ascending=True, nonneg_only=True)),
        "n_seeds": (20, pos_int),
        "gap_floor": (1e-4, nonneg),
        "horizon": (1000.0, positive),
        "renorm_dt": (0.5, positive),
        "transient": (50.0, positive),
        "x0": ([1.0, 1.0, 20.0], vec3),
        "seed_offset": (0, nonneg_int),
        "mean_tau": (0.75, positive),
    },
    "birkhoff": {
        "observables": (["one", "x", "z", "z2", "z_above_27"],
                        str_list({"one", "x", "y", "z", "z2", "z_above_27"})),
        "n_points": (10, lambda v: None if _is_int(v) and v >= 2 else "must be an integer >= 2"),
        "seed": (0, integer),
        "T": (5000.0, positive),
        "transient": (50.0, nonneg),
        "dt": (0.01, positive),
    },
}

# generator defaults differ per experiment
GENERATOR_DEFAULT_KIND = {
    "flow-spectrum": "dynamical",
    "simplicity-scan": "zero",
    "openness-probe": "random",
    "bunching": "random",
}

# integrator defaults differing per experiment
INTEGRATOR_DEFAULTS = {
    "simplicity-scan": {"abs_tol": 1e-9, "rel_tol": 1e-9},
    "openness-probe": {"method": "rk4", "max_step": 0.005},
}

TOP = ("format_version", "experiment", "output_dir", "system", "integrator", "section",
       "generator", "params")


def _block(name, given, schema, errors):
    out = {}
    if given is None:
        given = {}
    if not isinstance(given, dict):
        errors.append(f"{name}: must be an object")
        return {k: copy.deepcopy(d) for k, (d, _) in schema.items()}
    for k in given:
        if k not in schema:
            errors.append(f"{name}: unknown key {k!r}")
    for k, (default, check) in schema.items():
        v = given.get(k, copy.deepcopy(default))
        if k in given:
            msg = check(v)
            if msg:
                errors.append(f"{name}.{k}: {msg}")
        out[k] = v
    return out


def resolve(raw):
    """Validate ``raw`` and return the config with every default filled in.

    Raises ``ConfigError`` listing all violations.
    """
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    for k in raw:
        if k not in TOP:
            errors.append(f"unknown key {k!r}")
    fv = raw.get("format_version")
    if fv is None:
        errors.append("format_version is required")
    elif str(fv) != FORMAT_VERSION:
        errors.append(f"format_version must be {FORMAT_VERSION!r}")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        errors.append(f"experiment must be one of {list(EXPERIMENTS)}")
    out = {"format_version": FORMAT_VERSION, "experiment": exp,
           "output_dir": raw.get("output_dir", "results")}
    if not isinstance(out["output_dir"], str):
        errors.append("output_dir must be a string")
    out["system"] = _block("system", raw.get("system"), SYSTEM, errors)
    int_schema = dict(INTEGRATOR)
    for k, v in INTEGRATOR_DEFAULTS.get(exp, {}).items():
        int_schema[k] = (v, INTEGRATOR[k][1])
    out["integrator"] = _block("integrator", raw.get("integrator"), int_schema, errors)
    out["section"] = _block("section", raw.get("section"), SECTION, errors)
    gen_schema = dict(GENERATOR)
    if exp in GENERATOR_DEFAULT_KIND:
        gen_schema["kind"] = (GENERATOR_DEFAULT_KIND[exp], GENERATOR["kind"][1])
    out["generator"] = _block("generator", raw.get("generator"), gen_schema, errors)
    if out["generator"]["traceless"] is None:
        out["generator"]["traceless"] = out["generator"]["kind"] in ("random", "zero")
    if exp in PARAMS:
        out["params"] = _block("params", raw.get("params"), PARAMS[exp], errors)
    else:
        out["params"] = {}
    errors.extend(_cross_checks(out))
    if errors:
        raise ConfigError(errors)
    return out


def _cross_checks(cfg):
    errs = []
    s = cfg["system"]
    if s["kind"] == "linear_singularity":
        if not (s["alpha_ss"] < 0 and s["alpha_s"] < 0 and s["alpha_u"] > 0):
            errs.append("system: linear singularity needs alpha_ss < 0, alpha_s < 0 < alpha_u")
    sec = cfg["section"]
    if _is_num(sec["tau_min"]) and _is_num(sec["tau_max"]) and sec["tau_min"] >= sec["tau_max"]:
        errs.append("section: tau_min must be below tau_max")
    g = cfg["generator"]
    if g["kind"] == "constant" and g["matrix"] is None:
        errs.append("generator.matrix is required for kind 'constant'")
    if g["kind"] == "explicit" and g["record"] is None:
        errs.append("generator.record is required for kind 'explicit'")
    if g["kind"] == "constant" and isinstance(g["matrix"], list):
        m = g["matrix"]
        if not (all(isinstance(r, list) and len(r) == len(m) and all(_is_num(x) for x in r)
                    for r in m) and len(m) >= 2):
            errs.append("generator.matrix must be a square numeric matrix of size >= 2")
    p = cfg["params"]
    exp = cfg["experiment"]
    if exp == "flow-spectrum" and _is_num(p.get("T")) and p.get("transient") is not None:
        if _is_num(p["transient"]) and p["transient"] >= p["T"]:
            errs.append("params: transient must be below T")
    if exp == "map-oracle" and _is_int(p.get("discard")) and _is_int(p.get("n_iterates")):
        if p["n_iterates"] - p["discard"] < 20:
            errs.append("params: discard must leave at least 20 iterates")
    if exp in ("simplicity-scan", "openness-probe"):
        if _is_num(p.get("transient")) and _is_num(p.get("horizon")) and p["transient"] >= p["horizon"]:
            errs.append("params: transient must be below horizon")
        if g["kind"] == "dynamical":
            errs.append("generator: scans need a generator field, not the dynamical cocycle")
    if exp in ("relation-check", "suspension-check", "section-sample", "bunching") and \
            s["kind"] != "lorenz":
        errs.append(f"{exp} needs the Lorenz system (the only section preset)")
    return errs


def load(path):
    """Read and resolve a config file; JSON syntax errors become ``ConfigError``."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError([f"invalid JSON: {e}"]) from e
    except OSError as e:
        raise ConfigError([f"cannot read config: {e}"]) from e
    return resolve(raw)


def demo(experiment):
    """Minimal ready-to-run config for ``experiment``."""
    if experiment not in EXPERIMENTS:
        raise ConfigError([f"experiment must be one of {list(EXPERIMENTS)}"])
    cfg = {"format_version": FORMAT_VERSION, "experiment": experiment,
           "output_dir": f"results-{experiment}"}
    if experiment == "flow-spectrum":
        cfg["generator"] = {"kind": "constant", "matrix": [[2.0, 0.0], [0.0, -1.0]],
                            "traceless": False}
        cfg["params"] = {"T": 200.0, "transient": 50.0}
    elif experiment == "simplicity-scan":
        cfg["params"] = {"n_seeds": 10}
    elif experiment == "openness-probe":
        cfg["params"] = {"n_seeds": 5}
    elif experiment == "bunching":
        cfg["generator"] = {"kind": "random", "seed": 0, "scale": 0.05}
    elif experiment == "splitting-check":
        cfg["params"] = {"n_samples": 100}
    elif experiment == "relation-check":
        cfg["params"] = {"n_returns": 2000}
    elif experiment == "birkhoff":
        cfg["params"] = {"T": 500.0, "n_points": 4}
    return cfg
