"""Command-line front end.

Exit status: 0 when every check passes, 2 for configuration errors, 3 when
a computed quantity misses its tolerance.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from . import __version__
from .ito_integral import (
    COSINE,
    IDENTITY,
    SQUARE,
    IntegrandSpec,
    increment_property,
    ito_check,
    restriction_property,
    verify_integral,
    wick_shift_property,
)
from .kernel import KernelConfig, covariance, gram, variance_r
from .operator_tm import Window
from .s_transform import (
    Probe,
    direction_variance,
    pair,
    s_closed,
    s_gaussian,
    s_monte_carlo,
    standard_probes,
)
from .sampling import Method, column_means, empirical_covariance, girsanov_check, sample
from .spectral import DensityKind, ParameterError, make_builtin
from .wick import WickExponential, WickPolynomial, hermite_coeffs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TOLERANCE = 3

SECTIONS = {
    "density": {"kind", "H", "Delta"},
    "kernel": {"freq_cutoff", "abs_tol", "max_panels", "graded_mesh_levels", "half_periods"},
    "grid": {"times", "t_max", "n_times"},
    "mc": {"n", "seed", "method"},
    "probes": {"bumps"},
    "ito": {"tau"},
    "girsanov": {"f_end"},
    "output": {"dir"},
}

DEFAULTS = {
    "density": {"kind": "white"},
    "kernel": {},
    "grid": {"t_max": 3.0, "n_times": 16},
    "mc": {"n": 20000, "method": "cholesky"},
    "probes": {},
    "ito": {"tau": 1.0},
    "girsanov": {"f_end": 1.0},
    "output": {"dir": "."},
}


class ConfigError(ValueError):
    pass


def parse_density(text):
    """``KIND[:key=value,...]``, e.g. ``fractional:H=0.75``."""
    kind, _, rest = text.partition(":")
    out = {"kind": kind.strip()}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"density parameter {item!r} is not of the form key=value")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"density parameter {key.strip()!r} is not a number: {value!r}") from None
    return out


def load_config(path=None, density=None, seed=None, out=None):
    """Merge defaults, the TOML file and command-line overrides; validate every key."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    cfg = {name: dict(values) for name, values in DEFAULTS.items()}
    for section, values in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"config key {section!r} must be a section")
        for key, value in values.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            cfg[section][key] = value
    if density is not None:
        cfg["density"] = parse_density(density)
    if seed is not None:
        cfg["mc"]["seed"] = seed
    if out is not None:
        cfg["output"]["dir"] = str(out)
    _validate(cfg)
    return cfg


def _number(cfg, section, key, positive=True, integer=False):
    value = cfg[section].get(key)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config key {section}.{key} must be a number, got {value!r}")
    if integer and value != int(value):
        raise ConfigError(f"config key {section}.{key} must be an integer, got {value!r}")
    if positive and not value > 0:
        raise ConfigError(f"config key {section}.{key} must be positive, got {value!r}")
    return int(value) if integer else float(value)


def _validate(cfg):
    d = cfg["density"]
    try:
        kind = DensityKind(d.get("kind"))
    except ValueError:
        raise ConfigError(f"config key density.kind has unknown value {d.get('kind')!r}") from None
    if kind is DensityKind.CUSTOM:
        raise ConfigError("config key density.kind: custom densities are library-only")
    for key in set(d) - {"kind"}:
        if key not in SECTIONS["density"]:
            raise ConfigError(f"unknown config key density.{key}")
        _number(cfg, "density", key)
    try:
        make_builtin(kind, **{k: v for k, v in d.items() if k != "kind"})
    except ParameterError as exc:
        raise ConfigError(f"config section [density]: {exc}") from None
    for key in ("freq_cutoff", "abs_tol"):
        _number(cfg, "kernel", key)
    for key in ("max_panels", "graded_mesh_levels", "half_periods"):
        _number(cfg, "kernel", key, integer=True)
    times = cfg["grid"].get("times")
    if times is not None:
        if not isinstance(times, list) or not times or not all(
            isinstance(t, (int, float)) and not isinstance(t, bool) for t in times
        ):
            raise ConfigError("config key grid.times must be a non-empty list of numbers")
        if len(set(times)) != len(times):
            raise ConfigError("config key grid.times must not repeat values")
    _number(cfg, "grid", "t_max")
    _number(cfg, "grid", "n_times", integer=True)
    _number(cfg, "mc", "n", integer=True)
    seed = cfg["mc"].get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ConfigError(f"config key mc.seed must be a nonnegative integer, got {seed!r}")
    if cfg["mc"].get("method") not in {m.value for m in Method}:
        raise ConfigError(f"config key mc.method must be one of {[m.value for m in Method]}")
    bumps = cfg["probes"].get("bumps")
    if bumps is not None and not (
        isinstance(bumps, list) and bumps
        and all(isinstance(b, list) and len(b) == 2 and b[1] > 0 for b in bumps)
    ):
        raise ConfigError("config key probes.bumps must be a list of [centre, width] pairs with width > 0")
    _number(cfg, "ito", "tau")
    _number(cfg, "girsanov", "f_end")


def density_of(cfg):
    d = cfg["density"]
    return make_builtin(d["kind"], **{k: v for k, v in d.items() if k != "kind"})


def kernel_config_of(cfg):
    return KernelConfig(**cfg["kernel"])


def times_of(cfg):
    g = cfg["grid"]
    if g.get("times") is not None:
        return [float(t) for t in g["times"]]
    n, t_max = int(g["n_times"]), float(g["t_max"])
    return [t_max * (i + 1) / n for i in range(n)]


def probes_of(cfg):
    bumps = cfg["probes"].get("bumps")
    if bumps is None:
        return standard_probes()
    return tuple(Probe.gaussian(float(c), float(w)) for c, w in bumps)


def require_seed(cfg):
    seed = cfg["mc"].get("seed")
    if seed is None:
        raise ConfigError("config key mc.seed is required for Monte-Carlo subcommands (or pass --seed)")
    return int(seed)


# ---------------------------------------------------------------- output

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_json(path, payload, cfg):
    # the output location is not part of the computation, so runs written to
    # different directories stay byte-identical
    resolved = {k: v for k, v in cfg.items() if k != "output"}
    doc = {"version": __version__, "config": resolved, **payload}
    text = json.dumps(_plain(doc), sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(float(v), ".17g") for v in row])


# ---------------------------------------------------------------- subcommands

def cmd_kernel(cfg, out):
    m, kc, times = density_of(cfg), kernel_config_of(cfg), times_of(cfg)
    rows = [(t, s, covariance(m, t, s, kc), variance_r(m, t, kc)) for t in times for s in times]
    write_csv(out / "kernel.csv", ["t", "s", "K", "r_t"], rows)
    return True


def _covariance_summary(ens, analytic):
    emp, err = empirical_covariance(ens)
    z = np.abs(emp - analytic) / err
    means, mean_err = column_means(ens)
    frac = float(np.mean(z <= 3.0))
    means_ok = bool(np.all(np.abs(means) <= 5.0 * mean_err))
    return {
        "empirical": emp, "stderr": err, "analytic": analytic, "fraction_within_3_stderr": frac,
        "column_means": means, "column_mean_stderr": mean_err, "means_within_5_stderr": means_ok,
        "passed": frac >= 0.95 and means_ok,
    }


def cmd_sample(cfg, out):
    m, kc, times = density_of(cfg), kernel_config_of(cfg), times_of(cfg)
    seed = require_seed(cfg)
    ens = sample(m, times, int(cfg["mc"]["n"]), seed=seed, method=cfg["mc"]["method"], cfg=kc)
    write_csv(out / "draws.csv", [f"B({t:g})" for t in ens.times], ens.draws)
    summary = _covariance_summary(ens, gram(m, ens.times, kc).values)
    write_json(out / "sample.json", {"times": ens.times, "method": ens.method.value, "info": ens.info,
                                     "covariance": summary, "passed": summary["passed"]}, cfg)
    return summary["passed"]


def _route_agreement(m, probes, kc, mc_n, seed, tau):
    """Closed form, Gauss-Hermite and (optionally) Monte Carlo for targets in the direction 1_tau."""
    d = Window(tau)
    v = direction_variance(m, d, kc)
    targets = [(f"h~_{n}", WickPolynomial.basis(n, v), lambda x, n=n: _hermite(n, v, x)) for n in range(5)]
    targets.append((":e:", WickExponential(v), lambda x: np.exp(x - 0.5 * v)))
    powers = [("x", lambda a: a, lambda x: x), ("x^2", lambda a: a * a + v, lambda x: x * x),
              ("e^x", lambda a: math.exp(a + 0.5 * v), np.exp)]
    ens = None
    if mc_n:
        ens = sample(m, [tau], mc_n, seed=seed, directions=[p.s for p in probes], cfg=kc)
    rows, worst_gq, worst_z = [], 0.0, 0.0
    for p in probes:
        a = pair(m, p, d, kc)
        cases = [(name, s_closed(m, target, p, d, kc).value, F) for name, target, F in targets]
        cases += [(name, closed(a), F) for name, closed, F in powers]
        for name, closed_value, F in cases:
            gq = s_gaussian(m, d, F, p, cfg=kc).value
            row = {"probe": p.label, "target": name, "closed_form": closed_value, "gauss_quadrature": gq,
                   "discrepancy": abs(gq - closed_value)}
            worst_gq = max(worst_gq, row["discrepancy"])
            if ens is not None:
                mc = s_monte_carlo(m, ens, F(ens.paths[:, 0]), p)
                row.update(monte_carlo=mc.value, mc_stderr=mc.stderr, mc_z=(mc.value - closed_value) / mc.stderr)
                worst_z = max(worst_z, abs(row["mc_z"]))
            rows.append(row)
    passed = worst_gq < 1e-8 and worst_z < 4.0
    return {"identity": "S-transform route agreement", "rows": rows, "max_discrepancy": worst_gq,
            "max_abs_mc_z": worst_z if ens is not None else None, "tolerance": 1e-8, "passed": passed}


def _hermite(n, v, x):
    return sum(c * v**k * x ** (n - 2 * k) for k, c in enumerate(hermite_coeffs(n)))


def cmd_verify_identities(cfg, out):
    m, kc, probes = density_of(cfg), kernel_config_of(cfg), probes_of(cfg)
    tau = float(cfg["ito"]["tau"])
    reports = [verify_integral(m, IntegrandSpec.deterministic(0.0, tau), probes, cfg=kc)]
    reports.append(verify_integral(m, IntegrandSpec.path_power(1, 0.0, tau), probes, cfg=kc))
    reports += [verify_integral(m, IntegrandSpec.wick_chain(n, 0.0, tau), probes, cfg=kc) for n in range(6)]
    reports.append(verify_integral(m, IntegrandSpec.wick_exp(0.0, tau), probes, cfg=kc))
    direction = Window(tau)
    y = WickPolynomial.basis(1, direction_variance(m, direction, kc))
    reports.append(wick_shift_property(m, y, direction, IntegrandSpec.wick_chain(1, 0.0, tau), probes, cfg=kc))
    reports.append(increment_property(m, 0.5 * tau, 2.0 * tau, probes, cfg=kc))
    reports.append(restriction_property(m, IntegrandSpec.wick_chain(2, 0.0, tau), 0.5 * tau, tau, probes, cfg=kc))
    docs = [r.to_dict() for r in reports]
    seed = cfg["mc"].get("seed")
    mc_n = int(cfg["mc"]["n"]) if seed is not None else 0
    docs.append(_route_agreement(m, probes, kc, mc_n, seed, tau))
    passed = all(d["passed"] for d in docs)
    write_json(out / "identities.json", {"identities": docs, "passed": passed}, cfg)
    _print_table(docs)
    return passed


def _print_table(docs):
    for d in docs:
        err = d.get("max_error", d.get("max_discrepancy"))
        print(f"{'PASS' if d['passed'] else 'FAIL'}  {err:.3e}  {d['identity']}")


def cmd_ito_check(cfg, out):
    m, kc, probes = density_of(cfg), kernel_config_of(cfg), probes_of(cfg)
    seed = require_seed(cfg)
    tau, n = float(cfg["ito"]["tau"]), int(cfg["mc"]["n"])
    docs = []
    for F, tol in ((SQUARE, 1e-5), (IDENTITY, 1e-5), (COSINE, 1e-6)):
        rep = ito_check(m, F, tau, n_mc=n, seed=seed, probes=probes, tolerance=tol, cfg=kc)
        doc = rep.to_dict()
        doc["expectation_passed"] = rep.details["expectation"]["error"] < tol
        doc["passed"] = doc["passed"] and doc["expectation_passed"]
        docs.append(doc)
    passed = all(d["passed"] for d in docs)
    write_json(out / "ito.json", {"cases": docs, "passed": passed}, cfg)
    _print_table(docs)
    return passed


def cmd_girsanov_check(cfg, out):
    m, kc, times = density_of(cfg), kernel_config_of(cfg), times_of(cfg)
    seed = require_seed(cfg)
    f = Window(float(cfg["girsanov"]["f_end"]))
    rep = girsanov_check(m, f, times, int(cfg["mc"]["n"]), seed=seed, cfg=kc)
    write_json(out / "girsanov.json", {"direction": f.label, "report": rep.to_dict(), "passed": rep.passed}, cfg)
    return rep.passed


COMMANDS = {
    "kernel": cmd_kernel,
    "sample": cmd_sample,
    "verify-identities": cmd_verify_identities,
    "ito-check": cmd_ito_check,
    "girsanov-check": cmd_girsanov_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="spectral-wick", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML config file")
        p.add_argument("--seed", type=int, help="overrides mc.seed")
        p.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        p.add_argument("--density", help="KIND[:key=value,...], e.g. fractional:H=0.75")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.density, args.seed, args.out)
        out = Path(cfg["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        ok = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not ok:
        print("tolerance check failed", file=sys.stderr)
        return EXIT_TOLERANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
