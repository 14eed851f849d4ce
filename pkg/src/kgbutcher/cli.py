"""Command-line experiment runner.

Subcommands: ``trees``, ``classical``, ``convergence``, ``quantum`` and
``sweep``.  Parameters come from built-in defaults, then an optional flat
``key=value`` file (``--config``), then command-line flags.  Every key is
validated before any computation starts.

Output goes to standard output unless an output directory is given with
``--out`` or the ``KGBUTCHER_OUTPUT_DIR`` environment variable.  Exit codes:
0 success, 2 configuration error, 3 numerical divergence, 4 Fock-cutoff
error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import ptree
from .analysis import fit_loglog
from .exceptions import ConfigError, KGError
from .experiments import classical_report, residual_study, series_accuracy_study
from .initial_data import normalized_cauchy, parse_family
from .lattice import CauchyData, GridSpec
from .quantum import QuantumLatticeSpec, verify_heisenberg_identity, verify_unitarity
from .reference import SCHEMES
from .series import SeriesConfig
from .validation import check_integer, check_real, check_time_grid

SCHEMA_VERSION = 1
OUTPUT_ENV = "KGBUTCHER_OUTPUT_DIR"


@dataclass(frozen=True)
class Key:
    name: str
    kind: type
    default: object
    flag: str
    help: str = ""


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(_expr(v)) for v in str(text).split(",") if v.strip()]


def _expr(text):
    """Numbers, optionally written as powers like ``2^-6``."""
    t = str(text).strip()
    if "^" in t:
        base, exp = t.split("^", 1)
        return float(base) ** float(exp)
    return float(t)


KEYS = {
    k.name: k
    for k in [
        Key("p", int, 2, "--p", "nonlinearity power"),
        Key("max_order", int, 4, "--max-order", "largest tree order (trees)"),
        Key("lambda", float, 0.0, "--lambda", "coupling constant"),
        Key("order", int, 3, "--order", "series truncation order"),
        Key("dims", int, 1, "--dims", "spatial dimension"),
        Key("grid_n", int, 64, "--grid-n", "grid points per axis"),
        Key("box_L", float, 2 * math.pi, "--box-L", "box length"),
        Key("mass", float, 1.0, "--mass", "mass m"),
        Key("horizon_T", float, 0.5, "--T", "time horizon"),
        Key("dt", float, 1e-2, "--dt", "time step"),
        Key("sobolev_q", int, 1, "--q", "Sobolev index"),
        Key("dealias", _bool, False, "--dealias", "zero-pad products"),
        Key("phi0", str, "bandlimited:1:3", "--phi0", "initial field family"),
        Key("phi1", str, "bandlimited:1:3", "--phi1", "initial velocity family"),
        Key("data_norm", float, 1.0, "--data-norm", "rescale data to this norm (<= 0: no rescaling)"),
        Key("seed", int, 7, "--seed", "seed for band-limited data"),
        Key("c_q", float, 0.0, "--c-q", "algebra constant (<= 0: estimate)"),
        Key("scheme", str, "strang", "--scheme", "reference scheme"),
        Key("levels", int, 1, "--levels", "Richardson levels for series-vs-reference errors"),
        Key("lambdas", _floats, [2.0**-k for k in range(6, 1, -1)], "--lambdas", "comma list of couplings"),
        Key("modes", int, 1, "--modes", "retained quantum modes"),
        Key("nmax", int, 6, "--nmax", "occupation cutoff"),
        Key("t0", float, 0.0, "--t0", "reference time"),
        Key("t", float, 0.5, "--t", "evaluation time"),
        Key("x", float, 0.0, "--x", "evaluation position"),
        Key("dtau", float, 0.0625, "--dtau", "coarsest quadrature step"),
        Key("refine", int, 3, "--refine", "quadrature refinement levels"),
        Key("kernel", str, "minus", "--kernel", "retarded kernel sign convention"),
        Key("rule", str, "rectangle", "--rule", "simplex quadrature rule"),
        Key("method", str, "modal", "--method", "tree-operator kernel evaluation"),
    ]
}

CLASSICAL_KEYS = [
    "p", "lambda", "order", "dims", "grid_n", "box_L", "mass", "horizon_T", "dt", "sobolev_q",
    "dealias", "phi0", "phi1", "data_norm", "seed", "c_q", "scheme", "levels",
]
QUANTUM_KEYS = ["p", "modes", "nmax", "mass", "box_L", "t0", "t", "x", "order", "dtau", "refine", "kernel", "rule", "method"]
SUBCOMMAND_KEYS = {
    "trees": ["p", "max_order"],
    "classical": CLASSICAL_KEYS,
    "convergence": CLASSICAL_KEYS + ["lambdas"],
    "quantum": QUANTUM_KEYS,
}
SWEEPABLE = ("lambda", "dt", "dtau", "order", "grid_n")
# per-subcommand defaults that differ from the shared table
DEFAULT_OVERRIDES = {"quantum": {"box_L": 1.0, "order": 2}}


# -- configuration ----------------------------------------------------------


def read_config_file(path):
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    problems = []
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"config line {lineno}: expected key=value, got {line!r}")
            continue
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    if problems:
        raise ConfigError(problems)
    return out


def resolve_config(subcommand, file_values, flag_values):
    """Merge defaults, file and flags; convert types; collect every problem."""
    allowed = SUBCOMMAND_KEYS[subcommand]
    cfg = {k: KEYS[k].default for k in allowed}
    cfg.update(DEFAULT_OVERRIDES.get(subcommand, {}))
    problems = []
    for source in (file_values, flag_values):
        for k, v in source.items():
            if v is None:
                continue
            if k not in allowed:
                problems.append(f"{k}: not a key of the {subcommand} subcommand")
                continue
            try:
                cfg[k] = KEYS[k].kind(v) if isinstance(v, str) else v
            except (TypeError, ValueError) as exc:
                problems.append(f"{k}: {exc}")
    if problems:
        raise ConfigError(problems)
    return cfg


def _collect(problems, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except ConfigError as exc:
        problems.extend(exc.problems)
    except KGError as exc:
        problems.append(str(exc))
    return None


def build_classical(cfg):
    """Grid, data and series config from a resolved classical config.

    Raises one :class:`ConfigError` naming every invalid key.
    """
    problems = []
    check_integer(problems, "p", cfg["p"], minimum=2)
    check_integer(problems, "order", cfg["order"], minimum=0)
    check_integer(problems, "sobolev_q", cfg["sobolev_q"], minimum=0)
    check_real(problems, "lambda", cfg["lambda"])
    check_time_grid(problems, cfg["horizon_T"], cfg["dt"], "horizon_T", "dt")
    if cfg["scheme"] not in SCHEMES:
        problems.append(f"scheme: unknown {cfg['scheme']!r}, choose from {SCHEMES}")
    if cfg["levels"] < 1:
        problems.append(f"levels: must be >= 1, got {cfg['levels']}")
    if cfg.get("lambdas") is not None and "lambdas" in cfg:
        if not cfg["lambdas"]:
            problems.append("lambdas: empty list")
        elif any(v <= 0 for v in cfg["lambdas"]):
            problems.append("lambdas: values must be > 0 for log-log fits")
    grid = _collect(problems, GridSpec, cfg["dims"], cfg["grid_n"], cfg["box_L"], cfg["mass"])
    data = None
    if grid is not None:
        phi0 = _collect(problems, parse_family, grid, cfg["phi0"], cfg["seed"])
        phi1 = _collect(problems, parse_family, grid, cfg["phi1"], cfg["seed"] + 1)
        if phi0 is not None and phi1 is not None:
            if cfg["data_norm"] > 0 and cfg["sobolev_q"] >= 0:
                data = normalized_cauchy(phi0, phi1, cfg["sobolev_q"], cfg["data_norm"])
            else:
                data = CauchyData(phi0, phi1)
    series = None
    if data is not None:
        c_q = cfg["c_q"] if cfg["c_q"] > 0 else None
        series = _collect(
            problems, SeriesConfig, cfg["p"], cfg["lambda"], data, cfg["horizon_T"], cfg["dt"],
            cfg["sobolev_q"], cfg["order"], c_q, cfg["dealias"],
        )
    if series is not None and cfg["levels"] > 1:
        from .reference import stability_limit

        if cfg["scheme"] != "strang":
            problems.append("levels: Richardson levels need the strang scheme")
        elif cfg["dt"] > stability_limit(grid, "strang"):
            problems.append(f"dt: {cfg['dt']} violates the strang stability limit")
    if series is not None:
        from .reference import IntegratorConfig

        _collect(problems, IntegratorConfig, grid, cfg["lambda"], cfg["p"], cfg["dt"], cfg["horizon_T"], cfg["scheme"])
    if problems:
        raise ConfigError(list(dict.fromkeys(problems)))
    return grid, data, series


def build_quantum(cfg):
    problems = []
    spec = _collect(
        problems, QuantumLatticeSpec, cfg["modes"], cfg["nmax"], cfg["box_L"], cfg["mass"], cfg["t0"], cfg["p"]
    )
    if cfg["order"] < 0:
        problems.append(f"order: must be >= 0, got {cfg['order']}")
    if cfg["dtau"] <= 0:
        problems.append(f"dtau: must be > 0, got {cfg['dtau']}")
    if cfg["refine"] < 1:
        problems.append(f"refine: must be >= 1, got {cfg['refine']}")
    if cfg["t"] < cfg["t0"]:
        problems.append(f"t: must be >= t0={cfg['t0']}, got {cfg['t']}")
    if cfg["kernel"] not in ("minus", "plus"):
        problems.append(f"kernel: unknown {cfg['kernel']!r}, choose 'minus' or 'plus'")
    if cfg["rule"] not in ("rectangle", "trapezoid"):
        problems.append(f"rule: unknown {cfg['rule']!r}, choose 'rectangle' or 'trapezoid'")
    if cfg["method"] not in ("modal", "direct"):
        problems.append(f"method: unknown {cfg['method']!r}, choose 'modal' or 'direct'")
    if problems:
        raise ConfigError(problems)
    return spec


# -- runners ----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float) and v.is_integer() and abs(v) < 2**53:
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def _csv(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _finite(x):
    """JSON has no infinity: map it to None."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def run_trees(cfg, keys=False):
    p, N = cfg["p"], cfg["max_order"]
    problems = []
    if p < 2:
        problems.append(f"p: must be >= 2, got {p}")
    if N < 0:
        problems.append(f"max_order: must be >= 0, got {N}")
    if problems:
        raise ConfigError(problems)
    if keys:
        lines = [b.key for n in range(N + 1) for b in ptree.enumerate_trees(p, n)]
        return {"trees_keys.txt": "\n".join(lines) + "\n"}
    rows = [(n, ptree.count(p, n), ptree.count_bound(p, n)) for n in range(N + 1)]
    return {"trees.csv": _csv(rows, ["order", "count", "bound"])}


def classical_result(cfg, reference_only=False):
    grid, data, series = build_classical(cfg)
    rep, traj = classical_report(
        series, cfg["scheme"], reference=True, series=not reference_only, levels=cfg["levels"]
    )
    rep["threshold"] = _finite(rep["threshold"])
    return rep, traj


def run_classical(cfg, reference_only=False):
    rep, traj = classical_result(cfg, reference_only)
    out = {
        "schema_version": SCHEMA_VERSION,
        "subcommand": "classical",
        "reference_only": reference_only,
        "config": cfg,
        "results": rep,
    }
    g = traj["free"].grid
    q = cfg["sobolev_q"]
    from .lattice import sobolev_norms

    cols = {"t": traj["free"].times, "free_norm": sobolev_norms(g, traj["free"].values, q)}
    if traj["series"] is not None:
        cols["series_norm"] = sobolev_norms(g, traj["series"].values, q)
    cols["reference_norm"] = sobolev_norms(g, traj["reference"].values, q)
    if traj["series"] is not None:
        cols["series_minus_reference"] = sobolev_norms(g, traj["series"].values - traj["reference"].values, q)
    header = list(cols)
    rows = zip(*(np.asarray(cols[h], dtype=float).tolist() for h in header))
    ts = f"# schema_version={SCHEMA_VERSION}\n" + _csv(rows, header)
    return {"classical.json": _json(out), "classical_timeseries.csv": ts}


def run_convergence(cfg):
    grid, data, series = build_classical(cfg)
    if cfg["scheme"] != "strang":
        raise ConfigError("scheme: convergence studies use the strang scheme")
    lams = cfg["lambdas"]
    orders = range(cfg["order"] + 1)
    levels = max(cfg["levels"], 1)
    errs = series_accuracy_study(data, cfg["p"], cfg["horizon_T"], lams, orders, cfg["dt"], levels, cfg["sobolev_q"])
    res = residual_study(data, cfg["p"], cfg["horizon_T"], lams, orders, cfg["dt"], cfg["sobolev_q"])
    per_order = {}
    for N in orders:
        entry = {"errors": errs[N].tolist(), "residuals": res[N].tolist(), "expected_slope": N + 1}
        for name, vals in (("error", errs[N]), ("residual", res[N])):
            try:
                f = fit_loglog(lams, vals)
                entry[f"{name}_slope"] = f.slope
                entry[f"{name}_slope_stderr"] = None if math.isnan(f.stderr) else f.stderr
            except ConfigError:
                entry[f"{name}_slope"] = entry[f"{name}_slope_stderr"] = None
        per_order[str(N)] = entry
    from .series import convergence_threshold

    out = {
        "schema_version": SCHEMA_VERSION,
        "subcommand": "convergence",
        "config": cfg,
        "results": {
            "lambdas": list(lams),
            "threshold": _finite(convergence_threshold(series)),
            "c_q": series.c_q,
            "all_inside_radius": bool(max(abs(v) for v in lams) < convergence_threshold(series)),
            "orders": per_order,
        },
    }
    return {"convergence.json": _json(out)}


def quantum_result(cfg):
    spec = build_quantum(cfg)
    orders = tuple(range(cfg["order"] + 1))
    hid = verify_heisenberg_identity(
        spec, cfg["t"], cfg["x"], orders, cfg["dtau"], cfg["refine"], cfg["kernel"], cfg["method"], cfg["rule"]
    )
    res = {
        "kernel": hid["kernel"],
        "expected_u_sign": hid["expected_u_sign"],
        "passing_u_sign": hid["passing_u_sign"],
        "heisenberg": {},
        "negative_control": {},
        "unitarity": {},
    }
    for m, v in hid["orders"].items():
        res["heisenberg"][str(m)] = v["selected"].to_dict()
        res["negative_control"][str(m)] = v["control"].to_dict()
        if m >= 1:
            res["unitarity"][str(m)] = verify_unitarity(spec, cfg["t"], m, cfg["dtau"], cfg["refine"], cfg["rule"]).to_dict()
    return res


def run_quantum(cfg):
    out = {"schema_version": SCHEMA_VERSION, "subcommand": "quantum", "config": cfg, "results": quantum_result(cfg)}
    return {"quantum.json": _json(out)}


def _classical_scalars(cfg):
    rep, _ = classical_result(cfg)
    row = {"threshold": rep["threshold"], "reference_vs_free": rep["reference_vs_free"]}
    if "free_residual" in rep:
        row["free_residual"] = rep["free_residual"]
    for N, v in enumerate(rep.get("errors_vs_reference", [])):
        row[f"error_{N}"] = v
    for N, v in enumerate(rep.get("residuals", [])):
        row[f"residual_{N}"] = v
    return row


def _quantum_scalars(cfg):
    res = quantum_result(cfg)
    row = {}
    for m, r in res["heisenberg"].items():
        row[f"heisenberg_dev_{m}"] = r["deviation"][-1]
        row[f"control_dev_{m}"] = res["negative_control"][m]["deviation"][-1]
    for m, r in res["unitarity"].items():
        row[f"unitarity_dev_{m}"] = r["deviation"][-1]
    return row


def run_sweep(target, cfg, param, values, fit=False):
    if param not in SWEEPABLE:
        raise ConfigError(f"param: {param!r} is not sweepable; choose from {SWEEPABLE}")
    if not values:
        raise ConfigError("values: empty list")
    if param not in cfg:
        raise ConfigError(f"param: {param!r} is not a key of the {target} subcommand")
    kind = KEYS[param].kind
    rows, header = [], [param]
    for v in values:
        c = dict(cfg)
        c[param] = kind(v) if kind is not int else int(round(float(v)))
        if target == "quantum":
            if param == "dtau":
                c["refine"] = 1
            scal = _quantum_scalars(c)
        else:
            scal = _classical_scalars(c)
        for k in scal:
            if k not in header:
                header.append(k)
        rows.append({param: c[param], **scal})
    table = [[r.get(h, "") if r.get(h) is not None else "" for h in header] for r in rows]
    files = {"sweep.csv": f"# schema_version={SCHEMA_VERSION}\n" + _csv(table, header)}
    if fit:
        x = [r[param] for r in rows]
        fits = []
        for h in header[1:]:
            y = [r.get(h) for r in rows]
            if any(v is None or not isinstance(v, (int, float)) or v <= 0 for v in y) or any(xv <= 0 for xv in x):
                continue
            f = fit_loglog(x, y)
            fits.append((h, f.slope, "" if math.isnan(f.stderr) else f.stderr))
        files["sweep_fit.csv"] = f"# schema_version={SCHEMA_VERSION}\n" + _csv(fits, ["metric", "slope", "stderr"])
    return files


# -- argument parsing -------------------------------------------------------


def _add_keys(parser, names):
    for n in names:
        k = KEYS[n]
        parser.add_argument(k.flag, dest=n, default=None, help=f"{k.help} (default {k.default})")


def build_parser():
    ap = argparse.ArgumentParser(prog="kgbutcher", description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV}, else stdout)")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, keys in SUBCOMMAND_KEYS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, help="flat key=value file")
        _add_keys(sp, keys)
        if name == "trees":
            sp.add_argument("--keys", action="store_true", help="list canonical keys, one per line")
        if name == "classical":
            sp.add_argument("--reference-only", action="store_true", help="skip the series")
    sw = sub.add_parser("sweep")
    sw.add_argument("target", choices=["classical", "quantum"])
    sw.add_argument("--param", required=True)
    sw.add_argument("--values", required=True, help="comma-separated list")
    sw.add_argument("--fit", action="store_true", help="log-log slope of every metric")
    sw.add_argument("--config", default=None)
    _add_keys(sw, sorted(set(CLASSICAL_KEYS) | set(QUANTUM_KEYS)))
    return ap


def _flag_values(ns, names):
    return {n: getattr(ns, n, None) for n in names}


def dispatch(ns):
    file_values = read_config_file(ns.config) if ns.config else {}
    if ns.command == "sweep":
        names = CLASSICAL_KEYS if ns.target == "classical" else QUANTUM_KEYS
        flags = {k: v for k, v in _flag_values(ns, sorted(set(CLASSICAL_KEYS) | set(QUANTUM_KEYS))).items() if v is not None}
        stray = [k for k in flags if k not in names]
        if stray:
            raise ConfigError([f"{k}: not a key of the {ns.target} subcommand" for k in stray])
        cfg = resolve_config(ns.target, file_values, flags)
        if ns.target == "classical":
            build_classical(cfg)
        else:
            build_quantum(cfg)
        try:
            values = [_expr(v) for v in ns.values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"values: {exc}") from None
        return run_sweep(ns.target, cfg, ns.param, values, ns.fit)
    cfg = resolve_config(ns.command, file_values, _flag_values(ns, SUBCOMMAND_KEYS[ns.command]))
    if ns.command == "trees":
        return run_trees(cfg, ns.keys)
    if ns.command == "classical":
        return run_classical(cfg, ns.reference_only)
    if ns.command == "convergence":
        return run_convergence(cfg)
    return run_quantum(cfg)


def emit(files, out_dir, stream):
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(out_dir, name), "w") as fh:
                fh.write(text)
        return
    for i, text in enumerate(files.values()):
        if i:
            stream.write("\n")
        stream.write(text)


def main(argv=None, stdout=None, stderr=None):
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out_dir = ns.out or os.environ.get(OUTPUT_ENV) or None
    try:
        files = dispatch(ns)
    except KGError as exc:
        err = {
            "schema_version": SCHEMA_VERSION,
            "error": exc.category,
            "exit_code": exc.exit_code,
            "message": str(exc),
            "problems": getattr(exc, "problems", [str(exc)]),
        }
        stderr.write(_json(err))
        return exc.exit_code
    emit(files, out_dir, stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
