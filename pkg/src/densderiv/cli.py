"""Batch command line front end.

Four subcommands: ``estimate`` evaluates any paradigm on query points or
grids, ``modes`` runs gradient-ascent mode seeking, ``rates`` executes a
convergence-rate experiment, and ``check-kernel`` prints a kernel's
condition report.  Every option can also be supplied through a config
file (INI sections named after the subcommands); explicit command line
flags win over config values.

Outputs are deterministic: given the same inputs, options and seed, the
emitted CSV and JSON files are byte-identical, regardless of the number
of worker threads.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import csv
import json
import re
import sys

import numpy as np

from . import __version__
from .asymptotics import BandwidthPlan, rate_experiment
from .densities import GaussianMixture
from .errors import EstimationError
from .estimators import PARADIGMS, ModeSeeker, estimate_at
from .kernels import kernel_by_name
from .results import to_density_scale, to_log_scale

MAX_GRID_CELLS = 10 ** 7


class ParseError(ValueError):
    """Input file or option value could not be parsed."""


# ---------------------------------------------------------------------------
# input parsing


def ingest_csv(path):
    """Read a numeric CSV file into an (n, d) array.

    Accepts an optional single header line; all other rows must contain
    the same number of finite numeric cells.  Errors cite line numbers,
    and all rows with non-finite values are reported together.

    Raises
    ------
    ParseError
    """
    rows = []
    bad_lines = []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            try:
                values = [float(c) for c in cells]
            except ValueError:
                if lineno == 1 and not rows:
                    continue  # header line
                offender = next(
                    c for c in cells if not _is_float(c))
                raise ParseError(
                    f"{path}: line {lineno}: non-numeric value {offender!r}"
                ) from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise ParseError(
                    f"{path}: line {lineno}: expected {width} columns, "
                    f"got {len(values)}")
            if not all(np.isfinite(values)):
                bad_lines.append(lineno)
            rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    if bad_lines:
        shown = ", ".join(map(str, bad_lines[:10]))
        more = "" if len(bad_lines) <= 10 else f" (+{len(bad_lines) - 10} more)"
        raise ParseError(
            f"{path}: non-finite values on line(s) {shown}{more}")
    return np.asarray(rows, dtype=float)


def _is_float(cell):
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_csv(path, rows):
    """Write rows of already-formatted cells."""
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def parse_queries(spec, d):
    """Query points from ``grid:min:max:count[,...]`` or ``file:PATH``.

    Grid specs give one ``min:max:count`` range per axis; the flattened
    grid enumerates the last axis fastest.  Grids are capped at 10^7
    cells.
    """
    if spec.startswith("file:"):
        pts = ingest_csv(spec[5:])
        if pts.shape[1] != d:
            raise ParseError(
                f"query file has {pts.shape[1]} columns, data has {d}")
        return pts
    if spec.startswith("grid:"):
        axes = []
        for part in spec[5:].split(","):
            pieces = part.split(":")
            if len(pieces) != 3:
                raise ParseError(
                    f"grid axis {part!r} is not of the form min:max:count")
            try:
                lo, hi, count = float(pieces[0]), float(pieces[1]), \
                    int(pieces[2])
            except ValueError:
                raise ParseError(
                    f"grid axis {part!r} is not of the form min:max:count"
                ) from None
            if count < 1:
                raise ParseError("grid axes need at least one point")
            axes.append(np.linspace(lo, hi, count))
        if len(axes) != d:
            raise ParseError(
                f"grid has {len(axes)} axes, data has {d} columns")
        cells = int(np.prod([len(a) for a in axes]))
        if cells > MAX_GRID_CELLS:
            raise ParseError(
                f"grid has {cells} cells, exceeding the {MAX_GRID_CELLS} cap")
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    raise ParseError(
        f"queries {spec!r} must start with 'grid:' or 'file:'")


def parse_rule(text):
    """Bandwidth exponent from a rule string like ``n^{-1/10}``."""
    match = re.fullmatch(r"n\^\{?-1/(\d+)\}?", text.strip())
    if not match:
        raise ParseError(
            f"rule {text!r} is not of the form n^{{-1/k}}")
    return 1.0 / int(match.group(1))


def parse_ns(text):
    """Sample sizes from ``1e3:1e6`` (decade range) or a comma list."""
    text = text.strip()
    if ":" in text:
        lo_s, hi_s = text.split(":", 1)
        lo, hi = float(lo_s), float(hi_s)
        if lo <= 0 or hi < lo:
            raise ParseError(f"bad sample-size range {text!r}")
        k0, k1 = round(np.log10(lo)), round(np.log10(hi))
        if not (np.isclose(10.0 ** k0, lo) and np.isclose(10.0 ** k1, hi)):
            raise ParseError(
                f"range endpoints in {text!r} must be powers of ten")
        return [10 ** k for k in range(int(k0), int(k1) + 1)]
    return [int(round(float(part))) for part in text.split(",")]


def parse_point(text, d):
    vals = np.array([float(p) for p in text.split(",")])
    if vals.shape != (d,):
        raise ParseError(f"point {text!r} must have {d} coordinates")
    return vals


TEST_DENSITIES = {
    "normal1d": lambda: GaussianMixture.gaussian(np.zeros(1), np.eye(1)),
    "normal2d": lambda: GaussianMixture.gaussian(np.zeros(2), np.eye(2)),
    "normal3d": lambda: GaussianMixture.gaussian(np.zeros(3), np.eye(3)),
    "mixture2d": lambda: GaussianMixture(
        [0.6, 0.4], [[0.0, 0.0], [2.4, 1.6]],
        [[[4.0, 1.2], [1.2, 3.2]], [[2.8, -0.8], [-0.8, 4.4]]]),
}


def _resolve_kernel_name(name, d):
    try:
        return kernel_by_name(name, d)
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def _fmt(value):
    return f"{value:.12g}"


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate(opts):
    data = ingest_csv(opts["input"])
    d = data.shape[1]
    kernel = _resolve_kernel_name(opts["kernel"], d)
    h = float(opts["h"])
    paradigm = opts["paradigm"]
    if paradigm not in PARADIGMS:
        raise ParseError(
            f"unknown paradigm {paradigm!r}; choose from "
            f"{', '.join(PARADIGMS)}")
    scale = opts["scale"]
    if scale not in (None, "density", "log"):
        raise ParseError("scale must be 'density' or 'log'")
    queries = parse_queries(opts["queries"], d)
    jobs = int(opts["jobs"])

    def one_row(x):
        cells = [_fmt(c) for c in x]
        try:
            est = estimate_at(paradigm, data, x, kernel, h)
            if scale == "log":
                est = to_log_scale(est)
            elif scale == "density":
                est = to_density_scale(est)
        except EstimationError as exc:
            blank = 1 + d + d * (d + 1) // 2
            return cells + [""] * blank + ["", exc.code]
        iu, ju = np.triu_indices(d)
        cells.append(_fmt(est.value))
        cells.extend(_fmt(g) for g in est.gradient)
        cells.extend(_fmt(v) for v in est.hessian[iu, ju])
        cells.append(";".join(est.flags))
        cells.append("")
        return cells

    if jobs > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            body = list(pool.map(one_row, queries))
    else:
        body = [one_row(x) for x in queries]

    header = [f"x{i + 1}" for i in range(d)] + ["value"]
    header += [f"grad{i + 1}" for i in range(d)]
    iu, ju = np.triu_indices(d)
    header += [f"hess{i + 1}{j + 1}" for i, j in zip(iu, ju)]
    header += ["flags", "error"]
    write_csv(opts["out"], [header] + body)
    _maybe_json(opts, {"columns": header, "rows": body})
    return 0


def cmd_modes(opts):
    data = ingest_csv(opts["input"])
    d = data.shape[1]
    starts = parse_queries(opts["starts"], d)
    seeker = ModeSeeker(paradigm=opts["paradigm"], kernel=opts["kernel"],
                        bandwidth=float(opts["h"])).fit(data)
    res = seeker.find_modes(starts)

    header = [f"x{i + 1}" for i in range(d)]
    header += ["log_density", "negative_definite", "size"]
    body = []
    for k in range(len(res.modes)):
        row = [_fmt(c) for c in res.modes[k]]
        row.append(_fmt(res.log_values[k]))
        row.append(str(bool(res.negative_definite[k])).lower())
        row.append(str(int(np.sum(res.labels == k))))
        body.append(row)
    write_csv(opts["out"], [header] + body)
    _maybe_json(opts, {
        "columns": header,
        "rows": body,
        "labels": res.labels.tolist(),
        "converged": res.converged.tolist(),
        "iterations": res.iterations.tolist(),
    })
    return 0


def cmd_rates(opts):
    density_name = opts["density"]
    try:
        density = TEST_DENSITIES[density_name]()
    except KeyError:
        raise ParseError(
            f"unknown density {density_name!r}; available: "
            f"{', '.join(sorted(TEST_DENSITIES))}") from None
    d = density.d
    kernel = _resolve_kernel_name(opts["kernel"], d)
    exponent = parse_rule(opts["rule"])
    plan = BandwidthPlan.rate(float(opts["C"]), exponent)
    ns = parse_ns(opts["ns"])
    x0 = parse_point(opts["x0"], d) if opts["x0"] else np.zeros(d)
    seed = int(opts["seed"])

    report = rate_experiment(
        opts["paradigm"], opts["target"], density, x0, kernel, plan,
        ns, int(opts["reps"]), seed)

    base = opts["out"]
    report.to_csv(base + ".csv")
    report.to_json(base + ".json", metadata=_metadata(opts))
    plot_rows = [["paradigm", "target", "log10_n", "log10_rmse"]]
    for row in report.rows:
        plot_rows.append([report.paradigm, report.target,
                          _fmt(np.log10(row.n)), _fmt(np.log10(row.rmse))])
    write_csv(base + "_plot.csv", plot_rows)
    return 0


def cmd_check_kernel(opts):
    kernel = _resolve_kernel_name(opts["kernel"], int(opts["d"]))
    report = kernel.check_conditions(seed=int(opts["seed"]))
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def _metadata(opts):
    echo = {k: v for k, v in opts.items() if v is not None and k != "func"}
    return {"config": echo, "version": __version__,
            "seed": int(opts.get("seed", 0))}


def _maybe_json(opts, payload):
    if opts.get("json"):
        payload = dict(payload)
        payload["metadata"] = _metadata(opts)
        with open(opts["json"], "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# option plumbing

# per subcommand: dest -> (flag, help, default); REQUIRED means the value
# must come from the command line or the config file
REQUIRED = object()

_COMMON = {
    "config": ("--config", "INI config file with per-command sections", None),
}

_SPECS = {
    "estimate": {
        "input": ("--input", "CSV file with the training sample", REQUIRED),
        "kernel": ("--kernel", "kernel name", "gaussian"),
        "paradigm": ("--paradigm", "M, M3, K, L or H", "M"),
        "scale": ("--scale", "density or log (default: native)", None),
        "h": ("--h", "bandwidth", REQUIRED),
        "queries": ("--queries", "grid:min:max:count[,...] or file:PATH",
                    REQUIRED),
        "out": ("--out", "output CSV path", REQUIRED),
        "json": ("--json", "also write JSON with metadata", None),
        "jobs": ("--jobs", "worker threads for query evaluation", "1"),
    },
    "modes": {
        "input": ("--input", "CSV file with the training sample", REQUIRED),
        "kernel": ("--kernel", "kernel name", "gaussian"),
        "paradigm": ("--paradigm", "paradigm with value and gradient", "L"),
        "h": ("--h", "bandwidth", REQUIRED),
        "starts": ("--starts", "start points, grid: or file:", REQUIRED),
        "out": ("--out", "output CSV path", REQUIRED),
        "json": ("--json", "also write JSON with metadata", None),
    },
    "rates": {
        "density": ("--density", "test density name", REQUIRED),
        "paradigm": ("--paradigm", "M, M3, K, L or H", "M"),
        "target": ("--target", "value, gradient or hessian", "value"),
        "kernel": ("--kernel", "kernel name", "gaussian"),
        "rule": ("--rule", "bandwidth rule, e.g. n^{-1/10}", REQUIRED),
        "C": ("--C", "bandwidth rule constant", "1.0"),
        "ns": ("--ns", "sample sizes, 1e3:1e6 or comma list", REQUIRED),
        "reps": ("--reps", "replications per sample size", "500"),
        "x0": ("--x0", "query point, comma separated", None),
        "seed": ("--seed", "random seed", "0"),
        "out": ("--out", "output base path (.csv/.json/_plot.csv)", "rates"),
    },
    "check-kernel": {
        "kernel": ("--kernel", "kernel name", REQUIRED),
        "d": ("--d", "dimension", "2"),
        "seed": ("--seed", "seed for the smoothness probe", "0"),
    },
}

_HANDLERS = {
    "estimate": cmd_estimate,
    "modes": cmd_modes,
    "rates": cmd_rates,
    "check-kernel": cmd_check_kernel,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="densderiv",
        description="Local density, gradient and Hessian estimation tools")
    parser.add_argument("--version", action="version",
                        version=f"densderiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for command, spec in _SPECS.items():
        sp = sub.add_parser(command)
        for dest, (flag, help_text, _default) in {**_COMMON, **spec}.items():
            sp.add_argument(flag, dest=dest, help=help_text, default=None)
    return parser


def _load_config(path, command):
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ParseError(f"config file {path!r} not found")
    if not parser.has_section(command):
        return {}
    spec = _SPECS[command]
    out = {}
    for key, value in parser.items(command):
        dest = key.replace("-", "_")
        if dest not in spec:
            raise ParseError(
                f"config key {key!r} is not an option of {command!r}")
        out[dest] = value
    return out


def _merge_options(args):
    command = args.command
    config = _load_config(args.config, command) if args.config else {}
    merged = {}
    missing = []
    for dest, (_flag, _help, default) in _SPECS[command].items():
        value = getattr(args, dest, None)
        if value is None:
            value = config.get(dest, default)
        if value is REQUIRED:
            missing.append(dest)
            value = None
        merged[dest] = value
    if missing:
        raise ParseError(
            f"{command}: missing required option(s): "
            + ", ".join("--" + m for m in missing))
    return merged


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        opts = _merge_options(args)
        return _HANDLERS[args.command](opts)
    except (ParseError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
