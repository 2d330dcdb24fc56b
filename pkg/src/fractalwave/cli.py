"""Command-line interface.

Subcommands: ``validate``, ``tables``, ``mesh``, ``assemble``, ``simulate``
and ``converge``.  Options may also come from a JSON config file with flat
keys mirroring the long flags (``"t-end"`` or ``"t_end"``); a key prefixed
with a subcommand name (``"simulate.level"``) only applies to that command.
Flags override the config file, which overrides ``--preset``.

Exit codes: 0 ok, 1 usage error, 2 validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .convergence import refine_study
from .dynamics import STABILITY_FACTOR, InitialData, UnstableStepError, max_stable_dt, simulate, snapshots_to_csv
from .fem import SingularMatrixError, full_mass_matrix, full_stiffness_matrix, mass_matrix, stiffness_matrix
from .measure import (
    DEFAULT_BERNOULLI_P,
    MeasureSpec,
    MeasureSpecError,
    builtin_measure,
    level_moments,
    load_measure,
    measure_to_dict,
    validate_spec,
)
from .mesh import build_mesh, mesh_norm, word_of_index

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("fractalwave")

PRESETS = {
    "fig1": {
        "measure": "bernoulli",
        "p": DEFAULT_BERNOULLI_P,
        "g": "sine:1",
        "h": "zero",
        "dt": 0.001,
        "samples": "0:0.1:0.9",
        "level": 6,
    },
    "fig2": {
        "measure": "golden",
        "g": "sine:1",
        "h": "zero",
        "dt": 0.001,
        "samples": "0:0.1:1.1",
        "level": 4,
    },
    "fig3": {
        "measure": "cantor",
        "g": "sine:1",
        "h": "zero",
        "dt": 0.001,
        "samples": "0:0.2:2.0",
        "level": 4,
    },
}

DEFAULTS = {
    "measure": "bernoulli",
    "p": None,
    "level": None,
    "dt": None,
    "t_end": None,
    "samples": None,
    "g": "sine:1",
    "h": "zero",
    "preset": None,
    "ref": None,
    "levels": None,
    "out": None,
    "force": False,
    "depth": 14,
    "tol": 5e-3,
}

COMMANDS = ("validate", "tables", "mesh", "assemble", "simulate", "converge")


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# option parsing


def _common(parser: argparse.ArgumentParser, *names: str) -> None:
    help_text = {
        "measure": "bernoulli | golden | cantor | file:PATH (JSON measure file)",
        "p": "weight parameter of the built-in measure",
        "level": "mesh level m",
        "dt": "time step",
        "t_end": "final time (converge: evaluation time t*)",
        "samples": "sample times, either a comma list or start:step:stop",
        "g": "initial displacement: sine:K | hat:C,W | zero | file:PATH",
        "h": "initial velocity, same forms as --g",
        "preset": "figure protocol: fig1 | fig2 | fig3",
        "ref": "reference level for converge",
        "levels": "level range a:b for converge (at least three levels)",
        "out": "output directory",
        "force": "run even when dt exceeds the stability gate",
        "depth": "atom-oracle depth for validate",
        "tol": "validation tolerance",
    }
    types = {"p": float, "level": int, "dt": float, "t_end": float, "ref": int, "depth": int, "tol": float}
    parser.add_argument("--config", default=None, help="JSON file of option values")
    for name in names:
        flag = "--" + name.replace("_", "-")
        if name == "force":
            parser.add_argument(flag, action="store_true", default=None, help=help_text[name])
        elif name == "preset":
            parser.add_argument(flag, choices=sorted(PRESETS), default=None, help=help_text[name])
        else:
            parser.add_argument(flag, dest=name, type=types.get(name, str), default=None, help=help_text[name])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fractalwave", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"fractalwave {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    measure_opts = ("measure", "p")
    _common(sub.add_parser("validate", help="check a measure against the atom oracle"), *measure_opts, "depth", "tol", "out")
    _common(sub.add_parser("tables", help="print base moments, transfer matrices and level-m moments"), *measure_opts, "level", "out")
    _common(sub.add_parser("mesh", help="write the level-m nodes as CSV"), *measure_opts, "level", "out")
    _common(sub.add_parser("assemble", help="write mass and stiffness entries as CSV"), *measure_opts, "level", "out")
    _common(
        sub.add_parser("simulate", help="run the wave solver and write snapshots.csv and meta.json"),
        *measure_opts, "level", "dt", "t_end", "samples", "g", "h", "preset", "out", "force",
    )
    _common(
        sub.add_parser("converge", help="level-refinement study against a reference level"),
        *measure_opts, "dt", "t_end", "g", "h", "ref", "levels", "out", "force",
    )
    return parser


def _read_config(path: str | None, command: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config file must hold a JSON object")
    plain, scoped = {}, {}
    for key, value in raw.items():
        scope, _, name = key.rpartition(".")
        name = name.replace("-", "_")
        if scope and scope not in COMMANDS:
            raise UsageError(f"config key {key!r}: unknown command {scope!r}")
        if name not in DEFAULTS:
            raise UsageError(f"config key {key!r}: unknown option {name!r}")
        if not scope:
            plain[name] = value
        elif scope == command:
            scoped[name] = value
    plain.update(scoped)
    return plain


def resolve_options(args: argparse.Namespace) -> dict:
    """Merge defaults, preset, config file and flags (in increasing priority)."""
    flags = {k: v for k, v in vars(args).items() if k in DEFAULTS and v is not None}
    config = _read_config(args.config, args.command)
    preset = flags.get("preset", config.get("preset"))
    opts = dict(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}")
        opts.update(PRESETS[preset])
        if "measure" in config or "measure" in flags:
            # a different measure invalidates the preset's weight
            opts["p"] = None
    opts.update(config)
    opts.update(flags)
    opts["preset"] = preset
    return opts


# --------------------------------------------------------------------------
# option values


def make_measure(selector: str, p: float | None) -> MeasureSpec:
    if selector.startswith("file:"):
        if p is not None:
            raise UsageError("--p does not apply to a measure file")
        path = selector[5:]
        if not Path(path).is_file():
            raise UsageError(f"measure file {path} not found")
        try:
            return load_measure(path)
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValidationFailure(str(exc)) from exc
    try:
        return builtin_measure(selector, p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def parse_function(text: str, a: float, b: float) -> Callable:
    """Initial-data function from ``sine:K``, ``hat:C,W``, ``zero`` or ``file:PATH``."""
    kind, _, arg = str(text).partition(":")
    try:
        if kind == "zero":
            return lambda x: np.zeros_like(np.asarray(x, dtype=float))
        if kind == "sine":
            k = int(arg or 1)
            return lambda x: np.sin(k * np.pi * (np.asarray(x, dtype=float) - a) / (b - a))
        if kind == "hat":
            c, w = (float(v) for v in arg.split(","))
            if w <= 0:
                raise ValueError("hat width must be positive")
            return lambda x: np.maximum(0.0, 1.0 - np.abs(np.asarray(x, dtype=float) - c) / w)
        if kind == "file":
            table = np.loadtxt(arg, delimiter=",", ndmin=2, comments="#")
            if table.shape[1] != 2:
                raise ValueError("expected two columns x,value")
            xs, vs = table[:, 0], table[:, 1]
            if np.any(np.diff(xs) <= 0):
                raise ValueError("x column must be strictly increasing")
            return lambda x: np.interp(np.asarray(x, dtype=float), xs, vs)
    except (ValueError, OSError) as exc:
        raise UsageError(f"bad function {text!r}: {exc}") from exc
    raise UsageError(f"unknown function form {text!r}; use sine:K, hat:C,W, zero or file:PATH")


def parse_samples(text: str) -> list[float]:
    text = str(text)
    try:
        if ":" in text:
            start, step, stop = (float(v) for v in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError("need step > 0 and stop >= start")
            count = int(round((stop - start) / step)) + 1
            return [round(start + i * step, 12) for i in range(count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad sample list {text!r}: {exc}") from exc


def parse_levels(text: str) -> list[int]:
    try:
        lo, hi = (int(v) for v in str(text).split(":"))
    except ValueError as exc:
        raise UsageError(f"--levels expects a:b, got {text!r}") from exc
    if hi - lo + 1 < 3:
        raise UsageError(f"--levels {text} gives {max(hi - lo + 1, 0)} level(s); at least three are needed to fit a rate")
    if lo < 1:
        raise UsageError("levels must be >= 1")
    return list(range(lo, hi + 1))


def _require_level(opts: dict) -> int:
    if opts["level"] is None:
        raise UsageError("--level is required")
    if int(opts["level"]) < 1:
        raise UsageError("--level must be >= 1")
    return int(opts["level"])


def _emit(text: str, out: str | None, filename: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / filename).write_text(text)


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _measure_meta(spec: MeasureSpec, opts: dict) -> dict:
    meta = {"selector": opts["measure"], "name": spec.name, "params": dict(spec.params)}
    if str(opts["measure"]).startswith("file:"):
        meta["definition"] = measure_to_dict(spec)
    return meta


# --------------------------------------------------------------------------
# commands


def cmd_validate(opts: dict) -> int:
    spec = make_measure(opts["measure"], opts["p"])
    if opts["depth"] < 1 or not opts["tol"] > 0:
        raise UsageError("--depth must be >= 1 and --tol positive")
    report = validate_spec(spec, depth=int(opts["depth"]), tol=float(opts["tol"]))
    text = report.to_text()
    sys.stdout.write(text)
    if opts["out"] is not None:
        _emit(text, opts["out"], "validation.txt")
    return EXIT_OK if report.passed else EXIT_INVALID


def cmd_tables(opts: dict) -> int:
    spec = make_measure(opts["measure"], opts["p"])
    rows = [("base", k, j + 1, "", repr(float(spec.base_moments[k, j]))) for k in range(3) for j in range(spec.N)]
    for j in range(spec.N):
        for r in range(spec.N):
            for c in range(spec.N):
                rows.append((f"M{j + 1}", r + 1, c + 1, "", repr(float(spec.transfer[j, r, c]))))
    if opts["level"] is not None:
        m = _require_level(opts)
        mom = level_moments(spec, m)
        for i in range(mom.shape[0]):
            word = "".join(str(v) for v in word_of_index(i + 1, m, spec.N))
            for k in range(3):
                rows.append((f"level{m}", k, i + 1, word, repr(float(mom[i, k]))))
    _emit(_csv(rows, ("table", "k_or_row", "j_or_col", "word", "value")), opts["out"], "tables.csv")
    return EXIT_OK


def cmd_mesh(opts: dict) -> int:
    spec = make_measure(opts["measure"], opts["p"])
    mesh = build_mesh(spec, _require_level(opts))
    rows = [(i, repr(float(x))) for i, x in enumerate(mesh.nodes)]
    _emit(_csv(rows, ("i", "x")), opts["out"], "mesh.csv")
    return EXIT_OK


def cmd_assemble(opts: dict) -> int:
    spec = make_measure(opts["measure"], opts["p"])
    mesh = build_mesh(spec, _require_level(opts))
    rows = []
    for label, A in (("M", full_mass_matrix(spec, mesh)), ("K", full_stiffness_matrix(mesh))):
        for i in range(A.n):
            if i > 0:
                rows.append((label, i, i - 1, repr(float(A.sub[i - 1]))))
            rows.append((label, i, i, repr(float(A.diag[i]))))
            if i < A.n - 1:
                rows.append((label, i, i + 1, repr(float(A.sup[i]))))
    _emit(_csv(rows, ("matrix", "row", "col", "value")), opts["out"], "matrices.csv")
    return EXIT_OK


def _initial_data(opts: dict, spec: MeasureSpec) -> InitialData:
    a, b = spec.support
    data = InitialData(parse_function(opts["g"], a, b), parse_function(opts["h"], a, b))
    try:
        data.check(a, b)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return data


def _default_dt(limit: float, t_end: float) -> float:
    """0.001 when it passes the gate, else half the limit rounded so t_end is a whole step count."""
    if 1e-3 <= STABILITY_FACTOR * limit:
        return 1e-3
    return t_end / math.ceil(t_end / (0.5 * limit))


def cmd_simulate(opts: dict) -> int:
    spec = make_measure(opts["measure"], opts["p"])
    m = _require_level(opts)
    data = _initial_data(opts, spec)
    out = opts["out"] or "out"

    samples = parse_samples(opts["samples"]) if opts["samples"] is not None else None
    t_end = opts["t_end"]
    if t_end is None:
        t_end = max(samples) if samples else 1.0
    t_end = float(t_end)
    if not t_end > 0:
        raise UsageError("--t-end must be positive")
    if samples is None:
        samples = [0.0, t_end]
    if any(t < 0 or t > t_end for t in samples):
        raise UsageError(f"sample times must lie in [0, {t_end}]")

    mesh = build_mesh(spec, m)
    limit = max_stable_dt(mass_matrix(spec, mesh), stiffness_matrix(mesh))
    dt = float(opts["dt"]) if opts["dt"] is not None else _default_dt(limit, t_end)
    if not dt > 0:
        raise UsageError("--dt must be positive")
    log.info("level %d, %d nodes, dt %g, stability limit %.6g", m, mesh.nodes.size, dt, limit)
    snaps = simulate(spec, m, data, dt, t_end, samples, force=bool(opts["force"]), mesh=mesh)

    meta = {
        "command": "simulate",
        "version": __version__,
        "preset": opts["preset"],
        "measure": _measure_meta(spec, opts),
        "level": m,
        "nodes": int(mesh.nodes.size),
        "mesh_norm": mesh_norm(mesh),
        "dt": dt,
        "dt_stability_limit": limit,
        "force": bool(opts["force"]),
        "t_end": t_end,
        "g": opts["g"],
        "h": opts["h"],
        "sample_times": samples,
        "reported_times": [t for t, _ in snaps],
        "steps": [int(round(t / dt)) for t in samples],
    }
    _emit(snapshots_to_csv(snaps), out, "snapshots.csv")
    _emit(json.dumps(meta, indent=2, sort_keys=True) + "\n", out, "meta.json")
    print(f"wrote {len(snaps)} snapshots x {mesh.nodes.size} nodes to {Path(out) / 'snapshots.csv'}")
    return EXIT_OK


def cmd_converge(opts: dict) -> int:
    if opts["levels"] is None:
        raise UsageError("--levels a:b is required")
    levels = parse_levels(opts["levels"])
    spec = make_measure(opts["measure"], opts["p"])
    ref = opts["ref"] if opts["ref"] is not None else max(levels) + 3
    if ref < max(levels) + 2:
        raise UsageError(f"--ref must be at least max(levels) + 2 = {max(levels) + 2}")
    data = _initial_data(opts, spec)
    try:
        report = refine_study(spec, data, opts["dt"], opts["t_end"], levels, int(ref), force=bool(opts["force"]))
    except UnstableStepError:
        raise
    except ValueError as exc:
        if "whole number of steps" in str(exc) or "must be positive" in str(exc):
            raise UsageError(str(exc)) from exc
        raise
    text = report.to_csv()
    sys.stdout.write(text)
    print(report.verdict())
    for note in report.notes:
        print(f"note: {note}")
    if opts["out"] is not None:
        _emit(text, opts["out"], "convergence.csv")
        meta = {
            "command": "converge",
            "version": __version__,
            "measure": _measure_meta(spec, opts),
            "levels": levels,
            "ref": int(ref),
            "dt": report.dt,
            "t_star": report.t_star,
            "g": opts["g"],
            "h": opts["h"],
            "fitted_rate": report.fitted_rate,
            "theory_slope": report.theory_slope,
            "verdict": report.verdict(),
        }
        _emit(json.dumps(meta, indent=2, sort_keys=True) + "\n", opts["out"], "meta.json")
    return EXIT_OK if report.passed() else EXIT_INVALID


HANDLERS = {
    "validate": cmd_validate,
    "tables": cmd_tables,
    "mesh": cmd_mesh,
    "assemble": cmd_assemble,
    "simulate": cmd_simulate,
    "converge": cmd_converge,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fractalwave: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        opts = resolve_options(args)
        return HANDLERS[args.command](opts)
    except UsageError as exc:
        print(f"fractalwave: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationFailure, MeasureSpecError) as exc:
        print(f"fractalwave: invalid measure: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except UnstableStepError as exc:
        print(f"fractalwave: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SingularMatrixError, RuntimeError, FloatingPointError) as exc:
        print(f"fractalwave: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"fractalwave: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fractalwave: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
