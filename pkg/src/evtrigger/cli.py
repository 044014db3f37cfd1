"""``evtrigger`` command line: ``characterize``, ``sweep`` and ``oracle-check``.

Settings come from three layers, later ones winning: built-in defaults, an
optional INI file (``--config``), and command-line flags.  The INI file may
hold a ``[DEFAULT]`` section plus one section per subcommand; keys are flag
names without the leading dashes, e.g.::

    [DEFAULT]
    seed = 7
    runs = 200

    [sweep]
    beta = 2, 1000
    estimators = sebkf, sampling

Exit codes: 0 success, 1 usage or invalid settings, 2 I/O failure,
3 sampling starvation, 4 oracle mismatch.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import math
import sys

import numpy as np

from . import harness, oracle
from .errors import ConfigurationError, GridTooSmallError, SamplingStarvationError
from .model import GaussianBelief, LinearSystemModel

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_STARVATION = 3
EXIT_ORACLE = 4

CHARACTERIZE_HEADER = ("beta", "alpha_z", "event_rate", "cond_z_energy", "runs", "steps", "seed")
SWEEP_HEADER = ("beta", "alpha_z", "estimator", "event_rate", "mse", "relative_mse", "anees",
                "N", "runs", "steps", "seed")
ORACLE_HEADER = ("beta", "method", "mean", "var", "oracle_mean", "oracle_var", "mean_error",
                 "var_error", "ok")


# ---------------------------------------------------------------- converters

def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be finite and > 0: {text!r}")
    return v


def _float_list(text):
    items = [t for t in str(text).replace(" ", "").split(",") if t]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return tuple(_positive_float(t) for t in items)


def _int(minimum):
    def convert(text):
        try:
            v = int(str(text).strip())
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if v < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}: {text!r}")
        return v
    convert.__name__ = f"int>={minimum}"
    return convert


def _optional_samples(text):
    if str(text).strip().lower() in ("none", "off", "0"):
        return None
    return _int(2)(text)


def _estimators(text):
    try:
        return harness.parse_estimators("" if str(text).strip().lower() == "none" else text)
    except ConfigurationError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _policy(text):
    t = str(text).strip().lower()
    if t not in ("zero", "sod", "sodp"):
        raise argparse.ArgumentTypeError(f"policy must be zero, sod or sodp, not {text!r}")
    return t


def _initial(text):
    t = str(text).strip().lower()
    if t not in harness.INITIAL_ESTIMATES:
        raise argparse.ArgumentTypeError(f"must be one of {', '.join(harness.INITIAL_ESTIMATES)}: {text!r}")
    return t


def _boolean(text):
    t = str(text).strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _fmt_list(values):
    return ",".join(format(v, "g") for v in values)


# name -> (converter, help); defaults live per subcommand below
_OPTIONS = {
    "beta": (_float_list, "comma-separated shape exponents"),
    "alpha": (_float_list, "comma-separated alpha_z values (Z = alpha_z * I)"),
    "policy": (_policy, "implicit measurement: zero, sod or sodp"),
    "estimators": (_estimators, "comma-separated subset of kf,sebkf,sampling"),
    "runs": (_int(1), "Monte-Carlo runs per grid point"),
    "steps": (_int(1), "time steps per run"),
    "seed": (_int(0), "master seed"),
    "samples": (_int(2), "sampling estimator N"),
    "mselect": (_int(1), "extra subset draws M in the max-variance selection"),
    "samples-low-rate": (_optional_samples, "N below the low event-rate threshold ('none' keeps --samples)"),
    "max-batches": (_int(1), "rejection batches before giving up"),
    "burn-in": (_int(0), "initial steps excluded from the metrics"),
    "delta": (_positive_float, "sampling period of the constant-velocity model"),
    "q": (_positive_float, "process noise intensity of the constant-velocity model"),
    "deterministic": (_boolean, "use the deterministic ellipsoid trigger"),
    "jobs": (_int(1), "worker processes"),
    "initial-estimate": (_initial, "estimator start: perturbed (x0 + N(0, I) error), mean (0) or truth (x0)"),
    "out": (str, "output CSV path, '-' for stdout"),
    "grid-points": (_int(64), "quadrature points per state axis (measurement axis gets 4x)"),
    "grid-halfwidth": (_positive_float, "state grid half-width in prior standard deviations"),
    "prior-var": (_positive_float, "posterior variance before the checked step"),
    "c": (float, "implicit measurement of the checked step"),
}

_DEFAULTS = {
    "characterize": {
        "beta": harness.BETA_GRID, "alpha": harness.ALPHA_GRID, "policy": "sodp", "runs": 100,
        "steps": 500, "seed": 0, "burn-in": 0, "delta": 0.3, "q": 1.0, "deterministic": False,
        "jobs": 1, "initial-estimate": "perturbed", "out": "characterize.csv",
    },
    "sweep": {
        "beta": harness.BETA_GRID, "alpha": harness.SWEEP_ALPHA_GRID, "policy": "sodp",
        "estimators": harness.ESTIMATORS, "runs": 100, "steps": 150, "seed": 0, "samples": 1000,
        "mselect": 1, "samples-low-rate": 5000, "max-batches": 1000, "burn-in": 0, "delta": 0.3,
        "q": 1.0, "deterministic": False, "jobs": 1, "initial-estimate": "perturbed", "out": "sweep.csv",
    },
    "oracle-check": {
        "beta": (2.0, 10.0, 1000.0), "alpha": (1.0,), "seed": 0, "samples": 100_000, "mselect": 1,
        "grid-points": 1025, "grid-halfwidth": 8.0, "prior-var": 0.618034, "c": 1.0,
        "deterministic": False, "out": None,
    },
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evtrigger", description="Event-triggered estimation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "characterize": "event rate and conditional innovation energy per (beta, alpha_z)",
        "sweep": "MSE and ANEES of the remote estimators per (beta, alpha_z)",
        "oracle-check": "compare one non-event step of the estimators with quadrature",
    }
    for name, defaults in _DEFAULTS.items():
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        p.add_argument("--config", metavar="PATH", help="INI file with default settings")
        for opt in defaults:
            conv, text = _OPTIONS[opt]
            shown = defaults[opt]
            if isinstance(shown, tuple):
                shown = ",".join(map(str, shown)) if opt == "estimators" else _fmt_list(shown)
            if opt == "deterministic":
                p.add_argument("--deterministic", action="store_const", const=True, default=None,
                               help=text)
            else:
                p.add_argument(f"--{opt}", type=conv, default=None, help=f"{text} (default: {shown})")
    return parser


def _resolve(args, parser):
    """Merge defaults, config file and flags into one dict keyed by option name."""
    defaults = _DEFAULTS[args.command]
    values = dict(defaults)
    if args.config:
        cp = configparser.ConfigParser(default_section="\0", interpolation=None)
        try:
            with open(args.config, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise _IOFailure(f"cannot read config file {args.config}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigurationError(f"malformed config file {args.config}: {exc}") from exc
        # [DEFAULT] is shared, so keys meant for other subcommands are skipped there
        for section, strict in (("DEFAULT", False), (args.command, True)):
            if not cp.has_section(section):
                continue
            for key, raw in cp.items(section):
                opt = key.replace("_", "-")
                if opt not in defaults:
                    if strict:
                        raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
                    continue
                try:
                    values[opt] = _OPTIONS[opt][0](raw)
                except argparse.ArgumentTypeError as exc:
                    raise ConfigurationError(f"config key {key!r}: {exc}") from None
    for opt in defaults:
        v = getattr(args, opt.replace("-", "_"))
        if v is not None:
            values[opt] = v
    return values


class _IOFailure(Exception):
    pass


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def _write_csv(path, header, rows):
    try:
        if path == "-":
            _emit(sys.stdout, header, rows)
        else:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                _emit(fh, header, rows)
    except OSError as exc:
        raise _IOFailure(f"cannot write {path}: {exc}") from exc


def _emit(fh, header, rows):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])


def _scenario(values, estimators=()):
    kw = dict(
        betas=values["beta"], alphas=values["alpha"], policy=values["policy"], runs=values["runs"],
        steps=values["steps"], seed=values["seed"], burn_in=values["burn-in"], delta=values["delta"],
        q=values["q"], deterministic=values["deterministic"], jobs=values["jobs"],
        initial_estimate=values["initial-estimate"],
    )
    if estimators:
        kw.update(estimators=estimators, samples=values["samples"], mselect=values["mselect"],
                  samples_low_rate=values["samples-low-rate"], max_batches=values["max-batches"])
    return harness.ScenarioConfig(**kw)


def cmd_characterize(values) -> int:
    rows = harness.characterize_trigger(_scenario(values))
    _write_csv(values["out"], CHARACTERIZE_HEADER,
               [(r.beta, r.alpha_z, r.event_rate, r.mean_conditional_z_energy, r.runs, r.steps, r.seed)
                for r in rows])
    _note(f"wrote {len(rows)} rows to {values['out']}", values)
    return EXIT_OK


def cmd_sweep(values) -> int:
    rows = harness.sweep_estimators(_scenario(values, values["estimators"]))
    _write_csv(values["out"], SWEEP_HEADER,
               [(r.beta, r.alpha_z, r.estimator, r.event_rate, r.mse, r.relative_mse, r.anees, r.N,
                 r.runs, r.steps, r.seed) for r in rows])
    _note(f"wrote {len(rows)} rows to {values['out']}", values)
    return EXIT_OK


def cmd_oracle_check(values) -> int:
    if len(values["alpha"]) != 1:
        raise ConfigurationError("oracle-check takes a single --alpha")
    model = LinearSystemModel(F=1.0, H=1.0, Q=1.0, R=1.0)
    posterior = GaussianBelief([0.0], [[values["prior-var"]]])
    n = values["grid-points"]
    grid = oracle.GridSpec(state_points=n, meas_points=4 * n - 3, state_halfwidth=values["grid-halfwidth"])
    try:
        results = oracle.check_estimators(posterior, model, [values["c"]], values["alpha"][0], values["beta"],
                                          samples=values["samples"], mselect=values["mselect"],
                                          seed=values["seed"], grid=grid,
                                          deterministic=values["deterministic"])
    except GridTooSmallError as exc:
        print(f"oracle-check: quadrature grid rejected: {exc}", file=sys.stderr)
        return EXIT_ORACLE
    for r in results:
        var_txt = f"|dvar|/var={r.var_error:.3g}" if r.var_relative else f"|dvar|={r.var_error:.3g}"
        print(f"beta={r.beta:g} {r.method:<8} mean={r.mean:.6f} (oracle {r.oracle_mean:.6f}) "
              f"var={r.var:.6f} (oracle {r.oracle_var:.6f}) |dmean|={r.mean_error:.3g} {var_txt} "
              f"{'ok' if r.ok else 'MISMATCH'}")
    if values["out"]:
        _write_csv(values["out"], ORACLE_HEADER,
                   [(r.beta, r.method, r.mean, r.var, r.oracle_mean, r.oracle_var, r.mean_error,
                     r.var_error, r.ok) for r in results])
    bad = [r for r in results if not r.ok]
    if bad:
        for r in bad:
            print(f"oracle-check: {r.method} at beta={r.beta:g} outside tolerance "
                  f"(mean {r.mean_error:.3g} > {r.mean_tolerance:g} or var {r.var_error:.3g} > {r.var_tolerance:g})",
                  file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


def _note(msg, values):
    if values.get("out") != "-":
        print(msg, file=sys.stderr)


_COMMANDS = {"characterize": cmd_characterize, "sweep": cmd_sweep, "oracle-check": cmd_oracle_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        values = _resolve(args, parser)
        return _COMMANDS[args.command](values)
    except _IOFailure as exc:
        print(f"evtrigger: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"evtrigger: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SamplingStarvationError as exc:
        where = exc.scenario or {}
        coords = ", ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in where.items())
        print(f"evtrigger: sampling starvation at {coords or 'unknown point'}: {exc}", file=sys.stderr)
        return EXIT_STARVATION


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
