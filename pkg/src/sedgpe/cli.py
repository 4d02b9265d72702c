"""Command-line interface: ``sedgpe {preprocess,run,validate,fixture}``.

Output layout under the output directory::

    artifacts/<farm>.json   hourly matrices, power curve and KLE basis per farm
    reports/report.json     uncertainty report (deterministic for fixed seeds)
    reports/timing.json     wall-clock timings (not deterministic)
    reports/costs.csv       per-scenario latent point and surrogate/MC cost
    traces/trace.csv        convergence trace, when ``--trace`` is given

Exit codes: 0 success, 1 validation failure, 2 input error, 3 fit aborted,
4 infeasible case.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import __version__
from .exceptions import FitAborted, FitFailed, Infeasible, SedError
from .kle import KarhunenLoeveExpansion
from .pipeline import PipelineConfig, load_fields, run_study
from .wind import PowerCurveTree

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("sedgpe")

EXIT_OK, EXIT_VALIDATION, EXIT_INPUT, EXIT_ABORTED, EXIT_INFEASIBLE = 0, 1, 2, 3, 4

# config section -> {key: PipelineConfig field}
CONFIG_KEYS = {
    "paths": {"wind": None, "case": None, "output_dir": None},
    "wind-data": {"max_depth": "max_depth", "min_leaf_count": "min_leaf_count"},
    "kle": {"variance_target": "variance_target"},
    "latent-stats": {"dependency_threshold": "dependency_threshold", "reference_pool": "reference_pool"},
    "gpe": {"basis": "basis", "kernel": "kernel", "n_restarts": "n_restarts"},
    "pipeline": {"train_size": "train_size", "mc_size": "mc_size", "seed": "seed",
                 "with_mc": "with_mc", "curtailment": "curtailment", "replicate": "replicate",
                 "surrogate": "surrogate", "jobs": "jobs"},
}


class InputError(Exception):
    """Bad command-line input or configuration (exit code 2)."""


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _existing(path, base=None):
    p = Path(path)
    if base is not None and not p.is_absolute():
        p = Path(base) / p
    if not p.exists():
        raise InputError(f"file not found: {p}")
    return p


def load_config(path):
    """Parse a TOML config into ``(PipelineConfig, wind_paths, case, output_dir)``.

    Relative paths resolve against the config file's directory. Unknown
    sections or keys are rejected and every referenced file must exist.
    """
    path = _existing(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as err:
        raise InputError(f"{path}: {err}") from None
    base = path.parent
    values = {}
    for section, body in data.items():
        if section not in CONFIG_KEYS or not isinstance(body, dict):
            raise InputError(f"{path}: unknown section [{section}]")
        for key, value in body.items():
            if key not in CONFIG_KEYS[section]:
                raise InputError(f"{path}: unknown key {key!r} in [{section}]")
            values[(section, key)] = value
    wind = values.get(("paths", "wind"))
    if not wind:
        raise InputError(f"{path}: [paths] wind is required")
    wind = [wind] if isinstance(wind, str) else list(wind)
    wind_paths = [_existing(w, base) for w in wind]
    case = values.get(("paths", "case"), "builtin:case5")
    if not str(case).startswith("builtin:"):
        case = _existing(case, base)
    out = Path(values.get(("paths", "output_dir"), "out"))
    out = out if out.is_absolute() else base / out
    fields = {CONFIG_KEYS[s][k]: v for (s, k), v in values.items() if s != "paths"}
    try:
        config = PipelineConfig(**fields)
    except TypeError as err:
        raise InputError(f"{path}: {err}") from None
    return config, wind_paths, case, out


def _override(config, name, value):
    if value is None:
        return
    old = getattr(config, name)
    if old != value:
        log.info("command-line --%s=%s overrides config value %s", name.replace("_", "-"), value, old)
    setattr(config, name, value)


def cmd_preprocess(args):
    wind = [_existing(w) for w in args.wind]
    speed, power, _ = load_fields(wind)
    out = Path(args.out)
    for farm in speed:
        tree = PowerCurveTree(args.max_depth, args.min_leaf).fit(
            speed[farm].values.ravel(), power[farm].values.ravel())
        kle = KarhunenLoeveExpansion(args.variance_target, farm).fit(speed[farm])
        write_json(out / "artifacts" / f"{farm}.json", {
            "farm_id": farm,
            "speed": speed[farm].to_dict(),
            "power": power[farm].to_dict(),
            "power_curve": tree.to_dict(),
            "kle": kle.to_dict(),
        })
        log.info("farm %s: %d days, %d KLE modes, %d power-curve leaves",
                 farm, len(speed[farm].days), kle.n_components_, tree.n_leaves_)
    return EXIT_OK


def _parse_sizes(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"--trace expects comma-separated integers, got {text!r}") from None


def cmd_run(args):
    config, wind, case, out = load_config(args.config)
    if args.out:
        out = Path(args.out)
    _override(config, "train_size", args.train_size)
    _override(config, "mc_size", args.mc_size)
    _override(config, "seed", args.seed)
    _override(config, "with_mc", True if args.with_mc else None)
    _override(config, "jobs", args.jobs)
    sizes = _parse_sizes(args.trace) if args.trace else None

    report, arrays = run_study(config, wind, case, sizes)
    write_json(out / "reports" / "report.json", report.to_dict())
    write_json(out / "reports" / "timing.json", report.timing)
    _write_costs(out / "reports" / "costs.csv", arrays)
    if sizes:
        path = out / "traces" / "trace.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "relative_difference"])
            w.writerows((n, repr(d)) for n, d in report.trace)
    s = report.surrogate
    log.info("E[Q_GP] = %.6g, std = %.6g, 95%% interval [%.6g, %.6g]",
             s["mean"], s["std"], *s["quantile_interval95"])
    if report.relative_difference is not None:
        log.info("E[Q_MC] = %.6g, d_r = %.3e", report.monte_carlo["mean"], report.relative_difference)
    log.info("outputs written under %s", out)
    return EXIT_OK


def _write_costs(path, arrays):
    path.parent.mkdir(parents=True, exist_ok=True)
    X = arrays["scenarios"]
    cols = [arrays["q_gp"]] + ([arrays["q_mc"]] if "q_mc" in arrays else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario"] + [f"xi{j + 1}" for j in range(X.shape[1])]
                   + ["q_gp"] + (["q_mc"] if len(cols) > 1 else []))
        for k in range(X.shape[0]):
            w.writerow([k] + [repr(float(v)) for v in X[k]] + [repr(float(c[k])) for c in cols])


def cmd_validate(args):
    from .validation import run_all

    results = run_all(args.inject_fault)
    for r in results:
        print(r.line(), file=sys.stderr)
    failed = [r.module for r in results if not r.passed]
    if failed:
        print(f"validation failed in: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_fixture(args):
    from .fixtures import write_fixture

    paths = write_fixture(args.out, args.seed)
    log.info("wrote %s and config.toml", ", ".join(str(p) for p in paths))
    return EXIT_OK


def build_parser():
    from .validation import MODULES

    parser = argparse.ArgumentParser(prog="sedgpe", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="hourly matrices, power curves and KLE bases per farm")
    p.add_argument("--wind", nargs="+", required=True, metavar="CSV")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--variance-target", type=float, default=0.95)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("run", help="surrogate-based uncertainty propagation")
    p.add_argument("--config", required=True, metavar="TOML")
    p.add_argument("--out", metavar="DIR", help="override [paths] output_dir")
    p.add_argument("--train-size", type=int)
    p.add_argument("--mc-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--with-mc", action="store_true", help="also solve every scenario (reference)")
    p.add_argument("--trace", metavar="N1,N2,...", help="convergence trace over training sizes")
    p.add_argument("--jobs", type=int, help="worker threads (0 = all cores)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="run the built-in oracle checks")
    p.add_argument("--inject-fault", choices=MODULES, metavar="MODULE",
                   help=f"perturb one module's output to exercise failure reporting {MODULES}")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("fixture", help="write the synthetic three-farm data set and a config")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=2004)
    p.set_defaults(func=cmd_fixture)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except InputError as err:
        log.error("%s", err)
        return EXIT_INPUT
    except FileNotFoundError as err:
        log.error("file not found: %s", err.filename)
        return EXIT_INPUT
    except (FitAborted, FitFailed) as err:
        log.error("[%s] %s", err.stage or "fit", err)
        return EXIT_ABORTED
    except Infeasible as err:
        log.error("[%s] %s", err.stage or "dispatch", err)
        return EXIT_INFEASIBLE
    except SedError as err:
        log.error("[%s] %s", err.stage or "input", err)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
