"""Command-line front end.

Subcommands:

* generate  -- build a scenario field and noisy observations from a config
* detect    -- run one detector on an observations file
* validate  -- Monte Carlo check of the asymptotic ratio distributions
* benchmark -- confusion matrices + F1 over a suite of methods and scenarios
* replay    -- rerun the command recorded in a manifest

Exit codes: 0 conclusive, 1 failure, 2 inconclusive, 64 usage. All randomness
flows from one master seed (flag --seed, env RANKSCOPE_SEED, default 0)
recorded in the output manifest.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .detectors import (
    METHOD_AVERAGED_ROTATIONS,
    METHOD_BASELINE,
    METHOD_VARIANCE_RATIO,
    decision_to_json,
    save_decision,
)
from .eval import (
    DetectorSpec,
    confusion_summary_json,
    empirical_density_check,
    macro_f1,
    run_detector,
    run_trials,
    save_confusion_csv,
    save_distribution_report,
    save_qq_csv,
)
from .exceptions import InputError, RankscopeError
from .fields import generate_scenario, load_scenario
from .matrix_core import load_observations, save_matrix, save_observations
from .subsample_stats import AsymptoticParams, simulate_chi_square_ratio

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INCONCLUSIVE = 2
EXIT_USAGE = 64

_METHODS = (METHOD_VARIANCE_RATIO, METHOD_AVERAGED_ROTATIONS, METHOD_BASELINE)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RANKSCOPE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise _UsageError(f"RANKSCOPE_SEED is not an integer: {env!r}") from e
    return 0


def _write_manifest(out_dir: Path, command: str, seed: int, config,
                    argv: list, started: float) -> None:
    payload = {
        "command": command,
        "config": str(config) if config is not None else None,
        "seed": seed,
        "version": __version__,
        "out": str(out_dir),
        "started_unix": started,
        "duration_s": time.time() - started,
        "argv": argv,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _replay_argv(command: str, seed: int, extra: list) -> list:
    """Canonical argv for the manifest, with --out stripped so replay can redirect."""
    return [command, *extra, "--seed", str(seed)]


def cmd_generate(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    try:
        scenario = load_scenario(args.config)
    except InputError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    field, obs = generate_scenario(scenario, seed)
    out = _out_dir(args)
    save_matrix(field.truth, out / "truth.csv")
    save_observations(obs, out / "observations.csv")
    _write_manifest(out, "generate", seed, args.config,
                    _replay_argv("generate", seed, ["--config", str(args.config)]), started)
    print(f"wrote {out / 'truth.csv'} and {out / 'observations.csv'} "
          f"(|Omega| = {len(obs)})")
    return EXIT_OK


def _detector_spec_from_args(args) -> DetectorSpec:
    method = args.method
    if method == METHOD_BASELINE:
        if args.b is None:
            raise _UsageError("baseline needs --b")
        return DetectorSpec(method, {"b": args.b})
    if method == METHOD_AVERAGED_ROTATIONS:
        params = {"n": args.n, "D": args.D, "b": args.b if args.b is not None else 0.8}
        if args.reg is not None:
            params["reg"] = args.reg
        return DetectorSpec(method, params)
    params = {"r_max": args.r_max, "c": args.c, "L": args.L,
              "use_rotation": args.use_rotation}
    if (args.b is None) == (args.alpha is None):
        raise _UsageError("variance_ratio needs exactly one of --b or --alpha")
    if args.b is not None:
        params["b"] = args.b
    else:
        params["alpha"] = args.alpha
    if args.reg is not None:
        params["reg"] = args.reg
    return DetectorSpec(method, params)


def cmd_detect(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    spec = _detector_spec_from_args(args)
    obs = load_observations(args.observations)
    decision = run_detector(obs, spec, seed=seed)
    text = decision_to_json(decision)
    print(text)
    out = _out_dir(args)
    save_decision(decision, out / "decision.json")
    extra = ["--observations", str(args.observations), "--method", args.method]
    for flag, val in (("--b", args.b), ("--alpha", args.alpha),
                      ("--r-max", args.r_max), ("--c", args.c), ("--L", args.L),
                      ("--n", args.n), ("--D", args.D), ("--reg", args.reg)):
        if val is not None:
            extra += [flag, str(val)]
    if args.use_rotation:
        extra.append("--use-rotation")
    _write_manifest(out, "detect", seed, None,
                    _replay_argv("detect", seed, extra), started)
    return EXIT_INCONCLUSIVE if decision.inconclusive else EXIT_OK


def cmd_validate(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    if args.reps < 100:
        raise _UsageError("reps must be >= 100")
    out = _out_dir(args)
    params = AsymptoticParams(args.c, args.L)
    dep = simulate_chi_square_ratio(args.c, args.L, args.reps, seed,
                                    statistic="dependent")
    split = simulate_chi_square_ratio(args.c, args.L, args.reps, seed,
                                      statistic="split")
    dep_report = empirical_density_check(dep, args.c, args.L)
    split_report = empirical_density_check(
        split, args.c, args.L, target_variance=params.split_ratio_variance
    )
    save_distribution_report(dep_report, out / "report_dependent.json")
    save_distribution_report(split_report, out / "report_split.json")
    save_qq_csv(dep, args.c, args.L, out / "qq_dependent.csv")
    save_qq_csv(split, args.c, args.L, out / "qq_split.csv",
                target_variance=params.split_ratio_variance)
    with open(out / "asymptotic_params.json", "w") as fh:
        fh.write(params.to_json())
        fh.write("\n")
    _write_manifest(out, "validate", seed, None,
                    _replay_argv("validate", seed,
                                 ["--c", str(args.c), "--L", str(args.L),
                                  "--reps", str(args.reps)]), started)
    print(f"dependent: mean={dep_report.sample_mean:.5f} "
          f"var={dep_report.sample_variance:.6f} "
          f"(target {dep_report.target_variance:.6f})")
    print(f"split:     mean={split_report.sample_mean:.5f} "
          f"var={split_report.sample_variance:.6f} "
          f"(target {split_report.target_variance:.6f})")
    return EXIT_OK


def _parse_method_params(parser, section: str) -> dict:
    # configparser lowercases option names; map them back to config fields
    renames = {"d": "D", "l": "L"}
    ints = {"n", "d", "r_max", "c", "l"}
    floats = {"b", "alpha", "reg", "reg_divisor"}
    bools = {"use_rotation"}
    params = {}
    if not parser.has_section(section):
        return params
    for key in parser[section]:
        name = renames.get(key, key)
        if key in ints:
            params[name] = parser.getint(section, key)
        elif key in floats:
            params[name] = parser.getfloat(section, key)
        elif key in bools:
            params[name] = parser.getboolean(section, key)
        else:
            raise _UsageError(f"unknown parameter {key!r} in [{section}]")
    return params


def cmd_benchmark(args) -> int:
    import configparser

    started = time.time()
    seed = _resolve_seed(args)
    parser = configparser.ConfigParser()
    if not parser.read(args.config):
        print(f"config error: cannot read {args.config}", file=sys.stderr)
        return EXIT_USAGE
    try:
        scenario = load_scenario(args.config)
    except InputError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if not parser.has_section("suite"):
        raise _UsageError("suite config needs a [suite] section")
    methods = [m.strip() for m in parser.get("suite", "methods", fallback="").split(",")
               if m.strip()]
    if not methods:
        raise _UsageError("empty method list")
    for m in methods:
        if m not in _METHODS:
            raise _UsageError(f"unknown method {m!r}")
    true_counts = [int(t) for t in
                   parser.get("suite", "true_counts", fallback="2,3").split(",")]
    reps = parser.getint("suite", "reps", fallback=50)

    out = _out_dir(args)
    summary = {}
    for method in methods:
        spec = DetectorSpec(method, _parse_method_params(parser, f"method.{method}"))
        cm = run_trials(scenario, spec, true_counts, reps, seed,
                        workers=args.workers)
        save_confusion_csv(cm, out / f"confusion_{method}.csv")
        with open(out / f"summary_{method}.json", "w") as fh:
            fh.write(confusion_summary_json(cm))
            fh.write("\n")
        summary[method] = macro_f1(cm)
        print(f"{method}: macro F1 = {summary[method]:.4f}")
    with open(out / "summary.json", "w") as fh:
        json.dump({"macro_f1": summary, "reps": reps,
                   "true_counts": true_counts, "seed": seed},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "benchmark", seed, args.config,
                    _replay_argv("benchmark", seed,
                                 ["--config", str(args.config),
                                  "--workers", str(args.workers)]), started)
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        with open(args.manifest) as fh:
            manifest = json.load(fh)
        argv = list(manifest["argv"])
    except (OSError, KeyError, json.JSONDecodeError) as e:
        print(f"bad manifest: {e}", file=sys.stderr)
        return EXIT_USAGE
    argv += ["--out", str(args.out)]
    return main(argv)


def build_parser() -> _Parser:
    parser = _Parser(prog="rankscope", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (falls back to RANKSCOPE_SEED, then 0)")
        p.add_argument("--out", default=".", help="output directory")

    g = sub.add_parser("generate", help="generate a scenario field + observations")
    g.add_argument("--config", required=True)
    common(g)
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("detect", help="run one detector on an observations file")
    d.add_argument("--observations", required=True)
    d.add_argument("--method", required=True, choices=_METHODS)
    d.add_argument("--b", type=float, default=None)
    d.add_argument("--alpha", type=float, default=None)
    d.add_argument("--r-max", type=int, default=4, dest="r_max")
    d.add_argument("--c", type=int, default=2)
    d.add_argument("--L", type=int, default=750)
    d.add_argument("--n", type=int, default=20)
    d.add_argument("--D", type=int, default=20)
    d.add_argument("--reg", type=float, default=None)
    d.add_argument("--use-rotation", action="store_true", dest="use_rotation")
    common(d)
    d.set_defaults(func=cmd_detect)

    v = sub.add_parser("validate", help="Monte Carlo validation of the asymptotics")
    v.add_argument("--c", type=int, default=20)
    v.add_argument("--L", type=int, default=150)
    v.add_argument("--reps", type=int, default=2000)
    common(v)
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("benchmark", help="confusion matrices + F1 over a suite")
    b.add_argument("--config", required=True)
    b.add_argument("--workers", type=int, default=1)
    common(b)
    b.set_defaults(func=cmd_benchmark)

    r = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", default=".")
    r.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except RankscopeError as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
