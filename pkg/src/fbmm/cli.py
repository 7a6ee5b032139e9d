"""Command-line entry point.

Subcommands::

    fbmm run <config.toml|builtin> [--jobs K] [--out DIR]   full sweep
    fbmm scenarios [--dump NAME]                            list/dump builtins
    fbmm check <config.toml|builtin>                        validate only
    fbmm shadow <config.toml|builtin> [--out DIR]           shadowing only
    fbmm drift <config.toml|builtin> [--out DIR]            drift only

Exit codes: 0 success, 1 validation error, 2 every run failed numerically,
3 at least one sweep assertion flag failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import dump_toml, load_toml
from .errors import FbmmError, ScenarioValidationError
from .harness import run_scenario
from .scenarios import builtin_scenarios

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_ALL_FAILED = 2
EXIT_FLAGS = 3


def _load_config(ref):
    path = Path(ref)
    if path.exists():
        return load_toml(path)
    builtins = builtin_scenarios()
    if ref in builtins:
        return builtins[ref]
    raise ScenarioValidationError(
        "config", f"{ref!r} is neither a config file nor a builtin ({', '.join(sorted(builtins))})"
    )


def _report(result):
    failed = [r for r in result.runs if not r.ok]
    print(f"wrote {result.summary_path}")
    if failed:
        print(f"{len(failed)}/{len(result.runs)} runs failed numerically")
    for name, ok in sorted(result.flags.items()):
        print(f"flag {name}: {'pass' if ok else 'FAIL'}")
    if result.all_failed:
        return EXIT_ALL_FAILED
    if any(not ok for ok in result.flags.values()):
        return EXIT_FLAGS
    return EXIT_OK


def _cmd_run(args):
    cfg = _load_config(args.config)
    result = run_scenario(cfg, args.out, jobs=args.jobs)
    return _report(result)


def _cmd_check(args):
    from .config import build_model, validate_config
    from .random_model import validate_l2_representation

    cfg = _load_config(args.config)
    validate_config(cfg)
    model = build_model(cfg)
    if model.is_finite_support and model.x_star is not None and model.phi is not None:
        validate_l2_representation(model)
    print(f"{cfg.name}: ok")
    return EXIT_OK


def _cmd_scenarios(args):
    builtins = builtin_scenarios()
    if args.dump:
        if args.dump not in builtins:
            print(f"unknown builtin {args.dump!r}", file=sys.stderr)
            return EXIT_VALIDATION
        print(dump_toml(builtins[args.dump]), end="")
        return EXIT_OK
    for name, cfg in sorted(builtins.items()):
        n_atoms = len(cfg.measure.get("atoms", [])) or "sampler"
        print(f"{name}: dim={cfg.dimension}, atoms={n_atoms}, gammas={list(cfg.gammas)}, n_steps={cfg.n_steps}")
    return EXIT_OK


def _cmd_shadow(args):
    cfg = _load_config(args.config)
    diag = dataclasses.replace(
        cfg.diagnostics,
        shadowing=True,
        ergodic=False,
        drift=False,
        psi_growth=False,
        regularity=False,
        occupation_eps=(),
    )
    cfg = dataclasses.replace(cfg, diagnostics=diag)
    result = run_scenario(cfg, args.out, jobs=args.jobs)
    return _report(result)


def _cmd_drift(args):
    cfg = _load_config(args.config)
    diag = dataclasses.replace(
        cfg.diagnostics,
        drift=True,
        ergodic=False,
        shadowing=False,
        psi_growth=False,
        regularity=False,
        occupation_eps=(),
    )
    cfg = dataclasses.replace(cfg, diagnostics=diag)
    result = run_scenario(cfg, args.out, jobs=args.jobs, skip_chains=True)
    return _report(result)


def build_parser():
    parser = argparse.ArgumentParser(prog="fbmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("config", help="path to a TOML config or a builtin scenario name")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--jobs", type=int, default=1, help="concurrent runs (default: 1)")

    p_run = sub.add_parser("run", help="run the full sweep of a scenario")
    add_common(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sc = sub.add_parser("scenarios", help="list builtin scenarios")
    p_sc.add_argument("--dump", metavar="NAME", help="print a builtin as TOML")
    p_sc.set_defaults(func=_cmd_scenarios)

    p_check = sub.add_parser("check", help="validate a config without running")
    p_check.add_argument("config")
    p_check.set_defaults(func=_cmd_check)

    p_shadow = sub.add_parser("shadow", help="shadowing diagnostics only")
    add_common(p_shadow)
    p_shadow.set_defaults(func=_cmd_shadow)

    p_drift = sub.add_parser("drift", help="drift diagnostics only (no chains)")
    add_common(p_drift)
    p_drift.set_defaults(func=_cmd_drift)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioValidationError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as err:
        print(f"validation error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except FbmmError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
