"""Command-line front end: ``kpoanneal <verb> ...``.

Exit codes: 0 success, 1 validation failure, 2 solver failure, 3 partial
sweep failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .alpha import build_alpha_trajectory
from .config import (ALPHA_METHODS, METHODS, builtin_config_names, load_config, load_network,
                     resolve_config_path, sweep_from_config)
from .errors import ConfigError, InvalidParameterError, KpoError

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_PARTIAL = 0, 1, 2, 3


def _is_sweep(tree) -> bool:
    return isinstance(tree, dict) and "axes" in tree


def _load_sweep(name, args):
    path = resolve_config_path(name)
    sweep = sweep_from_config(load_config(path), path.parent)
    changes = {k: v for k, v in (("n_traj", args.n_traj), ("seed", args.seed)) if v is not None}
    return dataclasses.replace(sweep, **changes) if changes else sweep


def _print_table(probs: dict, stderr: dict | None = None):
    for config, p in sorted(probs.items()):
        se = f" +- {stderr[config]:.4f}" if stderr and config in stderr else ""
        print(f"  {config}: {p:.6f}{se}")


def cmd_validate(args) -> int:
    tree = load_config(resolve_config_path(args.config))
    if _is_sweep(tree):
        sweep = _load_sweep(args.config, args)
        print(f"ok: sweep {sweep.name!r} with {len(sweep.points())} points, "
              f"methods {', '.join(sweep.methods)}")
    else:
        network, settings, _ = load_network(args.config)
        print(f"ok: {network.n_kpos} KPO(s), {len(network.couplings)} coupling(s), "
              f"t_end = {network.schedule.t_end:g} us")
    return EXIT_OK


def cmd_run(args) -> int:
    from .harness import run_single
    result = run_single(args.config, args.method, args.out, seed=args.seed,
                        n_traj=args.n_traj, jobs=args.jobs)
    state, tie = result.most_likely()
    print(f"method {args.method}: most likely {state}{' (tie)' if tie else ''}")
    print("readout-averaged outcome probabilities:")
    _print_table(result.outcome_probabilities, result.metadata.get("outcome_stderr"))
    if "mean_readout_leakage" in result.metadata:
        print(f"mean readout leakage: {result.metadata['mean_readout_leakage']:.4g}")
    if args.out:
        print(f"wrote {args.out}")
    return EXIT_OK


def _print_report(report):
    for p in report.points:
        states = ", ".join(f"{m}={s}{'*' if t else ''}" for m, (s, t) in
                           sorted(p.most_likely.items()))
        agree = "" if p.agreement is None else f"  agree={p.agreement}"
        print(f"  {p.values}: {states}{agree}")
    for entry in report.transitions:
        e = entry["estimate"]
        where = "no transition" if e["location"] is None else f"{e['location']:.4g}"
        if e["stderr"] is not None and e["location"] is not None:
            where += f" +- {e['stderr']:.2g}"
        print(f"  transition {entry['method']} {entry['fixed']}: "
              f"{e['state_a']} -> {e['state_b']} at {where}")


def cmd_sweep(args) -> int:
    from .harness import run_sweep
    sweep = _load_sweep(args.config, args)
    outcome = run_sweep(sweep, args.out, jobs=args.jobs or 1, resume=not args.no_resume)
    _print_report(outcome.report)
    print(f"wrote {args.out}/sweep.json and {args.out}/report.json")
    if outcome.failures:
        for (index, method), msg in sorted(outcome.failures.items()):
            print(f"  point {index} ({method}) failed: {msg.splitlines()[0]}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_compare(args) -> int:
    from .harness import merge_sweeps
    report = merge_sweeps(args.dirs)
    _print_report(report)
    if args.out:
        report.save(args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_alpha(args) -> int:
    from .harness import emit_figure_data
    network, settings, _ = load_network(args.config)
    alpha = build_alpha_trajectory(network, method=args.method or settings.alpha_method)
    emit_figure_data("alpha", args.out, alpha=alpha)
    print(f"alpha at t_end: {', '.join(f'{a:.4f}' for a in alpha.alphas[-1])}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_emit(args) -> int:
    from .harness import emit_figure_data, merge_sweeps
    report = merge_sweeps(args.sweeps) if args.sweeps else None
    network = alpha = None
    if args.config:
        network, settings, _ = load_network(args.config)
        if args.figure == "alpha":
            alpha = build_alpha_trajectory(network, method=settings.alpha_method)
    emit_figure_data(args.figure, args.out, report=report, network=network, alpha=alpha)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kpoanneal", description="Annealing simulations of KPO networks.",
        epilog=f"built-in configs: {', '.join(builtin_config_names())}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_required=False, out_help="output path"):
        p.add_argument("--config", required=True,
                       help="config file or built-in config name")
        p.add_argument("--out", required=out_required, help=out_help)
        p.add_argument("--seed", type=int, help="override the random seed")
        p.add_argument("--jobs", type=int, help="worker processes")
        p.add_argument("--n-traj", type=int, help="override the trajectory count")

    p = sub.add_parser("validate", help="check a network or sweep config")
    common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate one config with one method")
    common(p, out_help="result file (.csv or .npz)")
    p.add_argument("--method", choices=METHODS, default="spin")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep config (resumable)")
    common(p, out_required=True, out_help="output directory")
    p.add_argument("--no-resume", action="store_true", help="ignore cached point results")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="comparison report over finished sweep directories")
    p.add_argument("dirs", nargs="+", help="sweep output directories")
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("alpha", help="export the amplitude trajectory of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=ALPHA_METHODS)
    p.set_defaults(func=cmd_alpha)

    p = sub.add_parser("emit", help="write a figure table")
    p.add_argument("--figure", required=True, choices=("fig2", "fig3", "fig4", "fig5", "alpha"))
    p.add_argument("--out", required=True)
    p.add_argument("--from", dest="sweeps", nargs="+", help="sweep output directories")
    p.add_argument("--config", help="network config (fig5, alpha)")
    p.set_defaults(func=cmd_emit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID
    except KpoError as err:
        print(f"solver failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, json.JSONDecodeError) as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
