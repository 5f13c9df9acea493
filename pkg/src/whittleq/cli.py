"""Command-line front end.

Subcommands:
    oracle      exact Whittle indices for an arm
    train       one seeded training run, optional trajectory CSV
    diagnose    structural diagnostics for an arm (kappa, mixing, probes)
    plot        render the figure bundle from a finished run directory
    reproduce   the full Monte-Carlo bundle: experiment + plots
    bench       compiled-vs-pure kernel throughput

Exit codes: 0 success, 1 validation/config error, 2 run divergence,
3 I/O error. Relative output paths are rooted at $WHITTLEQ_OUTPUT_ROOT
when that variable is set.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from . import diagnostics as diag
from ._rng import STREAM_GAP, STREAM_LIPSCHITZ, derive_seed
from .arms import one_hot_features
from .errors import (AssumptionViolationError, BracketError, ConfigError,
                     DivergenceError, MissingDataError, NonConvergenceError,
                     ReferenceUnavailableError, ValidationError)
from .exact import whittle_table
from .harness import (TRAJECTORY_HEADER, config_dict, load_config,
                      resolve_arm, resolve_output_path, run_experiment,
                      write_csv)
from .kernels import backend_name, get_backend
from .learners import ALGORITHMS, TrainConfig, prepare_run, train_index
from .nets import init_net

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_DIVERGENCE = 2
EXIT_IO = 3


def _print_json(payload) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


# ---------------------------------------------------------------------------
# subcommands


def _cmd_oracle(args) -> int:
    arm = resolve_arm(args.arm)
    table = whittle_table(arm, tol=args.tol)
    entries = {str(s + 1): float(table.indices[s])
               for s in range(arm.num_states)}
    if args.json:
        _print_json({"arm": args.arm, "tolerance": args.tol,
                     "lambda_star": entries})
    else:
        print("state,lambda_star")
        for s in sorted(entries, key=int):
            print(f"{s},{entries[s]!r}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(iterations=args.iterations, epsilon=args.epsilon,
                       alpha0=args.alpha0, eta0=args.eta0, seed=args.seed,
                       checkpoint_every=args.checkpoint_every,
                       width=args.width)


def _cmd_train(args) -> int:
    arm = resolve_arm(args.arm)
    if not 1 <= args.state <= arm.num_states:
        raise ValidationError(
            f"--state {args.state} outside 1..{arm.num_states}")
    config = _train_config(args)
    result = train_index(arm, args.state - 1, args.algorithm, config,
                         trial=args.trial)
    table = whittle_table(arm)
    lam_star = float(table.indices[args.state - 1])
    if args.out is not None:
        path = resolve_output_path(args.out)
        rows = zip(result.steps, result.lam, result.alpha, result.eta,
                   result.visited + 1, result.action, result.td)
        write_csv(path, TRAJECTORY_HEADER, rows)
        print(f"wrote {path}")
    _print_json({
        "algorithm": args.algorithm, "state": args.state,
        "seed": args.seed, "trial": args.trial,
        "iterations": args.iterations, "backend": result.backend,
        "lambda_final": result.lam_final, "lambda_star": lam_star,
        "abs_error": abs(result.lam_final - lam_star),
        "lambda_osc_last_window": result.lam_osc,
    })
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    arm = resolve_arm(args.arm)
    fmap = one_hot_features(arm.num_states)
    report: dict = {
        "arm": args.arm,
        "kappa": diag.kappa_estimate(arm),
        "mixing_time": {"policy": "uniform", "delta": args.delta,
                        "tau": diag.mixing_time_estimate(arm,
                                                         delta=args.delta)},
    }
    rng = np.random.default_rng(derive_seed(args.seed, STREAM_LIPSCHITZ))
    net = init_net(args.width, fmap.dim, rng)
    lip = diag.lipschitz_probe(arm, fmap, net, args.pairs, rng)
    report["lipschitz"] = {
        "num_pairs": lip.num_pairs, "violations": lip.violations,
        "skipped": lip.skipped, "max_ratio_h": lip.max_ratio_h,
        "max_ratio_g": lip.max_ratio_g, "max_ratio_y": lip.max_ratio_y,
        "clean": lip.clean,
    }
    gap_rng = np.random.default_rng(
        derive_seed(args.seed, STREAM_GAP, args.width, 0))
    gap_net = init_net(args.width, fmap.dim, gap_rng)
    report["linearization_gap"] = {
        "width": args.width, "radius": args.radius, "probes": args.probes,
        "value": diag.linearization_gap(gap_net, fmap, args.radius,
                                        args.probes, gap_rng),
    }
    _print_json(report)
    return EXIT_OK


def _cmd_plot(args) -> int:
    from .plots import emit_plots
    run_dir = resolve_output_path(args.run_dir)
    out_dir = None if args.out is None else resolve_output_path(args.out)
    for path in emit_plots(run_dir, out_dir):
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    overrides = list(args.set or [])
    if args.out is not None:
        overrides.append(f'output_dir="{args.out}"')
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    config = load_config(args.config, overrides)
    if not args.quiet:
        print("effective config:")
        _print_json(config_dict(config))
    manifest = run_experiment(config)
    print(f"run directory: {manifest.output_dir}")
    print(f"config hash:   {manifest.config_hash}")
    print(f"backend:       {manifest.backend}")
    if manifest.aborts:
        print(f"aborted runs:  {len(manifest.aborts)} (see manifest.json)")
    with open(manifest.output_dir / "summary.json", encoding="ascii") as fh:
        summary = json.load(fh)
    for algorithm, per_state in sorted(summary["convergence"].items()):
        for state in sorted(per_state, key=int):
            block = per_state[state]
            print(f"  {algorithm} state {state}: final mean "
                  f"{block['final_mean']:+.4f} vs exact "
                  f"{block['lambda_star']:+.4f} "
                  f"(delta {block['oracle_delta']:+.4f})")
    if not args.no_plots:
        from .plots import emit_plots
        for path in emit_plots(manifest.output_dir):
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    arm = resolve_arm(args.arm)
    config = TrainConfig(iterations=args.steps, epsilon=0.5, alpha0=0.5,
                         eta0=0.1, seed=args.seed, checkpoint_every=0,
                         width=args.width)
    rates: dict = {}
    finals: dict = {}
    for name in ("pure", "compiled"):
        backend = get_backend(name)
        if backend is None:
            print(f"{name}: unavailable (extension not built)")
            continue
        best = float("inf")
        for _ in range(args.repeat):
            handle = prepare_run(arm, args.state - 1, args.algorithm,
                                 config, backend=backend)
            t0 = time.perf_counter()
            handle.advance(args.steps)
            best = min(best, time.perf_counter() - t0)
        rates[name] = args.steps / best
        finals[name] = float(handle.ws.lam[handle.ws.target])
        print(f"{name}: {rates[name]:,.0f} steps/s "
              f"({args.steps} steps, best of {args.repeat})")
    if len(rates) == 2:
        print(f"speedup compiled/pure: {rates['compiled'] / rates['pure']:.2f}x")
        print(f"final-lambda difference: "
              f"{abs(finals['compiled'] - finals['pure']):.3g}")
    print(f"active backend for library calls: {backend_name()}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="whittleq",
        description="Whittle-index Q-learning: oracle, training, "
                    "diagnostics, and experiment reproduction.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_arm(p):
        p.add_argument("--arm", default="circulant",
                       help="builtin arm name or TOML file path")

    p = sub.add_parser("oracle", help="exact Whittle indices")
    add_arm(p)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("train", help="one seeded training run")
    add_arm(p)
    p.add_argument("--algorithm", choices=ALGORITHMS, default="neural")
    p.add_argument("--state", type=int, required=True,
                   help="target state, 1-indexed")
    p.add_argument("--iterations", type=int, default=50_000)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--alpha0", type=float, default=0.5)
    p.add_argument("--eta0", type=float, default=0.1)
    p.add_argument("--width", type=int, default=200)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--checkpoint-every", type=int, default=100)
    p.add_argument("--out", default=None,
                   help="write the trajectory CSV here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("diagnose", help="structural diagnostics for an arm")
    add_arm(p)
    p.add_argument("--width", type=int, default=200)
    p.add_argument("--pairs", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--probes", type=int, default=64)
    p.add_argument("--delta", type=float, default=1e-3)
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("plot", help="render figures for a finished run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None,
                   help="plot directory (default <run-dir>/plots)")
    p.set_defaults(func=_cmd_plot)

    p = sub.add_parser("reproduce",
                       help="run the full experiment bundle and plot it")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. num_trials=5")
    p.add_argument("--out", default=None, help="output directory override")
    p.add_argument("--workers", type=int, default=None,
                   help="process count; 0 or 1 means serial")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=_cmd_reproduce)

    p = sub.add_parser("bench", help="kernel backend throughput")
    add_arm(p)
    p.add_argument("--algorithm", choices=ALGORITHMS, default="neural")
    p.add_argument("--state", type=int, default=4)
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--width", type=int, default=200)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=11)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    try:
        return args.func(args)
    except (ConfigError, ValidationError, AssumptionViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DivergenceError, ReferenceUnavailableError, NonConvergenceError,
            BracketError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (MissingDataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
