"""Command-line entry point: ``epig-bench <subcommand> ...``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 identity-check failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config, serialize

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IDENTITY = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; that code is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="epig-bench", description="Information-based active learning under pool distribution shift.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-round progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, with_config=True):
        if with_config:
            sp.add_argument("config", help="experiment config file (an empty file means all defaults)")
        sp.add_argument("--out-dir", default="results", help="output directory (default: results)")
        sp.add_argument("--trials", type=int, help="override experiment.trials")
        sp.add_argument("--seed", type=int, help="override experiment.seed")
        sp.add_argument(
            "--threads", type=int,
            help="worker processes; falls back to EPIG_BENCH_THREADS, results do not depend on it",
        )

    run = sub.add_parser("run", help="run every configured method and write CSV/SVG results")
    common(run)
    abl = sub.add_parser("ablate-eval", help="rerun with several evaluation-set sizes")
    common(abl)
    abl.add_argument("--sizes", required=True, help="comma-separated sizes, e.g. 10,50,200")
    toy = sub.add_parser("toy-map", help="BALD vs EPIG-BALD score map over a 2D grid")
    common(toy)
    toy.add_argument("--resolution", type=int, default=41, help="grid points per axis (default 41)")
    chk = sub.add_parser("check-identities", help="exact-oracle identity, submodularity and greedy-bound suites")
    chk.add_argument("--instances", type=int, default=200)
    chk.add_argument("--seed", type=int, default=0)
    chk.add_argument(
        "--strict-epig", action="store_true",
        help="also fail on diminishing-returns violations of exact EPIG (reported either way)",
    )
    val = sub.add_parser("validate-config", help="parse and validate a config, print its canonical form")
    val.add_argument("config")
    return p


def _load(args) -> ExperimentConfig:
    if not os.path.isfile(args.config):
        raise ConfigError(f"config file not found: {args.config}")
    cfg = parse_config(args.config)
    updates = {}
    if getattr(args, "trials", None) is not None:
        updates["trials"] = args.trials
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    return cfg.with_updates(experiment=updates) if updates else cfg


def _grid(cfg: ExperimentConfig, resolution: int) -> np.ndarray:
    d = cfg.data
    r = d.radius + 3 * d.cluster_std
    lo = np.minimum([-r, -r], d.junk_low)
    hi = np.maximum([r, r], d.junk_high)
    xs = np.linspace(lo[0], hi[0], resolution)
    ys = np.linspace(lo[1], hi[1], resolution)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _cmd_run(args) -> int:
    from .report import write_results
    from .simulator import final_summary, run_experiment

    cfg = _load(args)
    logs = run_experiment(cfg, args.threads)
    paths = write_results(logs, args.out_dir)
    with open(os.path.join(args.out_dir, "config.ini"), "w", encoding="utf-8") as f:
        f.write(serialize(cfg))
    for method, (acc, ood) in sorted(final_summary(logs).items()):
        print(f"{method}: final median accuracy {acc:.4f}, acquired OoD {ood:.3f}")
    print(f"wrote {', '.join(sorted(os.path.basename(p) for p in paths.values()))} to {args.out_dir}")
    failed = [log for log in logs if log.error]
    for log in failed:
        print(f"error: {log.method} trial {log.trial}: {log.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_ablate(args) -> int:
    from .report import write_ablation
    from .simulator import ablate_eval_size

    cfg = _load(args)
    try:
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--sizes: expected comma-separated integers, got {args.sizes!r}") from None
    if not sizes or min(sizes) < 0:
        raise ConfigError("--sizes: need at least one non-negative size")
    results = ablate_eval_size(cfg, sizes, args.threads)
    write_ablation(results, args.out_dir, cfg.digest)
    for size in sorted(results):
        for method, (acc, ood) in sorted(results[size][1].items()):
            print(f"eval_size {size} {method}: final median accuracy {acc:.4f}, acquired OoD {ood:.3f}")
    failed = [log for size in results for log in results[size][0] if log.error]
    for log in failed:
        print(f"error: {log.method} trial {log.trial}: {log.error}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def _cmd_toy(args) -> int:
    from .report import write_score_map
    from .simulator import score_map

    cfg = _load(args)
    if args.resolution < 2:
        raise ConfigError("--resolution must be >= 2")
    result = score_map(cfg, _grid(cfg, args.resolution))
    paths = write_score_map(result, args.out_dir, cfg.digest)
    print(f"wrote {', '.join(sorted(os.path.basename(p) for p in paths.values()))} to {args.out_dir}")
    return EXIT_OK


def _cmd_check(args) -> int:
    from .identities import run_all

    if args.instances < 1:
        raise ConfigError("--instances must be >= 1")
    results = run_all(args.instances, args.seed)
    ok = True
    for r in results:
        gating = r.name != "epig-submodular" or args.strict_epig
        line = r.line()
        if not gating:
            line = line.replace("PASS", "INFO", 1).replace("FAIL", "INFO", 1)
        print(line)
        ok &= r.passed or not gating
    return EXIT_OK if ok else EXIT_IDENTITY


def _cmd_validate(args) -> int:
    cfg = _load(args)
    sys.stdout.write(serialize(cfg))
    print(f"# digest {cfg.digest}")
    return EXIT_OK


_COMMANDS = {
    "run": _cmd_run,
    "ablate-eval": _cmd_ablate,
    "toy-map": _cmd_toy,
    "check-identities": _cmd_check,
    "validate-config": _cmd_validate,
}


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors exit 1
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
