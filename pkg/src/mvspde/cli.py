"""Command-line front end: validate configs, run studies, persist results.

Every subcommand loads and schema-checks the config, rebuilds the
operator and coefficient family, and runs the admissibility report
before any simulation starts; a failed assumption is a config problem,
not a runtime one, and exits with code 2 naming the check.  Exit code 1
is reserved for genuine runtime failures.  On success the last stdout
line is the manifest path of the persisted result.
"""

from __future__ import annotations

import argparse
import copy
import sys

import numpy as np

from .coefficients import assumption_report
from .config import (
    ConfigError,
    build_coeffs,
    build_family_recipe,
    build_multiscale,
    build_sim,
    build_spec,
    load_config,
)
from .experiments import (
    ergodicity_study,
    hoelder_study,
    persist,
    picard_study,
    rate_study,
    simulate_study,
)
from .multiscale import FrozenInput

# frozen-equation probes scan the initial state at these multiples
PROBE_SCALES = (0.5, 1.0, 2.0)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvspde",
        description="two-timescale interacting-system simulations and studies",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
        ("validate", "check operator and coefficient assumptions, then stop"),
        ("simulate", "run the interacting system; persist the moment curve"),
        ("picard", "trace the law fixed-point iteration distances"),
        ("ergodicity", "fit frozen-equation mixing rates on probe inputs"),
        ("rate-study", "strong averaging error against the timescale ratio"),
        ("hoelder-study", "slow-path increment regularity against block length"),
    ):
        cmd = sub.add_parser(name, help=blurb)
        cmd.add_argument("--config", required=True, help="JSON config path")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override sim.seed from the config")
        cmd.add_argument("--out", default=None,
                         help="output directory (default: study.out_dir or ./out)")
        cmd.add_argument("--threads", type=int, default=1,
                         help="worker processes for replica-parallel studies")
    return parser


def _study_section(cfg: dict, expected_kind: str) -> dict:
    study = cfg.get("study", {})
    declared = study.get("kind")
    if declared is not None and declared != expected_kind:
        raise ConfigError(
            f"config declares study kind '{declared}' but the "
            f"'{expected_kind}' subcommand was invoked",
            pointer="/study/kind",
        )
    return study


def _require_grid(study: dict):
    if "grid" not in study:
        raise ConfigError("this study needs a grid", pointer="/study/grid")
    return study["grid"]


def run(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the usage message
        return int(exc.code or 0)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = copy.deepcopy(cfg)
            cfg["sim"]["seed"] = args.seed
        spec = build_spec(cfg)
        recipe = build_family_recipe(cfg)
        coeffs = build_coeffs(cfg, spec)
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    report = assumption_report(spec, coeffs)
    if args.command == "validate":
        for line in report.lines():
            print(line)
        if not report.ok:
            first = report.failures()[0]
            print(f"validation failed — {first.name}: {first.detail}",
                  file=sys.stderr)
            return 2
        return 0
    if not report.ok:
        first = report.failures()[0]
        print(f"{first.name}: {first.detail}", file=sys.stderr)
        return 2

    try:
        study = _study_section(cfg, _KIND_BY_COMMAND[args.command])
        base = build_sim(cfg, spec, coeffs)
        out_dir = args.out or study.get("out_dir", "out")

        if args.command == "simulate":
            result = simulate_study(base, m=study.get("m"), config_extra=cfg)
        elif args.command == "picard":
            result = picard_study(
                base,
                n_iters=study.get("n_iters", 8),
                lambda_weight=study.get("lambda_weight"),
                config_extra=cfg,
            )
        elif args.command == "ergodicity":
            t_grid = _require_grid(study)
            eta = spec.as_field(cfg["sim"].get("eta", 0.0))
            probes = [
                FrozenInput(
                    x=s * base.xi,
                    mu_stat=float(np.linalg.norm(s * base.xi)),
                    y0=eta,
                )
                for s in PROBE_SCALES
            ]
            result = ergodicity_study(
                probes, spec, coeffs, t_grid,
                ensemble=study.get("ensemble", 4000),
                seed=base.seed,
                h_step=study.get("h_step", 0.01),
                config_extra=cfg,
            )
        elif args.command == "rate-study":
            eps_grid = _require_grid(study)
            result = rate_study(
                base, eps_grid,
                m=study.get("m", 1.0),
                family=recipe,
                eta=cfg["sim"].get("eta", 0.0),
                h_fast_ratio=study.get("h_fast_ratio", 1.0 / 16),
                n_replicas=study.get("n_replicas", 8),
                n_workers=args.threads,
                config_extra=cfg,
            )
        else:  # hoelder-study
            delta_grid = _require_grid(study)
            ms = build_multiscale(cfg, base)
            result = hoelder_study(
                ms, delta_grid,
                family=recipe,
                n_replicas=study.get("n_replicas", 4),
                n_workers=args.threads,
                config_extra=cfg,
            )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1

    if result.fitted_slope is not None:
        print(f"fitted slope {result.fitted_slope:.4f} "
              f"(stderr {result.slope_stderr:.4f}, r2 {result.fit_r2:.4f})")
    if result.flags:
        print("flags: " + ", ".join(f"{k}={v}" for k, v in sorted(result.flags.items())))
    try:
        manifest = persist(result, out_dir)
    except OSError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


_KIND_BY_COMMAND = {
    "simulate": "simulate",
    "picard": "picard",
    "ergodicity": "ergodicity",
    "rate-study": "rate",
    "hoelder-study": "hoelder",
}


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
