"""Command-line entry point: ``qauth run | sweep | size | selftest``.

Exit codes: 0 success, 2 configuration error, 3 selftest check failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import analysis, kernel
from .sim import (
    ConfigError, ExperimentConfig, parse_config_text, run_experiment, sweep, sweep_to_csv,
    sweep_to_json,
)

EXIT_OK, EXIT_CONFIG, EXIT_SELFTEST = 0, 2, 3

# CLI flag -> config-file key
_FLAG_KEYS = {
    "seed": "seed", "trials": "trials", "strategy": "strategy", "k": "k", "d": "d", "g": "g",
    "p1": "p1", "threshold": "threshold", "m": "m", "format": "format",
    "placement": "placement", "max_restarts": "max_restarts", "max_photons": "max_photons",
    "knows_plaintext": "knows_plaintext", "target_D": "target_D", "key_basis": "key_basis",
}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value settings file")
    p.add_argument("--seed", help="master seed (u64)")
    p.add_argument("--trials")
    p.add_argument("--strategy", help="passive, intercept-resend, subset-guess, pns, oracle-locations")
    p.add_argument("--k")
    p.add_argument("--d")
    p.add_argument("--g")
    p.add_argument("--p1")
    p.add_argument("--threshold")
    p.add_argument("--m")
    p.add_argument("--placement", help="alice, bob or both")
    p.add_argument("--max-restarts", dest="max_restarts")
    p.add_argument("--max-photons", dest="max_photons")
    p.add_argument("--knows-plaintext", dest="knows_plaintext")
    p.add_argument("--target-D", dest="target_D")
    p.add_argument("--key-basis", dest="key_basis")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--out", type=Path, help="write the report here instead of stdout")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--backend", choices=kernel.available_backends())


def _config_from_args(args) -> ExperimentConfig:
    values: dict[str, str] = {}
    if args.config is not None:
        try:
            values.update(parse_config_text(args.config.read_text()))
        except OSError as exc:
            raise ConfigError([("config", str(exc))]) from None
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            values[key] = v
    return ExperimentConfig.from_mapping(values)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_run(args) -> int:
    config = _config_from_args(args)
    report = run_experiment(config, workers=args.workers, backend=args.backend)
    _emit(report.to_csv() if config.output_format == "csv" else report.to_json(), args.out)
    return EXIT_OK


def _parse_values(raw: str, vary: str) -> list:
    cast = float if vary in ("p1", "D") else int
    try:
        return [cast(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([("values", f"cannot parse {raw!r}")]) from None


def cmd_sweep(args) -> int:
    config = _config_from_args(args)
    reports = sweep(config, args.vary, _parse_values(args.values, args.vary),
                    workers=args.workers, backend=args.backend)
    _emit(sweep_to_csv(reports) if config.output_format == "csv" else sweep_to_json(reports), args.out)
    return EXIT_OK


def cmd_size(args) -> int:
    values = _parse_values(args.D, "D") if args.D else [1e-3, 1e-6, 1e-9, 2.0 ** -17]
    lines = [f"{'D':>12} {'k':>4} {'d':>4} {'k_rounded':>9} {'d_rounded':>9} {'D_a':>12} {'D_e':>12} {'d/k':>6}"]
    for D in values:
        try:
            k, d = analysis.size_parameters(D)
            kp, dp = analysis.size_parameters(D, rounded_constants=True)
        except analysis.DomainError as exc:
            raise ConfigError([("D", str(exc))]) from None
        lines.append(f"{D:>12.4g} {k:>4} {d:>4} {kp:>9} {dp:>9} {analysis.forgery_prob(k):>12.4g} "
                     f"{analysis.evade_prob(d):>12.4g} {d / k:>6.2f}")
    lines.append(f"balanced ratio d/k -> ln 2 / -ln 0.75 = {analysis.balance_ratio():.2f}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_checks

    results = run_checks(trials=args.trials)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    failed = [r for r in results if not r[1]]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed (backend: {kernel.BACKEND})")
    return EXIT_SELFTEST if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qauth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one Monte Carlo experiment")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run one experiment per parameter value")
    _add_experiment_flags(p)
    p.add_argument("--vary", required=True, choices=("g", "d", "k", "p1", "D"))
    p.add_argument("--values", required=True, help="comma-separated list")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("size", help="print (k, d) needed for target probabilities D")
    p.add_argument("--D", help="comma-separated targets (default 1e-3,1e-6,1e-9,2^-17)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_size)

    p = sub.add_parser("selftest", help="exact oracle checks plus a small Monte Carlo sanity run")
    p.add_argument("--trials", type=int, default=20_000)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        for field_name, message in exc.errors:
            print(f"config error [{field_name}]: {message}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
