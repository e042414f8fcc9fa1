"""Command line front end.

    ptafem solve --problem ex2 --out results/ex2 [--q 0.865 ...]

Every option can also come from a flat ``key = value`` config file
(``--config FILE``); command line flags win over file values.  Exit codes:
0 completed run, 1 configuration error, 2 aborted run.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import fields

from .driver import ConfigError, RunConfig, run, write_outputs

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _parse_export_levels(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as err:
        raise ConfigError(f"bad export level list {text!r}: {err}") from None


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


_FILE_KEYS = {
    "problem": str,
    "q": float,
    "gamma_max": float,
    "tol": float,
    "theta": float,
    "max_levels": int,
    "quad_degree": int,
    "out": str,
    "export_levels": _parse_export_levels,
    "monotone_gamma": _parse_bool,
    "eta_floor": float,
}


def read_config_file(path: str) -> dict:
    values: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _FILE_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _FILE_KEYS[key](val)
            except ConfigError:
                raise
            except ValueError as err:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {err}") from None
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptafem")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="run the adaptive solver")
    solve.add_argument("--config", help="flat key = value config file")
    solve.add_argument("--problem", choices=("ex1", "ex2"))
    solve.add_argument("--q", type=float)
    solve.add_argument("--gamma-max", type=float, dest="gamma_max")
    solve.add_argument("--tol", type=float)
    solve.add_argument("--theta", type=float)
    solve.add_argument("--max-levels", type=int, dest="max_levels")
    solve.add_argument("--quad-degree", type=int, dest="quad_degree")
    solve.add_argument("--out", dest="out")
    solve.add_argument("--export-levels", dest="export_levels")
    solve.add_argument("--monotone-gamma", action="store_true", default=None,
                       dest="monotone_gamma")
    solve.add_argument("--eta-floor", type=float, dest="eta_floor")
    solve.add_argument("--quiet", action="store_true")
    return parser


def build_config(args: argparse.Namespace) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in _FILE_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = _parse_export_levels(flag) if key == "export_levels" else flag
    out = values.pop("out", None) or None
    known = {f.name for f in fields(RunConfig)}
    kwargs = {k: v for k, v in values.items() if k in known}
    config = RunConfig(out_dir=out, **kwargs)
    config.validate()
    return config


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = build_config(args)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    progress = None if args.quiet else lambda msg: print(msg)
    summary = run(config, progress=progress)
    if config.out_dir:
        write_outputs(summary, config.out_dir)
        if not args.quiet:
            print(f"outputs written to {config.out_dir}")
    if summary.aborted:
        print(f"aborted: {summary.diagnostic}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
