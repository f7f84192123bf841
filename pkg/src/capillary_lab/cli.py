"""Command line entry point: ``capillary-lab run | validate | list-presets``."""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from .config import ConfigError, ScenarioConfig, parse_config
from .runner import EXIT_CHECK, EXIT_ERROR, EXIT_OK, run_scenario

ENV_OUT = "CAPILLARY_LAB_OUT"
PRESET_SUFFIX = ".cfg"


def preset_names() -> list[str]:
    root = resources.files("capillary_lab") / "scenarios"
    return sorted(p.name[: -len(PRESET_SUFFIX)] for p in root.iterdir() if p.name.endswith(PRESET_SUFFIX))


def preset_text(name: str) -> str:
    return (resources.files("capillary_lab") / "scenarios" / f"{name}{PRESET_SUFFIX}").read_text(encoding="utf-8")


def load_config(ref: str) -> ScenarioConfig:
    """Read a config from a path, or from a bundled preset when no such file exists."""
    path = Path(ref)
    if path.is_file():
        return parse_config(path.read_text(encoding="utf-8"), path.stem)
    if ref in preset_names():
        return parse_config(preset_text(ref), ref)
    raise FileNotFoundError(f"no config file or preset named {ref!r}")


def _run_one(args: tuple[str, str, float]) -> tuple[str, int, str]:
    ref, out, scale = args
    try:
        cfg = load_config(ref)
    except (ConfigError, OSError) as exc:
        return ref, EXIT_ERROR, f"{ref}: {exc}"
    res = run_scenario(cfg, out, scale)
    status = {EXIT_OK: "ok", EXIT_CHECK: "check failed", EXIT_ERROR: "error"}[res.exit_code]
    lines = [f"{cfg.name}: {status}"]
    lines += [f"  {c.name}: {'PASS' if c.passed else 'FAIL'} ({c.detail})" for c in res.checks]
    if res.error:
        lines.append(f"  {res.error}")
    return cfg.name, res.exit_code, "\n".join(lines)


def _combine(codes: list[int]) -> int:
    if EXIT_ERROR in codes:
        return EXIT_ERROR
    return EXIT_CHECK if EXIT_CHECK in codes else EXIT_OK


def cmd_run(ns) -> int:
    out = ns.out or os.environ.get(ENV_OUT) or "capillary_out"
    if ns.tolerance_scale <= 0:
        print("error: --tolerance-scale must be positive", file=sys.stderr)
        return EXIT_ERROR
    jobs = [(ref, out, ns.tolerance_scale) for ref in ns.configs]
    if ns.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for _, code, text in results:
        print(text, file=sys.stderr if code == EXIT_ERROR else sys.stdout)
    return _combine([code for _, code, _ in results])


def cmd_validate(ns) -> int:
    try:
        cfg = load_config(ns.config)
    except ConfigError as exc:
        for ln, key, why in exc.errors:
            where = f"line {ln}: " if ln else ""
            print(f"{ns.config}: {where}{key}: {why}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{ns.config}: ok ({cfg.kind}, name {cfg.name})")
    return EXIT_OK


def cmd_list(ns) -> int:
    for name in preset_names():
        cfg = parse_config(preset_text(name), name)
        print(f"{name}\t{cfg.kind}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="capillary-lab", description="Numerical experiments on capillary surfaces.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one or more scenario configs or preset names")
    r.add_argument("configs", nargs="+")
    r.add_argument("--out", default=None, help=f"output root (default ${ENV_OUT} or ./capillary_out)")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--tolerance-scale", type=float, default=1.0)
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config and report every problem")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    ls = sub.add_parser("list-presets", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv: list[str] | None = None) -> int:
    ns = build_parser().parse_args(argv)
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
