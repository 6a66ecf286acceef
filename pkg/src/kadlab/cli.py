"""``kadlab <scenario> [flags]`` command line.

Settings come from built-in defaults, then ``--config FILE`` (flat
``key = value`` lines, ``#`` comments), then flags; later sources win.

Exit codes: 0 success, 1 config error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from kadlab.harness import SCENARIOS, ConfigError, ScenarioConfig, run_scenario, summarize

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 1, 2


def parse_floats(text: str) -> list[float]:
    """``"0.5,0.94"`` or an inclusive ``start:stop:step`` range like ``"0.2:2.0:0.2"``."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad range {text!r}; expected start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be positive")
        count = int(round((stop - start) / step)) + 1
        return [round(start + i * step, 10) for i in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]


def parse_ints(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# config/flag name -> (dataclass field, parser)
_SETTINGS = {
    "n": ("n", parse_ints),
    "e": ("e_values", parse_ints),
    "trials": ("trials", int),
    "threshold": ("thresholds", parse_floats),
    "p-miss": ("p_miss", float),
    "p-offline": ("p_offline", float),
    "seed": ("seed", int),
    "ttl-hours": ("ttl_hours", float),
    "out": ("output_path", str),
    "k": ("k", int),
    "downloaders": ("downloaders", int),
    "samples": ("samples", int),
    "margin": ("margin", int),
    "provide-before": ("provide_before", parse_bool),
    "elapsed-hours": ("elapsed_hours", float),
    "c-gen-per-attempt": ("c_gen_per_attempt", float),
    "c-oper": ("c_oper", float),
    "t-w": ("t_w", float),
    "t-eff": ("t_eff", float),
    "jobs": ("jobs", int),
}
assert {f for f, _ in _SETTINGS.values()} == {f.name for f in fields(ScenarioConfig)} - {"scenario"}


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("_", "-")
        if key == "e-values":
            key = "e"
        if key == "thresholds":
            key = "threshold"
        if key == "output-path":
            key = "out"
        if key not in _SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = value
    return values


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kadlab", description="Kademlia censorship lab: run a seeded experiment scenario.")
    parser.add_argument("scenario", choices=SCENARIOS)
    parser.add_argument("--config", help="flat key = value settings file")
    defaults = ScenarioConfig(scenario=SCENARIOS[0])
    for name, (dest, _) in _SETTINGS.items():
        parser.add_argument(f"--{name}", dest=dest, default=None, metavar="VALUE", help=f"default: {getattr(defaults, dest)}")
    parser.add_argument("--quiet", action="store_true", help="do not print the summary table")
    return parser


def make_config(args: argparse.Namespace) -> ScenarioConfig:
    raw: dict[str, str] = {}
    if args.config:
        raw.update(read_config_file(args.config))
    for name, (dest, _) in _SETTINGS.items():
        value = getattr(args, dest)
        if value is not None:
            raw[name] = value
    kwargs = {}
    for name, value in raw.items():
        dest, parse = _SETTINGS[name]
        try:
            kwargs[dest] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"--{name}: {exc}") from exc
    cfg = ScenarioConfig(scenario=args.scenario, **kwargs)
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
    except ConfigError as exc:
        print(f"kadlab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"kadlab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    if cfg.output_path and not Path(cfg.output_path).resolve().parent.is_dir():
        print(f"kadlab: I/O error: no such directory for {cfg.output_path}", file=sys.stderr)
        return EXIT_IO
    try:
        report = run_scenario(cfg)
    except OSError as exc:
        print(f"kadlab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not args.quiet:
        print(summarize(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
