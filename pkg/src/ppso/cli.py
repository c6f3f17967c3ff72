"""Command-line front end.

Configuration is a flat ``key = value`` text file; command-line flags win
over file values. Every artifact embeds the resolved configuration and a
schema version, and contains no timestamps, so identical runs produce
identical files.

Exit status: 0 when every executed check passed, 1 when a check failed,
2 for configuration errors and 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import __version__
from .boundary import curves_to_csv, extract_boundaries, landmarks_dict, validate_shape
from .engine import SpecError, minimum_x_max, price_cone, solve_default_grid
from .model import ParameterError, PolicyParams, derive_thresholds
from .montecarlo import McSpec, coupled_flow_check, mc_european_full, mc_european_reduced

__all__ = ["ConfigError", "RunConfig", "COMMANDS", "parse_config", "run_command", "main",
           "TABLE1_REFERENCE", "DEFAULT_SWEEP"]

SCHEMA_VERSION = 1
ENV_OUTPUT_DIR = "PPSO_OUT"
DEFAULT_OUTPUT_DIR = "ppso-out"

COMMANDS = ("price", "boundary", "table1", "sensitivity", "mc-check", "flow-check")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

_PARAM_KEYS = tuple(f.name for f in fields(PolicyParams))
_FLOAT_KEYS = set(_PARAM_KEYS) | {"x_alpha", "x_max", "flow_x", "flow_y"}
_INT_KEYS = {"n_steps", "n_paths", "steps_per_year", "seed", "workers"}
_BOOL_KEYS = {"bridge_correction"}
_STR_KEYS = {"output_dir", "sweep"}
_ALL_KEYS = _FLOAT_KEYS | _INT_KEYS | _BOOL_KEYS | _STR_KEYS

# Sweep points for the sensitivity command. ``x_alpha`` sets alpha = exp(-x_alpha).
DEFAULT_SWEEP: tuple[tuple[str, tuple[float, ...]], ...] = (
    ("x_alpha", (0.2, 1.5, 3.3)),
    ("gamma", (0.15, 0.4, 0.6)),
    ("r_g", (0.005, 0.01, 0.014)),
)

# Published benchmark values (V0, V0E, Vopt) for a0 = 1000, alpha = 0.1.
TABLE1_SCENARIOS = {"low": (0.1, 3.4), "medium": (0.25, 2.7), "high": (0.6, 2.0)}
TABLE1_SPREADS = (0.005, 0.008, 0.015)
TABLE1_R_G = 0.01
TABLE1_REFERENCE = {
    (0.005, "low"): (100.7, 99.44, 1.26),
    (0.005, "medium"): (104.16, 103.43, 0.73),
    (0.005, "high"): (160.93, 160.41, 0.52),
    (0.008, "low"): (100.27, 94.92, 5.35),
    (0.008, "medium"): (102.17, 99.29, 2.88),
    (0.008, "high"): (158.14, 156.47, 1.67),
    (0.015, "low"): (100.14, 88.98, 11.16),
    (0.015, "medium"): (100.64, 93.93, 6.71),
    (0.015, "high"): (154.81, 151.38, 3.43),
}
TABLE1_COLUMNS = ("spread", "scenario", "V0", "V0E", "Vopt", "V0_ref", "V0E_ref", "Vopt_ref",
                  "abs_err_V0", "abs_err_V0E", "abs_err_Vopt")


class ConfigError(ValueError):
    """Raised for unknown keys, unparsable values or invalid parameters."""


@dataclass(frozen=True)
class RunConfig:
    params: PolicyParams = field(default_factory=PolicyParams)
    command: str = "price"
    n_steps: int = 2000
    x_max: Optional[float] = None
    mc: McSpec = field(default_factory=McSpec)
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    sweep: Optional[tuple[tuple[str, tuple[float, ...]], ...]] = None
    flow_x: float = 2.0
    flow_y: float = 2.5

    def sweep_points(self) -> list[tuple[str, float, PolicyParams]]:
        plan = self.sweep if self.sweep is not None else DEFAULT_SWEEP
        return [(name, value, _apply_sweep(self.params, name, value)) for name, values in plan
                for value in values]

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "params": self.params.to_dict(),
            "engine": {"n_steps": self.n_steps, "x_max": self.x_max},
            "mc": self.mc.to_dict(),
            "sweep": None if self.sweep is None else [[n, list(v)] for n, v in self.sweep],
            "flow": {"x": self.flow_x, "y": self.flow_y},
        }


def _apply_sweep(params: PolicyParams, name: str, value: float) -> PolicyParams:
    if name == "x_alpha":
        return params.replace(alpha=math.exp(-value))
    return params.replace(**{name: value})


def _parse_value(key: str, raw):
    if key not in _ALL_KEYS:
        raise ConfigError(f"unknown configuration key {key!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if key in _FLOAT_KEYS:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError
            return value
        if key in _INT_KEYS:
            return int(text)
        if key in _BOOL_KEYS:
            return configparser.ConfigParser.BOOLEAN_STATES[text.lower()]
    except (ValueError, KeyError):
        kind = "number" if key in _FLOAT_KEYS else "integer" if key in _INT_KEYS else "boolean"
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as a {kind}") from None
    return text


def _parse_sweep(text: str) -> tuple[tuple[str, tuple[float, ...]], ...]:
    """``"gamma:0.15,0.4; r_g:0.005,0.01"`` -> ((name, values), ...)."""
    plan = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        name, sep, values = part.partition(":")
        name = name.strip()
        if not sep or (name not in _PARAM_KEYS and name != "x_alpha"):
            raise ConfigError(f"key 'sweep': cannot parse entry {part!r} (expected name:v1,v2,...)")
        try:
            nums = tuple(float(v) for v in values.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"key 'sweep': non-numeric value in {part!r}") from None
        if not nums:
            raise ConfigError(f"key 'sweep': no values in {part!r}")
        plan.append((name, nums))
    return tuple(plan)


def _read_flat(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    if parser.sections() != ["run"]:
        raise ConfigError("configuration must be flat key = value lines without sections")
    return dict(parser["run"])


def parse_config(text: str = "", overrides: Optional[Mapping[str, object]] = None,
                 command: str = "price") -> RunConfig:
    """Build a validated ``RunConfig`` from file text plus overrides (overrides win)."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    raw = _read_flat(text)
    raw.update(overrides or {})
    values = {key: _parse_value(key, val) for key, val in raw.items()}

    if "x_alpha" in values:
        if "alpha" in values:
            raise ConfigError("keys 'alpha' and 'x_alpha' are mutually exclusive")
        values["alpha"] = math.exp(-values.pop("x_alpha"))
    try:
        params = PolicyParams(**{k: values[k] for k in _PARAM_KEYS if k in values})
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None

    n_steps = values.get("n_steps", 2000)
    if n_steps < 1:
        raise ConfigError(f"key 'n_steps': requires n_steps >= 1, got {n_steps}")
    x_max = values.get("x_max")
    if x_max is not None and x_max <= 0:
        raise ConfigError(f"key 'x_max': requires x_max > 0, got {x_max}")
    if x_max is not None and x_max < minimum_x_max(params):
        raise ConfigError(f"key 'x_max': requires x_max >= {minimum_x_max(params)!r} for these parameters")
    seed = values.get("seed", 42)
    if not -(2**63) <= seed < 2**64:
        raise ConfigError("key 'seed': must fit in 64 bits")
    try:
        mc = McSpec(n_paths=values.get("n_paths", 100_000),
                    steps_per_year=values.get("steps_per_year", 250),
                    seed=seed,
                    bridge_correction=values.get("bridge_correction", True),
                    workers=values.get("workers", 1))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None

    flow_x, flow_y = values.get("flow_x", 2.0), values.get("flow_y", 2.5)
    if not 0 <= flow_x <= flow_y:
        raise ConfigError(f"keys 'flow_x', 'flow_y': requires 0 <= flow_x <= flow_y, got {flow_x}, {flow_y}")

    out = values.get("output_dir") or os.environ.get(ENV_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR
    sweep = _parse_sweep(values["sweep"]) if values.get("sweep") else None
    config = RunConfig(params=params, command=command, n_steps=n_steps, x_max=x_max, mc=mc,
                       output_dir=Path(out), sweep=sweep, flow_x=flow_x, flow_y=flow_y)
    if command == "sensitivity":
        try:
            config.sweep_points()
        except ParameterError as exc:
            raise ConfigError(f"key 'sweep': {exc}") from None
    return config


# ----------------------------------------------------------------------------
# Artifacts


def _clean(obj):
    """Map non-finite floats to None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def _json_text(config: RunConfig, kind: str, result, failures: Sequence[dict] = ()) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "artifact": kind, "package_version": __version__,
           "config": config.to_dict(), "result": result, "failures": list(failures)}
    return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(config: RunConfig, kind: str, body: str) -> str:
    header = (f"# schema_version={SCHEMA_VERSION}\n# artifact={kind}\n"
              f"# config={json.dumps(_clean(config.to_dict()), sort_keys=True)}\n")
    return header + body


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _fmt(value: float) -> str:
    return repr(float(value))


# ----------------------------------------------------------------------------
# Commands


def _cmd_price(config: RunConfig) -> list[dict]:
    result = price_cone(config.params, config.n_steps)
    body = result.to_dict()
    body["thresholds"] = derive_thresholds(config.params).to_dict()
    _write(config.output_dir / "prices.json", _json_text(config, "prices", body))
    return []


def _boundary_run(params: PolicyParams, config: RunConfig):
    solution = solve_default_grid(params, config.n_steps, x_max=config.x_max)
    thresholds = derive_thresholds(params)
    curves = extract_boundaries(solution, thresholds)
    report = validate_shape(curves, thresholds)
    return solution, thresholds, curves, report


def _shape_failures(report, label: str) -> list[dict]:
    return [{"check": f"{label}{c.name}", "measured": c.measured, "tolerance": c.tolerance,
             "detail": c.detail} for c in report.checks if not c.passed]


def _cmd_boundary(config: RunConfig) -> list[dict]:
    solution, thresholds, curves, report = _boundary_run(config.params, config)
    out = config.output_dir
    _write(out / "boundary.csv", _csv_text(config, "boundary", curves_to_csv(curves)))
    landmarks = landmarks_dict(curves)
    landmarks.update(thresholds=thresholds.to_dict(), lattice=solution.spec.to_dict(),
                     v0=solution.v0, v0_european=solution.v0_european)
    _write(out / "landmarks.json", _json_text(config, "landmarks", landmarks))
    failures = _shape_failures(report, "")
    _write(out / "shape_report.json", _json_text(config, "shape_report", report.to_dict(), failures))
    return failures


def table1_params(spread: float, scenario: str) -> PolicyParams:
    """Parameters of one benchmark cell: r_g fixed at 1%, r = r_g + spread."""
    delta, beta = TABLE1_SCENARIOS[scenario]
    return PolicyParams(T=10.0, sigma=0.18, gamma=0.4, alpha=0.1, a0=1000.0, r_g=TABLE1_R_G,
                        r=TABLE1_R_G + spread, delta=delta, beta=beta)


def table1_tolerance(reference: float) -> float:
    return max(0.5, 0.01 * abs(reference))


def table1_rows(n_steps: int) -> list[dict]:
    rows = []
    for spread in TABLE1_SPREADS:
        for scenario in TABLE1_SCENARIOS:
            res = price_cone(table1_params(spread, scenario), n_steps)
            ref = TABLE1_REFERENCE[(spread, scenario)]
            got = (res.price_V0, res.price_V0E, res.price_Vopt)
            row = {"spread": spread, "scenario": scenario,
                   "V0": got[0], "V0E": got[1], "Vopt": got[2],
                   "V0_ref": ref[0], "V0E_ref": ref[1], "Vopt_ref": ref[2]}
            for name, g, r in zip(("V0", "V0E", "Vopt"), got, ref):
                row[f"abs_err_{name}"] = abs(g - r)
            rows.append(row)
    return rows


def table1_failures(rows: Sequence[dict]) -> list[dict]:
    failures = []
    for row in rows:
        for name in ("V0", "V0E", "Vopt"):
            tol = table1_tolerance(row[f"{name}_ref"])
            if not row[f"abs_err_{name}"] <= tol:
                failures.append({"check": f"table1/{row['spread']}/{row['scenario']}/{name}",
                                 "measured": row[name], "reference": row[f"{name}_ref"],
                                 "tolerance": tol})
    return failures


def _cmd_table1(config: RunConfig) -> list[dict]:
    rows = table1_rows(config.n_steps)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE1_COLUMNS)
    for row in rows:
        writer.writerow([row[c] if isinstance(row[c], str) else _fmt(row[c]) for c in TABLE1_COLUMNS])
    failures = table1_failures(rows)
    _write(config.output_dir / "table1.csv", _csv_text(config, "table1", buf.getvalue()))
    _write(config.output_dir / "table1.json",
           _json_text(config, "table1", {"rows": rows, "tolerance": "max(0.5, 1% of reference)"},
                      failures))
    return failures


def _cmd_sensitivity(config: RunConfig) -> list[dict]:
    points, failures = [], []
    for index, (name, value, params) in enumerate(config.sweep_points()):
        _, _, curves, report = _boundary_run(params, config)
        filename = f"sensitivity_{index:02d}_{name}.csv"
        _write(config.output_dir / filename,
               _csv_text(config, f"boundary {name}={_fmt(value)}", curves_to_csv(curves)))
        points.append({"index": index, "parameter": name, "value": value, "file": filename,
                       "params": params.to_dict(), "landmarks": landmarks_dict(curves),
                       "shape_passed": report.summary})
        failures += _shape_failures(report, f"{name}={_fmt(value)}/")
    _write(config.output_dir / "sensitivity.json",
           _json_text(config, "sensitivity", {"points": points}, failures))
    return failures


def mc_checks(config: RunConfig) -> list[dict]:
    """The three Monte Carlo agreement tests against each other and the tree."""
    params = config.params
    tree = price_cone(params, config.n_steps).v0_european
    red = mc_european_reduced(params, config.mc)
    full = mc_european_full(params, config.mc)
    full_mean, full_se = full.mean / params.a0, full.std_error / params.a0
    combined = math.sqrt(full_se**2 + red.std_error**2)
    checks = [
        ("reduced_vs_tree", abs(red.mean - tree), 3.0 * red.std_error),
        ("full_vs_tree", abs(full_mean - tree), 3.0 * full_se),
        ("full_vs_reduced", abs(full_mean - red.mean), 3.0 * combined),
    ]
    return [{"check": name, "deviation": dev, "tolerance": tol, "passed": dev <= tol,
             "tree_v0_european": tree, "reduced": red.to_dict(), "full": full.to_dict()}
            for name, dev, tol in checks]


def _cmd_mc_check(config: RunConfig) -> list[dict]:
    checks = mc_checks(config)
    failures = [c for c in checks if not c["passed"]]
    _write(config.output_dir / "mc_check.json", _json_text(config, "mc_check", {"checks": checks}, failures))
    return failures


def _cmd_flow_check(config: RunConfig) -> list[dict]:
    report = coupled_flow_check(config.params, config.flow_x, config.flow_y, config.mc)
    body = report.to_dict()
    body.update(x=config.flow_x, y=config.flow_y)
    failures = [] if report.passed else [{"check": "flow_inequalities", **report.to_dict()}]
    _write(config.output_dir / "flow_check.json", _json_text(config, "flow_check", body, failures))
    return failures


_DISPATCH = {
    "price": _cmd_price,
    "boundary": _cmd_boundary,
    "table1": _cmd_table1,
    "sensitivity": _cmd_sensitivity,
    "mc-check": _cmd_mc_check,
    "flow-check": _cmd_flow_check,
}


def run_command(config: RunConfig) -> int:
    """Run the configured command, write its artifacts and return the exit status."""
    try:
        failures = _DISPATCH[config.command](config)
    except OSError as exc:
        print(f"error: cannot write artifacts: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SpecError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for failure in failures:
        print(f"check failed: {failure['check']}", file=sys.stderr)
    return EXIT_CHECK_FAILED if failures else EXIT_OK


# ----------------------------------------------------------------------------
# Argument parsing


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value configuration file")
    common.add_argument("--out", help=f"output directory (default: ${ENV_OUTPUT_DIR} or ./{DEFAULT_OUTPUT_DIR})")
    common.add_argument("--steps", help="lattice time steps N")
    common.add_argument("--paths", help="Monte Carlo paths")
    common.add_argument("--seed", help="Monte Carlo seed")
    common.add_argument("--fees", metavar="P,Q", help="fee rates on portfolio and reserve")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key (repeatable)")

    parser = argparse.ArgumentParser(prog="ppso", description="Participating policy surrender valuation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "price": "headline prices from the recombining tree",
        "boundary": "grid solve, boundary curves and shape checks",
        "table1": "benchmark table of V0, V0E and Vopt",
        "sensitivity": "boundary curves over a parameter sweep",
        "mc-check": "Monte Carlo agreement with the tree and across measures",
        "flow-check": "pathwise flow inequalities under coupled noise",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    over: dict[str, object] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        over[key.strip()] = value
    if args.fees is not None:
        parts = args.fees.split(",")
        if len(parts) != 2:
            raise ConfigError(f"--fees expects P,Q, got {args.fees!r}")
        over["p"], over["q"] = parts
    for flag, key in (("steps", "n_steps"), ("paths", "n_paths"), ("seed", "seed"), ("out", "output_dir")):
        value = getattr(args, flag)
        if value is not None:
            over[key] = value
    return over


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        text = args.config.read_text(encoding="utf-8") if args.config else ""
    except OSError as exc:
        print(f"error: cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        config = parse_config(text, _overrides(args), command=args.command)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run_command(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
