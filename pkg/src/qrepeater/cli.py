"""Command-line front end: evaluate, optimize, sweep, validate, plob.

Configuration is a YAML file with the sections ``network``, ``plan``,
``search``, ``sim``, ``sweep`` and ``plob``. Every key is optional; unknown
keys are rejected. ``--set section.key=value`` (or a bare key when it is
unambiguous) overrides single values. The fully resolved configuration is
echoed at the top of every CSV as ``#`` comment lines.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from typing import Any, Iterable, TextIO

import numpy as np
import yaml

from .monte_carlo import TRACK_MODES, SimConfig, simulate_sessions
from .network_model import NetworkParams, RateReport, SessionPlan, plob_curve, qubits_per_node
from .optimizer import SWEEP_AXES, SearchConfig, apply_axis, optimize_protocol, sweep
from .session_pipeline import evaluate_protocol

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

CSV_COLUMNS = (
    "eta0", "eps", "T2_s", "L_tot_km", "t_HEG_s", "P_E", "P_L", "N", "M", "L0_km",
    "p_HEG", "p_EPR", "t_EPR_s", "R_Hz", "e_X", "e_Z", "r_inf", "SKR_Hz",
)
VALIDATE_COLUMNS = ("quantity", "analytic", "mc", "se", "z", "excess_sigma", "agrees")
PLOB_COLUMNS = ("L_tot_km", "plob_Hz")
ERROR_SOURCES = ("eps_i", "eps_TQG", "eps_m", "T2")


class ConfigError(Exception):
    pass


class NumericalError(Exception):
    pass


@dataclass(frozen=True)
class SimSettings:
    n_sessions: int = 100_000
    track_mode: str = "probabilities"
    block_size: int = 8192


@dataclass(frozen=True)
class PlobSettings:
    L_min: float = 0.0
    L_max: float = 2000.0
    points: int = 41
    repetition_rate: float = 1e9


@dataclass
class RunConfig:
    network: NetworkParams = field(default_factory=NetworkParams)
    plan: SessionPlan = field(default_factory=lambda: SessionPlan(N=30, M=500, P_E=0, P_L=1))
    search: SearchConfig = field(default_factory=SearchConfig)
    sim: SimSettings = field(default_factory=SimSettings)
    plob: PlobSettings = field(default_factory=PlobSettings)
    sweep: dict[str, list[float]] = field(default_factory=dict)
    seed: int = 0
    threads: int = 1


_SECTIONS = {
    "network": NetworkParams,
    "plan": SessionPlan,
    "search": SearchConfig,
    "sim": SimSettings,
    "plob": PlobSettings,
}


def _format(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.9g}"
    return str(x)


def _coerce(section: str, key: str, raw: Any, target_type: Any) -> Any:
    where = f"{section}.{key}"
    if target_type is float or target_type == "float":
        if isinstance(raw, str) and raw.strip().lower() in ("inf", "infinity", ".inf"):
            return math.inf
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {raw!r}") from None
    if target_type is int or target_type == "int":
        if isinstance(raw, bool):
            raise ConfigError(f"{where}: expected an integer, got {raw!r}")
        try:
            value = float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None
        if not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {raw!r}")
        return int(value)
    if target_type is str or target_type == "str":
        return str(raw)
    # tuples of ints (search bounds, exhaustive grids)
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = [x for x in raw.replace("(", "").replace(")", "").split(",") if x.strip()]
    try:
        return tuple(int(float(x)) for x in raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected a list of integers, got {raw!r}") from None


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in fields(cls)}


def _build(section: str, cls, values: dict[str, Any], base=None):
    types = _field_types(cls)
    unknown = sorted(set(values) - set(types) - ({"eps"} if cls is NetworkParams else set()))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}; allowed: {', '.join(types)}")
    values = dict(values)
    kwargs = {}
    if cls is NetworkParams and "eps" in values:
        eps = _coerce(section, "eps", values.pop("eps"), float)
        kwargs.update(eps_i=eps, eps_TQG=eps, eps_m=eps)
    for key, raw in values.items():
        kwargs[key] = _coerce(section, key, raw, types[key])
    try:
        return replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def parse_axis_values(name: str, spec: Any) -> list[float]:
    """Axis values from a list, a comma list, or ``lin:start:stop:count`` / ``log:start:stop:count``."""
    if name not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {name!r}; choose from {', '.join(SWEEP_AXES)}")
    if isinstance(spec, (int, float)):
        values = [float(spec)]
    elif isinstance(spec, (list, tuple)):
        try:
            values = [float(x) for x in spec]
        except (TypeError, ValueError):
            raise ConfigError(f"sweep axis {name}: non-numeric entry in {spec!r}") from None
    elif isinstance(spec, str):
        text = spec.strip()
        if text.startswith(("lin:", "log:")):
            parts = text.split(":")
            if len(parts) != 4:
                raise ConfigError(f"sweep axis {name}: expected kind:start:stop:count, got {spec!r}")
            try:
                start, stop, count = float(parts[1]), float(parts[2]), int(parts[3])
            except ValueError:
                raise ConfigError(f"sweep axis {name}: malformed range {spec!r}") from None
            if count < 1:
                raise ConfigError(f"sweep axis {name}: count must be >= 1")
            if parts[0] == "log":
                if start <= 0 or stop <= 0:
                    raise ConfigError(f"sweep axis {name}: log range needs positive bounds")
                values = list(np.geomspace(start, stop, count))
            else:
                values = list(np.linspace(start, stop, count))
        else:
            try:
                values = [float(x) for x in text.split(",") if x.strip()]
            except ValueError:
                raise ConfigError(f"sweep axis {name}: malformed list {spec!r}") from None
    else:
        raise ConfigError(f"sweep axis {name}: cannot parse {spec!r}")
    if not values:
        raise ConfigError(f"sweep axis {name}: no values")
    values = [float(v) for v in values]
    # every point must give valid parameters before any work starts
    for v in values:
        try:
            apply_axis(NetworkParams(), name, v)
        except ValueError as exc:
            raise ConfigError(f"sweep axis {name}={v}: {exc}") from None
    return values


def _split_override(text: str) -> tuple[str, str, str]:
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, value = text.split("=", 1)
    key = key.strip()
    if "." in key:
        section, name = key.split(".", 1)
        return section, name, value
    owners = [s for s, cls in _SECTIONS.items() if key in _field_types(cls)]
    if key == "eps":
        owners = ["network"]
    if len(owners) != 1:
        if not owners:
            raise ConfigError(f"--set: unknown key {key!r}")
        raise ConfigError(f"--set: key {key!r} is ambiguous, use one of {[f'{o}.{key}' for o in owners]}")
    return owners[0], key, value


def load_config(path: str | None, overrides: Iterable[str] = (), seed: int | None = None,
                threads: int | None = None, axes: Iterable[str] = ()) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"{path}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded

    allowed = set(_SECTIONS) | {"sweep", "seed", "threads"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")

    sections = {name: dict(data.get(name) or {}) for name in _SECTIONS}
    for name in _SECTIONS:
        if not isinstance(data.get(name) or {}, dict):
            raise ConfigError(f"[{name}] must be a mapping")
    sweep_spec = dict(data.get("sweep") or {})
    for text in overrides:
        section, key, value = _split_override(text)
        if section == "sweep":
            sweep_spec[key] = value
            continue
        if section not in sections:
            raise ConfigError(f"--set: unknown section {section!r}")
        sections[section][key] = yaml.safe_load(value) if value.strip() else value
    for text in axes:
        if "=" not in text:
            raise ConfigError(f"--axis expects name=values, got {text!r}")
        name, value = text.split("=", 1)
        sweep_spec[name.strip()] = value

    plan_values = sections["plan"]
    default_plan = RunConfig().plan
    plan_kwargs = {f.name: getattr(default_plan, f.name) for f in fields(SessionPlan)}
    cfg = RunConfig(
        network=_build("network", NetworkParams, sections["network"]),
        plan=_build("plan", SessionPlan, {**plan_kwargs, **plan_values}),
        search=_build("search", SearchConfig, sections["search"]),
        sim=_build("sim", SimSettings, sections["sim"]),
        plob=_build("plob", PlobSettings, sections["plob"]),
        sweep={name: parse_axis_values(name, spec) for name, spec in sweep_spec.items()},
        seed=_coerce("run", "seed", data.get("seed", 0) if seed is None else seed, int),
        threads=_coerce("run", "threads", data.get("threads", 1) if threads is None else threads, int),
    )
    if cfg.sim.track_mode not in TRACK_MODES:
        raise ConfigError(f"sim.track_mode must be one of {TRACK_MODES}")
    if cfg.sim.n_sessions < 1 or cfg.sim.block_size < 1:
        raise ConfigError("sim.n_sessions and sim.block_size must be >= 1")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg.threads < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def config_header(cfg: RunConfig, command: str) -> list[str]:
    """Resolved configuration as comment lines. Thread count is left out so output does not depend on it."""
    lines = [f"# command: {command}"]
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        for f in fields(obj):
            lines.append(f"# {name}.{f.name} = {_format(getattr(obj, f.name))}")
    for axis, values in cfg.sweep.items():
        lines.append(f"# sweep.{axis} = {','.join(_format(v) for v in values)}")
    lines.append(f"# seed = {cfg.seed}")
    return lines


def report_row(params: NetworkParams, plan: SessionPlan, report: RateReport) -> list[str]:
    L0 = params.L_tot / plan.N
    values = (
        params.eta0, params.eps_TQG, params.T2, params.L_tot, params.t_HEG,
        plan.P_E, plan.P_L, plan.N, plan.M, L0,
        report.p_HEG, report.p_EPR, report.t_EPR, report.R,
        report.e_X, report.e_Z, report.r_inf, report.R_SKR,
    )
    return [_format(v) for v in values]


def _check_finite(report: RateReport, where: str) -> RateReport:
    for name in ("p_EPR", "t_EPR", "R", "e_X", "e_Z", "r_inf", "R_SKR"):
        value = getattr(report, name)
        if not math.isfinite(value):
            raise NumericalError(f"{where}: {name} is {value}")
    return report


@contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
        return
    with open(path, "w", newline="") as fh:
        yield fh


def _writer(fh: TextIO, header: list[str], columns: Iterable[str]):
    for line in header:
        fh.write(line + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    return w


def error_attribution(params: NetworkParams, plan: SessionPlan) -> dict[str, float]:
    """Share of e_X + e_Z due to each error source, by zeroing it and differencing."""
    total_report = evaluate_protocol(params, plan)
    total = total_report.e_X + total_report.e_Z
    shares = {}
    for source in ERROR_SOURCES:
        cleaner = replace(params, **{source: math.inf if source == "T2" else 0.0})
        r = evaluate_protocol(cleaner, plan)
        shares[source] = total - (r.e_X + r.e_Z)
    shares["interaction"] = total - sum(shares.values())
    shares["total"] = total
    return shares


def cmd_evaluate(cfg: RunConfig, out: str | None) -> int:
    params, plan = cfg.network, cfg.plan
    report = _check_finite(evaluate_protocol(params, plan), "evaluate")
    header = config_header(cfg, "evaluate")
    with _output(out) as fh:
        w = _writer(fh, header, CSV_COLUMNS)
        w.writerow(report_row(params, plan, report))
    inner, end = qubits_per_node(params, plan, params.L_tot / plan.N)
    shares = error_attribution(params, plan)
    text = sys.stdout if out not in (None, "-") else sys.stderr
    print(f"Bell vector (Phi+, Psi-, Psi+, Phi-): {', '.join(_format(x) for x in report.bell.astuple())}", file=text)
    print(f"qubits per node: inner {inner}, end {end}", file=text)
    print("error attribution of e_X + e_Z:", file=text)
    for source, value in shares.items():
        print(f"  {source:<12} {_format(value)}", file=text)
    return EXIT_OK


def cmd_optimize(cfg: RunConfig, out: str | None) -> int:
    result = optimize_protocol(cfg.network, cfg.search)
    header = config_header(cfg, "optimize")
    with _output(out) as fh:
        w = _writer(fh, header, CSV_COLUMNS)
        for plan, report in result.per_protocol.values():
            w.writerow(report_row(cfg.network, plan, _check_finite(report, "optimize")))
        b = result.best_plan
        fh.write(f"# best: P_E={b.P_E} P_L={b.P_L} N={b.N} M={b.M} SKR_Hz={_format(result.best_report.R_SKR)}\n")
        fh.write(f"# evaluations = {result.evaluations}, cache_hits = {result.cache_hits}\n")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, out: str | None) -> int:
    if not cfg.sweep:
        raise ConfigError("sweep needs at least one axis (sweep section, --axis or --set sweep.<axis>=...)")
    header = config_header(cfg, "sweep")
    with _output(out) as fh:
        w = _writer(fh, header, CSV_COLUMNS)
        fh.flush()
        try:
            for params, result in sweep(cfg.network, cfg.sweep, cfg.search, workers=cfg.threads):
                w.writerow(report_row(params, result.best_plan, _check_finite(result.best_report, "sweep")))
                fh.flush()
        except KeyboardInterrupt:
            fh.write("# interrupted: partial results\n")
            fh.flush()
            return 130
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: str | None) -> int:
    sim = SimConfig(
        params=cfg.network, plan=cfg.plan, seed=cfg.seed, n_sessions=cfg.sim.n_sessions,
        track_mode=cfg.sim.track_mode, block_size=cfg.sim.block_size, threads=cfg.threads,
    )
    report = evaluate_protocol(cfg.network, cfg.plan)
    mc = simulate_sessions(sim)
    header = config_header(cfg, "validate")
    with _output(out) as fh:
        w = _writer(fh, header, VALIDATE_COLUMNS)
        for name, d in mc.divergence(report).items():
            w.writerow([name, _format(d["analytic"]), _format(d["mc"]), _format(d["se"]),
                        _format(d["z"]), _format(d["excess_sigma"]), _format(d["excess_sigma"] <= 3.0)])
        fh.write(f"# delivered pairs = {mc.n_final}, systematic allowance = 0.02\n")
    return EXIT_OK


def cmd_plob(cfg: RunConfig, out: str | None) -> int:
    s = cfg.plob
    if s.points < 1 or s.L_min < 0 or s.L_max < s.L_min:
        raise ConfigError("plob: need points >= 1 and 0 <= L_min <= L_max")
    Ls = np.linspace(s.L_min, s.L_max, s.points)
    bound = plob_curve(Ls, cfg.network.L_att, s.repetition_rate)
    with _output(out) as fh:
        w = _writer(fh, config_header(cfg, "plob"), PLOB_COLUMNS)
        for L, b in zip(Ls, bound):
            w.writerow([_format(L), _format(b)])
    return EXIT_OK


COMMANDS = {
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "plob": cmd_plob,
}


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrepeater", description="Quantum repeater rate and key-rate calculator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one value, e.g. network.eta0=0.5 or plan.N=40")
        p.add_argument("--out", help="CSV output path (default stdout)")
        p.add_argument("--seed", type=_u64, default=None)
        p.add_argument("--threads", type=int, default=None)
        if name == "sweep":
            p.add_argument("--axis", action="append", default=[], metavar="NAME=VALUES",
                           help="sweep axis, e.g. L_tot=250,500 or T2=log:0.05:5:5")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set, args.seed, args.threads, getattr(args, "axis", ()))
        return COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, ZeroDivisionError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
