"""Flat ``key = value`` configuration files and CSV trace files.

A configuration file holds one assignment per line; ``#`` starts a comment.
``kind = dde`` selects the scalar delay problem, anything else (or nothing)
a closed-loop scenario.  Omitted keys take the reference-experiment defaults.

Trace files start with a ``#``-prefixed manifest that echoes the resolved
configuration in the same ``key = value`` syntax, followed by the header
``t,norm_y,norm_err,norm_u`` and one row per coarse step.
"""
from __future__ import annotations

import csv
import datetime as _dt
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .delay import DDEParams
from .engine import ScenarioConfig, SimulationTrace
from .errors import InvalidParameter

TRACE_HEADER = ("t", "norm_y", "norm_err", "norm_u")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(InvalidParameter):
    """Configuration problem, with ``path:line:`` prefixed when known."""


def _field_types(cls) -> dict[str, str]:
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(cls)}


_SCENARIO_TYPES = _field_types(ScenarioConfig)
_DDE_TYPES = _field_types(DDEParams)


def _convert(raw: str, typ: str):
    if typ == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    return raw


def _read_assignments(lines, source: str) -> tuple[dict[str, str], dict[str, int]]:
    values: dict[str, str] = {}
    where: dict[str, int] = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {text!r}")
        key, value = (part.strip() for part in text.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: missing key")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first on line {where[key]})")
        values[key] = value
        where[key] = lineno
    return values, where


def _locate(message: str, where: dict[str, int]) -> int | None:
    """Line of the first configured key named in a validation message."""
    best = None
    for key, lineno in where.items():
        m = re.search(rf"\b{re.escape(key)}\b", message)
        if m and (best is None or m.start() < best[0]):
            best = (m.start(), lineno)
    return None if best is None else best[1]


def parse_config_text(text: str, source: str = "<config>") -> ScenarioConfig | DDEParams:
    values, where = _read_assignments(text.splitlines(), source)
    kind = values.pop("kind", "closed_loop").strip().lower()
    if kind in ("closed_loop", "scenario"):
        cls, types = ScenarioConfig, _SCENARIO_TYPES
    elif kind == "dde":
        cls, types = DDEParams, _DDE_TYPES
    else:
        raise ConfigError(f"{source}:{where['kind']}: unknown kind {kind!r}")
    kwargs = {}
    for key, raw in values.items():
        if key not in types:
            raise ConfigError(
                f"{source}:{where[key]}: unknown key {key!r} for kind {kind!r}"
            )
        try:
            kwargs[key] = _convert(raw, types[key])
        except ValueError as exc:
            raise ConfigError(f"{source}:{where[key]}: {key}: {exc}") from None
    cfg = cls(**kwargs)
    try:
        cfg.validate()
    except InvalidParameter as exc:
        lineno = _locate(str(exc), where)
        prefix = f"{source}:{lineno}" if lineno else source
        raise ConfigError(f"{prefix}: {exc}") from None
    return cfg


def parse_config(path) -> ScenarioConfig | DDEParams:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: ScenarioConfig | DDEParams) -> str:
    kind = "dde" if isinstance(cfg, DDEParams) else "closed_loop"
    lines = [f"kind = {kind}"]
    lines += [f"{k} = {_format_value(v)}" for k, v in asdict(cfg).items()]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# traces

@dataclass
class RunManifest:
    scenario: str
    config: ScenarioConfig | DDEParams
    output: str = ""
    timestamp: str = ""

    def lines(self) -> list[str]:
        stamp = self.timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        out = [
            "# parastab trace",
            f"# scenario: {self.scenario}",
            f"# output: {self.output}",
            f"# timestamp: {stamp}",
        ]
        out += [f"# {line}" for line in format_config(self.config).splitlines()]
        return out


def _fmt(x: float) -> str:
    return np.format_float_positional(float(x), precision=17, unique=False, fractional=False, trim="k")


def trace_body(trace: SimulationTrace) -> str:
    rows = [",".join(TRACE_HEADER)]
    for vals in zip(trace.t, trace.norm_y, trace.norm_err, trace.norm_u):
        rows.append(",".join(_fmt(v) for v in vals))
    return "\n".join(rows) + "\n"


def write_trace_csv(trace: SimulationTrace, path, manifest: RunManifest | None = None) -> None:
    path = Path(path)
    if manifest is None and trace.config is not None:
        manifest = RunManifest("simulate", trace.config, str(path))
    head = "\n".join(manifest.lines()) + "\n" if manifest else ""
    path.write_text(head + trace_body(trace), encoding="utf-8")


def read_trace_csv(path) -> tuple[SimulationTrace, ScenarioConfig | DDEParams | None]:
    """Load a trace file; the second item is the configuration rebuilt from
    the manifest echo, if present."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    echo = [ln[1:].strip() for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    reader = csv.reader(body)
    header = tuple(next(reader))
    if header != TRACE_HEADER:
        raise InvalidParameter(f"unexpected trace header {header!r}")
    data = np.array([[float(x) for x in row] for row in reader if row], dtype=float)
    data = data.reshape(-1, 4)
    assignments = [ln for ln in echo if "=" in ln]
    config = parse_config_text("\n".join(assignments), f"{path} (manifest)") if assignments else None
    trace = SimulationTrace(data[:, 0], data[:, 1], data[:, 2], data[:, 3], config)
    return trace, config
