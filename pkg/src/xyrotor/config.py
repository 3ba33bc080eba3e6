"""Experiment configuration: a small sectioned ``key = value`` format.

Example::

    [experiment]
    kind = window
    seed = 7

    [model]
    beta = 1.0
    h = 0.2, 0.3         # lists are comma separated
    t = 1:3:0.5          # start:stop:step, stop included

Blank lines and ``#`` comments are ignored.  Every key has a type and a
default; list-valued keys accept a single value.  :func:`parse_config`
reports every problem it finds, each with its line number.
:func:`emit_config` writes the canonical form, which parses back to an
equal config.
"""
from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from typing import Any, Callable

KINDS = ("kernel-table", "ground-state-sweep", "window", "mc-scan", "probe", "oracle-check")


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, bool, str, ints, floats
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    choices: tuple[str, ...] | None = None


def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


SCHEMA: dict[str, dict[str, Key]] = {
    "experiment": {
        "kind": Key("str", None, choices=KINDS),
        "seed": Key("int", None, _nonneg, ">= 0"),
        "out": Key("str", "results"),
    },
    "model": {
        "beta": Key("floats", (1.0,), _pos, "beta > 0"),
        "J": Key("floats", (1.0,), _nonneg, "J >= 0"),
        "h": Key("floats", (0.1,), _nonneg, "h >= 0"),
        "t": Key("floats", (math.log(10.0),), _pos, "t > 0"),
        "d": Key("int", 2, lambda v: v in (1, 2, 3), "d in {1, 2, 3}"),
        "L": Key("ints", (8,), lambda v: v >= 2, "L >= 2"),
    },
    "chain": {
        "mode": Key("str", "conditioned", choices=("initial", "conditioned", "restricted")),
        "sweeps": Key("int", 4000, lambda v: v >= 33, ">= 33"),
        "burn_in": Key("int", 500, _nonneg, ">= 0"),
        "proposal_width": Key("float", 1.0, lambda v: 0 < v <= math.pi, "0 < width <= pi"),
        "order": Key("str", "checkerboard", choices=("checkerboard", "sequential")),
        "parallel": Key("bool", False),
        "err_threshold": Key("float", 0.05, _pos, "> 0"),
        "traces": Key("bool", False),
    },
    "kernel": {
        "times": Key("floats", (0.05, 0.3, 1.0, 5.0), _pos, "t > 0"),
        "n_delta": Key("int", 256, lambda v: v >= 2, ">= 2"),
        "tol": Key("float", 1e-12, _pos, "> 0"),
    },
    "ground_state": {
        "grid_n": Key("int", 1024, lambda v: v >= 256, ">= 256"),
        "refine_tol": Key("float", 1e-12, _pos, "> 0"),
        "use_full_log": Key("bool", False),
    },
    "window": {
        "t_start": Key("float", 1.0, _pos, "> 0"),
        "t_stop": Key("float", 10.0, _pos, "> 0"),
        "step": Key("float", 1e-3, _pos, "> 0"),
        "refine": Key("float", 1e-6, _pos, "> 0"),
    },
    "probe": {
        "r_in": Key("ints", (2, 3, 4), lambda v: v >= 1, "r_in >= 1"),
        "annulus": Key("bool", False),
    },
    "oracle": {
        "boundary": Key("str", "periodic", choices=("periodic", "fixed", "free")),
        "boundary_angle": Key("float", 0.0),
        "n_bins": Key("int", 256, lambda v: v >= 8 and v & (v - 1) == 0, "power of two >= 8"),
    },
}


@dataclass(frozen=True)
class Violation:
    line: int
    key: str
    message: str

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.key}: {self.message}"


class ConfigError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("\n".join(str(v) for v in violations))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config; ``values[section][key]`` holds every key, defaults filled."""

    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def __hash__(self):
        return hash(emit_config(self))

    @property
    def kind(self) -> str:
        return self.values["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return self.values["experiment"]["seed"]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        vals = {s: dict(kv) for s, kv in self.values.items()}
        vals["experiment"]["seed"] = seed
        return ExperimentConfig(vals)

    def digest(self) -> str:
        return hashlib.sha256(emit_config(self).encode()).hexdigest()


_RANGE = re.compile(r"^\s*([^:]+):([^:]+):([^:]+)\s*$")


def _scalar(kind: str, text: str):
    text = text.strip()
    if kind == "int":
        if not re.fullmatch(r"[+-]?\d+", text):
            raise ValueError(f"expected an integer, got {text!r}")
        return int(text)
    if kind == "float":
        v = float(text)
        if not math.isfinite(v):
            raise ValueError(f"expected a finite number, got {text!r}")
        return v
    if kind == "bool":
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected true or false, got {text!r}")
    if not text:
        raise ValueError("empty value")
    return text


def _expand_range(kind: str, m) -> tuple:
    a, b, step = (_scalar(kind, g) for g in m.groups())
    if not step > 0:
        raise ValueError("range step must be > 0")
    if b < a:
        raise ValueError("empty range (stop < start)")
    n = int(math.floor((b - a) / step + 1e-9)) + 1
    return tuple(a + k * step for k in range(n))


def _convert(key: Key, text: str):
    if key.kind in ("ints", "floats"):
        base = key.kind[:-1]
        m = _RANGE.match(text)
        vals = _expand_range(base, m) if m else tuple(_scalar(base, p) for p in text.split(","))
        if not vals:
            raise ValueError("empty list")
        return vals
    return _scalar(key.kind, text)


def _check(key: Key, value) -> str | None:
    items = value if isinstance(value, tuple) else (value,)
    if key.choices is not None and value not in key.choices:
        return f"must be one of {', '.join(key.choices)} (got {value!r})"
    if key.check is not None:
        bad = [v for v in items if not key.check(v)]
        if bad:
            return f"violates {key.rule} (got {bad[0]!r})"
    if len(set(items)) != len(items):
        return "duplicate values"
    return None


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raise :class:`ConfigError` listing every violation."""
    errors: list[Violation] = []
    seen: dict[tuple[str, str], int] = {}
    values: dict[str, dict] = {s: {} for s in SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(Violation(lineno, line, "malformed section header"))
                section = None
                continue
            section = line[1:-1].strip()
            if section not in SCHEMA:
                errors.append(Violation(lineno, f"[{section}]", "unknown section"))
                section = None
            continue
        if "=" not in line:
            errors.append(Violation(lineno, line, "expected 'key = value'"))
            continue
        name, rhs = (s.strip() for s in line.split("=", 1))
        if section is None:
            errors.append(Violation(lineno, name, "key outside a known section"))
            continue
        full = f"{section}.{name}"
        key = SCHEMA[section].get(name)
        if key is None:
            errors.append(Violation(lineno, full, "unknown key"))
            continue
        if (section, name) in seen:
            errors.append(Violation(lineno, full, f"duplicate key (first set on line {seen[section, name]})"))
            continue
        seen[section, name] = lineno
        try:
            value = _convert(key, rhs)
        except ValueError as exc:
            errors.append(Violation(lineno, full, f"type mismatch: {exc}"))
            continue
        msg = _check(key, value)
        if msg:
            errors.append(Violation(lineno, full, msg))
            continue
        values[section][name] = value

    for section, keys in SCHEMA.items():
        for name, key in keys.items():
            if name in values[section]:
                continue
            if key.default is None:
                if (section, name) not in seen:
                    errors.append(Violation(0, f"{section}.{name}", "required key missing"))
            else:
                values[section][name] = key.default

    ch = values["chain"]
    if "sweeps" in ch and "burn_in" in ch and ch["sweeps"] - ch["burn_in"] < 32:
        errors.append(Violation(seen.get(("chain", "burn_in"), 0), "chain.burn_in",
                                "need sweeps - burn_in >= 32 measured sweeps"))
    w = values["window"]
    if w.get("t_stop", 0) <= w.get("t_start", 0):
        errors.append(Violation(seen.get(("window", "t_stop"), 0), "window.t_stop", "must exceed window.t_start"))
    if errors:
        raise ConfigError(sorted(errors, key=lambda v: (v.line, v.key)))
    return ExperimentConfig(values)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical text: every section and key in schema order, ranges expanded."""
    out = []
    for section, keys in SCHEMA.items():
        out.append(f"[{section}]")
        for name in keys:
            out.append(f"{name} = {_fmt(cfg.values[section][name])}")
        out.append("")
    return "\n".join(out)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
