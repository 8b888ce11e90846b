"""Run configuration: a sectioned ``key = value`` file.

Example::

    [kernel]
    family = fractional
    H = 0.1

    [kernel_bar]
    family = truncated
    H = 0.1
    tau = 0.0078125

    [model]
    variant = dissipation
    nu = 0.5
    H = 0.1
    phi = square

    [grid]
    T = 1.0
    n = 256

    [mc]
    N = 100000
    seed = 2024
    batches = 25

    [sweep]
    parameter = tau
    values = 0.125, 0.0625, 0.03125

Values are kept as text, so a file written by :meth:`RunConfig.to_text`
parses back to the same blocks.  Unknown sections and keys are errors that
carry the line and column of the offending entry.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .kernels import Kernel
from .markovian import build_rule, to_kernel
from .models import custom, dissipation, rough_bergomi
from .sampler import TimeGrid

_KERNEL_KEYS = {
    "family", "H", "tau", "scale", "nodes", "weights",
    "cells", "points", "cut_low", "cut_high", "lump_tail",
}
SCHEMA = {
    "kernel": _KERNEL_KEYS,
    "kernel_bar": _KERNEL_KEYS,
    "model": {"variant", "nu", "H", "rho", "X0", "scale", "b", "sigma", "phi", "T", "steps"},
    "grid": {"T", "n"},
    "mc": {"N", "seed", "batches", "sampler"},
    "sweep": {"parameter", "values"},
    "output": {"dir", "paths", "formats"},
}
MARKOVIAN = "markovian"


class ConfigError(ValueError):
    """Malformed configuration; ``line`` and ``column`` are 1-based when known."""

    def __init__(self, message, line=None, column=None):
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.column = column


def _locate(text, section, key=None):
    """Line and column of ``[section]`` or of ``key`` inside it."""
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if key is None and current == section:
                return i, raw.index("[") + 1
            continue
        if current == section and key is not None:
            name = stripped.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return i, raw.index(name[0]) + 1
    return None, None


@dataclass
class RunConfig:
    """Blocks of raw ``key -> text`` entries, by section name."""

    blocks: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text):
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("entry before any [section] header", exc.lineno, 1) from None
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, 1) from None
        except configparser.DuplicateOptionError as exc:
            line, col = exc.lineno, 1
            raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", line, col) from None
        except configparser.ParsingError as exc:
            line, raw = exc.errors[0]
            raise ConfigError(f"cannot parse {raw.strip()!r}", line, 1) from None
        blocks = {}
        for section in parser.sections():
            if section not in SCHEMA:
                line, col = _locate(text, section)
                raise ConfigError(f"unknown section [{section}]", line, col)
            block = dict(parser[section])
            for key in block:
                if key not in SCHEMA[section]:
                    line, col = _locate(text, section, key)
                    raise ConfigError(f"unknown key {key!r} in [{section}]", line, col)
            blocks[section] = block
        return cls(blocks)

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def to_text(self):
        lines = []
        for section, block in self.blocks.items():
            if lines:
                lines.append("")
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in block.items())
        return "\n".join(lines) + "\n"

    def has(self, section):
        return section in self.blocks

    def block(self, section):
        if section not in self.blocks:
            raise ConfigError(f"missing section [{section}]")
        return self.blocks[section]

    def get(self, section, key, default=None, kind=str):
        block = self.blocks.get(section, {})
        if key not in block:
            if default is None:
                raise ConfigError(f"missing key {key!r} in [{section}]")
            return default
        return _convert(block[key], kind, section, key)

    def set(self, section, key, value):
        self.blocks.setdefault(section, {})[key] = value if isinstance(value, str) else _fmt(value)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(text, kind, section, key):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(text)
            return low in ("true", "yes", "1")
        if kind is int:
            return int(text.strip())
        if kind is float:
            value = float(text)
            if not math.isfinite(value):
                raise ValueError(text)
            return value
        return text.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {text!r} is not a valid {kind.__name__}") from None


def kernel_from_block(block, section="kernel", T=1.0, dt=None):
    """Kernel for a ``[kernel]``-style block.

    ``family = markovian`` builds a Gaussian sum-of-exponentials rule for the
    fractional kernel with ``H``, ``cells``, ``points`` and optional cuts.
    """
    family = block.get("family", "").strip()
    get = lambda key, kind, default=None: _get(block, section, key, kind, default)  # noqa: E731
    try:
        if family == MARKOVIAN:
            cuts = None
            if "cut_low" in block or "cut_high" in block:
                cuts = (get("cut_low", float), get("cut_high", float))
            rule = build_rule(
                get("H", float), T, get("cells", int), get("points", int),
                cuts=cuts, dt=dt, lump_tail=get("lump_tail", bool, False),
            )
            return to_kernel(rule, scale=get("scale", float, 1.0))
        extra = {"cells", "points", "cut_low", "cut_high", "lump_tail"} & set(block)
        if extra:
            raise ConfigError(f"[{section}] key(s) {', '.join(sorted(extra))} need family = markovian")
        return Kernel.from_config(block)
    except ConfigError:
        raise
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _get(block, section, key, kind, default=None):
    if key not in block:
        if default is None:
            raise ConfigError(f"missing key {key!r} in [{section}]")
        return default
    return _convert(block[key], kind, section, key)


def grid_from_config(cfg):
    """Uniform grid from ``[grid] T, n``; ``[model] T, steps`` are accepted as aliases."""
    for key, alias in (("T", "T"), ("n", "steps")):
        if key in cfg.blocks.get("grid", {}) and alias in cfg.blocks.get("model", {}):
            raise ConfigError(f"[grid] {key} and [model] {alias} both given")
    model = cfg.blocks.get("model", {})
    T = cfg.get("model", "T", None, float) if "T" in model else cfg.get("grid", "T", 1.0, float)
    n = cfg.get("model", "steps", None, int) if "steps" in model else cfg.get("grid", "n", 256, int)
    if T <= 0 or n < 1:
        raise ConfigError("[grid] needs T > 0 and n >= 1")
    return TimeGrid.uniform(T, n)


def model_from_config(cfg):
    """Model from ``[model]``; ``None`` when the section is absent or ``variant = none``."""
    if not cfg.has("model"):
        return None
    variant = cfg.get("model", "variant", "none")
    g = lambda key, default=None, kind=float: cfg.get("model", key, default, kind)  # noqa: E731
    try:
        if variant == "none":
            return None
        if variant == "rough_bergomi":
            scale = cfg.get("model", "scale", None, float) if "scale" in cfg.blocks["model"] else None
            return rough_bergomi(g("nu"), g("H"), g("rho", 0.0), g("X0", 0.0), scale)
        if variant == "dissipation":
            return dissipation(g("nu"), g("H"), g("X0", 0.0), g("scale", 1.0))
        if variant == "custom":
            return custom(g("b", kind=str), g("sigma", kind=str), g("rho", 0.0), g("X0", 0.0))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[model] {exc}") from None
    raise ConfigError(f"[model] unknown variant {variant!r}")


def sweep_values(cfg):
    parameter = cfg.get("sweep", "parameter")
    text = cfg.get("sweep", "values")
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"[sweep] values = {text!r} is not a list of numbers") from None
    if not values:
        raise ConfigError("[sweep] values is empty")
    if parameter not in _KERNEL_KEYS - {"family", "nodes", "weights", "lump_tail"}:
        raise ConfigError(f"[sweep] cannot sweep kernel_bar parameter {parameter!r}")
    return parameter, values


def with_parameter(block, parameter, value):
    """Copy of a kernel block with one numeric entry replaced."""
    out = dict(block)
    out[parameter] = str(int(value)) if parameter in ("cells", "points") else repr(float(value))
    return out


__all__ = [
    "ConfigError",
    "RunConfig",
    "grid_from_config",
    "kernel_from_block",
    "model_from_config",
    "sweep_values",
    "with_parameter",
]
