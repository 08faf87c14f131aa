"""Job configuration files (TOML) and the shipped presets.

A job file names one command and carries a table of the same name::

    command = "curve"
    label = "fig2b"
    seed = 0

    [curve]
    family = "two-mode-squeezed"
    observables = ["delta_n"]
    fixed = { gamma_srs = 2e-3 }
    axes = [{ param = "n_tot", grid = { geomspace = [0.01, 8.0, 19] } }]

Grids are either explicit lists or one of ``{geomspace = [a, b, n]}``,
``{linspace = [a, b, n]}``.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

COMMANDS = ("lineshape", "curve", "sweep", "optimize", "crossover", "accept")
PRESETS = ("fig2a", "fig2b", "fig3", "fig4")


class ConfigError(ValueError):
    """The job file is missing, malformed or inconsistent."""


def expand_grid(spec) -> list[float]:
    """Explicit list or ``{geomspace|linspace = [start, stop, num]}`` to floats."""
    if isinstance(spec, dict):
        if len(spec) != 1:
            raise ConfigError(f"grid table needs exactly one of geomspace/linspace, got {sorted(spec)}")
        (kind, args), = spec.items()
        if kind not in ("geomspace", "linspace") or len(args) != 3:
            raise ConfigError(f"bad grid specification {spec!r}")
        start, stop, num = args
        if int(num) != num or num < 0:
            raise ConfigError(f"grid size must be a nonnegative integer, got {num!r}")
        fn = np.geomspace if kind == "geomspace" else np.linspace
        try:
            return [float(x) for x in fn(float(start), float(stop), int(num))]
        except ValueError as exc:
            raise ConfigError(f"bad grid specification {spec!r}: {exc}") from exc
    if isinstance(spec, (list, tuple)):
        try:
            return [float(x) for x in spec]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"grid entries must be numbers: {spec!r}") from exc
    if isinstance(spec, (int, float)):
        return [float(spec)]
    raise ConfigError(f"cannot read grid {spec!r}")


@dataclass
class JobConfig:
    """One parsed job: a command, its parameter table and run settings."""

    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    label: str = ""
    source: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if not isinstance(self.params, dict):
            raise ConfigError(f"[{self.command}] must be a table")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @property
    def name(self) -> str:
        return self.label or self.command

    def to_dict(self) -> dict:
        out = {"command": self.command, "seed": self.seed}
        if self.label:
            out["label"] = self.label
        out[self.command] = copy.deepcopy(self.params)
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def with_seed(self, seed: int) -> "JobConfig":
        return JobConfig(self.command, copy.deepcopy(self.params), seed, self.label, self.source)


def from_dict(data: dict, source: str | None = None) -> JobConfig:
    if "command" not in data:
        raise ConfigError("job file lacks a 'command' key")
    command = data["command"]
    extra = set(data) - {"command", "seed", "label", command}
    if extra:
        raise ConfigError(f"unexpected top-level keys {sorted(extra)}")
    return JobConfig(command, data.get(command, {}), data.get("seed", 0), data.get("label", ""), source)


def loads(text: str, source: str | None = None) -> JobConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source or 'config'}: {exc}") from exc
    return from_dict(data, source)


def load(path) -> JobConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("srs_qmetro.presets").joinpath(f"{name}.toml").read_text()


def load_preset(name: str) -> JobConfig:
    return loads(preset_text(name), f"preset:{name}")


def default_accept() -> JobConfig:
    return JobConfig("accept", {}, 0, "accept")
