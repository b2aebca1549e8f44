"""Run configuration: flat ``key = value`` files plus command-line overrides.

A key may appear several times to form a grid (``lambda = 0.5`` then
``lambda = 1.0``).  Flags replace the file's values for that key entirely.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from pathlib import Path

COMMANDS = ("kernel", "free-energy", "phase-scan", "critical-curve", "sample-paths",
            "observables", "verify")

GRID_KEYS = {"lambda": float, "h": float, "p": float, "d": int, "n": int}
SCALAR_KEYS = {
    "n_max": int, "replicas": int, "samples": int, "base_seed": int, "workers": int,
    "output": str, "kappa": float, "tol": float, "mode": str, "min_count": int,
}
KNOWN_KEYS = {"command": str, **GRID_KEYS, **SCALAR_KEYS}

DEFAULTS = {"p": [1.0], "d": [1], "n": [1000], "n_max": 10_000, "replicas": 100,
            "samples": 1000, "workers": 1, "kappa": 3.0, "tol": 0.05, "mode": "annealed",
            "min_count": 5}

# Grid keys that may take several values, per command.
MULTI = {
    "kernel": (),
    "free-energy": ("lambda", "h", "p", "d", "n"),
    "phase-scan": ("lambda", "h"),
    "critical-curve": ("lambda",),
    "sample-paths": (),
    "observables": ("n",),
    "verify": (),
}
NEEDS = {
    "free-energy": ("lambda", "h"),
    "phase-scan": ("lambda", "h"),
    "critical-curve": ("lambda",),
    "sample-paths": ("lambda", "h"),
    "observables": ("lambda", "h"),
}

WORKERS_ENV = "HETEROPOLYMER_WORKERS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    lambdas: tuple
    hs: tuple
    ps: tuple
    ds: tuple
    ns: tuple
    n_max: int
    replicas: int
    samples: int
    base_seed: int
    workers: int
    output: str
    kappa: float
    tol: float
    mode: str
    min_count: int

    def as_dict(self) -> dict:
        out = asdict(self)
        for k in ("lambdas", "hs", "ps", "ds", "ns"):
            out[k] = list(out[k])
        return out

    def to_text(self) -> str:
        """The config as a ``key = value`` file that parses back to an equal RunConfig."""
        lines = [f"command = {self.command}"]
        for key, values in (("lambda", self.lambdas), ("h", self.hs), ("p", self.ps),
                            ("d", self.ds), ("n", self.ns)):
            lines += [f"{key} = {v!r}" for v in values]
        for key in SCALAR_KEYS:
            lines.append(f"{key} = {getattr(self, key)}")
        return "\n".join(lines) + "\n"


def read_config_text(text: str, source: str = "<config>") -> dict[str, list[str]]:
    """Parse ``key = value`` lines; '#' starts a comment."""
    values: dict[str, list[str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key or not value:
            raise ConfigError(f"{source}:{lineno}: empty key or value in {raw!r}")
        values.setdefault(key, []).append(value)
    return values


def _convert(key: str, raw: str):
    kind = KNOWN_KEYS[key]
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def build_config(file_values: dict[str, list[str]], flag_values: dict[str, list[str]]) -> RunConfig:
    """Merge file and flag values (flags win per key) and validate."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v})
    unknown = sorted(set(merged) - set(KNOWN_KEYS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    if "command" not in merged:
        raise ConfigError("no command given")
    if len(merged["command"]) != 1:
        raise ConfigError("command given more than once")
    command = merged.pop("command")[0]
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")

    vals = {}
    for key, raws in merged.items():
        converted = [_convert(key, r) for r in raws]
        if key in SCALAR_KEYS:
            if len(converted) > 1:
                raise ConfigError(f"conflicting values for {key}: {raws}")
            vals[key] = converted[0]
        else:
            if len(set(converted)) != len(converted):
                raise ConfigError(f"duplicate grid values for {key}: {raws}")
            if len(converted) > 1 and key not in MULTI[command]:
                raise ConfigError(f"{command} takes a single {key}, got grid {raws}")
            vals[key] = converted
    for key in NEEDS.get(command, ()):
        if key not in vals:
            raise ConfigError(f"{command} needs {key}")
    if "base_seed" not in vals:
        raise ConfigError("base_seed is mandatory")
    for key, default in DEFAULTS.items():
        vals.setdefault(key, default)
    vals.setdefault("output", str(Path("runs") / command))
    if command in ("kernel", "critical-curve", "verify"):
        vals.setdefault("lambda", [])
        vals.setdefault("h", [])
    if vals["mode"] not in ("annealed", "quenched"):
        raise ConfigError(f"mode must be annealed or quenched, got {vals['mode']!r}")
    for key in ("replicas", "samples", "workers", "n_max"):
        if vals[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    try:
        from .model import ModelParams
        for lam in vals["lambda"] or [0.0]:
            for p in vals["p"]:
                for d in vals["d"]:
                    for n in vals["n"]:
                        ModelParams(lam, 0.0, p, d, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(command, tuple(vals["lambda"]), tuple(vals["h"]), tuple(vals["p"]),
                     tuple(vals["d"]), tuple(vals["n"]), vals["n_max"], vals["replicas"],
                     vals["samples"], vals["base_seed"], vals["workers"], vals["output"],
                     vals["kappa"], vals["tol"], vals["mode"], vals["min_count"])


def parse_config(config_file=None, flags: dict[str, list[str]] | None = None) -> RunConfig:
    file_values = {}
    if config_file is not None:
        path = Path(config_file)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        file_values = read_config_text(text, str(path))
    return build_config(file_values, flags or {})


def effective_workers(config: RunConfig) -> int:
    """Worker count after the optional environment override."""
    raw = os.environ.get(WORKERS_ENV)
    if raw is None or raw == "":
        return config.workers
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return workers
