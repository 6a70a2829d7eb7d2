"""Scenario files: INI with dotted section.key names, or JSON.

INI example::

    [scenario]
    devices = 16
    data_split = dirichlet

    [config]
    varpi = 2e-4
    T_max = 50

JSON may nest the same sections (``{"config": {"varpi": 2e-4}}``) or use flat
dotted keys (``{"config.varpi": 2e-4}``). Every key is optional; absent keys
take the defaults in ``SCHEMA``. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .codec import CompressionConfig
from .models import AccuracyModel, SystemConfig, dbm_per_hz_to_watts
from .scenario import ChannelMode, DataSplit, DeviceDistributions, Scenario, sample_scenario


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class Key:
    kind: type
    default: Any
    check: Callable[[Any], bool] | None = None
    rule: str = ""
    choices: tuple = ()


def _positive(v):
    return v > 0 and math.isfinite(v)


def _non_negative(v):
    return v >= 0 and math.isfinite(v)


POS = dict(check=_positive, rule="must be > 0")
NONNEG = dict(check=_non_negative, rule="must be >= 0")

_dist = DeviceDistributions()
_sys = SystemConfig(total_data=1)
_acc = AccuracyModel()
_codec = CompressionConfig()

SCHEMA: dict[str, Key] = {
    "scenario.devices": Key(int, 16, lambda v: v >= 1, "must be >= 1"),
    "scenario.seed": Key(int, 0, lambda v: v >= 0, "must be >= 0"),
    "scenario.data_split": Key(str, DataSplit.IID.value, choices=tuple(m.value for m in DataSplit)),
    "scenario.total_samples": Key(int, 50_000, lambda v: v >= 1, "must be >= 1"),
    "scenario.channel_mode": Key(str, ChannelMode.STATIC.value, choices=tuple(m.value for m in ChannelMode)),
    "config.S": Key(float, _sys.S, **POS),
    "config.W": Key(float, _sys.W, **POS),
    "config.n": Key(int, _sys.n, lambda v: v >= 1, "must be >= 1"),
    "config.N0_dbm_per_hz": Key(float, -114.0, math.isfinite, "must be finite"),
    "config.T_max": Key(float, _sys.T_max, **POS),
    "config.J": Key(int, _sys.J, lambda v: v >= 1, "must be >= 1"),
    "config.varpi": Key(float, _sys.varpi, **NONNEG),
    "config.alpha_max": Key(float, _sys.alpha_max, lambda v: v >= 1 and math.isfinite(v), "must be >= 1"),
    "accuracy.kappa1": Key(float, _acc.kappa1, **NONNEG),
    "accuracy.kappa2": Key(float, _acc.kappa2, **POS),
    "accuracy.kappa3": Key(float, _acc.kappa3, **NONNEG),
    "accuracy.kappa4": Key(float, _acc.kappa4, math.isfinite, "must be finite"),
    "accuracy.clamp_epsilon": Key(float, _acc.clamp_epsilon, **POS),
    "codec.levels_conv": Key(int, _codec.levels_conv, lambda v: v >= 2 and v & (v - 1) == 0, "must be a power of two >= 2"),
    "codec.levels_fc": Key(int, _codec.levels_fc, lambda v: v >= 2 and v & (v - 1) == 0, "must be a power of two >= 2"),
    "toy.samples_per_device": Key(int, 32, lambda v: v >= 8, "must be >= 8"),
    "toy.learning_rate": Key(float, 0.02, **POS),
    "toy.fixed_alpha": Key(float, 0.0, lambda v: v == 0 or v >= 1, "must be 0 (use the plan) or >= 1"),
}
for _name in ("epsilon", "f_max", "bandwidth", "power", "spectral_efficiency"):
    _lo, _hi = getattr(_dist, _name)
    SCHEMA[f"distributions.{_name}_min"] = Key(float, _lo, **POS)
    SCHEMA[f"distributions.{_name}_max"] = Key(float, _hi, **POS)


def _coerce(key: str, raw) -> Any:
    spec = SCHEMA[key]
    try:
        if spec.kind is int:
            if isinstance(raw, bool):
                raise ValueError
            if isinstance(raw, float):
                if not raw.is_integer():
                    raise ValueError
                value = int(raw)
            else:
                value = int(str(raw).strip())
        elif spec.kind is float:
            if isinstance(raw, bool):
                raise ValueError
            value = float(str(raw).strip()) if isinstance(raw, str) else float(raw)
        else:
            value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected {spec.kind.__name__}, got {raw!r}") from None
    if spec.choices and value not in spec.choices:
        raise ConfigError(key, f"must be one of {', '.join(spec.choices)}, got {value!r}")
    if spec.check is not None and not spec.check(value):
        raise ConfigError(key, f"{spec.rule}, got {value!r}")
    return value


def _read_file(path: Path) -> dict[str, Any]:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ConfigError(None, f"scenario file not found: {path}") from None
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ConfigError(None, f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(None, f"{path}: top level must be an object")
        flat = {}
        for k, v in data.items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    flat[f"{k}.{kk}"] = vv
            else:
                flat[k] = v
        return flat
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keep T_max, S, W case
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(None, f"{path}: {exc}") from None
    return {f"{sec}.{k}": v for sec in parser.sections() for k, v in parser.items(sec)}


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(key.strip() or None, "override must look like key=value")
        out[key.strip()] = value.strip()
    return out


def resolve(path: str | Path | None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Merged, typed key map: defaults, then file values, then overrides."""
    raw = _read_file(Path(path)) if path is not None else {}
    raw.update(overrides or {})
    values = {k: s.default for k, s in SCHEMA.items()}
    for key, v in raw.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
        values[key] = _coerce(key, v)
    for name in ("epsilon", "f_max", "bandwidth", "power", "spectral_efficiency"):
        lo, hi = values[f"distributions.{name}_min"], values[f"distributions.{name}_max"]
        if lo > hi:
            raise ConfigError(f"distributions.{name}_min", f"must not exceed distributions.{name}_max ({lo} > {hi})")
    if values["scenario.total_samples"] < values["scenario.devices"]:
        raise ConfigError("scenario.total_samples", "must be at least scenario.devices")
    return values


def build_scenario(values: dict[str, Any], seed: int | None = None) -> Scenario:
    dist = DeviceDistributions(**{
        name: (values[f"distributions.{name}_min"], values[f"distributions.{name}_max"])
        for name in ("epsilon", "f_max", "bandwidth", "power", "spectral_efficiency")
    })
    model = AccuracyModel(**{k: values[f"accuracy.{k}"] for k in ("kappa1", "kappa2", "kappa3", "kappa4", "clamp_epsilon")})
    return sample_scenario(
        values["scenario.devices"],
        values["scenario.seed"] if seed is None else seed,
        data_split=values["scenario.data_split"],
        total_samples=values["scenario.total_samples"],
        channel_mode=values["scenario.channel_mode"],
        distributions=dist,
        accuracy_model=model,
        S=values["config.S"],
        W=values["config.W"],
        n=values["config.n"],
        N0=dbm_per_hz_to_watts(values["config.N0_dbm_per_hz"]),
        T_max=values["config.T_max"],
        J=values["config.J"],
        varpi=values["config.varpi"],
        alpha_max=values["config.alpha_max"],
    )


def parse_config(path: str | Path | None, overrides: dict[str, Any] | None = None, seed: int | None = None) -> Scenario:
    return build_scenario(resolve(path, overrides), seed)


def compression_config(values: dict[str, Any]) -> CompressionConfig:
    return CompressionConfig(levels_conv=values["codec.levels_conv"], levels_fc=values["codec.levels_fc"])


@dataclass(frozen=True)
class RunConfig:
    command: str
    scenario_path: str | None
    overrides: dict[str, str] = field(default_factory=dict)
    output_dir: str = "."
    seed: int | None = None
