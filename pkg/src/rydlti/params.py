"""Sensor configuration: physical parameters, config-file keys and validation."""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from scipy import constants

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TWO_PI = 2.0 * math.pi
AMU = constants.physical_constants["atomic mass constant"][0]


class ConfigError(ValueError):
    """Raised for missing, malformed or unphysical configuration values."""


@dataclass(frozen=True)
class SensorParams:
    """One sensor configuration in SI angular units (rad/s, m, K, kg)."""

    omega_p: float
    omega_c: float
    omega_lo: float
    delta_p: float
    delta_c: float
    delta_rf: float
    gamma_21: float
    gamma_32: float
    gamma_t: float
    gamma_dsg: float
    gamma_dsr: float
    lambda_p: float
    lambda_c: float
    temperature: float
    atom_mass: float

    @property
    def gamma_tilde(self) -> float:
        return self.gamma_dsg + self.gamma_t

    @property
    def sigma_v(self) -> float:
        """Thermal velocity scale ``sqrt(2 k_B T / m)`` in m/s."""
        return math.sqrt(2.0 * constants.k * self.temperature / self.atom_mass)

    def replace(self, **changes) -> "SensorParams":
        values = asdict(self)
        values.update(changes)
        return SensorParams(**values)

    def to_config(self) -> dict[str, float]:
        """Inverse of :func:`validate_params`: flat config dict in file units."""
        out = {}
        for key, (name, scale) in CONFIG_KEYS.items():
            # 15 significant digits hide the 2*pi round trip
            out[key] = float(f"{getattr(self, name) / scale:.15g}")
        return out


# config key -> (SensorParams field, multiplier into SI/angular units)
CONFIG_KEYS: dict[str, tuple[str, float]] = {
    "Omega_p_Hz": ("omega_p", TWO_PI),
    "Omega_c_Hz": ("omega_c", TWO_PI),
    "Omega_LO_Hz": ("omega_lo", TWO_PI),
    "Delta_p_Hz": ("delta_p", TWO_PI),
    "Delta_c_Hz": ("delta_c", TWO_PI),
    "Delta_RF_Hz": ("delta_rf", TWO_PI),
    "Gamma_21_Hz": ("gamma_21", TWO_PI),
    "Gamma_32_Hz": ("gamma_32", TWO_PI),
    "gamma_t_Hz": ("gamma_t", TWO_PI),
    "gamma_dsg_Hz": ("gamma_dsg", TWO_PI),
    "gamma_dsr_Hz": ("gamma_dsr", TWO_PI),
    "lambda_p_nm": ("lambda_p", 1e-9),
    "lambda_c_nm": ("lambda_c", 1e-9),
    "temperature_K": ("temperature", 1.0),
    "atom_mass_amu": ("atom_mass", AMU),
}

_NONNEGATIVE = {"omega_p", "omega_c", "omega_lo", "gamma_21", "gamma_32",
                "gamma_t", "gamma_dsg", "gamma_dsr"}
_POSITIVE = {"lambda_p", "lambda_c", "temperature", "atom_mass"}


def _flatten_sections(raw: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for key, value in raw.items():
        if isinstance(value, Mapping):
            for sub_key, sub_value in _flatten_sections(value).items():
                if sub_key in flat:
                    raise ConfigError(f"key {sub_key!r} given more than once")
                flat[sub_key] = sub_value
        else:
            if key in flat:
                raise ConfigError(f"key {key!r} given more than once")
            flat[key] = value
    return flat


def _check(params: SensorParams) -> SensorParams:
    for f in fields(params):
        value = getattr(params, f.name)
        if not math.isfinite(value):
            raise ConfigError(f"{f.name} must be finite, got {value!r}")
        if f.name in _NONNEGATIVE and value < 0:
            raise ConfigError(f"{f.name} must be >= 0, got {value!r}")
        if f.name in _POSITIVE and value <= 0:
            raise ConfigError(f"{f.name} must be > 0, got {value!r}")
    return params


def validate_params(raw: Mapping[str, Any] | SensorParams) -> SensorParams:
    """Normalize a config mapping (Hz, nm, K, amu) into :class:`SensorParams`.

    Sections are allowed and flattened; unknown keys are rejected so typos do
    not silently fall back to anything.  An existing ``SensorParams`` is only
    re-checked.
    """
    if isinstance(raw, SensorParams):
        return _check(raw)
    flat = _flatten_sections(raw)
    unknown = sorted(set(flat) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in CONFIG_KEYS if k not in flat]
    if missing:
        raise ConfigError(f"missing required config keys: {', '.join(missing)}")
    values = {}
    for key, (name, scale) in CONFIG_KEYS.items():
        value = flat[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{key} must be finite, got {value!r}")
        values[name] = value * scale
    try:
        return _check(SensorParams(**values))
    except ConfigError as exc:
        name = str(exc).split(" ", 1)[0]
        key = next(k for k, (n, _) in CONFIG_KEYS.items() if n == name)
        raise ConfigError(f"{key}: {exc}") from None


def load_config(path: str | Path | None = None) -> SensorParams:
    """Read a TOML config file; ``None`` loads the bundled default."""
    if path is None:
        text = resources.files("rydlti").joinpath("data/default.toml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return validate_params(raw)


def default_params() -> SensorParams:
    return load_config(None)
