"""Flat key=value run configuration with [section] headers.

Every key has a documented default; unknown sections or keys are rejected
with the offending line number.
"""

from __future__ import annotations

import copy

__all__ = ["DEFAULTS", "parse_config", "load_config", "ConfigError"]

# section -> key -> default (type of the default fixes the parsed type)
DEFAULTS = {
    "phantom": {
        "grid_size": 32,
        "n_ellipses_min": 2,
        "n_ellipses_max": 5,
        "mask_threshold": 0.1,
    },
    "coils": {
        "channels": 8,
        "radius": 1.1,
        "falloff": 1.05,
        "use_phases": True,
    },
    "noise": {
        "sigma": 1.0,
        "rho_min": 0.0,
        "rho_max": 0.2,
    },
    "network": {
        "depth": 6,
        "features": 16,
        "kernel_size": 3,
        "leaky_slope": 0.1,
        "bn_momentum": 0.9,
        "bn_eps": 1e-5,
    },
    "training": {
        "epochs": 30,
        "batch_size": 8,
        "base_lr": 1e-4,
        "lr_decay": 0.87,
        "mode": "C2C",
        "whiten": True,
        "normalize": True,
        "slices": 200,
        "val_slices": 20,
        "validate_every": 0,
    },
    "evaluation": {
        "ssim_window": 11,
        "p_threshold": 0.05,
    },
}


class ConfigError(ValueError):
    pass


def _convert(raw, default, where):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {raw!r}") from None
    return raw.strip()


def parse_config(text):
    """Parse config text into a nested dict over DEFAULTS."""
    cfg = copy.deepcopy(DEFAULTS)
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in cfg:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if section is None:
            raise ConfigError(f"line {lineno}: key {key!r} before any [section]")
        if key not in cfg[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in [{section}]")
        cfg[section][key] = _convert(raw, DEFAULTS[section][key], f"line {lineno}")
    return cfg


def load_config(path=None):
    if path is None:
        return copy.deepcopy(DEFAULTS)
    with open(path) as f:
        return parse_config(f.read())
