"""Flat key=value run configuration files.

Every line is blank, a '#' comment, or "key = value". Keys must name a field
of the config dataclass being overridden (plus any extra keys the command
registers, e.g. variant/roi/policy for tracking); anything else is an error.
Values are coerced to the field's type.
"""

import dataclasses
from pathlib import Path

from .imageio import DataError


def parse_config_file(path):
    """Ordered {key: raw string value} from a config file."""
    pairs = {}
    path = Path(path)
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected 'key = value', got "
                            f"'{stripped}'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if not key or not value:
            raise DataError(f"{path}:{lineno}: empty key or value")
        pairs[key] = value
    return pairs


def _coerce(value, target_type, key):
    try:
        if target_type is bool:
            lowered = value.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return target_type(value)
    except ValueError:
        raise DataError(f"config key '{key}': cannot parse '{value}' as "
                        f"{target_type.__name__}") from None


def apply_overrides(cfg_class, pairs, extra_keys=(), **fixed):
    """Build cfg_class from defaults plus overrides from `pairs`.

    Returns (config, {extra_key: value}). Keys in extra_keys are collected
    for the caller instead of being config fields; unknown keys are errors.
    """
    fields = {f.name: f.type for f in dataclasses.fields(cfg_class)}
    kwargs = dict(fixed)
    extras = {}
    for key, raw in pairs.items():
        if key in extra_keys:
            extras[key] = raw
        elif key in fields:
            ftype = _TYPE_NAMES.get(fields[key], fields[key])
            kwargs[key] = _coerce(raw, ftype, key)
        else:
            known = sorted(list(fields) + list(extra_keys))
            raise DataError(f"unknown config key '{key}' (known keys: "
                            f"{', '.join(known)})")
    return cfg_class(**kwargs), extras


# dataclass fields carry string annotations when the module uses them; map
# the ones our configs use
_TYPE_NAMES = {"int": int, "float": float, "str": str, "bool": bool}
