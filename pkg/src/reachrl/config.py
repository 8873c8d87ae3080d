"""Structured config documents (YAML).

A user document is layered over ``data/default.yaml``: the ``env``, ``ppo``,
``ik`` and ``camera`` sections merge key by key, while a ``chain`` section
replaces the default chain wholesale (a half-specified robot is never useful).
"""
import copy
from importlib import resources
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration documents."""


def default_config():
    text = resources.files("reachrl").joinpath("data/default.yaml").read_text()
    return yaml.safe_load(text)


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def merge_config(override):
    """Return the default config with ``override`` (a dict) layered on top."""
    if override is None:
        return default_config()
    if not isinstance(override, dict):
        raise ConfigError("config document must be a mapping at top level")
    base = default_config()
    chain = override.get("chain")
    merged = _merge(base, {k: v for k, v in override.items() if k != "chain"})
    if chain is not None:
        merged["chain"] = copy.deepcopy(chain)
    return merged


def load_config(path=None):
    """Load a config file and merge it over the defaults.

    ``path=None`` returns the defaults. Missing files and YAML syntax errors
    raise :class:`ConfigError`.
    """
    if path is None:
        return default_config()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return merge_config(doc or {})
