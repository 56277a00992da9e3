"""Flat key/value view of :class:`FederationConfig`.

Sweeps, config files and CLI flags all address settings through the same
flat keys, e.g. ``{"epsilon": 0.75, "alpha": 0.1}``.
"""

from __future__ import annotations

from dataclasses import replace

from lazyfilter.errors import InvalidInput


def _alpha(v):
    if v is None or (isinstance(v, str) and v.lower() in ("iid", "none", "inf")):
        return None
    v = float(v)
    if v == float("inf"):
        return None
    return v


def _bool(v):
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("1", "true", "yes", "on"):
        return True
    if isinstance(v, str) and v.lower() in ("0", "false", "no", "off"):
        return False
    if v in (0, 1):
        return bool(v)
    raise ValueError(f"not a boolean: {v!r}")


def _int(v):
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(f"not an integer: {v!r}")
    return int(v)


# key -> (parser, (section, field)); section None means a top-level field
FEDERATION_KEYS = {
    "participants": (_int, ("partition", "participant_count")),
    "train_batch": (_int, ("partition", "train_batch_size")),
    "test_size": (_int, ("partition", "test_set_size")),
    "alpha": (_alpha, ("partition", "dirichlet_alpha")),
    "warmup_fraction": (float, ("partition", "warmup_fraction")),
    "test_distribution": (str, ("partition", "test_distribution")),
    "corrupt_frac": (float, ("corruption", "corrupt_participant_fraction")),
    "corrupt_points": (float, ("corruption", "corrupt_point_fraction")),
    "epochs": (_int, ("train_cfg", "local_epochs")),
    "lr": (float, ("train_cfg", "learning_rate")),
    "clip": (float, ("noise_cfg", "clip_threshold")),
    "sigma": (float, ("noise_cfg", "noise_multiplier")),
    "final_epochs": (_int, ("final_cfg", "local_epochs")),
    "final_lr": (float, ("final_cfg", "learning_rate")),
    "epsilon": (float, (None, "epsilon_target")),
    "master_seed": (_int, (None, "master_seed")),
    "rounds": (_int, (None, "rounds")),
    "warmup_weight_decay": (float, (None, "warmup_weight_decay")),
    "hidden": (_int, (None, "hidden")),
    "bias": (_bool, (None, "bias")),
}


def apply_overrides(cfg, overrides: dict):
    """Return a copy of ``cfg`` with flat-key overrides applied and validated."""
    by_section: dict = {}
    for key, raw in overrides.items():
        if key not in FEDERATION_KEYS:
            raise InvalidInput(f"unknown config key {key!r}")
        parse, (section, name) = FEDERATION_KEYS[key]
        try:
            value = parse(raw)
        except (TypeError, ValueError) as e:
            raise InvalidInput(f"bad value for {key!r}: {e}") from None
        by_section.setdefault(section, {})[name] = value
    top = by_section.pop(None, {})
    for section, fields in by_section.items():
        top[section] = replace(getattr(cfg, section), **fields)
    return replace(cfg, **top)


def to_flat(cfg) -> dict:
    out = {}
    for key, (_, (section, name)) in FEDERATION_KEYS.items():
        obj = cfg if section is None else getattr(cfg, section)
        out[key] = getattr(obj, name)
    return out
