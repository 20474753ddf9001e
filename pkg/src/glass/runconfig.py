"""Sectioned key-value run configuration with a strict schema.

Unknown sections or keys are hard errors so configs cannot drift silently;
every run echoes its fully resolved config (all defaults filled in) beside
its outputs, and re-running from that echo reproduces the outputs.
"""

from __future__ import annotations

import configparser
import io
from typing import Any

from .errors import ConfigError

# section -> key -> (python type, default)
SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "synth": {
        "subjects": (int, 12),
        "val_subjects": (int, 3),
        "duration_s": (float, 120.0),
        "fps": (float, 30.0),
        "n_regimes": (int, 6),
        "components": (int, 2),
        "amp_lo": (float, 0.2),
        "amp_hi": (float, 1.2),
        "freq_lo": (float, 0.1),
        "freq_hi": (float, 0.45),
        "offset_lo": (float, -0.5),
        "offset_hi": (float, 0.5),
        "noise_scale": (float, 1.0),
        "ou_theta": (float, 2.0),
        "ou_sigma": (float, 0.08),
        "blink_rate_hz": (float, 0.02),
        "vad_noise": (float, 0.02),
        "behavior_amp_threshold": (float, 0.75),
        "seed": (int, 0),
    },
    "data": {
        "fps": (float, 30.0),
        "stride": (int, 151),
    },
    "model": {
        "size": (str, "small"),
        "input_seconds": (float, 5.0),
        "output_seconds": (float, 5.0),
        "patch": (int, 15),
    },
    "pretrain": {
        "base_lr": (float, 3e-4),
        "warmup_steps": (int, 3000),
        "weight_decay": (float, 1e-4),
        "total_steps": (int, 10000),
        "batch_size": (int, 32),
        "clip_norm": (float, 1.0),
        "eval_every": (int, 100),
        "seed": (int, 0),
    },
    "loss": {
        "velocity_weight": (float, 0.2),
        "huber_delta": (float, 1.0),
    },
    "schedule": {
        "end_fraction": (float, 0.6),
    },
    "finetune": {
        "task": (str, "vad"),
        "head": (str, "gru"),
        "chunk_seconds": (float, 1.0),
        "input_seconds": (float, 5.0),
        "lr": (float, 1e-2),
        "warmup_steps": (int, 20),
        "steps": (int, 300),
        "batch_size": (int, 32),
        "weight_decay": (float, 1e-4),
        "seeds": (int, 5),
        "joint": (bool, False),
    },
    "baseline": {
        "kind": (str, "stats_eyes"),
        "task": (str, "vad"),
        "input_seconds": (float, 5.0),
        "lr": (float, 1e-2),
        "warmup_steps": (int, 20),
        "steps": (int, 300),
        "batch_size": (int, 32),
        "weight_decay": (float, 1e-4),
        "seeds": (int, 5),
    },
}


def _parse_value(raw: str, typ: type, where: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


class RunConfig:
    """Resolved configuration values, addressed as cfg['section']['key']."""

    def __init__(self, values: dict[str, dict[str, Any]]):
        self.values = values

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def load(cls, path) -> "RunConfig":
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are case-sensitive
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        cfg = cls.defaults()
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                typ = SCHEMA[section][key][0]
                cfg.values[section][key] = _parse_value(raw, typ, f"[{section}] {key}")
        return cfg

    def resolved_text(self) -> str:
        out = io.StringIO()
        for section in SCHEMA:
            out.write(f"[{section}]\n")
            for key in SCHEMA[section]:
                value = self.values[section][key]
                if isinstance(value, bool):
                    value = "true" if value else "false"
                elif isinstance(value, float):
                    value = repr(value)
                out.write(f"{key} = {value}\n")
            out.write("\n")
        return out.getvalue()

    def write_resolved(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.resolved_text())
