"""Run configuration: defaults, flat dotted-key config files, overrides.

Config files are plain text, one `section.key = value` per line, `#`
comments. Tuples are comma-separated. Unknown keys are rejected. Flags
given on the command line override file values.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from typing import Optional

from .features import PipelineLimits
from .model import ModelConfig
from .synth import WorldSpec
from .training import TrainConfig


@dataclass
class RunConfig:
    world: WorldSpec = field(default_factory=lambda: WorldSpec(seed=0))
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    pipeline: PipelineLimits = field(default_factory=PipelineLimits)
    n_qas: int = 0            # 0 -> 12 QAs per scene
    baseline: str = ""

    def resolved_n_qas(self) -> int:
        return self.n_qas if self.n_qas > 0 else 12 * self.world.n_scenes


_SECTIONS = ("world", "model", "train", "pipeline")


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}: line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(current, value: str, key: str):
    if isinstance(current, bool) or (current is None and value.lower() in
                                     ("true", "false")):
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if current and isinstance(current[0], str):
            return tuple(parts)
        if current and isinstance(current[0], float):
            return tuple(float(p) for p in parts)
        return tuple(int(p) for p in parts)
    if current is None:
        if value.lower() in ("none", ""):
            return None
        try:
            return float(value)
        except ValueError:
            return tuple(p.strip() for p in value.split(","))
    return value


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Apply dotted-key overrides; unknown keys raise ValueError."""
    world, model, train, pipeline = cfg.world, cfg.model, cfg.train, cfg.pipeline
    n_qas, baseline = cfg.n_qas, cfg.baseline
    sections = {"world": world, "model": model, "train": train, "pipeline": pipeline}
    pending: dict[str, dict] = {name: {} for name in _SECTIONS}
    for key, value in overrides.items():
        if key == "n_qas":
            n_qas = int(value)
            continue
        if key == "baseline":
            baseline = value
            continue
        if "." not in key:
            raise ValueError(f"unknown config key {key!r}")
        section, name = key.split(".", 1)
        if section not in sections:
            raise ValueError(f"unknown config section {section!r}")
        target = sections[section]
        names = {f.name for f in dataclasses.fields(target)}
        if name not in names:
            raise ValueError(f"unknown config key {key!r}")
        pending[section][name] = _coerce(getattr(target, name), value, key)
    if pending["world"]:
        world = replace(world, **pending["world"])
    if pending["pipeline"]:
        pipeline = replace(pipeline, **pending["pipeline"])
    if pending["model"]:
        model = replace(model, **pending["model"])
    if pending["train"]:
        train = replace(train, **pending["train"])
    return RunConfig(world=world, model=model, train=train, pipeline=pipeline,
                     n_qas=n_qas, baseline=baseline)


def config_echo(cfg: RunConfig) -> dict[str, str]:
    """Flatten to the same dotted keys the config file accepts."""
    out: dict[str, str] = {}
    for section in _SECTIONS:
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif value is None:
                text = "none"
            else:
                text = str(value)
            out[f"{section}.{f.name}"] = text
    out["n_qas"] = str(cfg.n_qas)
    out["baseline"] = cfg.baseline
    return dict(sorted(out.items()))
