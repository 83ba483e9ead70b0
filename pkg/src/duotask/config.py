"""Run configuration: a dataclass tree loaded from JSON with dotted-path
command-line overrides. Unknown keys are rejected, and every run echoes its
fully resolved config for replayability."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .encoder import EncoderConfig
from .heads import HeadConfig
from .losses import LossWeights
from .optim import AFTER_SUM, BEFORE_SUM, ScheduleConfig

MODES = ("stl_asr", "stl_skr", "mtl_joint", "mtl_disjoint")


@dataclass
class LossConfig:
    lambda_s: float = 0.5
    lambda_k: float = 0.5
    aam_scale: float = 30.0
    aam_margin: float = 0.2


@dataclass
class OptimConfig:
    peak_lr: float = 5e-4
    warmup_frac: float = 0.10
    const_frac: float = 0.40
    decay_frac: float = 0.50
    init_scale: float = 0.01
    final_scale: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999  # wav2vec2-scale models use 0.98
    adam_eps: float = 1e-8
    clip_bound: float = 1.0
    clip_placement: str = BEFORE_SUM
    freeze_base_until: int = 3000

    def __post_init__(self):
        if self.clip_placement not in (BEFORE_SUM, AFTER_SUM):
            raise ValueError(f"clip_placement must be before_sum or after_sum, got {self.clip_placement!r}")


@dataclass
class TrainerConfig:
    mode: str = "mtl_disjoint"
    speaker_crop_s: float = 10.0
    speech_batch_samples: int = 320000
    speaker_batch_items: int = 8
    validate_every: int = 5000
    early_stop_patience: int = 40000
    total_steps: int = 200000
    seed: int = 0
    val_eer_crop: str = "train"  # "train" follows speaker_crop_s; or full / first_2s

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class RunConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    heads: HeadConfig = field(default_factory=HeadConfig)
    losses: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def weights(self):
        """Loss weights with single-task modes forcing the absent side to 0."""
        if self.trainer.mode == "stl_asr":
            return LossWeights(1.0, 0.0)
        if self.trainer.mode == "stl_skr":
            return LossWeights(0.0, 1.0)
        return LossWeights(self.losses.lambda_s, self.losses.lambda_k)

    def schedule(self):
        return ScheduleConfig(
            peak_lr=self.optim.peak_lr,
            total_steps=self.trainer.total_steps,
            warmup_frac=self.optim.warmup_frac,
            const_frac=self.optim.const_frac,
            decay_frac=self.optim.decay_frac,
            init_scale=self.optim.init_scale,
            final_scale=self.optim.final_scale,
        )

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        sections = {f.name: f.type for f in dataclasses.fields(cls)}
        unknown = set(data) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in data:
                continue
            kwargs[f.name] = _build_section(f.default_factory, data[f.name], f.name)
        return cls(**kwargs)


def _build_section(factory, values, section):
    if not isinstance(values, dict):
        raise ValueError(f"config section {section!r} must be an object")
    cls = type(factory())
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(names)
    if unknown:
        raise ValueError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
    coerced = {}
    for key, val in values.items():
        if isinstance(val, list):
            val = tuple(val)
        coerced[key] = val
    return cls(**coerced)


def load_config(path=None, overrides=()):
    """JSON file plus key=value dotted overrides, left to right."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config root must be an object")
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.split(".")
        if len(parts) != 2:
            raise ValueError(f"override {item!r} must use section.key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data.setdefault(parts[0], {})[parts[1]] = value
    return RunConfig.from_dict(data)


def dump_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
