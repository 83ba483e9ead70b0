"""Optimization: the base/speech/speaker parameter partition, Adam with
per-parameter moment state, the tri-stage learning-rate schedule, elementwise
gradient clipping with both placements, and the freeze schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EXTRACTOR_PREFIX = "encoder.extractor."

BEFORE_SUM = "before_sum"
AFTER_SUM = "after_sum"


@dataclass
class ParameterPartition:
    """Named parameter groups; the feature-extractor subgroup of base is
    permanently frozen."""

    base: dict
    speech: dict
    speaker: dict

    def __post_init__(self):
        names = [set(self.base), set(self.speech), set(self.speaker)]
        for i in range(3):
            for j in range(i + 1, 3):
                overlap = names[i] & names[j]
                if overlap:
                    raise ValueError(f"parameter groups overlap: {sorted(overlap)[:3]}")

    @property
    def extractor_names(self):
        return {n for n in self.base if n.startswith(EXTRACTOR_PREFIX)}

    def groups(self):
        return {"base": self.base, "speech": self.speech, "speaker": self.speaker}

    def all_params(self):
        merged = {}
        for g in (self.base, self.speech, self.speaker):
            merged.update(g)
        return merged

    def trainable_names(self, active_groups):
        """Union of the active groups minus the always-frozen extractor."""
        out = set()
        for g in active_groups:
            out |= set(self.groups()[g])
        return out - self.extractor_names

    @classmethod
    def from_model(cls, model):
        params = model.named_parameters()
        base = {n: p for n, p in params.items() if n.startswith("encoder.")}
        speech = {n: p for n, p in params.items() if n.startswith("speech_head.")}
        speaker = {n: p for n, p in params.items() if n.startswith("speaker_head.")}
        leftover = set(params) - set(base) - set(speech) - set(speaker)
        if leftover:
            raise ValueError(f"parameters outside the partition: {sorted(leftover)[:3]}")
        return cls(base, speech, speaker)


@dataclass
class ScheduleConfig:
    peak_lr: float = 5e-4
    total_steps: int = 200000
    warmup_frac: float = 0.10
    const_frac: float = 0.40
    decay_frac: float = 0.50
    init_scale: float = 0.01
    final_scale: float = 0.05

    def __post_init__(self):
        if abs(self.warmup_frac + self.const_frac + self.decay_frac - 1.0) > 1e-9:
            raise ValueError("schedule phase fractions must sum to 1")
        for s in (self.init_scale, self.final_scale):
            if not 0.0 < s <= 1.0:
                raise ValueError(f"schedule scales must be in (0, 1], got {s}")


def lr_at(step, cfg):
    """Tri-stage rate: linear warmup, constant hold, exponential decay,
    clamped at final_scale * peak after total_steps."""
    if step < 0:
        raise ValueError(f"negative step {step}")
    warm = int(round(cfg.total_steps * cfg.warmup_frac))
    const = int(round(cfg.total_steps * cfg.const_frac))
    if step < warm:
        frac = step / warm
        return cfg.peak_lr * (cfg.init_scale + (1.0 - cfg.init_scale) * frac)
    if step < warm + const:
        return cfg.peak_lr
    decay_len = cfg.total_steps - warm - const
    if decay_len <= 0 or step >= cfg.total_steps:
        return cfg.peak_lr * cfg.final_scale
    progress = (step - warm - const) / decay_len
    return cfg.peak_lr * cfg.final_scale ** progress


def clip_array(g, bound=1.0):
    """Elementwise clamp to [-bound, bound]."""
    if bound <= 0:
        raise ValueError(f"clip bound must be positive, got {bound}")
    return np.clip(g, -bound, bound)


def combine_task_grads(grads_s, grads_k, placement, bound=1.0):
    """Merge per-task gradient dicts per the clipping placement.

    before_sum clips each task's gradient first and sums the clipped values;
    after_sum sums first and clips the total. Parameters present in only one
    task come out identically under both placements.
    """
    if placement not in (BEFORE_SUM, AFTER_SUM):
        raise ValueError(f"unknown clip placement {placement!r}")
    out = {}
    for name in set(grads_s) | set(grads_k):
        gs = grads_s.get(name)
        gk = grads_k.get(name)
        if placement == BEFORE_SUM:
            parts = [clip_array(g, bound) for g in (gs, gk) if g is not None]
            out[name] = parts[0] if len(parts) == 1 else parts[0] + parts[1]
        else:
            total = gs if gk is None else (gk if gs is None else gs + gk)
            out[name] = clip_array(total, bound)
    return out


class Adam:
    """Adam with bias correction. Moment state and the per-parameter step
    count advance only on steps where the parameter is actually updated, so
    unfreezing never applies stale moments."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.t = {n: 0 for n in self.params}

    def step(self, lr, trainable_names):
        for name in sorted(trainable_names):
            p = self.params[name]
            if p.grad is None:
                raise RuntimeError(f"missing gradient for unfrozen parameter {name!r}")
            g = p.grad
            self.t[name] += 1
            t = self.t[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1 ** t)
            v_hat = self.v[name] / (1.0 - self.beta2 ** t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def freeze_mask(step, freeze_base_until=3000):
    """Trainable groups at a step: heads only while the base is frozen."""
    if step < freeze_base_until:
        return {"speech", "speaker"}
    return {"base", "speech", "speaker"}


def zero_grads(params):
    for p in params.values():
        p.grad = None


def ensure_grads(params, names):
    """Zero-fill missing gradients (a LayerDrop-skipped layer gets no grad)."""
    for name in names:
        p = params[name]
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
