"""Task losses: CTC over blank-interleaved targets, AAM-softmax on cosine
logits, and their weighted combination.

The CTC forward runs the alpha recursion in log space through the autodiff
graph, so its gradient comes from the engine rather than a hand-derived
alpha-beta pass; the finite-difference and enumeration oracles check it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus.vocab import BLANK


@dataclass
class LossWeights:
    lambda_s: float = 0.5
    lambda_k: float = 0.5

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_k < 0:
            raise ValueError(f"loss weights must be nonnegative, got ({self.lambda_s}, {self.lambda_k})")
        if abs(self.lambda_s + self.lambda_k - 1.0) > 1e-9:
            raise ValueError(f"loss weights must sum to 1, got {self.lambda_s} + {self.lambda_k}")


@dataclass
class LossReport:
    total: float
    speech: float | None
    speaker: float | None
    iteration: int


class CtcInfeasibleError(ValueError):
    """The target cannot be emitted in the available frames (infinite loss)."""


def ctc_required_frames(target):
    """Minimum frame count: one per token plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _shift_right(t, k, B, S):
    """Shift state axis right by k, filling with -inf."""
    pad = T.Tensor(np.full((B, min(k, S)), -np.inf))
    if S - k <= 0:
        return pad
    return T.concat([pad, t[:, :S - k]], axis=1)


def ctc_loss(log_probs, frame_lengths, targets, blank=BLANK):
    """Mean over utterances of -log P(target | log_probs).

    log_probs: (B, m, V) or (m, V) Tensor of per-frame log-probabilities;
    frame_lengths: true frame count per item; targets: token id sequences.
    """
    lp = T.as_tensor(log_probs)
    if lp.ndim == 2:
        lp = T.reshape(lp, (1,) + lp.shape)
        frame_lengths = [frame_lengths] if np.isscalar(frame_lengths) else frame_lengths
        if targets and np.isscalar(targets[0]):
            targets = [targets]
    B, m, V = lp.shape
    frame_lengths = np.asarray(frame_lengths, dtype=np.int64)
    if len(targets) != B or len(frame_lengths) != B:
        raise ValueError(f"batch size mismatch: {B} logit rows, {len(targets)} targets")
    if blank != BLANK:
        raise ValueError(f"blank index must be {BLANK}")

    for b, y in enumerate(targets):
        if any(t == blank for t in y):
            raise ValueError(f"target {b} contains the blank token")
        if any(not 0 < t < V for t in y):
            raise ValueError(f"target {b} has token ids outside 1..{V - 1}")
        need = ctc_required_frames(y)
        if frame_lengths[b] < need:
            raise CtcInfeasibleError(
                f"target {b} needs {need} frames but only {frame_lengths[b]} are available"
            )
        if frame_lengths[b] > m:
            raise ValueError(f"frame length {frame_lengths[b]} exceeds logit rows {m}")

    S = max(2 * len(y) + 1 for y in targets)
    ext = np.zeros((B, S), dtype=np.int64)
    n_states = np.zeros(B, dtype=np.int64)
    for b, y in enumerate(targets):
        n_states[b] = 2 * len(y) + 1
        ext[b, 1:n_states[b]:2] = y

    pos = np.arange(S)[None, :]
    state_ok = pos < n_states[:, None]
    # a jump from s-2 is legal only onto a non-blank that differs from ext[s-2]
    allow2 = (pos % 2 == 1) & (pos >= 2) & state_ok
    allow2[:, 2:] &= ext[:, 2:] != ext[:, :-2]
    log_allow2 = np.where(allow2, 0.0, -np.inf)
    log_state_ok = np.where(state_ok, 0.0, -np.inf)
    init = np.full((B, S), -np.inf)
    init[:, 0] = 0.0
    if S > 1:
        init[n_states > 1, 1] = 0.0

    # (B, m, S): frame log-probs gathered at the extended-target symbols
    per_state = T.gather(lp, np.broadcast_to(ext[:, None, :], (B, m, S)), axis=2)

    alpha = per_state[:, 0, :] + T.Tensor(init)
    alphas = [alpha]
    for t in range(1, int(frame_lengths.max())):
        prev = alphas[-1]
        stay = prev
        step1 = _shift_right(prev, 1, B, S)
        step2 = _shift_right(prev, 2, B, S) + T.Tensor(log_allow2)
        alpha = T.logaddexp(T.logaddexp(stay, step1), step2) + per_state[:, t, :]
        alpha = alpha + T.Tensor(log_state_ok)
        alphas.append(alpha)

    per_item = []
    for b in range(B):
        last = alphas[frame_lengths[b] - 1]
        s_last = int(n_states[b]) - 1
        end = last[b, s_last]
        if s_last >= 1:
            end = T.logaddexp(end, last[b, s_last - 1])
        per_item.append(T.reshape(end, (1,)))
    nll = -T.tmean(T.concat(per_item, axis=0))
    if not np.isfinite(nll.data):
        raise CtcInfeasibleError("CTC loss is not finite; check frame lengths against targets")
    return nll


def aam_softmax_loss(cos_logits, target, scale=30.0, margin=0.2):
    """Additive angular margin softmax on cosine logits.

    The target logit cos(theta) becomes cos(theta + margin) via the angle
    addition formula, falling back to cos(theta) - margin*sin(margin) when
    theta + margin would pass pi. Everything is scaled and cross-entropied.
    """
    z = T.as_tensor(cos_logits)
    target = np.asarray(target, dtype=np.int64)
    B, n = z.shape
    if np.any(np.abs(z.data) > 1.0 + 1e-6):
        raise ValueError("cosine logits outside [-1, 1]; inputs look un-normalized")
    if np.any((target < 0) | (target >= n)):
        raise ValueError(f"target class outside 0..{n - 1}")

    cos_m = math.cos(margin)
    sin_m = math.sin(margin)
    sin_t = T.maximum(1.0 - z * z, 0.0) ** 0.5
    phi = z * cos_m - sin_t * sin_m
    easy = (z.data > math.cos(math.pi - margin)).astype(np.float64)
    phi = phi * T.Tensor(easy) + (z - margin * sin_m) * T.Tensor(1.0 - easy)

    onehot = np.zeros((B, n))
    onehot[np.arange(B), target] = 1.0
    adjusted = z * T.Tensor(1.0 - onehot) + phi * T.Tensor(onehot)
    logp = T.log_softmax(adjusted * scale, axis=-1)
    picked = T.gather(logp, target[:, None], axis=1)
    return -T.tmean(picked)


def combine(loss_s, loss_k, weights, iteration=0):
    """Weighted Eq-style total; absent losses contribute 0 with weight 0.

    Returns (total Tensor, LossReport). NaN inputs fail fast.
    """
    lam_s = weights.lambda_s if loss_s is not None else 0.0
    lam_k = weights.lambda_k if loss_k is not None else 0.0
    for name, l in (("speech", loss_s), ("speaker", loss_k)):
        if l is not None and np.isnan(l.data):
            raise ValueError(f"{name} loss is NaN at iteration {iteration}")
    total = None
    if loss_s is not None:
        total = lam_s * loss_s
    if loss_k is not None:
        part = lam_k * loss_k
        total = part if total is None else total + part
    if total is None:
        raise ValueError("combine needs at least one loss")
    report = LossReport(
        total=float(total.data),
        speech=None if loss_s is None else float(loss_s.data),
        speaker=None if loss_k is None else float(loss_k.data),
        iteration=iteration,
    )
    return total, report
