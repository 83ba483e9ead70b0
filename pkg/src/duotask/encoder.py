"""Shared encoder: frozen convolutional feature extractor, projection,
time/feature masking, convolutional relative positional embedding, and a
pre-norm transformer stack that retains every intermediate layer output.

Frame geometry: the conv stack's strides multiply to 320 samples, one frame
per 20 ms at 16 kHz; the default paddings make a 2 s input come out at
exactly 100 frames. The extractor's parameters are created frozen and are
never updated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv1d, LayerNorm, Linear, Module

FRAME_HOP = 320  # samples per frame at the 20 ms / 16 kHz grid


@dataclass
class EncoderConfig:
    # padding only on the first layer: raw-audio padding coincides with batch
    # zero-padding, so real frames stay independent of batch padding; deeper
    # paddings would leak real samples into the pad region. p=13 makes the
    # stack emit exactly floor(T / 320) frames (100 per 2 s).
    conv_channels: tuple = (32, 32, 64, 64)
    conv_kernels: tuple = (10, 8, 4, 4)
    conv_strides: tuple = (5, 4, 4, 4)
    conv_paddings: tuple = (13, 0, 0, 0)
    dim: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.05
    layerdrop: float = 0.0
    time_mask_prob: float = 0.05
    time_mask_span: int = 10
    feature_mask_prob: float = 0.05
    feature_mask_span: int = 8
    pos_kernel: int = 31
    pos_groups: int = 4

    def __post_init__(self):
        n = len(self.conv_channels)
        if not (len(self.conv_kernels) == len(self.conv_strides) == len(self.conv_paddings) == n):
            raise ValueError("conv stack lists must have equal length")
        total = int(np.prod(self.conv_strides))
        if FRAME_HOP % total != 0:
            raise ValueError(f"total conv stride {total} must divide the {FRAME_HOP}-sample hop")
        if self.dim % self.n_heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.dim % self.pos_groups != 0:
            raise ValueError(f"dim {self.dim} not divisible by pos_groups {self.pos_groups}")

    @classmethod
    def base_scale(cls):
        """The 12-layer configuration; far beyond desk-scale training budgets."""
        return cls(conv_channels=(512, 512, 512, 512), dim=768, n_layers=12, n_heads=8,
                   ffn_dim=3072, dropout=0.1, layerdrop=0.05, pos_kernel=31, pos_groups=16)


@dataclass
class EncoderOutput:
    layers: list            # C^0 .. C^L, each a (B, m, d) Tensor
    valid: np.ndarray       # (B, m) bool, True on real frames
    frame_lengths: np.ndarray  # (B,) int


class FeatureExtractor(Module):
    """Strided 1-D conv stack from waveform to frames; always frozen.

    Convs are bias-free so zero regions stay exactly zero through the stack;
    batch padding and conv padding are then indistinguishable and real frames
    never depend on how much an item was padded."""

    def __init__(self, cfg, rng):
        self.convs = []
        c_in = 1
        for c_out, k, s, p in zip(cfg.conv_channels, cfg.conv_kernels, cfg.conv_strides, cfg.conv_paddings):
            self.convs.append(Conv1d(c_in, c_out, k, rng, stride=s, padding=p, bias=False))
            c_in = c_out
        self.cfg = cfg
        self.freeze()

    def n_frames(self, n_samples):
        t = int(n_samples)
        for k, s, p in zip(self.cfg.conv_kernels, self.cfg.conv_strides, self.cfg.conv_paddings):
            t = T.conv1d_out_len(t, k, s, p)
            if t < 1:
                raise ValueError(f"input of {n_samples} samples is shorter than the receptive field")
        return t

    def __call__(self, samples):
        """samples (B, T) -> frames (B, m, C)."""
        self.n_frames(samples.shape[-1])
        x = T.Tensor(samples[:, None, :])
        for conv in self.convs:
            x = T.gelu(conv(x))
        return T.transpose(x, (0, 2, 1))


def expand_mask_starts(starts, span):
    """Grow boolean start positions into spans along the last axis."""
    mask = starts.copy()
    for k in range(1, span):
        mask[..., k:] |= starts[..., :-k]
    return mask


def apply_masking(frames, mask_emb, cfg, rng):
    """SpecAugment-style masking on (B, m, d) frames during training.

    Masked time steps are replaced by the learned mask embedding; masked
    feature channels are zeroed across all frames of the item.
    """
    B, m, d = frames.shape
    out = frames
    if cfg.time_mask_prob > 0.0:
        if cfg.time_mask_span >= m:
            raise ValueError(f"time mask span {cfg.time_mask_span} >= sequence length {m}")
        starts = rng.random((B, m)) < cfg.time_mask_prob
        tm = expand_mask_starts(starts, cfg.time_mask_span).astype(np.float64)[:, :, None]
        out = out * T.Tensor(1.0 - tm) + mask_emb * T.Tensor(tm)
    if cfg.feature_mask_prob > 0.0:
        if cfg.feature_mask_span >= d:
            raise ValueError(f"feature mask span {cfg.feature_mask_span} >= feature dim {d}")
        starts = rng.random((B, d)) < cfg.feature_mask_prob
        fm = expand_mask_starts(starts, cfg.feature_mask_span).astype(np.float64)[:, None, :]
        out = out * T.Tensor(1.0 - fm)
    return out


class PositionalConv(Module):
    """Grouped conv over time plus gelu; added to the sequence as a relative
    positional embedding."""

    def __init__(self, cfg, rng):
        self.conv = Conv1d(cfg.dim, cfg.dim, cfg.pos_kernel, rng,
                           padding=cfg.pos_kernel // 2, groups=cfg.pos_groups)
        self.kernel = cfg.pos_kernel

    def __call__(self, x, valid):
        # zero padded frames so real-frame outputs never depend on padding
        masked = x * T.Tensor(valid.astype(np.float64)[:, :, None])
        h = T.transpose(masked, (0, 2, 1))
        h = self.conv(h)
        h = T.transpose(h, (0, 2, 1))
        if self.kernel % 2 == 0:
            h = h[:, :x.shape[1], :]
        return T.gelu(h)


class SelfAttention(Module):
    def __init__(self, cfg, rng):
        self.q = Linear(cfg.dim, cfg.dim, rng)
        # a key bias shifts every logit in a row equally, which softmax
        # ignores; leaving it out removes a permanently-dead parameter
        self.k = Linear(cfg.dim, cfg.dim, rng, bias=False)
        self.v = Linear(cfg.dim, cfg.dim, rng)
        self.out = Linear(cfg.dim, cfg.dim, rng)
        self.n_heads = cfg.n_heads
        self.dropout = cfg.dropout

    def __call__(self, x, key_bias, training, rng):
        B, m, d = x.shape
        h = self.n_heads
        dh = d // h

        def split(t):
            return T.transpose(T.reshape(t, (B, m, h, dh)), (0, 2, 1, 3)).reshape(B * h, m, dh)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = T.matmul(q, T.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dh))
        scores = scores + T.Tensor(np.repeat(key_bias, h, axis=0))
        attn = T.softmax(scores, axis=-1)
        attn = T.dropout(attn, self.dropout, rng, training)
        ctx = T.matmul(attn, v)
        ctx = T.reshape(T.transpose(T.reshape(ctx, (B, h, m, dh)), (0, 2, 1, 3)), (B, m, d))
        return self.out(ctx)


class TransformerLayer(Module):
    """Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x))."""

    def __init__(self, cfg, rng):
        self.ln1 = LayerNorm(cfg.dim)
        self.attn = SelfAttention(cfg, rng)
        self.ln2 = LayerNorm(cfg.dim)
        self.fc1 = Linear(cfg.dim, cfg.ffn_dim, rng)
        self.fc2 = Linear(cfg.ffn_dim, cfg.dim, rng)
        self.dropout = cfg.dropout

    def __call__(self, x, key_bias, training, rng):
        a = self.attn(self.ln1(x), key_bias, training, rng)
        x = x + T.dropout(a, self.dropout, rng, training)
        f = self.fc2(T.gelu(self.fc1(self.ln2(x))))
        return x + T.dropout(f, self.dropout, rng, training)


class Encoder(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.extractor = FeatureExtractor(cfg, rng)
        self.post_extract_norm = LayerNorm(cfg.conv_channels[-1])
        self.proj = Linear(cfg.conv_channels[-1], cfg.dim, rng)
        self.mask_emb = T.parameter(rng.uniform(0.0, 0.1, size=cfg.dim))
        self.pos_conv = PositionalConv(cfg, rng)
        self.layers = [TransformerLayer(cfg, rng) for _ in range(cfg.n_layers)]
        self.forward_count = 0

    @property
    def n_layers(self):
        return self.cfg.n_layers

    def frame_lengths(self, lengths):
        return np.array([self.extractor.n_frames(n) for n in lengths], dtype=np.int64)

    def extract_frames(self, samples, lengths):
        """Run the frozen extractor; returns (frames (B, m, C) ndarray,
        per-item frame counts). Pure numpy, nothing recorded on the graph."""
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None]
        lengths = np.asarray(lengths, dtype=np.int64)
        frame_lens = self.frame_lengths(lengths)
        with T.no_grad():
            frames = self.extractor(samples)
        return frames.data, frame_lens

    def encode(self, samples, lengths, training=False, rng=None):
        """(B, T) padded samples plus true lengths -> EncoderOutput.

        Retains C^0 (post-projection, pre-positional) through C^L. Padded
        frames are excluded from attention and zeroed before the positional
        conv, so outputs on real frames do not depend on padding.
        """
        frames, frame_lens = self.extract_frames(samples, lengths)
        return self.encode_frames(frames, frame_lens, training=training, rng=rng)

    def encode_frames(self, frames, frame_lens, training=False, rng=None):
        """Shared stack over precomputed extractor frames (B, m, C)."""
        self.forward_count += 1
        x = T.Tensor(frames)
        m = x.shape[1]
        frame_lens = np.asarray(frame_lens, dtype=np.int64)
        valid = np.arange(m)[None, :] < frame_lens[:, None]

        x = self.post_extract_norm(x)
        x = self.proj(x)
        if training:
            x = apply_masking(x, self.mask_emb, self.cfg, rng)

        outputs = [x]
        x = x + self.pos_conv(x, valid)
        key_bias = np.where(valid, 0.0, -np.inf)[:, None, :]

        for layer in self.layers:
            if training and self.cfg.layerdrop > 0.0 and rng.random() < self.cfg.layerdrop:
                outputs.append(x)
                continue
            x = layer(x, key_bias, training, rng)
            outputs.append(x)

        return EncoderOutput(layers=outputs, valid=valid, frame_lengths=frame_lens)


def tap(output, n):
    """Layer-n sequence C^n; n=0 is the post-projection input."""
    if not 0 <= n < len(output.layers):
        raise ValueError(f"tap layer {n} out of range 0..{len(output.layers) - 1}")
    return output.layers[n]


class FeatureCache:
    """Per-utterance cache of frozen-extractor frames.

    Only whole utterances are cached (their frames never change); cropped
    segments are extracted live. Either way the result is identical to
    running the extractor directly, because the extractor is frozen and each
    utterance is extracted solo.
    """

    def __init__(self, encoder):
        self.encoder = encoder
        self._frames = {}

    def frames(self, utt_id, samples, is_whole):
        if is_whole and utt_id in self._frames:
            return self._frames[utt_id]
        f, _ = self.encoder.extract_frames(samples[None], [len(samples)])
        f = f[0]
        if is_whole:
            self._frames[utt_id] = f
        return f

    def batch(self, utt_ids, waves, full_lengths):
        """Padded (B, m_max, C) frames plus frame lengths for a batch."""
        frames = [self.frames(u, w, len(w) == n)
                  for u, w, n in zip(utt_ids, waves, full_lengths)]
        lens = np.array([f.shape[0] for f in frames], dtype=np.int64)
        out = np.zeros((len(frames), int(lens.max()), frames[0].shape[1]))
        for i, f in enumerate(frames):
            out[i, :len(f)] = f
        return out, lens
