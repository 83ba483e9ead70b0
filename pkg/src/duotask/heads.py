"""Task heads: per-frame speech classifier and speaker embedding head with
three pooling strategies (mean over unpadded frames, first token, reduced
ECAPA with attentive statistics)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv1d, Linear, Module

POOLING_KINDS = ("mean", "first", "ecapa")


@dataclass
class HeadConfig:
    speaker_pooling: str = "mean"
    speaker_tap_layer: int | None = None   # None -> last layer
    n_train_speakers: int | None = None    # resolved from the corpus
    embed_dim: int | None = None           # None -> encoder dim
    ecapa_channels: int = 64
    ecapa_conv_layers: int = 2
    ecapa_attn_dim: int = 32

    def __post_init__(self):
        if self.speaker_pooling not in POOLING_KINDS:
            raise ValueError(f"speaker_pooling must be one of {POOLING_KINDS}, got {self.speaker_pooling!r}")


class SpeechHead(Module):
    """Single FC layer over the final encoder sequence, then log-softmax."""

    def __init__(self, dim, vocab_size, rng):
        self.fc = Linear(dim, vocab_size, rng)

    def __call__(self, seq):
        return T.log_softmax(self.fc(seq), axis=-1)


def _valid_mask_tensor(valid):
    counts = valid.sum(axis=-1)
    if np.any(counts == 0):
        raise ValueError("pooling over an all-padding sequence")
    return T.Tensor(valid.astype(np.float64)[:, :, None]), counts


def pool_mean(seq, valid):
    """Arithmetic mean over unpadded frames only: (B, m, d) -> (B, d)."""
    mask, counts = _valid_mask_tensor(valid)
    return T.tsum(seq * mask, axis=1) / T.Tensor(counts[:, None].astype(np.float64))


def pool_first(seq):
    """The first output token, verbatim."""
    if seq.shape[1] < 1:
        raise ValueError("pool_first on an empty sequence")
    return seq[:, 0, :]


class EcapaPool(Module):
    """Reduced ECAPA block: conv+gelu layers over the sequence, then attentive
    statistics pooling (learned per-frame weights; weighted mean and std),
    then a linear map to the embedding size. Padded frames get zero attention.
    """

    def __init__(self, dim, cfg, rng):
        self.convs = []
        c_in = dim
        for _ in range(cfg.ecapa_conv_layers):  # 0 means pool the tap directly
            self.convs.append(Conv1d(c_in, cfg.ecapa_channels, 3, rng, padding=1))
            c_in = cfg.ecapa_channels
        self.attn_hidden = Linear(c_in, cfg.ecapa_attn_dim, rng)
        self.attn_score = Linear(cfg.ecapa_attn_dim, 1, rng)
        self.out = Linear(2 * c_in, cfg.embed_dim or dim, rng)

    def features(self, seq, valid):
        """Conv features of the sequence, padding zeroed before every conv."""
        vm = T.Tensor(valid.astype(np.float64)[:, :, None])
        h = seq
        for conv in self.convs:
            h = T.transpose(h * vm, (0, 2, 1))
            h = T.gelu(conv(h))
            h = T.transpose(h, (0, 2, 1))
        return h

    def attention_weights(self, feats, valid):
        scores = self.attn_score(T.tanh(self.attn_hidden(feats)))  # (B, m, 1)
        bias = np.where(valid, 0.0, -np.inf)[:, :, None]
        return T.softmax(scores + T.Tensor(bias), axis=1)

    def __call__(self, seq, valid):
        if seq.shape[1] < 2:
            raise ValueError("ecapa pooling needs at least 2 frames")
        _valid_mask_tensor(valid)  # rejects all-padding rows
        feats = self.features(seq, valid)
        w = self.attention_weights(feats, valid)
        mean = T.tsum(feats * w, axis=1)
        var = T.tsum((feats - T.reshape(mean, (mean.shape[0], 1, mean.shape[1]))) ** 2.0 * w, axis=1)
        std = T.maximum(var, 0.0) ** 0.5
        return self.out(T.concat([mean, std], axis=1))


class SpeakerClassifier(Module):
    """Bias-free cosine classifier: logits are cos(embedding, class weight)."""

    def __init__(self, embed_dim, n_speakers, rng):
        self.weight = T.parameter(rng.normal(0.0, 1.0, size=(n_speakers, embed_dim)))

    def __call__(self, emb):
        norms = np.sqrt((emb.data * emb.data).sum(axis=-1))
        if np.any(norms == 0.0):
            raise ValueError("zero-norm speaker embedding cannot be cosine-scored")
        e = T.l2_normalize(emb, axis=-1)
        w = T.l2_normalize(self.weight, axis=-1)
        return T.matmul(e, T.transpose(w, (1, 0)))


class SpeakerHead(Module):
    """Pooling into an embedding plus the train-time cosine classifier."""

    def __init__(self, dim, cfg, rng):
        if cfg.n_train_speakers is None:
            raise ValueError("n_train_speakers must be resolved before building the speaker head")
        self.pooling = cfg.speaker_pooling
        self.ecapa = EcapaPool(dim, cfg, rng) if cfg.speaker_pooling == "ecapa" else None
        # mean/first pooling emit the encoder dim; only ecapa projects
        embed_dim = (cfg.embed_dim or dim) if self.ecapa is not None else dim
        self.classifier = SpeakerClassifier(embed_dim, cfg.n_train_speakers, rng)

    def embed(self, seq, valid):
        if self.pooling == "mean":
            return pool_mean(seq, valid)
        if self.pooling == "first":
            return pool_first(seq)
        return self.ecapa(seq, valid)

    def logits(self, emb):
        return self.classifier(emb)
