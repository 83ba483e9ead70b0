"""Assembly of the shared encoder and the two task heads."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import Encoder, tap
from .heads import SpeakerHead, SpeechHead
from .nn import Module
from .seeds import derive_rng


class MtlModel(Module):
    """Shared encoder N plus speech head H_s (always on the final layer) and
    speaker head H_k (on the configured tap layer)."""

    def __init__(self, enc_cfg, head_cfg, vocab_size, seed=0):
        rng = derive_rng(seed, "init")
        self.encoder = Encoder(enc_cfg, rng)
        self.speech_head = SpeechHead(enc_cfg.dim, vocab_size, rng)
        self.speaker_head = SpeakerHead(enc_cfg.dim, head_cfg, rng)
        self.enc_cfg = enc_cfg
        self.head_cfg = head_cfg
        self.vocab_size = vocab_size
        self.tap_layer = head_cfg.speaker_tap_layer
        if self.tap_layer is None:
            self.tap_layer = enc_cfg.n_layers

    def named_parameters(self, prefix=""):
        params = super().named_parameters(prefix)
        skip = (f"{prefix}enc_cfg", f"{prefix}head_cfg")
        return {n: p for n, p in params.items() if not n.startswith(skip)}

    def encode(self, samples, lengths, training=False, rng=None):
        return self.encoder.encode(samples, lengths, training=training, rng=rng)

    def speech_logprobs(self, enc_out):
        """Per-frame log-probabilities from the final layer sequence."""
        return self.speech_head(enc_out.layers[-1])

    def speaker_embedding(self, enc_out, tap_layer=None):
        n = self.tap_layer if tap_layer is None else tap_layer
        return self.speaker_head.embed(tap(enc_out, n), enc_out.valid)

    def speaker_logits(self, embedding):
        return self.speaker_head.logits(embedding)


def init_model(enc_cfg, head_cfg, vocab, n_train_speakers, seed=0):
    """Build a model with the speaker-class count resolved from the corpus."""
    if head_cfg.n_train_speakers is None:
        head_cfg.n_train_speakers = n_train_speakers
    elif head_cfg.n_train_speakers != n_train_speakers:
        raise ValueError(
            f"config says {head_cfg.n_train_speakers} train speakers, corpus has {n_train_speakers}"
        )
    return MtlModel(enc_cfg, head_cfg, vocab.size, seed=seed)
