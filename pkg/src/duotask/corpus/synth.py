"""Synthetic tone-language corpus with orthogonal content, speaker and
session factors.

Content channel: every character owns one slot frequency; a character is
rendered as a short harmonic tone burst at its slot (the word separator is
silence). Speaker channel: each speaker carries a fixed additive pitch offset
(sign decided by sex) and fixed harmonic amplitude ratios, applied to every
character alike, so speaker identity is text-independent. Session channel:
each recording session applies a fixed one-pole filter, gain and noise floor,
a nuisance factor that positive trials must cross.

All randomness derives from (seed, tag, indices), so the same config writes
bitwise-identical WAV files every time.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from ..seeds import derive_rng
from .manifest import CorpusManifest, ManifestRow
from .vocab import Vocabulary
from .wavio import SAMPLE_RATE, write_wav

CHAR_SECONDS = 0.15
TONE_SECONDS = 0.12
EDGE_SECONDS = 0.008
LEAD_SECONDS = 0.05

# slot spacing must dominate the +-55 Hz speaker offsets by a wide margin at
# the ~45 Hz frequency resolution of a 20 ms analysis window, or characters
# from different speakers become confusable
SLOT_BASE_HZ = 500.0
SLOT_STEP_HZ = 450.0
MAX_FUNDAMENTAL_HZ = 7200.0
MAX_COMPONENT_HZ = 7600.0
N_SLOTS = int((MAX_FUNDAMENTAL_HZ - SLOT_BASE_HZ) // SLOT_STEP_HZ) + 1

TONE_AMPLITUDE = 0.8  # divided by the speaker's summed harmonic weights


@dataclass
class CorpusConfig:
    n_speakers: int = 20
    utts_per_speaker: int = 20
    sessions_per_speaker: int = 2
    letters: str = "abcdefghijk"
    word_sep: str = " "
    duration_range: tuple = (3.0, 6.0)
    seed: int = 0

    def vocabulary(self):
        return Vocabulary(self.letters, self.word_sep)


@dataclass
class SpeakerProfile:
    speaker_id: str
    sex: str
    pitch_offset_hz: float
    harmonic_amps: tuple


@dataclass
class SessionCondition:
    session_id: str
    filter_pole: float
    noise_level: float
    gain: float


def speaker_profile(cfg, idx):
    rng = derive_rng(cfg.seed, "speaker", idx)
    sex = "M" if idx % 2 == 0 else "F"
    lo, hi = (-55.0, -15.0) if sex == "M" else (15.0, 55.0)
    offset = rng.uniform(lo, hi)
    amps = (1.0, rng.uniform(0.05, 0.9), rng.uniform(0.05, 0.9))
    return SpeakerProfile(f"spk{idx:03d}", sex, offset, amps)


def session_condition(cfg, speaker_idx, session_idx):
    rng = derive_rng(cfg.seed, "session", speaker_idx, session_idx)
    return SessionCondition(
        session_id=f"spk{speaker_idx:03d}_s{session_idx}",
        filter_pole=rng.uniform(0.0, 0.5),
        noise_level=rng.uniform(0.0005, 0.004),
        gain=rng.uniform(0.7, 1.0),
    )


def _slot_table(vocab):
    if len(vocab.letters) > N_SLOTS:
        raise ValueError(
            f"vocabulary has {len(vocab.letters)} letters but only {N_SLOTS} tone slots exist"
        )
    return {c: SLOT_BASE_HZ + SLOT_STEP_HZ * i for i, c in enumerate(vocab.letters)}


def sample_transcript(vocab, n_chars, rng):
    """Random words of 2..5 letters joined by the separator, <= n_chars long."""
    words = []
    used = 0
    while True:
        sep = 1 if words else 0
        room = n_chars - used - sep
        if room < 2:
            break
        wlen = int(rng.integers(2, min(5, room) + 1))
        words.append("".join(rng.choice(list(vocab.letters), size=wlen)))
        used += sep + wlen
    return vocab.word_sep.join(words)


def synthesize_utterance(transcript, speaker, session, vocab, rng):
    """Render one utterance; rng drives per-character phases and the noise."""
    slots = _slot_table(vocab)
    char_n = int(CHAR_SECONDS * SAMPLE_RATE)
    tone_n = int(TONE_SECONDS * SAMPLE_RATE)
    lead_n = int(LEAD_SECONDS * SAMPLE_RATE)
    edge_n = int(EDGE_SECONDS * SAMPLE_RATE)

    envelope = np.ones(tone_n)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge_n) / edge_n)
    envelope[:edge_n] = ramp
    envelope[-edge_n:] = ramp[::-1]

    t = np.arange(tone_n) / SAMPLE_RATE
    amp_scale = TONE_AMPLITUDE / sum(speaker.harmonic_amps)

    out = np.zeros(lead_n * 2 + char_n * len(transcript))
    for i, ch in enumerate(transcript):
        if ch == vocab.word_sep:
            continue
        f0 = slots[ch] + speaker.pitch_offset_hz
        tone = np.zeros(tone_n)
        for h, amp in enumerate(speaker.harmonic_amps, start=1):
            freq = h * f0
            if freq >= MAX_COMPONENT_HZ:
                continue
            tone += amp * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
        start = lead_n + i * char_n
        out[start:start + tone_n] = amp_scale * envelope * tone

    # session shaping: one-pole smoothing, gain, noise floor
    out = _one_pole(out, session.filter_pole)
    out = session.gain * out
    out = out + rng.normal(0.0, session.noise_level, size=out.shape)
    return np.clip(out, -1.0, 1.0)


def _one_pole(x, a):
    """Exponential smoothing y[n] = (1-a) x[n] + a y[n-1], kernel truncated
    where a^k falls below float64 noise."""
    if a <= 0.0:
        return x.copy()
    k = min(len(x), int(np.ceil(-55.0 / np.log10(a))))
    kernel = a ** np.arange(k)
    return (1.0 - a) * np.convolve(x, kernel, mode="full")[:len(x)]


def generate_corpus(cfg, out_dir):
    """Write WAV files plus manifest.csv under out_dir; returns the manifest."""
    if cfg.n_speakers < 2:
        raise ValueError("need at least 2 speakers (both sexes)")
    if cfg.sessions_per_speaker < 2:
        raise ValueError("need at least 2 sessions per speaker for positive trials")
    vocab = cfg.vocabulary()
    _slot_table(vocab)  # validates slot capacity
    lo, hi = cfg.duration_range
    if lo < 0.5:
        raise ValueError("utterances must be at least 0.5 s")

    wav_dir = os.path.join(out_dir, "wavs")
    os.makedirs(wav_dir, exist_ok=True)

    rows = []
    for s in range(cfg.n_speakers):
        speaker = speaker_profile(cfg, s)
        sessions = [session_condition(cfg, s, j) for j in range(cfg.sessions_per_speaker)]
        for u in range(cfg.utts_per_speaker):
            rng = derive_rng(cfg.seed, "utt", s, u)
            session = sessions[u % cfg.sessions_per_speaker]
            target = rng.uniform(lo, hi)
            n_chars = max(4, int(target / CHAR_SECONDS))
            transcript = sample_transcript(vocab, n_chars, rng)
            samples = synthesize_utterance(transcript, speaker, session, vocab, rng)
            utt_id = f"{speaker.speaker_id}_u{u:03d}"
            rel = os.path.join("wavs", f"{utt_id}.wav")
            write_wav(samples, os.path.join(out_dir, rel))
            rows.append(ManifestRow(
                id=utt_id, wav_path=rel, speaker_id=speaker.speaker_id, sex=speaker.sex,
                session_id=session.session_id, transcript=transcript,
                duration_s=len(samples) / SAMPLE_RATE,
            ))

    manifest = CorpusManifest(rows, root=out_dir)
    manifest.save(os.path.join(out_dir, "manifest.csv"))
    with open(os.path.join(out_dir, "vocab.json"), "w") as fh:
        json.dump({"letters": cfg.letters, "word_sep": cfg.word_sep}, fh)
    return manifest


def load_vocab(corpus_dir):
    """The vocabulary written next to a generated corpus manifest."""
    path = os.path.join(corpus_dir, "vocab.json")
    with open(path) as fh:
        spec = json.load(fh)
    return Vocabulary(spec["letters"], spec["word_sep"])
