"""Cropping and batch assembly.

Speech batches carry complete utterances, packed by length buckets under a
sample budget that counts right-padding. Speaker batches carry fixed counts
of randomly cropped segments with class-index labels. Padding is always
zero-valued; true lengths travel with every batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .wavio import SAMPLE_RATE


@dataclass
class SpeechBatch:
    samples: np.ndarray        # (B, T_max) float64, zero right-padded
    lengths: np.ndarray        # (B,) int, true sample counts
    targets: list              # per item: list of token ids
    utt_ids: list
    speaker_labels: np.ndarray | None = None  # class indices when jointly labeled


@dataclass
class SpeakerBatch:
    samples: np.ndarray
    lengths: np.ndarray
    labels: np.ndarray         # (B,) int class indices
    utt_ids: list


def crop(samples, crop_len_s, rng=None, mode="random"):
    """Cut a crop_len_s window; shorter inputs pass through whole.

    mode "random" draws a uniform start offset, "first" always starts at 0
    (the fixed evaluation condition).
    """
    if crop_len_s <= 0:
        raise ValueError(f"crop length must be positive, got {crop_len_s}")
    n = int(round(crop_len_s * SAMPLE_RATE))
    if len(samples) <= n:
        return samples
    if mode == "first":
        start = 0
    elif mode == "random":
        start = int(rng.integers(0, len(samples) - n + 1))
    else:
        raise ValueError(f"unknown crop mode {mode!r}")
    return samples[start:start + n]


def _pad_stack(waves):
    lengths = np.array([len(w) for w in waves], dtype=np.int64)
    out = np.zeros((len(waves), int(lengths.max())))
    for i, w in enumerate(waves):
        out[i, :len(w)] = w
    return out, lengths


def speaker_class_index(manifest):
    """Contiguous class index per speaker id, sorted for stability."""
    return {spk: i for i, spk in enumerate(sorted(manifest.speakers()))}


def speech_batches(manifest, vocab, max_samples_per_batch, rng, store,
                   length_jitter_frac=0.05, class_index=None):
    """One epoch of length-sorted speech batches over complete utterances.

    Rows are sorted by jittered length (soft buckets: composition varies a
    little per epoch while batches stay length-homogeneous), packed greedily
    under the padded-sample budget, then emitted in shuffled order.
    """
    rows = list(manifest.rows)
    if not rows:
        raise ValueError("empty manifest")
    n_samples = {r.id: int(round(r.duration_s * SAMPLE_RATE)) for r in rows}
    for r in rows:
        if n_samples[r.id] > max_samples_per_batch:
            raise ValueError(
                f"utterance {r.id} ({n_samples[r.id]} samples) exceeds the batch budget "
                f"of {max_samples_per_batch}"
            )

    jitter = length_jitter_frac * float(np.median([n_samples[r.id] for r in rows]))
    keys = {r.id: n_samples[r.id] + rng.uniform(0.0, jitter) for r in rows}
    rows.sort(key=lambda r: keys[r.id])

    groups = []
    cur = []
    cur_max = 0
    for row in rows:
        n = n_samples[row.id]
        new_max = max(cur_max, n)
        if cur and (len(cur) + 1) * new_max > max_samples_per_batch:
            groups.append(cur)
            cur, new_max = [], n
        cur.append(row)
        cur_max = new_max
    if cur:
        groups.append(cur)

    order = rng.permutation(len(groups))
    return [_build_speech_batch(groups[i], vocab, store, class_index) for i in order]


def _build_speech_batch(rows, vocab, store, class_index):
    waves = [store.get(r.id) for r in rows]
    samples, lengths = _pad_stack(waves)
    targets = [vocab.encode(r.transcript) for r in rows]
    labels = None
    if class_index is not None:
        labels = np.array([class_index[r.speaker_id] for r in rows], dtype=np.int64)
    return SpeechBatch(samples, lengths, targets, [r.id for r in rows], labels)


def speaker_batches(manifest, class_index, crop_len_s, batch_items, rng, store):
    """One epoch of speaker batches: shuffled utterances, random crops."""
    rows = list(manifest.rows)
    if not rows:
        raise ValueError("empty manifest")
    for r in rows:
        if r.speaker_id not in class_index:
            raise ValueError(f"speaker {r.speaker_id} missing from the class index")
    perm = rng.permutation(len(rows))
    batches = []
    for s in range(0, len(rows), batch_items):
        chunk = [rows[i] for i in perm[s:s + batch_items]]
        waves = [crop(store.get(r.id), crop_len_s, rng) for r in chunk]
        samples, lengths = _pad_stack(waves)
        labels = np.array([class_index[r.speaker_id] for r in chunk], dtype=np.int64)
        batches.append(SpeakerBatch(samples, lengths, labels, [r.id for r in chunk]))
    return batches


def padding_overhead(batches):
    """(padded cells - true cells) / true cells, over a batch list."""
    padded = sum(b.samples.size for b in batches)
    true = sum(int(b.lengths.sum()) for b in batches)
    return (padded - true) / true
