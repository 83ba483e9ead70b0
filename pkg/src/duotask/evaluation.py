"""Evaluation: greedy CTC decoding, word error rate, cosine trial scoring,
equal error rate with linear interpolation, embedding extraction under audio
conditions (full / first 2 s / random crop), and the per-layer speaker probe.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus.batching import crop
from .corpus.manifest import AudioStore
from .corpus.vocab import BLANK
from .corpus.wavio import SAMPLE_RATE
from .encoder import FeatureCache, tap
from .heads import pool_mean


@dataclass
class ScoredTrial:
    label: int
    score: float


@dataclass
class ProbeReport:
    rows: list        # (layer index, eer) for layers 0..L
    condition: str
    n_trials: int


# ---- speech ----------------------------------------------------------------


def greedy_decode(log_probs, vocab):
    """Argmax path, collapse repeats, drop blanks, map ids to characters."""
    lp = log_probs.data if isinstance(log_probs, T.Tensor) else np.asarray(log_probs)
    ids = lp.argmax(axis=-1)
    out = []
    prev = -1
    for i in ids:
        if i != prev and i != BLANK:
            out.append(int(i))
        prev = i
    return vocab.decode(out)


def _levenshtein(ref, hyp):
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(reference, hypothesis, word_sep=" "):
    """Word-level edit distance divided by reference word count."""
    ref = [w for w in reference.split(word_sep) if w]
    hyp = [w for w in hypothesis.split(word_sep) if w]
    if not ref:
        raise ValueError("empty reference after tokenization")
    return _levenshtein(ref, hyp) / len(ref)


def corpus_wer(references, hypotheses, word_sep=" "):
    """Total edits over total reference words."""
    edits = 0
    words = 0
    for r, h in zip(references, hypotheses):
        rw = [w for w in r.split(word_sep) if w]
        hw = [w for w in h.split(word_sep) if w]
        if not rw:
            raise ValueError("empty reference after tokenization")
        edits += _levenshtein(rw, hw)
        words += len(rw)
    return edits / words


def _length_batches(rows, batch_items):
    rows = sorted(rows, key=lambda r: (r.duration_s, r.id))
    return [rows[i:i + batch_items] for i in range(0, len(rows), batch_items)]


def _encode_chunk(model, chunk, store, condition, rng, cache):
    waves = [_condition_samples(store.get(r.id), condition, rng) for r in chunk]
    fulls = [int(round(r.duration_s * SAMPLE_RATE)) for r in chunk]
    frames, flens = cache.batch([r.id for r in chunk], waves, fulls)
    return model.encoder.encode_frames(frames, flens, training=False)


def decode_manifest(model, manifest, vocab, store=None, batch_items=8, cache=None):
    """Greedy transcripts for every utterance, id -> hypothesis."""
    store = store or AudioStore(manifest)
    cache = cache or FeatureCache(model.encoder)
    out = {}
    with T.no_grad():
        for chunk in _length_batches(manifest.rows, batch_items):
            enc = _encode_chunk(model, chunk, store, "full", None, cache)
            lp = model.speech_logprobs(enc).data
            for i, r in enumerate(chunk):
                out[r.id] = greedy_decode(lp[i, :enc.frame_lengths[i]], vocab)
    return out


def wer_on_manifest(model, manifest, vocab, store=None, batch_items=8, cache=None):
    hyps = decode_manifest(model, manifest, vocab, store, batch_items, cache)
    refs = [manifest.by_id[u].transcript for u in hyps]
    return corpus_wer(refs, [hyps[u] for u in hyps], vocab.word_sep)


# ---- speaker ----------------------------------------------------------------


def score_trials(trials, embeddings):
    """Cosine similarity per trial; errors name the offending utterance."""
    scored = []
    for t in trials:
        for u in (t.utt_a, t.utt_b):
            if u not in embeddings:
                raise KeyError(f"no embedding for utterance {u!r}")
        a = embeddings[t.utt_a]
        b = embeddings[t.utt_b]
        na = np.linalg.norm(a)
        nb = np.linalg.norm(b)
        if na == 0.0:
            raise ValueError(f"zero-norm embedding for utterance {t.utt_a!r}")
        if nb == 0.0:
            raise ValueError(f"zero-norm embedding for utterance {t.utt_b!r}")
        scored.append(ScoredTrial(t.label, float(np.dot(a, b) / (na * nb))))
    return scored


def eer(scored):
    """Equal error rate: FAR/FRR swept over observed scores, linearly
    interpolated where FAR - FRR changes sign."""
    labels = np.array([s.label for s in scored])
    scores = np.array([s.score for s in scored], dtype=np.float64)
    if not np.isfinite(scores).all():
        raise ValueError("non-finite trial score")
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("EER needs at least one positive and one negative trial")

    thresholds = np.unique(scores)[::-1]
    # accept when score >= threshold
    far = (len(neg) - np.searchsorted(neg, thresholds, side="left")) / len(neg)
    frr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    far = np.concatenate([[0.0], far, [1.0]])
    frr = np.concatenate([[1.0], frr, [0.0]])

    diff = far - frr
    idx = int(np.argmax(diff >= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx])
    f0, r0 = far[idx - 1], frr[idx - 1]
    f1, r1 = far[idx], frr[idx]
    t = (r0 - f0) / ((f1 - f0) - (r1 - r0))
    return float(f0 + t * (f1 - f0))


CONDITIONS = ("full", "first_2s")


def _condition_samples(samples, condition, rng):
    if condition == "full":
        return samples
    if condition == "first_2s":
        return crop(samples, 2.0, mode="first")
    if condition.startswith("crop:"):
        if rng is None:
            raise ValueError(f"condition {condition!r} needs an rng for crop offsets")
        return crop(samples, float(condition.split(":", 1)[1]), rng)
    raise ValueError(f"unknown audio condition {condition!r}")


def embed_manifest(model, manifest, condition="full", rng=None, store=None,
                   tap_layer=None, batch_items=8, cache=None):
    """Speaker embeddings per utterance id under the given audio condition."""
    store = store or AudioStore(manifest)
    cache = cache or FeatureCache(model.encoder)
    out = {}
    with T.no_grad():
        for chunk in _length_batches(manifest.rows, batch_items):
            enc = _encode_chunk(model, chunk, store, condition, rng, cache)
            emb = model.speaker_embedding(enc, tap_layer=tap_layer).data
            for i, r in enumerate(chunk):
                out[r.id] = emb[i].copy()
    meta = {"condition": condition, "n_utterances": len(out)}
    return out, meta


def layer_probe(model, manifest, trials, condition="full", rng=None, store=None,
                batch_items=8, cache=None):
    """EER per layer 0..L using padding-aware mean pooling as the embedding
    at every layer, whatever pooling the model trained with."""
    store = store or AudioStore(manifest)
    cache = cache or FeatureCache(model.encoder)
    n_layers = model.encoder.n_layers
    per_layer = [dict() for _ in range(n_layers + 1)]
    with T.no_grad():
        for chunk in _length_batches(manifest.rows, batch_items):
            enc = _encode_chunk(model, chunk, store, condition, rng, cache)
            for n in range(n_layers + 1):
                emb = pool_mean(tap(enc, n), enc.valid).data
                for i, r in enumerate(chunk):
                    per_layer[n][r.id] = emb[i].copy()
    rows = []
    for n in range(n_layers + 1):
        rows.append((n, eer(score_trials(trials, per_layer[n]))))
    return ProbeReport(rows=rows, condition=condition, n_trials=len(trials))


def write_probe_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "eer"])
        for n, value in report.rows:
            writer.writerow([n, f"{value:.10f}"])


# ---- full evaluation ---------------------------------------------------------


def evaluate(model, manifest, trials, conditions, vocab, store=None,
             checkpoint_path=None, crop_rng=None, cache=None):
    """WER on full utterances plus EER under each requested condition."""
    store = store or AudioStore(manifest)
    cache = cache or FeatureCache(model.encoder)
    report = {
        "wer": wer_on_manifest(model, manifest, vocab, store, cache=cache),
        "eer_by_condition": {},
        "n_trials": len(trials),
        "checkpoint": checkpoint_path,
        "conditions": list(conditions),
    }
    scored_by_condition = {}
    for cond in conditions:
        embeddings, _ = embed_manifest(model, manifest, cond, rng=crop_rng,
                                       store=store, cache=cache)
        scored = score_trials(trials, embeddings)
        scored_by_condition[cond] = scored
        report["eer_by_condition"][cond] = eer(scored)
    return report, scored_by_condition


def write_evaluation(report, scored_by_condition, trials, out_dir):
    """report.json, report.csv, and a score dump per condition."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    with open(os.path.join(out_dir, "report.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "condition", "value"])
        writer.writerow(["wer", "", f"{report['wer']:.10f}"])
        for cond, value in report["eer_by_condition"].items():
            writer.writerow(["eer", cond, f"{value:.10f}"])
    for cond, scored in scored_by_condition.items():
        name = f"scores_{cond.replace(':', '_')}.txt"
        with open(os.path.join(out_dir, name), "w") as fh:
            for t, s in zip(trials, scored):
                fh.write(f"{t.label} {t.utt_a} {t.utt_b} {s.score:.10f}\n")
