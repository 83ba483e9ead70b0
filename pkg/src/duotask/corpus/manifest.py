"""Corpus manifests: one CSV row per utterance, audio stored as WAV files."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

from .wavio import SAMPLE_RATE, read_wav

MANIFEST_COLUMNS = ["id", "wav_path", "speaker_id", "sex", "session_id", "transcript", "duration_s"]


@dataclass
class Utterance:
    id: str
    samples: object  # float64 ndarray, mono 16 kHz
    transcript: str
    speaker_id: str
    sex: str
    session_id: str


@dataclass
class ManifestRow:
    id: str
    wav_path: str
    speaker_id: str
    sex: str
    session_id: str
    transcript: str
    duration_s: float


class CorpusManifest:
    """Rows plus the directory the relative wav paths resolve against."""

    def __init__(self, rows, root="."):
        self.rows = list(rows)
        self.root = root
        self.by_id = {r.id: r for r in self.rows}
        if len(self.by_id) != len(self.rows):
            dupes = sorted({r.id for r in self.rows if sum(x.id == r.id for x in self.rows) > 1})
            raise ValueError(f"duplicate utterance ids in manifest: {dupes[:5]}")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def speakers(self):
        seen = {}
        for r in self.rows:
            seen.setdefault(r.speaker_id, r.sex)
        return seen

    def wav_path(self, row):
        return os.path.join(self.root, row.wav_path)

    def load_samples(self, utt_id):
        row = self.by_id[utt_id]
        return read_wav(self.wav_path(row))

    def save(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(MANIFEST_COLUMNS)
            for r in self.rows:
                writer.writerow([r.id, r.wav_path, r.speaker_id, r.sex, r.session_id,
                                 r.transcript, f"{r.duration_s:.6f}"])

    @classmethod
    def load(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != MANIFEST_COLUMNS:
                raise ValueError(f"{path}: manifest header {header} != {MANIFEST_COLUMNS}")
            rows = []
            for rec in reader:
                if len(rec) != len(MANIFEST_COLUMNS):
                    raise ValueError(f"{path}: malformed row {rec}")
                rows.append(ManifestRow(rec[0], rec[1], rec[2], rec[3], rec[4], rec[5], float(rec[6])))
        return cls(rows, root=os.path.dirname(os.path.abspath(path)))

    def subset(self, ids):
        ids = set(ids)
        return CorpusManifest([r for r in self.rows if r.id in ids], root=self.root)


class AudioStore:
    """Read-through cache of decoded waveforms keyed by utterance id."""

    def __init__(self, manifest):
        self.manifest = manifest
        self._cache = {}

    def get(self, utt_id):
        samples = self._cache.get(utt_id)
        if samples is None:
            samples = self.manifest.load_samples(utt_id)
            self._cache[utt_id] = samples
        return samples


def split_manifest(manifest, dev_speakers, val_utts_per_speaker, rng):
    """Split into (train, val, dev) manifests.

    dev holds out whole speakers (for verification trials on unseen voices);
    val holds out recordings of the remaining training speakers (losses and
    WER stay computable on it).
    """
    speakers = sorted(manifest.speakers())
    if dev_speakers >= len(speakers):
        raise ValueError(f"cannot hold out {dev_speakers} of {len(speakers)} speakers")
    by_sex = {}
    for s in speakers:
        by_sex.setdefault(manifest.speakers()[s], []).append(s)
    held = []
    # alternate sexes so dev keeps both when possible
    order = sorted(by_sex)
    pools = {k: list(v) for k, v in by_sex.items()}
    for k in pools:
        rng.shuffle(pools[k])
    i = 0
    while len(held) < dev_speakers:
        sex = order[i % len(order)]
        if pools[sex]:
            held.append(pools[sex].pop())
        elif all(not p for p in pools.values()):
            break
        i += 1
    held = set(held)

    train_rows, val_rows, dev_rows = [], [], []
    by_speaker = {}
    for r in manifest.rows:
        by_speaker.setdefault(r.speaker_id, []).append(r)
    for spk, rows in sorted(by_speaker.items()):
        if spk in held:
            dev_rows.extend(rows)
            continue
        rows = list(rows)
        rng.shuffle(rows)
        val_rows.extend(rows[:val_utts_per_speaker])
        train_rows.extend(rows[val_utts_per_speaker:])

    mk = lambda rows: CorpusManifest(sorted(rows, key=lambda r: r.id), root=manifest.root)
    return mk(train_rows), mk(val_rows), mk(dev_rows)


def check_row_against_file(manifest, row):
    """True when the WAV duration matches the manifest within one sample."""
    samples = read_wav(manifest.wav_path(row))
    return abs(len(samples) - row.duration_s * SAMPLE_RATE) <= 1.0
