"""Verification trial lists: positives cross sessions, negatives match sex."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class Trial:
    label: int   # 1 same speaker, 0 different speaker
    utt_a: str
    utt_b: str


def _pair_key(a, b):
    return (a, b) if a <= b else (b, a)


def generate_trials(manifest, n_pos, n_neg, rng):
    """Sample labeled pairs without replacement under the trial constraints."""
    rows = manifest.rows
    by_speaker = {}
    for r in rows:
        by_speaker.setdefault(r.speaker_id, []).append(r)

    pos_pool = []
    for spk, urows in sorted(by_speaker.items()):
        for i in range(len(urows)):
            for j in range(i + 1, len(urows)):
                if urows[i].session_id != urows[j].session_id:
                    pos_pool.append(_pair_key(urows[i].id, urows[j].id))
    if n_pos > 0 and not pos_pool:
        raise ValueError(
            "no positive trials possible: no speaker has utterances in two different sessions"
        )
    if n_pos > len(pos_pool):
        raise ValueError(
            f"requested {n_pos} positive trials but only {len(pos_pool)} pairs satisfy "
            f"the cross-session constraint"
        )

    neg_pool = []
    srows = sorted(rows, key=lambda r: r.id)
    for i in range(len(srows)):
        for j in range(i + 1, len(srows)):
            a, b = srows[i], srows[j]
            if a.speaker_id != b.speaker_id and a.sex == b.sex:
                neg_pool.append(_pair_key(a.id, b.id))
    if n_neg > 0 and not neg_pool:
        raise ValueError(
            "no negative trials possible: no two speakers of the same sex"
        )
    if n_neg > len(neg_pool):
        raise ValueError(
            f"requested {n_neg} negative trials but only {len(neg_pool)} pairs satisfy "
            f"the same-sex constraint"
        )

    pos_idx = rng.choice(len(pos_pool), size=n_pos, replace=False)
    neg_idx = rng.choice(len(neg_pool), size=n_neg, replace=False)
    trials = [Trial(1, *pos_pool[i]) for i in sorted(pos_idx)]
    trials += [Trial(0, *neg_pool[i]) for i in sorted(neg_idx)]
    return trials


def validate_trials(trials, manifest):
    """Independent re-check of every row; returns a list of violations."""
    problems = []
    seen = set()
    for k, t in enumerate(trials):
        where = f"trial {k} ({t.label} {t.utt_a} {t.utt_b})"
        ra = manifest.by_id.get(t.utt_a)
        rb = manifest.by_id.get(t.utt_b)
        if ra is None or rb is None:
            problems.append(f"{where}: unknown utterance id")
            continue
        key = _pair_key(t.utt_a, t.utt_b)
        if key in seen:
            problems.append(f"{where}: duplicate unordered pair")
        seen.add(key)
        if t.label == 1:
            if ra.speaker_id != rb.speaker_id:
                problems.append(f"{where}: positive pair with different speakers")
            if ra.session_id == rb.session_id:
                problems.append(f"{where}: positive pair from the same session")
        elif t.label == 0:
            if ra.speaker_id == rb.speaker_id:
                problems.append(f"{where}: negative pair with the same speaker")
            if ra.sex != rb.sex:
                problems.append(f"{where}: negative pair across sexes")
        else:
            problems.append(f"{where}: label must be 0 or 1")
    return problems


def save_trials(trials, path):
    with open(path, "w") as fh:
        for t in trials:
            fh.write(f"{t.label} {t.utt_a} {t.utt_b}\n")


def load_trials(path):
    trials = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}:{ln}: expected 'label id_a id_b', got {line!r}")
            trials.append(Trial(int(parts[0]), parts[1], parts[2]))
    return trials
