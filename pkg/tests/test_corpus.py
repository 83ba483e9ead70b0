import os

import numpy as np
import pytest

from duotask.corpus import (AudioStore, CorpusConfig, CorpusManifest, ManifestRow,
                            SAMPLE_RATE, Trial, Vocabulary, WavFormatError, crop,
                            generate_corpus, generate_trials, load_trials,
                            padding_overhead, read_wav, save_trials,
                            session_condition, speaker_batches,
                            speaker_class_index, speaker_profile, speech_batches,
                            split_manifest, synthesize_utterance, validate_trials,
                            write_wav)
from duotask.corpus.manifest import check_row_against_file
from duotask.seeds import derive_rng


def test_generate_counts(tmp_path):
    cfg = CorpusConfig(n_speakers=2, utts_per_speaker=2, letters="ab",
                       duration_range=(1.0, 1.5), seed=1)
    man = generate_corpus(cfg, str(tmp_path))
    assert len(man) == 4
    wavs = list((tmp_path / "wavs").glob("*.wav"))
    assert len(wavs) == 4


def test_generate_deterministic(tmp_path):
    cfg = CorpusConfig(n_speakers=2, utts_per_speaker=2, letters="ab",
                       duration_range=(1.0, 1.5), seed=9)
    m1 = generate_corpus(cfg, str(tmp_path / "a"))
    m2 = generate_corpus(cfg, str(tmp_path / "b"))
    for r1, r2 in zip(m1.rows, m2.rows):
        b1 = open(m1.wav_path(r1), "rb").read()
        b2 = open(m2.wav_path(r2), "rb").read()
        assert b1 == b2


def test_content_and_speaker_channels_are_orthogonal():
    cfg = CorpusConfig(letters="ab", seed=4)
    vocab = cfg.vocabulary()
    spk = speaker_profile(cfg, 0)
    sess = session_condition(cfg, 0, 0)
    wav_ab = synthesize_utterance("ab", spk, sess, vocab, derive_rng(0, "x"))
    wav_ba = synthesize_utterance("ba", spk, sess, vocab, derive_rng(0, "x"))
    assert not np.array_equal(wav_ab, wav_ba)
    # same speaker profile used for both renderings
    assert speaker_profile(cfg, 0).pitch_offset_hz == spk.pitch_offset_hz


def test_speaker_sexes_and_offsets():
    cfg = CorpusConfig(seed=2)
    males = [speaker_profile(cfg, i) for i in range(0, 8, 2)]
    females = [speaker_profile(cfg, i) for i in range(1, 8, 2)]
    assert all(p.sex == "M" and p.pitch_offset_hz < 0 for p in males)
    assert all(p.sex == "F" and p.pitch_offset_hz > 0 for p in females)


def test_vocab_larger_than_slots_errors(tmp_path):
    letters = "".join(chr(ord("a") + i) for i in range(26)) + "".join(
        chr(ord("A") + i) for i in range(26))
    cfg = CorpusConfig(n_speakers=2, utts_per_speaker=2, letters=letters, seed=0)
    with pytest.raises(ValueError, match="tone slots"):
        generate_corpus(cfg, str(tmp_path))


def test_wav_silence_roundtrip(tmp_path):
    path = tmp_path / "silence.wav"
    write_wav(np.zeros(SAMPLE_RATE), path)
    samples = read_wav(path)
    assert len(samples) == 16000
    assert np.array_equal(samples, np.zeros(16000))


def test_wav_write_read_write_is_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
    write_wav(rng.uniform(-1, 1, 500), p1)
    write_wav(read_wav(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_wav_malformed_errors_name_chunk(tmp_path):
    good = tmp_path / "good.wav"
    write_wav(np.zeros(100), good)
    raw = good.read_bytes()

    bad = tmp_path / "bad1.wav"
    bad.write_bytes(b"JUNK" + raw[4:])
    with pytest.raises(WavFormatError, match="RIFF"):
        read_wav(bad)

    bad.write_bytes(raw[:8] + b"EVIL" + raw[12:])
    with pytest.raises(WavFormatError, match="WAVE"):
        read_wav(bad)

    bad.write_bytes(raw[:-20])
    with pytest.raises(WavFormatError, match="data"):
        read_wav(bad)


def test_wav_wrong_rate_rejected(tmp_path):
    path = tmp_path / "rate.wav"
    write_wav(np.zeros(100), path, sample_rate=8000)
    with pytest.raises(WavFormatError, match="8000"):
        read_wav(path)


def test_crop_lengths():
    rng = derive_rng(0, "crop")
    long = np.arange(12 * SAMPLE_RATE, dtype=np.float64)
    assert len(crop(long, 2.0, rng)) == 32000
    short = np.arange(int(1.5 * SAMPLE_RATE), dtype=np.float64)
    out = crop(short, 2.0, rng)
    assert len(out) == 24000 and np.array_equal(out, short)


def test_crop_first_mode_is_prefix():
    x = np.arange(5 * SAMPLE_RATE, dtype=np.float64)
    out = crop(x, 2.0, mode="first")
    assert np.array_equal(out, x[:32000])


def test_crop_rejects_bad_args():
    with pytest.raises(ValueError):
        crop(np.zeros(10), 0.0)
    with pytest.raises(ValueError):
        crop(np.zeros(100000), 2.0, mode="sideways")


def _fabricated_manifest(tmp_path, lengths, sexes=None):
    rows = []
    os.makedirs(tmp_path / "wavs", exist_ok=True)
    for i, n in enumerate(lengths):
        rel = os.path.join("wavs", f"u{i}.wav")
        write_wav(np.zeros(n), tmp_path / rel)
        sex = (sexes or ["M", "F"] * len(lengths))[i]
        rows.append(ManifestRow(f"u{i}", rel, f"spk{i % 3}", sex,
                                f"spk{i % 3}_s{i % 2}", "a b", n / SAMPLE_RATE))
    return CorpusManifest(rows, root=str(tmp_path))


def test_speech_batch_packing(tmp_path):
    man = _fabricated_manifest(tmp_path, [32000, 32000, 32000])
    vocab = Vocabulary("ab")
    batches = speech_batches(man, vocab, 64000, derive_rng(0, "e"), AudioStore(man))
    sizes = sorted(len(b.utt_ids) for b in batches)
    assert sizes == [1, 2]


def test_speech_batch_budget_error(tmp_path):
    man = _fabricated_manifest(tmp_path, [96000])
    with pytest.raises(ValueError, match="u0"):
        speech_batches(man, Vocabulary("ab"), 64000, derive_rng(0, "e"), AudioStore(man))


def test_speech_batch_true_lengths_within_budget(tiny_corpus):
    man = tiny_corpus["train"]
    store = AudioStore(man)
    budget = 80000
    for b in speech_batches(man, tiny_corpus["vocab"], budget, derive_rng(1, "e"), store):
        assert int(b.lengths.sum()) <= budget
        assert b.samples.shape[1] == b.lengths.max()


def test_bucketing_beats_random_on_padding(tmp_path):
    cfg = CorpusConfig(n_speakers=4, utts_per_speaker=10, letters="ab",
                       duration_range=(1.0, 8.0), seed=13)
    man = generate_corpus(cfg, str(tmp_path))
    store = AudioStore(man)
    vocab = cfg.vocabulary()
    budget = 400000
    bucketed = speech_batches(man, vocab, budget, derive_rng(0, "e"), store)
    bucketed_overhead = padding_overhead(bucketed)

    # baseline: same greedy packing over a random order
    rng = derive_rng(0, "rand")
    rows = list(man.rows)
    rng.shuffle(rows)
    random_batches = []
    cur, cur_max = [], 0
    n_of = {r.id: int(round(r.duration_s * SAMPLE_RATE)) for r in rows}
    for r in rows:
        new_max = max(cur_max, n_of[r.id])
        if cur and (len(cur) + 1) * new_max > budget:
            random_batches.append(cur)
            cur, cur_max, new_max = [], 0, n_of[r.id]
        cur.append(r)
        cur_max = new_max
    if cur:
        random_batches.append(cur)
    padded = sum(len(b) * max(n_of[r.id] for r in b) for b in random_batches)
    true = sum(n_of[r.id] for r in rows)
    random_overhead = (padded - true) / true

    assert bucketed_overhead <= 0.10
    assert bucketed_overhead < random_overhead


def test_speaker_batches_shapes(tiny_corpus):
    man = tiny_corpus["train"]
    idx = speaker_class_index(man)
    store = AudioStore(man)
    batches = speaker_batches(man, idx, 2.0, 4, derive_rng(0, "k"), store)
    assert sum(len(b.utt_ids) for b in batches) == len(man)
    for b in batches:
        assert b.samples.shape[1] <= 32000
        assert np.array_equal(
            b.labels, [idx[man.by_id[u].speaker_id] for u in b.utt_ids])


def test_speaker_batch_counting(tmp_path):
    man = _fabricated_manifest(tmp_path, [16000] * 4)
    idx = speaker_class_index(man)
    batches = speaker_batches(man, idx, 1.0, 2, derive_rng(0, "k"), AudioStore(man))
    assert len(batches) == 2


def test_speaker_class_index_roundtrip(tiny_corpus):
    idx = speaker_class_index(tiny_corpus["train"])
    speakers = sorted(tiny_corpus["train"].speakers())
    assert sorted(idx.values()) == list(range(len(speakers)))
    back = {v: k for k, v in idx.items()}
    assert [back[idx[s]] for s in speakers] == speakers


def test_speaker_batches_unknown_speaker(tmp_path):
    man = _fabricated_manifest(tmp_path, [16000] * 2)
    with pytest.raises(ValueError, match="missing"):
        speaker_batches(man, {"other": 0}, 1.0, 2, derive_rng(0, "k"), AudioStore(man))


def test_batch_stream_reproducible(tiny_corpus):
    man = tiny_corpus["train"]
    vocab = tiny_corpus["vocab"]
    mk = lambda: speech_batches(man, vocab, 100000, derive_rng(5, "e", 0), AudioStore(man))
    a, b = mk(), mk()
    assert [x.utt_ids for x in a] == [y.utt_ids for y in b]
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))


def test_trials_single_session_errors(tmp_path):
    rows = []
    os.makedirs(tmp_path / "wavs", exist_ok=True)
    for i in range(4):
        rel = os.path.join("wavs", f"u{i}.wav")
        write_wav(np.zeros(16000), tmp_path / rel)
        rows.append(ManifestRow(f"u{i}", rel, f"spk{i % 2}", "M",
                                f"spk{i % 2}_s0", "a", 1.0))
    man = CorpusManifest(rows, root=str(tmp_path))
    with pytest.raises(ValueError, match="session"):
        generate_trials(man, 1, 1, derive_rng(0, "t"))


def test_trials_all_same_sex_negatives(tmp_path):
    man = _fabricated_manifest(tmp_path, [16000] * 6, sexes=["M"] * 6)
    trials = generate_trials(man, 2, 5, derive_rng(0, "t"))
    for t in trials:
        if t.label == 0:
            assert man.by_id[t.utt_a].sex == man.by_id[t.utt_b].sex == "M"


def test_generated_trials_pass_independent_validator(tiny_corpus):
    assert validate_trials(tiny_corpus["trials"], tiny_corpus["dev"]) == []


def test_validator_catches_planted_violations(tiny_corpus):
    dev = tiny_corpus["dev"]
    rows = dev.rows
    same_session = [r for r in rows if r.session_id == rows[0].session_id][:2]
    bad = [
        Trial(1, same_session[0].id, same_session[1].id),
        Trial(1, rows[0].id, "nope"),
        Trial(0, rows[0].id, rows[1].id) if rows[0].speaker_id == rows[1].speaker_id
        else Trial(0, rows[0].id, next(r.id for r in rows if r.speaker_id == rows[0].speaker_id and r.id != rows[0].id)),
    ]
    problems = validate_trials(bad, dev)
    assert len(problems) >= 3


def test_trials_file_roundtrip(tmp_path, tiny_corpus):
    path = tmp_path / "trials.txt"
    save_trials(tiny_corpus["trials"], path)
    loaded = load_trials(path)
    assert loaded == tiny_corpus["trials"]
    first = path.read_text().splitlines()[0].split(" ")
    assert first[0] in ("0", "1") and len(first) == 3


def test_manifest_roundtrip_and_duration(tmp_path):
    cfg = CorpusConfig(n_speakers=2, utts_per_speaker=2, letters="ab",
                       duration_range=(1.0, 1.5), seed=3)
    man = generate_corpus(cfg, str(tmp_path))
    loaded = CorpusManifest.load(os.path.join(str(tmp_path), "manifest.csv"))
    assert [r.id for r in loaded.rows] == [r.id for r in man.rows]
    assert all(check_row_against_file(loaded, r) for r in loaded.rows)


def test_manifest_duplicate_ids_rejected():
    rows = [ManifestRow("a", "x.wav", "s", "M", "s_s0", "a", 1.0)] * 2
    with pytest.raises(ValueError, match="duplicate"):
        CorpusManifest(rows)


def test_split_manifest_partitions(tiny_corpus):
    man, train, val, dev = (tiny_corpus[k] for k in ("manifest", "train", "val", "dev"))
    ids = lambda m: {r.id for r in m.rows}
    assert ids(train) | ids(val) | ids(dev) == ids(man)
    assert not ids(train) & ids(val)
    assert not (ids(train) | ids(val)) & ids(dev)
    dev_speakers = {r.speaker_id for r in dev.rows}
    assert not dev_speakers & {r.speaker_id for r in train.rows}
    assert {man.speakers()[s] for s in dev_speakers} == {"M", "F"}


def test_transcripts_within_vocab(tiny_corpus):
    vocab = tiny_corpus["vocab"]
    for r in tiny_corpus["manifest"].rows:
        vocab.encode(r.transcript)
        assert not r.transcript.startswith(" ") and not r.transcript.endswith(" ")


def test_utterances_at_least_half_second(tiny_corpus):
    assert all(r.duration_s >= 0.5 for r in tiny_corpus["manifest"].rows)


def test_samples_in_range(tiny_corpus):
    man = tiny_corpus["manifest"]
    s = man.load_samples(man.rows[0].id)
    assert np.abs(s).max() <= 1.0
