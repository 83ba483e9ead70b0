from .batching import (SpeakerBatch, SpeechBatch, crop, padding_overhead,
                       speaker_batches, speaker_class_index, speech_batches)
from .manifest import (AudioStore, CorpusManifest, ManifestRow, Utterance,
                       split_manifest)
from .synth import (CorpusConfig, SessionCondition, SpeakerProfile,
                    generate_corpus, load_vocab, sample_transcript,
                    session_condition, speaker_profile, synthesize_utterance)
from .trials import Trial, generate_trials, load_trials, save_trials, validate_trials
from .vocab import BLANK, Vocabulary
from .wavio import SAMPLE_RATE, WavFormatError, read_wav, write_wav
