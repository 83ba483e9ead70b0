import numpy as np
import pytest

from duotask.config import RunConfig
from duotask.corpus import (CorpusConfig, CorpusManifest, generate_corpus,
                            generate_trials, split_manifest)
from duotask.seeds import derive_rng


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """8 speakers x 6 short utterances with splits and dev trials."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    cfg = CorpusConfig(n_speakers=8, utts_per_speaker=6, sessions_per_speaker=2,
                       letters="abcd", duration_range=(1.2, 2.4), seed=7)
    manifest = generate_corpus(cfg, str(root))
    train, val, dev = split_manifest(manifest, 4, 1, derive_rng(7, "split"))
    trials = generate_trials(dev, 30, 30, derive_rng(7, "trials"))
    return {
        "dir": str(root), "config": cfg, "vocab": cfg.vocabulary(),
        "manifest": manifest, "train": train, "val": val, "dev": dev,
        "trials": trials,
    }


def toy_run_config(**trainer_overrides):
    """A deliberately small model + schedule for fast trainer tests."""
    trainer = {
        "mode": "mtl_disjoint", "speaker_crop_s": 2.0,
        "speech_batch_samples": 120000, "speaker_batch_items": 4,
        "validate_every": 10, "early_stop_patience": 1000000,
        "total_steps": 50, "seed": 3,
    }
    trainer.update(trainer_overrides)
    return RunConfig.from_dict({
        "encoder": {"conv_channels": (8, 8, 16, 16), "dim": 16, "n_layers": 2,
                    "n_heads": 2, "ffn_dim": 32, "dropout": 0.0,
                    "time_mask_prob": 0.0, "feature_mask_prob": 0.0,
                    "pos_kernel": 7, "pos_groups": 2, "layerdrop": 0.0},
        "heads": {"speaker_pooling": "mean"},
        "losses": {"lambda_s": 0.5, "lambda_k": 0.5},
        "optim": {"peak_lr": 1e-3, "freeze_base_until": 0},
        "trainer": trainer,
    })


@pytest.fixture()
def run_config():
    return toy_run_config


def assert_params_equal(a, b):
    __tracebackhide__ = True
    for name in a:
        assert np.array_equal(a[name], b[name]), f"parameter {name} differs"


def param_snapshot(params):
    return {n: p.data.copy() for n, p in params.items()}
