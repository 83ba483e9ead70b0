"""Checkpoint directory format, owned by the trainer.

manifest.json carries the format version, the resolved run config, the
vocabulary, the step and stream cursors, metric history, and a table mapping
record names to shapes and element offsets. params.bin is the flat
little-endian float64 concatenation of every record: parameters first, then
Adam first and second moments.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .config import RunConfig
from .corpus.vocab import Vocabulary
from .model import MtlModel

FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointManifestError(CheckpointError):
    pass


def save_checkpoint(out_dir, model, run_cfg, vocab, step=0, adam=None, streams=None,
                    best=None, patience=None, history=None):
    os.makedirs(out_dir, exist_ok=True)
    arrays = {}
    for name, p in model.named_parameters().items():
        arrays[f"param/{name}"] = p.data
    adam_t = None
    if adam is not None:
        adam_t = dict(adam.t)
        for name in adam.m:
            arrays[f"adam_m/{name}"] = adam.m[name]
            arrays[f"adam_v/{name}"] = adam.v[name]

    records = []
    offset = 0
    with open(os.path.join(out_dir, "params.bin"), "wb") as fh:
        for name in sorted(arrays):
            arr = arrays[name]
            records.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    manifest = {
        "format_version": FORMAT_VERSION,
        "config": run_cfg.to_dict(),
        "vocab": {"letters": vocab.letters, "word_sep": vocab.word_sep},
        "step": int(step),
        "adam_t": adam_t,
        "streams": streams or {},
        "best": best or {},
        "patience": patience or {},
        "history": history or [],
        "records": records,
        "total_elements": offset,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def _require(manifest, key):
    if key not in manifest:
        raise CheckpointManifestError(f"checkpoint manifest missing field {key!r}")
    return manifest[key]


def load_checkpoint(ckpt_dir):
    """Parsed manifest plus the record arrays; validates version and sizes."""
    manifest_path = os.path.join(ckpt_dir, "manifest.json")
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointManifestError(f"cannot read {manifest_path}: {e}") from None

    version = _require(manifest, "format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format {version} != supported {FORMAT_VERSION}")
    records = _require(manifest, "records")
    total = _require(manifest, "total_elements")
    for key in ("config", "vocab", "step"):
        _require(manifest, key)

    blob_path = os.path.join(ckpt_dir, "params.bin")
    blob = np.fromfile(blob_path, dtype="<f8")
    if blob.size != total:
        raise CheckpointTruncatedError(
            f"params.bin holds {blob.size} float64 values, manifest expects {total}"
        )

    arrays = {}
    for rec in records:
        for key in ("name", "shape", "offset"):
            if key not in rec:
                raise CheckpointManifestError(f"checkpoint record missing field {key!r}")
        shape = tuple(rec["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = rec["offset"]
        if start + size > blob.size:
            raise CheckpointTruncatedError(f"record {rec['name']!r} extends past end of params.bin")
        arrays[rec["name"]] = blob[start:start + size].reshape(shape).copy()
    return manifest, arrays


def restore_model_arrays(model, arrays):
    """Copy param/* records into the model in place; shapes must match."""
    params = model.named_parameters()
    for name, p in params.items():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointManifestError(f"checkpoint lacks parameter record {key!r}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointShapeError(
                f"{key}: checkpoint shape {arrays[key].shape} != model shape {p.data.shape}"
            )
        p.data = arrays[key].copy()


def model_from_checkpoint(ckpt_dir):
    """Rebuild (model, run_cfg, vocab) from a checkpoint directory."""
    manifest, arrays = load_checkpoint(ckpt_dir)
    run_cfg = RunConfig.from_dict(manifest["config"])
    vspec = manifest["vocab"]
    vocab = Vocabulary(vspec["letters"], vspec["word_sep"])
    model = MtlModel(run_cfg.encoder, run_cfg.heads, vocab.size, seed=run_cfg.trainer.seed)
    restore_model_arrays(model, arrays)
    return model, run_cfg, vocab
