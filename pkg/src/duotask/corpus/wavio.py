"""RIFF/WAVE PCM16 mono reader and writer.

Only the exact on-disk format the corpus uses is accepted: little-endian PCM,
16 bit, 1 channel, 16 kHz. Anything else is a hard error naming the offending
chunk or field, never a silent conversion.
"""

from __future__ import annotations

import struct

import numpy as np

SAMPLE_RATE = 16000
_SCALE = 32768.0


class WavFormatError(ValueError):
    pass


def write_wav(samples, path, sample_rate=SAMPLE_RATE):
    """Write float samples in [-1, 1] as PCM16 mono."""
    x = np.asarray(samples, dtype=np.float64)
    ints = np.clip(np.rint(x * _SCALE), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(payload)))
        fh.write(b"WAVE")
        fh.write(b"fmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)


def read_wav(path):
    """Read a PCM16 mono 16 kHz file into float64 samples in [-1, 1)."""
    with open(path, "rb") as fh:
        raw = fh.read()

    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise WavFormatError(f"{path}: missing RIFF chunk")
    if raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: RIFF form type is not WAVE")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: truncated '{cid.decode('ascii', 'replace')}' chunk")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise WavFormatError(f"{path}: missing 'fmt ' chunk")
    if data is None:
        raise WavFormatError(f"{path}: missing 'data' chunk")
    if len(fmt) < 16:
        raise WavFormatError(f"{path}: 'fmt ' chunk too short")

    audio_format, channels, rate, _byte_rate, _block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if audio_format != 1:
        raise WavFormatError(f"{path}: 'fmt ' codec {audio_format} is not PCM")
    if channels != 1:
        raise WavFormatError(f"{path}: 'fmt ' has {channels} channels, expected mono")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"{path}: 'fmt ' sample rate {rate} != {SAMPLE_RATE} (no resampling)")
    if bits != 16:
        raise WavFormatError(f"{path}: 'fmt ' has {bits}-bit samples, expected 16")

    ints = np.frombuffer(data, dtype="<i2")
    return ints.astype(np.float64) / _SCALE
