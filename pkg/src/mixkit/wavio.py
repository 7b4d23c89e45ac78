"""Mono 32-bit float WAV files (RIFF, format tag 3)."""

import os
import struct
import tempfile

import numpy as np

WAVE_FORMAT_IEEE_FLOAT = 3


class WavFormatError(ValueError):
    """Raised for malformed or unsupported WAV data."""


def encode_wav(samples, sample_rate: int) -> bytes:
    data = np.asarray(samples, dtype="<f4").reshape(-1)
    if not np.all(np.isfinite(data)):
        raise ValueError("samples must be finite")
    payload = data.tobytes()
    fmt = struct.pack("<HHIIHHH", WAVE_FORMAT_IEEE_FLOAT, 1, int(sample_rate),
                      int(sample_rate) * 4, 4, 32, 0)
    fact = struct.pack("<I", data.shape[0])
    body = (b"WAVE"
            + b"fmt " + struct.pack("<I", len(fmt)) + fmt
            + b"fact" + struct.pack("<I", len(fact)) + fact
            + b"data" + struct.pack("<I", len(payload)) + payload)
    return b"RIFF" + struct.pack("<I", len(body)) + body


def decode_wav(blob: bytes):
    """Parse WAV bytes; returns ``(samples float64, sample_rate)``."""
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise WavFormatError("not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        (size,) = struct.unpack_from("<I", blob, pos + 4)
        start = pos + 8
        if start + size > len(blob):
            raise WavFormatError(f"chunk {chunk_id!r} runs past end of file")
        if chunk_id == b"fmt ":
            if size < 16:
                raise WavFormatError("fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", blob, start)
        elif chunk_id == b"data":
            data = blob[start:start + size]
        pos = start + size + (size & 1)
    if fmt is None or data is None:
        raise WavFormatError("missing fmt or data chunk")
    tag, channels, sample_rate, _, block_align, bits = fmt
    if tag != WAVE_FORMAT_IEEE_FLOAT or bits != 32:
        raise WavFormatError(f"unsupported encoding (tag {tag}, {bits} bits); need 32-bit float")
    if channels != 1 or block_align != 4:
        raise WavFormatError(f"expected mono audio, got {channels} channels")
    if len(data) % 4:
        raise WavFormatError("data chunk is not a whole number of samples")
    return np.frombuffer(data, dtype="<f4").astype(np.float64), sample_rate


def atomic_write_bytes(path, blob: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_wav(path, samples, sample_rate: int):
    atomic_write_bytes(path, encode_wav(samples, sample_rate))


def read_wav(path):
    with open(path, "rb") as fh:
        return decode_wav(fh.read())
