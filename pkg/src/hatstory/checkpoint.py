"""Model checkpoints.

Layout: the 9-byte magic "HATSTORY1", a little-endian u64 byte length, a
UTF-8 JSON header (model dimensions, vocabulary, the resolved training
config, and an ordered name/shape manifest), then every tensor's float64
payload little-endian in manifest order. Saving, loading, and saving again
is byte-identical.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import Vocabulary
from .errors import CorruptionError, FormatError
from .model import ModelDims, ModelParams, init_model
from .tensor import Rng

MAGIC = b"HATSTORY1"
VERSION = 1


def _header_dict(params, vocab, config):
    return {
        "version": VERSION,
        "dims": {
            "k": params.dims.k,
            "d_s": params.dims.d_s,
            "d_g": params.dims.d_g,
            "d_w": params.dims.d_w,
            "vocab_size": params.dims.vocab_size,
            "t_steps": params.dims.t_steps,
        },
        "carry_state": params.carry_state,
        "config": config,
        "vocab": None
        if vocab is None
        else {"tokens": list(vocab.id_to_token), "min_count": vocab.min_count},
        "manifest": [[name, list(t.shape)] for name, t in params.named_tensors()],
    }


def save_checkpoint(params, vocab, config, path):
    """`config` is a plain JSON-safe dict (or None); `vocab` may be None for
    throwaway models."""
    header = json.dumps(
        _header_dict(params, vocab, config), sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        for _, t in params.named_tensors()
    )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)


@dataclass
class LoadedCheckpoint:
    params: ModelParams
    vocab: Vocabulary | None
    config: dict | None


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError("checkpoint: bad magic, not a model checkpoint")
    offset = len(MAGIC)
    if len(blob) < offset + 8:
        raise CorruptionError("checkpoint: truncated before header length")
    (header_len,) = struct.unpack_from("<Q", blob, offset)
    offset += 8
    if len(blob) < offset + header_len:
        raise CorruptionError("checkpoint: truncated header")
    try:
        header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptionError("checkpoint: header is not valid JSON") from None
    offset += header_len
    if header.get("version") != VERSION:
        raise FormatError(f"checkpoint: unsupported version {header.get('version')!r}")
    dims = ModelDims(**header["dims"])
    params = init_model(dims, Rng(0), carry_state=bool(header.get("carry_state", True)))
    manifest = header["manifest"]
    by_name = dict(params.named_tensors())
    if [m[0] for m in manifest] != [n for n, _ in params.named_tensors()]:
        raise FormatError("checkpoint: manifest does not match the model layout")
    expected = sum(int(np.prod(shape)) * 8 for _, shape in manifest)
    payload = blob[offset:]
    if len(payload) != expected:
        raise CorruptionError(
            f"checkpoint: payload holds {len(payload)} bytes, manifest expects {expected}"
        )
    pos = 0
    for name, shape in manifest:
        t = by_name[name]
        if list(t.shape) != list(shape):
            raise FormatError(
                f"checkpoint: tensor {name} has shape {shape}, model wants {list(t.shape)}"
            )
        count = int(np.prod(shape))
        t.data = (
            np.frombuffer(payload, dtype="<f8", count=count, offset=pos)
            .reshape(shape)
            .astype(np.float64)
        )
        pos += count * 8
    vocab = None
    if header.get("vocab") is not None:
        vocab = Vocabulary(
            header["vocab"]["tokens"], min_count=header["vocab"].get("min_count", 1)
        )
    return LoadedCheckpoint(params=params, vocab=vocab, config=header.get("config"))


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
