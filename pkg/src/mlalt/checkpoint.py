"""Checkpoint container.

Layout (all integers little-endian)::

    b"MLALTCKPT\\0"                 10-byte magic
    uint32  format version (1)
    uint64  header length H
    H bytes UTF-8 JSON header (sorted keys)
    payload: parameter tensors as raw float64, concatenated in header order

The header carries ``model_config``, ``vocab`` (token list), ``vocab_sha256``,
``languages``, ``step``, ``valid_wer``, optional ``extra`` metadata and a
``tensors`` list of ``{name, shape, dtype, offset, nbytes}`` records whose
offsets are relative to the start of the payload.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .model import ALTModel, ModelConfig
from .vocab import Vocabulary

MAGIC = b"MLALTCKPT\x00"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict
    vocab: Vocabulary
    languages: list
    step: int = 0
    valid_wer: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def build_model(self) -> ALTModel:
        model = ALTModel(self.config)
        model.load_state_dict(self.state)
        return model


def save_checkpoint(path, model: ALTModel, vocab: Vocabulary, languages, step: int = 0,
                    valid_wer: Optional[float] = None, extra: Optional[dict] = None,
                    state: Optional[dict] = None) -> None:
    state = model.state_dict() if state is None else state
    records, chunks, offset = [], [], 0
    for name, arr in state.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        records.append({"name": name, "shape": list(arr.shape), "dtype": "<f8",
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "model_config": model.config.to_dict(),
        "vocab": list(vocab.tokens),
        "vocab_sha256": vocab.digest(),
        "languages": list(languages),
        "step": int(step),
        "valid_wer": None if valid_wer is None else float(valid_wer),
        "extra": extra or {},
        "tensors": records,
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ConfigError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", data, pos)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    pos += struct.calcsize("<IQ")
    header = json.loads(data[pos: pos + hlen].decode("utf-8"))
    payload = memoryview(data)[pos + hlen:]
    vocab = Vocabulary(header["vocab"])
    if vocab.digest() != header["vocab_sha256"]:
        raise ConfigError(f"{path}: vocabulary hash mismatch")
    state = {}
    for rec in header["tensors"]:
        buf = payload[rec["offset"]: rec["offset"] + rec["nbytes"]]
        state[rec["name"]] = np.frombuffer(buf, dtype=rec["dtype"]).astype(np.float64).reshape(rec["shape"])
    return Checkpoint(ModelConfig.from_dict(header["model_config"]), state, vocab, header["languages"],
                      header["step"], header["valid_wer"], header.get("extra", {}))
