"""MSW1 binary weight format.

Layout, all integers little-endian uint32:
  magic "MSW1"
  | config_len | config JSON (utf-8) |
  repeated per tensor:
  | name_len | name utf-8 | rank | dim_0 .. dim_{rank-1} | float64 LE row-major data |

The loader validates the tensor set and every shape against the config,
so a truncated or tampered file never yields a half-loaded model.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .encoder import EncoderConfig, ModelParameters, tensor_specs

MAGIC = b"MSW1"


class WeightFormatError(Exception):
    pass


def save_weights(params: ModelParameters, path) -> None:
    config_json = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(config_json)))
        fh.write(config_json)
        for name, tensor in params.tensors.items():
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise WeightFormatError(f"truncated weight file while reading {what}")
    return data


def load_weights(path) -> ModelParameters:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise WeightFormatError(f"{path}: not an MSW1 weight file")
        (config_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        try:
            config_dict = json.loads(_read_exact(fh, config_len, "config").decode("utf-8"))
            config = EncoderConfig(**config_dict)
        except (ValueError, TypeError) as exc:
            raise WeightFormatError(f"{path}: bad config block: {exc}") from None

        expected = {name: shape for name, shape, _ in tensor_specs(config)}
        tensors: dict[str, np.ndarray] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise WeightFormatError("truncated weight file while reading name length")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            if name not in expected:
                raise WeightFormatError(f"unknown tensor {name!r} for this config")
            if name in tensors:
                raise WeightFormatError(f"duplicate tensor {name!r}")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
            if dims != expected[name]:
                raise WeightFormatError(f"{name}: shape {dims} != expected {expected[name]}")
            count = int(np.prod(dims)) if dims else 1
            raw = _read_exact(fh, 8 * count, f"data of {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
        missing = set(expected) - set(tensors)
        if missing:
            raise WeightFormatError(f"missing tensors: {sorted(missing)}")
    return ModelParameters(config, tensors)


def file_model_id(path) -> str:
    """Stable short id for a weight file: first 12 hex of its sha256."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:12]


def vocab_sidecar_path(weights_path) -> Path:
    return Path(weights_path).with_suffix(".vocab.txt")


def freeze_sidecar_path(weights_path) -> Path:
    return Path(weights_path).with_suffix(".freeze.json")
