"""Binary checkpoint format.

Little-endian throughout: magic b"HARP", format version u32 = 1, six u32
config fields (vocab_size, d_model, n_layers, n_heads, d_ff, max_seq_len),
then the raw float32 tensors row-major in declaration order. No padding or
alignment gaps, so save/load round-trips bit-exactly.
"""

import hashlib
import struct
from pathlib import Path

import numpy as np

from .model import Checkpoint, LayerWeights, TransformerConfig, iter_tensors, tensor_layout

MAGIC = b"HARP"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sI6I")


class CheckpointError(Exception):
    """Base for checkpoint file problems."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    ckpt.validate()
    cfg = ckpt.config
    parts = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            cfg.vocab_size,
            cfg.d_model,
            cfg.n_layers,
            cfg.n_heads,
            cfg.d_ff,
            cfg.max_seq_len,
        )
    ]
    for _, arr, _ in iter_tensors(ckpt):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if len(data) < _HEADER.size:
        if data[:4] != MAGIC[: len(data)]:
            raise BadMagicError("not a checkpoint file")
        raise TruncatedFileError("file ends inside the header")
    magic, version, *fields = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic bytes {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"format version {version}, expected {FORMAT_VERSION}")
    try:
        config = TransformerConfig(*fields)
    except ValueError as exc:
        raise ShapeMismatchError(f"invalid config fields: {exc}") from exc

    layout = tensor_layout(config)
    expected = _HEADER.size + 4 * sum(int(np.prod(shape)) for _, shape in layout)
    if len(data) < expected:
        raise TruncatedFileError(f"file has {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise ShapeMismatchError(
            f"{len(data) - expected} trailing bytes beyond the declared tensors"
        )

    offset = _HEADER.size
    tensors: dict[str, np.ndarray] = {}
    for name, shape in layout:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        tensors[name] = arr.astype(np.float32).reshape(shape)
        offset += 4 * count

    layers = []
    for i in range(config.n_layers):
        layers.append(
            LayerWeights(**{f: tensors[f"layer{i}.{f}"] for f in LayerWeights.__annotations__})
        )
    ckpt = Checkpoint(
        config=config,
        token_embedding=tensors["token_embedding"],
        positional_embedding=tensors["positional_embedding"],
        layers=layers,
        final_ln_scale=tensors["final_ln_scale"],
        final_ln_shift=tensors["final_ln_shift"],
        lm_head=tensors["lm_head"],
    )
    try:
        ckpt.validate()
    except ValueError as exc:
        raise ShapeMismatchError(str(exc)) from exc
    return ckpt


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))


def load_checkpoint(path: str | Path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


def checkpoint_sha256(ckpt: Checkpoint) -> str:
    """Content hash of the serialized form; identifies a checkpoint in traces."""
    return hashlib.sha256(checkpoint_to_bytes(ckpt)).hexdigest()
