"""
Checkpoints
===========

Binary model files, little-endian throughout:

    magic       4 bytes  b"RLGF"
    version     u32
    seed        u64
    kind        u32      0 = generator, 1 = discriminator
    arch        u32      0 = recurrent, 1 = attention
    V, d, h     u32 x 3
    L           u32      max response length (0 for a discriminator)
    positions   u32      max prompt length (generator) / max positions (discriminator)
    terminator  u32      1 if the last token id is the terminator
    temperature f64
    count       u32      number of tensors, then per tensor:
        name_len u32, name utf-8, rank u32, dims u32 x rank, values f64 x prod(dims)

Parameters round-trip bit for bit.
"""

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from diffcore import ParamStore
from discriminator import DiscModel, discriminator_shapes
from errors import CheckpointFormatError, InvalidInputError
from rlgaf_config import ARCH_ATTENTION, ARCH_RECURRENT, CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from seqmodel import GenModel, generator_shapes


KIND_GENERATOR = 0
KIND_DISCRIMINATOR = 1
ARCH_CODES = {ARCH_RECURRENT: 0, ARCH_ATTENTION: 1}
ARCH_NAMES = {code: name for name, code in ARCH_CODES.items()}

HEADER = struct.Struct("<4sIQIIIIIIIId")
U32 = struct.Struct("<I")

Model = Union[GenModel, DiscModel]


@dataclass
class Checkpoint:
    model: Model
    seed: int


def _encode_tensors(params: ParamStore) -> bytes:
    parts = [U32.pack(len(params))]
    for name, array in params.items():
        encoded = name.encode("utf-8")
        parts.append(U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(U32.pack(array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(model: Model, path: Path, seed: int = 0) -> None:
    if isinstance(model, GenModel):
        header = HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, seed, KIND_GENERATOR,
            ARCH_CODES[model.architecture], model.vocab_size, model.embed_dim, model.hidden_dim,
            model.max_response_len, model.max_prompt_len, int(model.has_terminator),
            model.temperature,
        )
    elif isinstance(model, DiscModel):
        header = HEADER.pack(
            CHECKPOINT_MAGIC, CHECKPOINT_VERSION, seed, KIND_DISCRIMINATOR,
            ARCH_CODES[model.architecture], model.vocab_size, model.embed_dim, model.hidden_dim,
            0, model.max_positions, 0, 1.0,
        )
    else:
        raise InvalidInputError(f"cannot checkpoint a {type(model).__name__}")
    Path(path).write_bytes(header + _encode_tensors(model.params))


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointFormatError(
                f"{self.path}: truncated at byte {len(self.data)} (needed {end})"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return U32.unpack(self.take(U32.size))[0]


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint; bad magic, version, shapes or truncation raise CheckpointFormatError."""
    data = Path(path).read_bytes()
    reader = _Reader(data, path)
    (magic, version, seed, kind, arch_code, vocab, embed, hidden,
     max_len, positions, terminator, temperature) = HEADER.unpack(reader.take(HEADER.size))
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}"
        )
    if arch_code not in ARCH_NAMES or kind not in (KIND_GENERATOR, KIND_DISCRIMINATOR):
        raise CheckpointFormatError(f"{path}: unknown model kind {kind} or architecture {arch_code}")
    architecture = ARCH_NAMES[arch_code]

    entries = {}
    for _ in range(reader.u32()):
        raw_name = reader.take(reader.u32())
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(
                f"{path}: tensor name is not UTF-8 at byte {reader.offset - len(raw_name) + exc.start}"
            ) from exc
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}I", reader.take(4 * rank))
        count = math.prod(dims)
        if 8 * count > len(data) - reader.offset:
            raise CheckpointFormatError(
                f"{path}: truncated tensor {name!r}, shape {dims} needs {8 * count} bytes, "
                f"{len(data) - reader.offset} remain"
            )
        values = np.frombuffer(reader.take(8 * count), dtype="<f8").astype(np.float64)
        entries[name] = values.reshape(dims)
    if reader.offset != len(data):
        raise CheckpointFormatError(f"{path}: {len(data) - reader.offset} trailing bytes")

    if kind == KIND_GENERATOR:
        expected = generator_shapes(architecture, vocab, embed, hidden, positions + max_len)
    else:
        expected = discriminator_shapes(architecture, vocab, embed, hidden, positions)
    actual = {name: array.shape for name, array in entries.items()}
    if actual != {name: tuple(shape) for name, shape in expected.items()}:
        raise CheckpointFormatError(f"{path}: tensor table does not match the model dimensions")
    try:
        params = ParamStore({name: entries[name] for name in expected})
    except InvalidInputError as e:
        raise CheckpointFormatError(f"{path}: {e}")

    if kind == KIND_GENERATOR:
        model = GenModel(
            vocab_size=vocab,
            embed_dim=embed,
            hidden_dim=hidden,
            max_response_len=max_len,
            params=params,
            architecture=architecture,
            max_prompt_len=positions,
            has_terminator=bool(terminator),
            temperature=temperature,
        )
    else:
        model = DiscModel(
            vocab_size=vocab,
            embed_dim=embed,
            hidden_dim=hidden,
            params=params,
            architecture=architecture,
            max_positions=positions,
        )
    return Checkpoint(model, seed)


def load_generator(path: Path) -> GenModel:
    model = load_checkpoint(path).model
    if not isinstance(model, GenModel):
        raise CheckpointFormatError(f"{path}: holds a discriminator, expected a generator")
    return model


def load_discriminator(path: Path) -> DiscModel:
    model = load_checkpoint(path).model
    if not isinstance(model, DiscModel):
        raise CheckpointFormatError(f"{path}: holds a generator, expected a discriminator")
    return model
