"""
Unit tests for model checkpoints in checkpoint.py.
"""

import struct

import pytest

from checkpoint import HEADER, load_checkpoint, load_discriminator, load_generator, save_checkpoint
from errors import CheckpointFormatError
from seqmodel import greedy_decode
from tests.conftest import make_disc, make_gen


def assert_bitwise_equal(a, b):
    assert sorted(a.names()) == sorted(b.names())
    for name in a.names():
        assert a[name].shape == b[name].shape
        assert a[name].tobytes() == b[name].tobytes()


class TestGeneratorCheckpoint:
    """Tests for generator save/load."""

    def test_parameters_survive_bit_for_bit(self, tmp_path):
        gen = make_gen(seed=3, vocab_size=5, max_response_len=4, has_terminator=True)
        save_checkpoint(gen, tmp_path / "g.ckpt", seed=42)
        loaded = load_checkpoint(tmp_path / "g.ckpt")
        assert loaded.seed == 42
        assert_bitwise_equal(gen.params, loaded.model.params)
        assert loaded.model.has_terminator and loaded.model.max_response_len == 4

    def test_loaded_model_decodes_identically(self, tmp_path):
        gen = make_gen(seed=4, architecture="attention")
        save_checkpoint(gen, tmp_path / "g.ckpt")
        loaded = load_generator(tmp_path / "g.ckpt")
        assert loaded.architecture == "attention"
        assert greedy_decode(loaded, (1, 2)) == greedy_decode(gen, (1, 2))

    def test_kind_mismatch(self, tmp_path):
        save_checkpoint(make_gen(), tmp_path / "g.ckpt")
        with pytest.raises(CheckpointFormatError):
            load_discriminator(tmp_path / "g.ckpt")


class TestDiscriminatorCheckpoint:
    """Tests for discriminator save/load."""

    def test_round_trip(self, tmp_path):
        disc = make_disc(seed=6, max_positions=10)
        save_checkpoint(disc, tmp_path / "d.ckpt")
        loaded = load_discriminator(tmp_path / "d.ckpt")
        assert loaded.max_positions == 10
        assert_bitwise_equal(disc.params, loaded.params)

    def test_kind_mismatch(self, tmp_path):
        save_checkpoint(make_disc(), tmp_path / "d.ckpt")
        with pytest.raises(CheckpointFormatError):
            load_generator(tmp_path / "d.ckpt")


class TestCorruptCheckpoint:
    """Tests for malformed checkpoint files."""

    def write(self, tmp_path):
        path = tmp_path / "g.ckpt"
        save_checkpoint(make_gen(seed=1), path)
        return path, path.read_bytes()

    def test_bad_magic(self, tmp_path):
        path, data = self.write(tmp_path)
        path.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_wrong_version(self, tmp_path):
        path, data = self.write(tmp_path)
        path.write_bytes(data[:4] + (99).to_bytes(4, "little") + data[8:])
        with pytest.raises(CheckpointFormatError, match="version"):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path, data = self.write(tmp_path)
        path.write_bytes(data[:-5])
        with pytest.raises(CheckpointFormatError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path, data = self.write(tmp_path)
        path.write_bytes(data + b"\x00")
        with pytest.raises(CheckpointFormatError, match="trailing"):
            load_checkpoint(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.ckpt"
        path.write_bytes(b"")
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_tensor_name_must_be_utf8(self, tmp_path):
        path, data = self.write(tmp_path)
        name_at = HEADER.size + 8
        path.write_bytes(data[:name_at] + b"\xff" + data[name_at + 1:])
        with pytest.raises(CheckpointFormatError, match="not UTF-8"):
            load_checkpoint(path)

    def test_oversized_dims_rejected_before_reading(self, tmp_path):
        path, data = self.write(tmp_path)
        huge = 2**32 - 1
        tensor = struct.pack("<II1sI2I", 1, 1, b"x", 2, huge, huge)
        path.write_bytes(data[:HEADER.size] + tensor + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError, match="truncated tensor 'x'"):
            load_checkpoint(path)
