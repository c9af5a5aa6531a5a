"""
Tests for dcmr.checkpoint module
"""

import json
import struct

import numpy as np
import pytest

from dcmr.checkpoint import (
    MAGIC, Checkpoint, CheckpointParser, OptimizerState, checkpoint_roundtrip, encode_checkpoint,
    load_checkpoint, save_checkpoint,
)
from dcmr.config import LossConfig, TrainConfig
from dcmr.exceptions import FormatError, StorageError


@pytest.fixture
def checkpoint(small_dcm, small_params, rng):
    state = OptimizerState(
        step=3,
        m={n: rng.standard_normal(small_params.array(n).shape) for n in small_params.names()},
        v={n: rng.random(small_params.array(n).shape) for n in small_params.names()},
    )
    return Checkpoint(small_dcm, LossConfig(temperature=0.5), TrainConfig(seed=9, languages=["fr", "de"]),
                      small_params, state, epoch=2, rng={"seed": 9, "generator": "philox", "epoch": 2})


@pytest.mark.unit
class TestOptimizerState:
    """Test fresh optimizer state"""

    def test_zeros(self, small_params):
        state = OptimizerState.zeros(small_params)
        assert state.step == 0
        assert set(state.m) == set(small_params.names())
        assert all(not state.v[n].any() for n in small_params.names())


@pytest.mark.unit
class TestEncode:
    """Test the checkpoint layout"""

    def test_header(self, checkpoint):
        """Test magic, version and the JSON block"""
        data = encode_checkpoint(checkpoint)
        assert data[:4] == MAGIC
        version, block_len = struct.unpack("<II", data[4:12])
        assert version == 1
        header = json.loads(data[12:12 + block_len])
        assert header["step"] == 3
        assert header["epoch"] == 2
        assert header["languages"] == ["fr", "de"]
        assert header["config"]["loss"]["temperature"] == 0.5
        assert header["params"] == checkpoint.params.names()

    def test_deterministic(self, checkpoint):
        assert encode_checkpoint(checkpoint) == encode_checkpoint(checkpoint)


@pytest.mark.unit
class TestParse:
    """Test checkpoint parsing"""

    def test_round_trip_is_exact(self, checkpoint, tmp_path):
        """Test every tensor comes back bit for bit"""
        loaded = checkpoint_roundtrip(checkpoint, tmp_path / "run" / "c.dcmc")
        assert loaded.params == checkpoint.params
        assert loaded.dcm == checkpoint.dcm
        assert loaded.loss == checkpoint.loss
        assert loaded.train == checkpoint.train
        assert loaded.step == 3
        assert loaded.epoch == 2
        assert loaded.rng == checkpoint.rng
        for name in checkpoint.params.names():
            assert np.array_equal(loaded.state.m[name], checkpoint.state.m[name])
            assert np.array_equal(loaded.state.v[name], checkpoint.state.v[name])

    def test_bad_magic(self, checkpoint):
        data = b"XXXX" + encode_checkpoint(checkpoint)[4:]
        with pytest.raises(FormatError) as exc:
            CheckpointParser(data).parse()
        assert exc.value.offset == 0

    def test_bad_version(self, checkpoint):
        data = bytearray(encode_checkpoint(checkpoint))
        data[4:8] = struct.pack("<I", 2)
        with pytest.raises(FormatError) as exc:
            CheckpointParser(bytes(data)).parse()
        assert exc.value.offset == 4

    def test_bad_config_block(self, checkpoint):
        """Test an unreadable JSON block fails at the block start"""
        data = bytearray(encode_checkpoint(checkpoint))
        data[12] = ord("!")
        with pytest.raises(FormatError, match="config block") as exc:
            CheckpointParser(bytes(data)).parse()
        assert exc.value.offset == 12

    def test_truncated(self, checkpoint):
        """Test a cut-off tensor payload"""
        data = encode_checkpoint(checkpoint)[:-3]
        with pytest.raises(FormatError, match="truncated"):
            CheckpointParser(data, "c.dcmc").parse()

    def test_missing_tensor(self, checkpoint):
        """Test dropping the optimizer moments of the last parameter"""
        data = encode_checkpoint(checkpoint)
        last = checkpoint.params.names()[-1]
        raw = checkpoint.state.v[last]
        name = ("adam.v." + last).encode()
        tail = 2 + len(name) + 1 + 4 * raw.ndim + 8 * raw.size
        with pytest.raises(FormatError, match="missing tensor"):
            CheckpointParser(data[:-tail]).parse()

    def test_wrong_shape(self, checkpoint):
        """Test parameters must fit the stored model config"""
        data = encode_checkpoint(checkpoint)
        header_len = struct.unpack("<I", data[8:12])[0]
        header = json.loads(data[12:12 + header_len])
        header["config"]["dcm"]["fc_dim"] = 8
        block = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        patched = data[:8] + struct.pack("<I", len(block)) + block + data[12 + header_len:]
        with pytest.raises(FormatError):
            CheckpointParser(patched).parse()

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError):
            load_checkpoint(tmp_path / "absent.dcmc")

    def test_save_replaces(self, checkpoint, tmp_path):
        """Test saving twice keeps one file"""
        path = tmp_path / "c.dcmc"
        save_checkpoint(checkpoint, path)
        save_checkpoint(checkpoint, path)
        assert [p.name for p in tmp_path.iterdir()] == ["c.dcmc"]

    def test_oversized_dims(self, checkpoint):
        """Test huge stored dims fail cleanly instead of allocating"""
        data = bytearray(encode_checkpoint(checkpoint))
        block_len = struct.unpack("<I", data[8:12])[0]
        start = 12 + block_len
        name_len = struct.unpack("<H", data[start:start + 2])[0]
        rank_at = start + 2 + name_len
        rank = data[rank_at]
        assert rank >= 1
        data[rank_at + 1:rank_at + 1 + 4 * rank] = struct.pack(f"<{rank}I", *([0xFFFFFFFF] * rank))
        with pytest.raises(FormatError, match="payload") as exc:
            CheckpointParser(bytes(data)).parse()
        assert exc.value.offset == start

    def test_config_section_of_wrong_type(self, checkpoint):
        """Test a list where a config mapping belongs"""
        data = encode_checkpoint(checkpoint)
        header_len = struct.unpack("<I", data[8:12])[0]
        header = json.loads(data[12:12 + header_len])
        header["config"]["dcm"] = []
        block = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        patched = data[:8] + struct.pack("<I", len(block)) + block + data[12 + header_len:]
        with pytest.raises(FormatError, match="config block") as exc:
            CheckpointParser(patched).parse()
        assert exc.value.offset == 12
