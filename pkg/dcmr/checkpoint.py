"""
Checkpoint serialization

Layout (all integers little-endian):

    "DCMC" | u32 version | u32 json_len | json config block
    then until EOF: u16 name_len | name | u8 rank | rank × u32 dims | f64 payload

Parameters are stored as "param.<name>", Adam moments as "adam.m.<name>"
and "adam.v.<name>".
"""

import json
import math
import struct
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .archive import read_bytes, write_bytes_atomic
from .config import DcmConfig, LossConfig, TrainConfig
from .exceptions import ConfigError, ContractError, DcmrException, FormatError
from .logger import get_logger
from .model import DcmParams

MAGIC = b"DCMC"
VERSION = 1

PARAM_PREFIX = "param."
M_PREFIX = "adam.m."
V_PREFIX = "adam.v."


@dataclass
class OptimizerState:
    """Adam moments per parameter and the number of steps taken"""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: DcmParams) -> "OptimizerState":
        return cls(
            step=0,
            m={name: np.zeros_like(params.array(name)) for name in params.names()},
            v={name: np.zeros_like(params.array(name)) for name in params.names()},
        )


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate a training run"""
    dcm: DcmConfig
    loss: LossConfig
    train: TrainConfig
    params: DcmParams
    state: OptimizerState
    epoch: int = 0
    rng: Dict[str, Any] = field(default_factory=dict)
    version: int = VERSION

    @property
    def step(self) -> int:
        return self.state.step

    def header(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "config": {
                "dcm": self.dcm.to_dict(),
                "loss": self.loss.to_dict(),
                "train": self.train.to_dict(),
            },
            "step": self.state.step,
            "epoch": self.epoch,
            "rng": self.rng,
            "languages": list(self.train.languages),
            "params": self.params.names(),
        }


def _pack_tensor(out: BytesIO, name: str, array: np.ndarray) -> None:
    raw_name = name.encode("utf-8")
    if len(raw_name) > 0xFFFF or array.ndim > 0xFF:
        raise ContractError(f"tensor {name!r} does not fit the checkpoint layout")
    out.write(struct.pack("<H", len(raw_name)))
    out.write(raw_name)
    out.write(struct.pack("<B", array.ndim))
    out.write(struct.pack(f"<{array.ndim}I", *array.shape))
    out.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    block = json.dumps(checkpoint.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", checkpoint.version, len(block)))
    out.write(block)
    for name in checkpoint.params.names():
        _pack_tensor(out, PARAM_PREFIX + name, checkpoint.params.array(name))
    for name in checkpoint.params.names():
        _pack_tensor(out, M_PREFIX + name, checkpoint.state.m[name])
        _pack_tensor(out, V_PREFIX + name, checkpoint.state.v[name])
    return out.getvalue()


class CheckpointParser:
    """Parse checkpoint bytes, reporting the offset of the first problem"""

    def __init__(self, data: bytes, path: Optional[str] = None):
        self.data = BytesIO(data)
        self.size = len(data)
        self.path = path

    def fail(self, message: str, offset: int) -> FormatError:
        return FormatError(message, offset, self.path)

    def read_exact(self, n: int, what: str) -> bytes:
        offset = self.data.tell()
        chunk = self.data.read(n)
        if len(chunk) < n:
            raise self.fail(f"truncated {what}: need {n} bytes, found {len(chunk)}", offset)
        return chunk

    def read_tensor(self) -> Tuple[str, np.ndarray]:
        offset = self.data.tell()
        (name_len,) = struct.unpack("<H", self.read_exact(2, "tensor name length"))
        try:
            name = self.read_exact(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise self.fail("tensor name is not valid UTF-8", offset + 2)
        (rank,) = struct.unpack("<B", self.read_exact(1, f"rank of {name}"))
        dims = struct.unpack(f"<{rank}I", self.read_exact(4 * rank, f"dims of {name}"))
        count = math.prod(dims)
        remaining = self.size - self.data.tell()
        if 8 * count > remaining:
            raise self.fail(f"payload of {name} needs {8 * count} bytes, {remaining} left", offset)
        payload = self.read_exact(8 * count, f"payload of {name}")
        return name, np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)

    def parse(self) -> Checkpoint:
        magic = self.data.read(4)
        if magic != MAGIC:
            raise self.fail(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
        version, block_len = struct.unpack("<II", self.read_exact(8, "header"))
        if version != VERSION:
            raise self.fail(f"unsupported checkpoint version {version}", 4)
        block_offset = self.data.tell()
        try:
            header = json.loads(self.read_exact(block_len, "config block").decode("utf-8"))
            config = header["config"]
            dcm = DcmConfig.from_dict(config["dcm"])
            loss = LossConfig.from_dict(config["loss"])
            train = TrainConfig.from_dict(config["train"])
            step = int(header["step"])
            epoch = int(header["epoch"])
            rng = dict(header.get("rng", {}))
            names: List[str] = list(header["params"])
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError,
                AttributeError, ConfigError) as e:
            raise self.fail(f"bad config block: {e}", block_offset)

        tensors: Dict[str, np.ndarray] = {}
        while self.data.tell() < self.size:
            offset = self.data.tell()
            name, array = self.read_tensor()
            if name in tensors:
                raise self.fail(f"duplicate tensor {name!r}", offset)
            tensors[name] = array

        try:
            params = DcmParams(dcm, {n: tensors[PARAM_PREFIX + n] for n in names})
            state = OptimizerState(
                step=step,
                m={n: tensors[M_PREFIX + n] for n in names},
                v={n: tensors[V_PREFIX + n] for n in names},
            )
        except KeyError as e:
            raise self.fail(f"missing tensor {e.args[0]!r}", self.size)
        except DcmrException as e:
            raise self.fail(str(e), self.size)
        return Checkpoint(dcm, loss, train, params, state, epoch, rng, version)


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> None:
    write_bytes_atomic(path, encode_checkpoint(checkpoint))
    get_logger().verbose("saved checkpoint at step %d to %s", checkpoint.step, path)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return CheckpointParser(read_bytes(path), str(path)).parse()


def checkpoint_roundtrip(checkpoint: Checkpoint, path: Union[str, Path]) -> Checkpoint:
    """Save then load"""
    save_checkpoint(checkpoint, path)
    return load_checkpoint(path)
