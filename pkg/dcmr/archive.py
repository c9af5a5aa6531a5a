"""
Embedding archive parsing and serialization

Layout (all integers little-endian):

    "EMB1" | u32 version | u32 dim | u32 count
    count × ( u16 id_len | id utf-8 | u16 n | n·dim f32 )

Vectors are stored as 32-bit floats and promoted to 64-bit on load.
"""

import os
import struct
import tempfile
from dataclasses import dataclass, field
from io import BytesIO
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .exceptions import DimensionError, FormatError, NumericError, StorageError
from .logger import get_logger

MAGIC = b"EMB1"
VERSION = 1
HEADER = struct.Struct("<4sIII")

PathLike = Union[str, Path]


@dataclass(eq=False)
class EmbeddingArchive:
    """Named vector groups sharing one dimension"""
    dim: int
    records: List[Tuple[str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.dim <= 0:
            raise DimensionError(f"archive dim must be positive, got {self.dim}")
        seen = set()
        checked = []
        for record_id, vectors in self.records:
            matrix = np.asarray(vectors, dtype=np.float64)
            if matrix.ndim == 1:
                matrix = matrix.reshape(1, -1)
            if matrix.ndim != 2 or matrix.shape[1] != self.dim or matrix.shape[0] == 0:
                raise DimensionError(
                    f"record {record_id!r} has shape {matrix.shape}, expected n×{self.dim}")
            if not np.isfinite(matrix).all():
                raise NumericError(f"record {record_id!r} has non-finite values")
            if record_id in seen:
                raise FormatError(f"duplicate record id {record_id!r}")
            seen.add(record_id)
            checked.append((record_id, matrix))
        self.records = checked
        self._index: Optional[Dict[str, int]] = None

    def __eq__(self, other):
        if not isinstance(other, EmbeddingArchive) or self.dim != other.dim:
            return False
        if self.ids() != other.ids():
            return False
        return all(np.array_equal(a, b) for (_, a), (_, b) in zip(self.records, other.records))

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._ids()

    def ids(self) -> List[str]:
        return [record_id for record_id, _ in self.records]

    def get(self, record_id: str) -> np.ndarray:
        return self.records[self._ids()[record_id]][1]

    def _ids(self) -> Dict[str, int]:
        if self._index is None:
            self._index = {record_id: i for i, (record_id, _) in enumerate(self.records)}
        return self._index


class ArchiveParser:
    """Parse an embedding archive, tracking the byte offset for errors"""

    def __init__(self, data: bytes, path: Optional[str] = None):
        self.data = BytesIO(data)
        self.size = len(data)
        self.path = path

    def fail(self, message: str, offset: Optional[int] = None) -> FormatError:
        return FormatError(message, self.data.tell() if offset is None else offset, self.path)

    def read_exact(self, n: int, what: str) -> bytes:
        offset = self.data.tell()
        chunk = self.data.read(n)
        if len(chunk) < n:
            raise self.fail(f"truncated {what}: need {n} bytes, found {len(chunk)}", offset)
        return chunk

    def read_u16(self, what: str) -> int:
        return struct.unpack("<H", self.read_exact(2, what))[0]

    def parse(self) -> EmbeddingArchive:
        magic = self.data.read(4)
        if magic != MAGIC:
            raise self.fail(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
        version, dim, count = struct.unpack("<III", self.read_exact(12, "header"))
        if version != VERSION:
            raise self.fail(f"unsupported archive version {version}", 4)
        if dim == 0:
            raise self.fail("archive dim is zero", 8)

        records = []
        seen = set()
        for _ in range(count):
            offset = self.data.tell()
            id_len = self.read_u16("id length")
            try:
                record_id = self.read_exact(id_len, "record id").decode("utf-8")
            except UnicodeDecodeError:
                raise self.fail("record id is not valid UTF-8", offset + 2)
            if record_id in seen:
                raise self.fail(f"duplicate record id {record_id!r}", offset)
            seen.add(record_id)
            n = self.read_u16("vector count")
            if n == 0:
                raise self.fail(f"record {record_id!r} has no vectors", self.data.tell() - 2)
            payload_offset = self.data.tell()
            payload = self.read_exact(4 * n * dim, f"payload of {record_id!r}")
            vectors = np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(n, dim)
            if not np.isfinite(vectors).all():
                raise self.fail(f"record {record_id!r} has non-finite values", payload_offset)
            records.append((record_id, vectors))

        if self.data.tell() != self.size:
            raise self.fail(f"{self.size - self.data.tell()} trailing bytes after {count} records")
        return EmbeddingArchive(dim, records)


def encode_archive(archive: EmbeddingArchive) -> bytes:
    out = BytesIO()
    out.write(HEADER.pack(MAGIC, VERSION, archive.dim, len(archive.records)))
    for record_id, vectors in archive.records:
        raw_id = record_id.encode("utf-8")
        if len(raw_id) > 0xFFFF or vectors.shape[0] > 0xFFFF:
            raise DimensionError(f"record {record_id!r} exceeds the u16 length fields")
        out.write(struct.pack("<H", len(raw_id)))
        out.write(raw_id)
        out.write(struct.pack("<H", vectors.shape[0]))
        out.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    return out.getvalue()


def write_bytes_atomic(path: PathLike, data: bytes) -> None:
    """Write to a sibling temp file, fsync, then rename over the target"""
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise StorageError(f"cannot write file ({e.strerror or e})", str(target))


def read_bytes(path: PathLike) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise StorageError(f"cannot read file ({e.strerror or e})", str(path))


def write_archive(archive: EmbeddingArchive, path: PathLike) -> None:
    data = encode_archive(archive)
    write_bytes_atomic(path, data)
    get_logger().verbose("wrote %d records (dim %d) to %s", len(archive), archive.dim, path)


def read_archive(path: PathLike) -> EmbeddingArchive:
    archive = ArchiveParser(read_bytes(path), str(path)).parse()
    get_logger().verbose("read %d records (dim %d) from %s", len(archive), archive.dim, path)
    return archive
