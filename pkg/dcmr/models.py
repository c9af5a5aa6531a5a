"""
Data models for embeddings, manifest items and retrieval reports
"""

import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .exceptions import ContractError, DimensionError, EmptyVideoError, NumericError


@dataclass(frozen=True)
class FrameEmbeddings:
    """Frame matrix of one video, the attention keys and values"""
    video_id: str
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise DimensionError(f"video {self.video_id}: frames must form a matrix")
        if matrix.shape[0] == 0:
            raise EmptyVideoError(f"video {self.video_id} has no frames")
        if not np.isfinite(matrix).all():
            raise NumericError(f"video {self.video_id} has non-finite frame values")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def num_frames(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class TextEmbedding:
    """Pooled caption vector tagged with its language"""
    caption_id: str
    language: str
    vector: np.ndarray

    def __post_init__(self):
        vector = np.array(self.vector, dtype=np.float64).reshape(-1)
        if vector.size == 0:
            raise DimensionError(f"caption {self.caption_id} has an empty vector")
        if not np.isfinite(vector).all():
            raise NumericError(f"caption {self.caption_id} has non-finite values")
        vector.setflags(write=False)
        object.__setattr__(self, "vector", vector)

    @property
    def dim(self) -> int:
        return self.vector.size


@dataclass
class ManifestItem:
    """One (video, captions per language) pairing"""
    video_id: str
    split: str
    captions: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "video_id": self.video_id,
            "split": self.split,
            "captions": dict(sorted(self.captions.items())),
        }


@dataclass
class Triplet:
    """Training example: frames with English and multilingual captions"""
    frames: FrameEmbeddings
    english: TextEmbedding
    multilingual: List[TextEmbedding] = field(default_factory=list)


@dataclass
class RetrievalReport:
    """Recall and rank summary for one direction"""
    direction: str
    r1: float
    r5: float
    r10: float
    medr: float
    mnr: float
    n: int
    branch: str = "E"
    language: str = "en"
    seed: Optional[int] = None
    config_hash: str = ""

    def __post_init__(self):
        if not (self.r1 <= self.r5 <= self.r10 <= 1.0):
            raise ContractError("recall values must satisfy R@1 <= R@5 <= R@10 <= 1")
        if self.medr < 1 or self.mnr < 1:
            raise ContractError("median and mean rank must be at least 1")

    @property
    def rsum(self) -> float:
        return self.r1 + self.r5 + self.r10

    def to_dict(self) -> Dict[str, Any]:
        return {
            "direction": self.direction,
            "branch": self.branch,
            "language": self.language,
            "r1": self.r1,
            "r5": self.r5,
            "r10": self.r10,
            "medr": self.medr,
            "mnr": self.mnr,
            "n": self.n,
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


@dataclass
class EpochRecord:
    """One line of the training log"""
    epoch: int
    mean_loss: float
    lr: float
    wall_ms: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "epoch": self.epoch,
            "mean_loss": self.mean_loss,
            "lr": self.lr,
            "wall_ms": self.wall_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())
