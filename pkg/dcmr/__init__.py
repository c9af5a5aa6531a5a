"""
dcmr: dual cross-modal text-to-video retrieval

Caption-conditioned video encoding trained with a dual English and
multilingual contrastive loss, over precomputed frame and caption embeddings.
"""

try:
    from ._version import version as __version__
except ImportError:
    __version__ = "0.0.0+unknown"

from .exceptions import (
    DcmrException,
    DimensionError,
    EmptyVideoError,
    ContractError,
    NumericError,
    NormalizationError,
    ConfigError,
    RoutingError,
    FormatError,
    DatasetError,
    StorageError,
    BackendError,
    ProtocolError,
    UsageError,
)
from .logger import Logger, LogLevel, get_logger
from .config import Config, RunConfig, DcmConfig, LossConfig, TrainConfig, SynthConfig, EvalConfig
from .models import FrameEmbeddings, TextEmbedding, Triplet, RetrievalReport, EpochRecord
from .tensor import Tensor, GradTape, reverse_gradients, finite_diff_gradient
from .model import Branch, Mode, DcmParams, init_params, dcm_forward, dual_forward, route
from .loss import similarity_matrix, info_nce, total_loss
from .trainer import train_step, train_run, adamw_step, cosine_lr
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .evaluate import score_matrix, ranks_of_ground_truth, metrics_from_ranks, evaluate_split, rsum
from .archive import EmbeddingArchive, read_archive, write_archive
from .dataset import Dataset, load_manifest, batch_iter
from .synth import synth_generate, write_dataset
from .translate import TranslationJob, TranslationCache, MockTranslator, translate, augment_dataset
from .ablation import apply_preset, run_seeds

__all__ = [
    "DcmrException",
    "DimensionError",
    "EmptyVideoError",
    "ContractError",
    "NumericError",
    "NormalizationError",
    "ConfigError",
    "RoutingError",
    "FormatError",
    "DatasetError",
    "StorageError",
    "BackendError",
    "ProtocolError",
    "UsageError",
    "Logger",
    "LogLevel",
    "get_logger",
    "Config",
    "RunConfig",
    "DcmConfig",
    "LossConfig",
    "TrainConfig",
    "SynthConfig",
    "EvalConfig",
    "FrameEmbeddings",
    "TextEmbedding",
    "Triplet",
    "RetrievalReport",
    "EpochRecord",
    "Tensor",
    "GradTape",
    "reverse_gradients",
    "finite_diff_gradient",
    "Branch",
    "Mode",
    "DcmParams",
    "init_params",
    "dcm_forward",
    "dual_forward",
    "route",
    "similarity_matrix",
    "info_nce",
    "total_loss",
    "train_step",
    "train_run",
    "adamw_step",
    "cosine_lr",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "score_matrix",
    "ranks_of_ground_truth",
    "metrics_from_ranks",
    "evaluate_split",
    "rsum",
    "EmbeddingArchive",
    "read_archive",
    "write_archive",
    "Dataset",
    "load_manifest",
    "batch_iter",
    "synth_generate",
    "write_dataset",
    "TranslationJob",
    "TranslationCache",
    "MockTranslator",
    "translate",
    "augment_dataset",
    "apply_preset",
    "run_seeds",
]
