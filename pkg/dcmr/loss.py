"""
Symmetric in-batch contrastive losses

For a B×B score matrix whose diagonal holds the matching pairs, the
video-to-text term takes a softmax over each row and the text-to-video
term a softmax over each column. The full objective adds both directions
for the English branch and for the multilingual branch.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .config import LossConfig
from .exceptions import ConfigError, DimensionError
from .tensor import (
    Tensor, add, constant, diag, exp, l2_normalize_rows, log_softmax_rows, matmul,
    scale, scale_by, select_row, stack_rows, sum_all, transpose,
)

V2T = "v2t"
T2V = "t2v"

Rows = Union[Tensor, Sequence[Tensor]]


@dataclass(frozen=True)
class SimilarityMatrix:
    """Square in-batch scores, matching pairs on the diagonal"""
    scores: Tensor
    size: int
    normalized: bool = False
    temperature: float = 1.0


def _as_matrix(rows: Rows) -> Tensor:
    if isinstance(rows, Tensor):
        if len(rows.shape) != 2:
            raise DimensionError(f"expected a B×D matrix, got shape {rows.shape}")
        return rows
    if not rows:
        raise DimensionError("similarity needs at least one vector")
    return stack_rows([r if isinstance(r, Tensor) else constant(r) for r in rows])


def _rescale(scores: Tensor, temperature: float, logit_scale: Optional[Tensor]) -> Tensor:
    if logit_scale is not None:
        return scale_by(scores, exp(logit_scale))
    if temperature != 1.0:
        return scale(scores, 1.0 / temperature)
    return scores


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")


def similarity_matrix(texts: Rows, videos: Rows, normalize: bool = False,
                      temperature: float = 1.0,
                      logit_scale: Optional[Tensor] = None) -> SimilarityMatrix:
    """scores[i][j] = <t_i, v_j> / temperature

    With logit_scale the scores are multiplied by exp(logit_scale) instead.
    """
    _check_temperature(temperature)
    t = _as_matrix(texts)
    v = _as_matrix(videos)
    if t.shape != v.shape:
        raise DimensionError(f"text batch {t.shape} and video batch {v.shape} differ")
    if normalize:
        t, v = l2_normalize_rows(t), l2_normalize_rows(v)
    scores = _rescale(matmul(t, transpose(v)), temperature, logit_scale)
    return SimilarityMatrix(scores, t.shape[0], normalize, temperature)


def cross_similarity_matrix(texts: Rows, videos: Sequence[Rows], normalize: bool = False,
                            temperature: float = 1.0,
                            logit_scale: Optional[Tensor] = None) -> SimilarityMatrix:
    """Scores where video j is re-encoded against every caption

    videos[i][j] is the representation of video j conditioned on caption i.
    """
    _check_temperature(temperature)
    t = _as_matrix(texts)
    if len(videos) != t.shape[0]:
        raise DimensionError("need one row of video representations per caption")
    if normalize:
        t = l2_normalize_rows(t)
    rows = []
    for i, per_caption in enumerate(videos):
        v = _as_matrix(per_caption)
        if v.shape != t.shape:
            raise DimensionError(f"conditioned videos for caption {i} have shape {v.shape}")
        if normalize:
            v = l2_normalize_rows(v)
        rows.append(matmul(select_row(t, i), transpose(v)))
    scores = _rescale(stack_rows(rows), temperature, logit_scale)
    return SimilarityMatrix(scores, t.shape[0], normalize, temperature)


def info_nce(s: SimilarityMatrix, direction: str) -> Tensor:
    """Mean negative log-probability of the diagonal under a row or column softmax"""
    scores = s.scores
    if len(scores.shape) != 2 or scores.shape[0] != scores.shape[1]:
        raise DimensionError(f"info_nce needs a square matrix, got {scores.shape}")
    if direction == V2T:
        logits = scores
    elif direction == T2V:
        logits = transpose(scores)
    else:
        raise ConfigError(f"unknown direction {direction!r}")
    log_probs = diag(log_softmax_rows(logits))
    return scale(sum_all(log_probs), -1.0 / scores.shape[0])


def branch_loss(s: SimilarityMatrix) -> Tensor:
    """Both directions for one branch"""
    return add(info_nce(s, V2T), info_nce(s, T2V))


def _weighted(term: Tensor, weight: float) -> Tensor:
    return term if weight == 1.0 else scale(term, weight)


def total_loss(s_e: SimilarityMatrix, s_m: Optional[SimilarityMatrix],
               weight_e: float = 1.0, weight_m: float = 1.0) -> Tensor:
    """Weighted sum of the English and multilingual branch losses

    A zero weight leaves that branch off the tape altogether.
    """
    if s_m is not None and s_e.size != s_m.size:
        raise DimensionError(f"batch sizes differ: {s_e.size} vs {s_m.size}")
    terms = []
    if weight_e != 0.0:
        terms.append(_weighted(branch_loss(s_e), weight_e))
    if weight_m != 0.0:
        if s_m is None:
            raise ConfigError("multilingual scores are required when weight_m is non-zero")
        terms.append(_weighted(branch_loss(s_m), weight_m))
    if not terms:
        raise ConfigError("at least one loss weight must be non-zero")
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return total


def loss_from_config(s_e: SimilarityMatrix, s_m: Optional[SimilarityMatrix],
                     config: LossConfig) -> Tensor:
    return total_loss(s_e, s_m, config.weight_e, config.weight_m)
