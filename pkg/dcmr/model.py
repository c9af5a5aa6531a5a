"""
Dual cross-modal encoder

A pooled caption vector is the single attention query; the frames of one
video are keys and values. Each branch (E for English captions, M for
every other language) owns its own projections, FC layer and layer norm:

    r_v = W_O · concat_h softmax(q_h K_hᵀ / √d) V_h
    R_v = LN(FC(dropout(r_v)) + r_v)

Parameter names are "<branch>.<block>.<tensor>", e.g. "E.0.w_q".
"""

import math
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .config import DcmConfig
from .exceptions import ContractError, DimensionError, EmptyVideoError, RoutingError
from .models import FrameEmbeddings, TextEmbedding
from .rng import STREAM_DROPOUT, check_seed, counter_rng
from .tensor import (
    GradTape, Tensor, add, concat_cols, constant, layer_norm, matmul, mean_rows, mul,
    slice_cols, softmax_rows, transpose,
)


class Branch(str, Enum):
    E = "E"
    M = "M"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


ATTENTION_TENSORS = ("w_q", "w_k", "w_v", "w_o")
BRANCH_STREAMS = {Branch.E: 0, Branch.M: 1}

# Optional learnable score scale, stored with the block parameters.
LOGIT_SCALE = "logit_scale"


def route(language: str, config: DcmConfig) -> Branch:
    """Branch a caption language is encoded by"""
    if language == "en":
        return Branch(config.english_branch)
    return Branch.M


def param_prefix(branch: Union[Branch, str], config: DcmConfig) -> str:
    if config.share_branches:
        return Branch.E.value
    return Branch(branch).value


def param_shapes(config: DcmConfig) -> Dict[str, Tuple[int, ...]]:
    """Every learnable tensor and its shape, in initialisation order"""
    config.validate()
    d, f = config.model_dim, config.fc_dim
    branches = [Branch.E] if config.share_branches else [Branch.E, Branch.M]
    shapes: Dict[str, Tuple[int, ...]] = {}
    for branch in branches:
        prefix = branch.value
        if config.encoder == "mean_pool":
            shapes[f"{prefix}.proj_w"] = (d, d)
            shapes[f"{prefix}.proj_b"] = (1, d)
            continue
        for block in range(config.depth):
            key = f"{prefix}.{block}"
            for name in ATTENTION_TENSORS:
                shapes[f"{key}.{name}"] = (d, d)
            if f == d:
                shapes[f"{key}.fc_w"] = (d, d)
                shapes[f"{key}.fc_b"] = (1, d)
            else:
                shapes[f"{key}.fc1_w"] = (d, f)
                shapes[f"{key}.fc1_b"] = (1, f)
                shapes[f"{key}.fc2_w"] = (f, d)
                shapes[f"{key}.fc2_b"] = (1, d)
            shapes[f"{key}.ln_gain"] = (d,)
            shapes[f"{key}.ln_bias"] = (d,)
    return shapes


class DcmParams:
    """Immutable set of named parameter arrays for one DcmConfig"""

    def __init__(self, config: DcmConfig, arrays: Mapping[str, np.ndarray]):
        self.config = config
        self._arrays: Dict[str, np.ndarray] = {}
        self._constants: Dict[str, Tensor] = {}
        for name, value in arrays.items():
            array = np.array(value, dtype=np.float64)
            array.setflags(write=False)
            self._arrays[name] = array
        expected = param_shapes(config)
        for name, shape in expected.items():
            if name not in self._arrays:
                raise ContractError(f"missing parameter {name}")
            if self._arrays[name].shape != shape:
                raise DimensionError(
                    f"parameter {name} has shape {self._arrays[name].shape}, expected {shape}")

    def names(self) -> List[str]:
        return list(self._arrays)

    def array(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def arrays(self) -> Dict[str, np.ndarray]:
        return dict(self._arrays)

    def tensor(self, name: str) -> Tensor:
        if name not in self._constants:
            self._constants[name] = constant(self._arrays[name])
        return self._constants[name]

    def replace(self, updates: Mapping[str, np.ndarray]) -> "DcmParams":
        """Copy with some tensors swapped or added"""
        merged = dict(self._arrays)
        merged.update(updates)
        return DcmParams(self.config, merged)

    def watch(self, tape: GradTape, names: Optional[List[str]] = None) -> "TrackedParams":
        """Register parameters as tape leaves"""
        chosen = self.names() if names is None else names
        tracked = {name: tape.watch(self.tensor(name)) for name in chosen}
        return TrackedParams(self, tracked)

    def __eq__(self, other):
        if not isinstance(other, DcmParams) or self.names() != other.names():
            return False
        return all(np.array_equal(self._arrays[n], other._arrays[n]) for n in self._arrays)

    def __repr__(self):
        return f"<DcmParams {len(self._arrays)} tensors, model_dim={self.config.model_dim}>"


class TrackedParams:
    """Parameter view whose tensors are leaves on a gradient tape"""

    def __init__(self, base: DcmParams, tracked: Mapping[str, Tensor]):
        self.config = base.config
        self._base = base
        self.tracked = dict(tracked)

    def tensor(self, name: str) -> Tensor:
        if name in self.tracked:
            return self.tracked[name]
        return self._base.tensor(name)


ParamSource = Union[DcmParams, TrackedParams]


def init_params(config: DcmConfig, seed: int) -> DcmParams:
    """Glorot-uniform weights, zero biases, unit layer-norm gain"""
    rng = np.random.default_rng(check_seed(seed))
    arrays = {}
    for name, shape in param_shapes(config).items():
        tensor_name = name.rsplit(".", 1)[-1]
        if tensor_name == "ln_gain":
            arrays[name] = np.ones(shape)
        elif tensor_name.endswith("_b") or tensor_name == "ln_bias":
            arrays[name] = np.zeros(shape)
        else:
            fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            arrays[name] = rng.uniform(-limit, limit, size=shape)
    return DcmParams(config, arrays)


def _text_row(text: Union[TextEmbedding, Tensor], dim: int) -> Tensor:
    if isinstance(text, TextEmbedding):
        row = constant(text.vector.reshape(1, -1))
    else:
        row = text if len(text.shape) == 2 else constant(text.data.reshape(1, -1))
    if row.shape != (1, dim):
        raise DimensionError(f"text vector has shape {row.shape}, model_dim is {dim}")
    return row


def _frame_matrix(frames: Union[FrameEmbeddings, Tensor], dim: int) -> Tensor:
    if isinstance(frames, FrameEmbeddings):
        matrix = constant(frames.matrix)
    else:
        matrix = frames
    if len(matrix.shape) != 2 or matrix.shape[0] == 0:
        raise EmptyVideoError("video has no frames")
    if matrix.shape[1] != dim:
        raise DimensionError(f"frame dim {matrix.shape[1]} differs from model_dim {dim}")
    return matrix


def _attend(query: Tensor, frames: Tensor, params: ParamSource, key: str) -> Tuple[Tensor, List[Tensor]]:
    config = params.config
    d = config.head_dim
    q = matmul(query, params.tensor(f"{key}.w_q"))
    k = matmul(frames, params.tensor(f"{key}.w_k"))
    v = matmul(frames, params.tensor(f"{key}.w_v"))
    heads, weights = [], []
    for h in range(config.num_heads):
        lo, hi = h * d, (h + 1) * d
        scores = matmul(slice_cols(q, lo, hi), transpose(slice_cols(k, lo, hi)))
        attention = softmax_rows(scores, 1.0 / math.sqrt(d))
        weights.append(attention)
        heads.append(matmul(attention, slice_cols(v, lo, hi)))
    joined = heads[0] if len(heads) == 1 else concat_cols(heads)
    return matmul(joined, params.tensor(f"{key}.w_o")), weights


def cross_attend(text: Union[TextEmbedding, Tensor], frames: Union[FrameEmbeddings, Tensor],
                 params: ParamSource, branch: Union[Branch, str], block: int = 0) -> Tensor:
    """Single-query multi-head attention of a caption over video frames, as a 1×D row"""
    dim = params.config.model_dim
    key = f"{param_prefix(branch, params.config)}.{block}"
    r, _ = _attend(_text_row(text, dim), _frame_matrix(frames, dim), params, key)
    return r


def attention_weights(text: Union[TextEmbedding, Tensor], frames: Union[FrameEmbeddings, Tensor],
                      params: ParamSource, branch: Union[Branch, str], block: int = 0) -> np.ndarray:
    """Per-head attention distribution over frames, shape (heads, frames)"""
    dim = params.config.model_dim
    key = f"{param_prefix(branch, params.config)}.{block}"
    _, weights = _attend(_text_row(text, dim), _frame_matrix(frames, dim), params, key)
    return np.vstack([w.data for w in weights])


def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rng is None or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, constant(keep))


def _fc(x: Tensor, params: ParamSource, key: str) -> Tensor:
    config = params.config
    if config.fc_dim == config.model_dim:
        return add(matmul(x, params.tensor(f"{key}.fc_w")), params.tensor(f"{key}.fc_b"))
    hidden = add(matmul(x, params.tensor(f"{key}.fc1_w")), params.tensor(f"{key}.fc1_b"))
    return add(matmul(hidden, params.tensor(f"{key}.fc2_w")), params.tensor(f"{key}.fc2_b"))


def dcm_forward(text: Union[TextEmbedding, Tensor], frames: Union[FrameEmbeddings, Tensor],
                params: ParamSource, branch: Union[Branch, str], mode: Union[Mode, str] = Mode.EVAL,
                dropout_seed: int = 0) -> Tensor:
    """Video representation conditioned on one caption, as a 1×D row"""
    config = params.config
    dim = config.model_dim
    prefix = param_prefix(branch, config)
    query = _text_row(text, dim)
    matrix = _frame_matrix(frames, dim)

    if config.encoder == "mean_pool":
        return add(matmul(mean_rows(matrix), params.tensor(f"{prefix}.proj_w")),
                   params.tensor(f"{prefix}.proj_b"))

    training = Mode(mode) == Mode.TRAIN and config.dropout_rate > 0.0
    out = query
    for block in range(config.depth):
        key = f"{prefix}.{block}"
        r, _ = _attend(out, matrix, params, key)
        rng = (counter_rng(dropout_seed, STREAM_DROPOUT, BRANCH_STREAMS[Branch(branch)], block)
               if training else None)
        hidden = _fc(_dropout(r, config.dropout_rate, rng), params, key)
        out = layer_norm(add(hidden, r), params.tensor(f"{key}.ln_gain"),
                         params.tensor(f"{key}.ln_bias"), config.ln_eps)
    return out


def dual_forward(english: TextEmbedding, multilingual: TextEmbedding,
                 frames: Union[FrameEmbeddings, Tensor], params: ParamSource,
                 mode: Union[Mode, str] = Mode.EVAL, seed: int = 0) -> Tuple[Tensor, Tensor]:
    """Both branch representations of one video"""
    if english.language != "en":
        raise RoutingError(f"english caption {english.caption_id} is tagged {english.language!r}")
    if multilingual.language == "en":
        raise RoutingError(f"multilingual caption {multilingual.caption_id} is tagged 'en'")
    config = params.config
    r_e = dcm_forward(english, frames, params, route("en", config), mode, seed)
    r_m = dcm_forward(multilingual, frames, params, Branch.M, mode, seed)
    return r_e, r_m


# --- batched evaluation path -------------------------------------------------

def _layer_norm_array(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
    return layer_norm(constant(x), constant(gain), constant(bias), eps).data


def encode_pairs(queries: np.ndarray, frame_stack: np.ndarray, params: DcmParams,
                 branch: Union[Branch, str]) -> np.ndarray:
    """Eval-mode representations for every (query, video) pair

    queries is Q×D, frame_stack is V×N×D (videos with equal frame counts).
    Returns Q×V×D; entry [i, j] equals dcm_forward(query i, video j).
    """
    config = params.config
    dim, heads, d = config.model_dim, config.num_heads, config.head_dim
    queries = np.asarray(queries, dtype=np.float64)
    frame_stack = np.asarray(frame_stack, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != dim:
        raise DimensionError(f"queries must be Q×{dim}, got {queries.shape}")
    if frame_stack.ndim != 3 or frame_stack.shape[2] != dim:
        raise DimensionError(f"frame stack must be V×N×{dim}, got {frame_stack.shape}")
    if frame_stack.shape[1] == 0:
        raise EmptyVideoError("video has no frames")
    n_q, n_v, n_f = queries.shape[0], frame_stack.shape[0], frame_stack.shape[1]
    prefix = param_prefix(branch, config)
    p = params.array

    if config.encoder == "mean_pool":
        pooled = frame_stack.mean(axis=1) @ p(f"{prefix}.proj_w") + p(f"{prefix}.proj_b")
        return np.broadcast_to(pooled, (n_q, n_v, dim)).copy()

    out = np.broadcast_to(queries[:, None, :], (n_q, n_v, dim))
    for block in range(config.depth):
        key = f"{prefix}.{block}"
        q = (out @ p(f"{key}.w_q")).reshape(n_q, n_v, heads, d)
        k = (frame_stack @ p(f"{key}.w_k")).reshape(n_v, n_f, heads, d)
        v = (frame_stack @ p(f"{key}.w_v")).reshape(n_v, n_f, heads, d)
        scores = np.einsum("qvhd,vnhd->qvhn", q, k) / math.sqrt(d)
        scores = scores - scores.max(axis=-1, keepdims=True)
        weights = np.exp(scores)
        weights = weights / weights.sum(axis=-1, keepdims=True)
        attended = np.einsum("qvhn,vnhd->qvhd", weights, v).reshape(n_q, n_v, dim)
        r = attended @ p(f"{key}.w_o")
        if config.fc_dim == dim:
            hidden = r @ p(f"{key}.fc_w") + p(f"{key}.fc_b")
        else:
            hidden = (r @ p(f"{key}.fc1_w") + p(f"{key}.fc1_b")) @ p(f"{key}.fc2_w") + p(f"{key}.fc2_b")
        out = _layer_norm_array(hidden + r, p(f"{key}.ln_gain"), p(f"{key}.ln_bias"), config.ln_eps)
    return np.array(out)
