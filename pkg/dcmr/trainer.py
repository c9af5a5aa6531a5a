"""
Mini-batch training with AdamW and cosine learning-rate decay

One step: seeded batch -> dual forward (each video conditioned on its own
caption, or on every caption with cross conditioning) -> total loss ->
reverse gradients -> AdamW. Every random draw is keyed by (seed, epoch,
step, item), so a run resumed from a checkpoint matches an uninterrupted
one exactly.
"""

import dataclasses
import json
import math
import time
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .checkpoint import Checkpoint, OptimizerState, save_checkpoint
from .config import DcmConfig, LossConfig, TrainConfig
from .dataset import Dataset, LanguageSampler, batch_count, batch_iter
from .exceptions import ConfigError, ContractError, NumericError
from .logger import get_logger
from .loss import branch_loss, cross_similarity_matrix, similarity_matrix, total_loss
from .model import (
    LOGIT_SCALE, Branch, DcmParams, Mode, TrackedParams, dcm_forward, dual_forward, init_params, route,
)
from .models import EpochRecord, Triplet
from .rng import STREAM_DROPOUT, derive_seed
from .tensor import GradTape, Tensor, add, named_gradients, scale


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """Cosine decay from lr_max at step 0 to lr_min at total_steps, no warmup"""
    if total_steps < 1:
        raise ContractError(f"total_steps must be at least 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(params: DcmParams, grads: Mapping[str, np.ndarray], state: OptimizerState,
               lr: float, config: TrainConfig) -> Tuple[DcmParams, OptimizerState]:
    """Bias-corrected Adam with decoupled weight decay θ ← θ − lr·wd·θ"""
    for name, grad in grads.items():
        if np.shape(grad) != params.array(name).shape:
            raise ContractError(f"gradient for {name} has shape {np.shape(grad)}")
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient for {name} at step {state.step + 1}")

    t = state.step + 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    updated, m_new, v_new = {}, {}, {}
    for name in params.names():
        theta = params.array(name)
        g = np.asarray(grads.get(name, np.zeros_like(theta)), dtype=np.float64)
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        decayed = theta - lr * config.weight_decay * theta
        step_size = lr * (m / correction1) / (np.sqrt(v / correction2) + config.adam_eps)
        updated[name] = decayed - step_size
        m_new[name], v_new[name] = m, v
        if not np.isfinite(updated[name]).all():
            raise NumericError(f"parameter {name} became non-finite at step {t}")
    return params.replace(updated), OptimizerState(t, m_new, v_new)


def init_training_params(dcm: DcmConfig, loss: LossConfig, seed: int) -> DcmParams:
    params = init_params(dcm, seed)
    if loss.learn_temperature:
        params = params.replace({LOGIT_SCALE: np.array([math.log(1.0 / loss.temperature)])})
    return params


def _scores(texts: List[Tensor], reps, loss: LossConfig, logit_scale: Optional[Tensor], cross: bool):
    build = cross_similarity_matrix if cross else similarity_matrix
    return build(texts, reps, loss.normalize, loss.temperature, logit_scale)


def _text_rows(captions) -> List[Tensor]:
    return [Tensor(c.vector.reshape(1, -1)) for c in captions]


def batch_loss(batch: Sequence[Triplet], params: TrackedParams, loss: LossConfig,
               dropout_seeds: Sequence[int], mode: Mode = Mode.TRAIN) -> Tensor:
    """Total contrastive loss of one batch on the tape that tracks params"""
    config = params.config
    logit_scale = params.tracked.get(LOGIT_SCALE)
    cross = loss.conditioning == "cross"
    use_e = loss.weight_e != 0.0
    use_m = loss.weight_m != 0.0
    n_langs = len(batch[0].multilingual)
    if not (use_e or use_m):
        raise ConfigError("at least one loss weight must be non-zero")
    if use_m and n_langs == 0:
        raise ConfigError("weight_m is non-zero but no multilingual language is configured")
    english_branch = route("en", config)

    def conditioned(captions, branch):
        if cross:
            return [[dcm_forward(c, t.frames, params, branch, mode, dropout_seeds[j])
                     for j, t in enumerate(batch)] for c in captions]
        return [dcm_forward(c, t.frames, params, branch, mode, dropout_seeds[i])
                for i, (c, t) in enumerate(zip(captions, batch))]

    english = [t.english for t in batch]
    s_e = s_m = None
    if use_e and use_m and not cross:
        pairs = [dual_forward(t.english, t.multilingual[0], t.frames, params, mode, dropout_seeds[i])
                 for i, t in enumerate(batch)]
        s_e = _scores(_text_rows(english), [p[0] for p in pairs], loss, logit_scale, False)
        first = [t.multilingual[0] for t in batch]
        s_m = _scores(_text_rows(first), [p[1] for p in pairs], loss, logit_scale, False)
    else:
        if use_e:
            s_e = _scores(_text_rows(english), conditioned(english, english_branch), loss, logit_scale, cross)
        if use_m:
            first = [t.multilingual[0] for t in batch]
            s_m = _scores(_text_rows(first), conditioned(first, Branch.M), loss, logit_scale, cross)
    if s_e is None:
        s_e = s_m

    total = total_loss(s_e, s_m, loss.weight_e if use_e else 0.0, loss.weight_m)
    for p in range(1, n_langs if use_m else 0):
        captions = [t.multilingual[p] for t in batch]
        extra = branch_loss(_scores(_text_rows(captions), conditioned(captions, Branch.M),
                                    loss, logit_scale, cross))
        total = add(total, extra if loss.weight_m == 1.0 else scale(extra, loss.weight_m))
    return total


def train_step(batch: Sequence[Triplet], params: DcmParams, loss: LossConfig, seed: int,
               epoch: int, step: int) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss value and gradient for every parameter"""
    tape = GradTape()
    tracked = params.watch(tape)
    seeds = [derive_seed(seed, STREAM_DROPOUT, epoch, step, i) for i in range(len(batch))]
    try:
        value = batch_loss(batch, tracked, loss, seeds)
        grads = named_gradients(tape, value, tracked.tracked)
    except NumericError as e:
        raise NumericError(f"epoch {epoch} step {step}: {e}")
    return value.item(), grads


def _append_log(path: Optional[Path], record: EpochRecord) -> None:
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        f.write(record.to_json() + "\n")


def train_run(dataset: Dataset, dcm: DcmConfig, train: TrainConfig,
              languages: Optional[Sequence[str]] = None, loss: Optional[LossConfig] = None,
              resume: Optional[Checkpoint] = None, stop_epoch: Optional[int] = None,
              checkpoint_path: Optional[Union[str, Path]] = None,
              log_path: Optional[Union[str, Path]] = None,
              split: str = "train") -> Tuple[Checkpoint, List[EpochRecord]]:
    """Train both branches and return the final checkpoint and per-epoch log"""
    logger = get_logger()
    loss = loss or LossConfig()
    if languages is not None:
        train = dataclasses.replace(train, languages=list(languages))
    dcm.validate()
    loss.validate()
    train.validate()

    if resume is not None:
        if resume.dcm != dcm or resume.loss != loss:
            logger.warning("resuming with the checkpoint's model and loss settings")
        dcm, loss = resume.dcm, resume.loss
        params, state, start_epoch = resume.params, resume.state, resume.epoch
    else:
        params = init_training_params(dcm, loss, train.seed)
        state = OptimizerState.zeros(params)
        start_epoch = 0

    sampler = LanguageSampler(train.languages, train.language_mode)
    n_items = len(dataset.items(split))
    dataset.require_languages(split, train.languages)
    total_steps = train.epochs * batch_count(n_items, train.batch_size)
    end_epoch = train.epochs if stop_epoch is None else min(train.epochs, stop_epoch)
    log_file = Path(log_path) if log_path else None

    checkpoint = Checkpoint(dcm, loss, train, params, state, start_epoch,
                            {"seed": train.seed, "generator": "philox", "epoch": start_epoch})
    records: List[EpochRecord] = []
    logger.info("training %d epochs x %d steps on %d items (languages: %s)",
                train.epochs, total_steps // max(train.epochs, 1), n_items,
                ",".join(train.languages) or "none")

    for epoch in range(start_epoch, end_epoch):
        started = time.monotonic()
        losses = []
        lr = train.lr_max
        for b, batch in enumerate(batch_iter(dataset, split, train.batch_size, sampler, train.seed, epoch)):
            lr = cosine_lr(state.step, total_steps, train.lr_max, train.lr_min)
            value, grads = train_step(batch, params, loss, train.seed, epoch, b)
            params, state = adamw_step(params, grads, state, lr, train)
            losses.append(value)
            logger.verbose("epoch %d step %d loss %.6f lr %.3e", epoch + 1, state.step, value, lr)

        record = EpochRecord(epoch + 1, float(np.mean(losses)), lr,
                             int((time.monotonic() - started) * 1000))
        records.append(record)
        _append_log(log_file, record)
        logger.info("epoch %d mean loss %.6f", record.epoch, record.mean_loss)

        checkpoint = Checkpoint(dcm, loss, train, params, state, epoch + 1,
                                {"seed": train.seed, "generator": "philox", "epoch": epoch + 1})
        if checkpoint_path:
            save_checkpoint(checkpoint, checkpoint_path)

    return checkpoint, records


def log_lines(records: Sequence[EpochRecord], with_wall_time: bool = True) -> List[str]:
    """JSON-lines form of a training log; wall_ms is the only varying field"""
    lines = []
    for record in records:
        data = record.to_dict()
        if not with_wall_time:
            data.pop("wall_ms")
        lines.append(json.dumps(data))
    return lines
