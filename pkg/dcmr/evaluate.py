"""
Retrieval evaluation

Every caption re-attends over every candidate video (full cross
conditioning), so a split of N captions and V videos costs N × V
eval-mode forward passes. Queries are scored in blocks; blocks may run on
a thread pool and write into their own rows of the result.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .dataset import Dataset
from .exceptions import (
    ContractError, DatasetError, DimensionError, NormalizationError, NumericError, RoutingError,
)
from .logger import get_logger
from .model import LOGIT_SCALE, Branch, DcmParams, dcm_forward, encode_pairs, route
from .models import FrameEmbeddings, RetrievalReport, TextEmbedding

T2V = "t2v"
V2T = "v2t"
DEFAULT_BLOCK = 64


@dataclass
class ScoreMatrix:
    """Caption-by-video scores; rows are queries in caption order"""
    scores: np.ndarray
    row_ids: List[str]
    col_ids: List[str]
    branch: Branch

    def __post_init__(self):
        if self.scores.shape != (len(self.row_ids), len(self.col_ids)):
            raise DimensionError(f"scores {self.scores.shape} do not match the id lists")
        if not np.isfinite(self.scores).all():
            raise NumericError("score matrix has non-finite entries")
        if len(set(self.row_ids)) != len(self.row_ids) or len(set(self.col_ids)) != len(self.col_ids):
            raise DatasetError("score matrix ids must be unique")


def _branch_for(captions: Sequence[TextEmbedding], params: DcmParams,
                branch: Optional[Union[Branch, str]]) -> Branch:
    routes = {route(c.language, params.config) for c in captions}
    if len(routes) > 1:
        raise RoutingError("captions route to both branches; score one branch at a time")
    routed = routes.pop()
    if branch is not None and Branch(branch) != routed:
        raise RoutingError(f"captions route to branch {routed.value}, not {Branch(branch).value}")
    return routed


def _similarity(texts: np.ndarray, reps: np.ndarray, params: DcmParams, normalize: bool,
                temperature: float) -> np.ndarray:
    if normalize:
        t_norm = np.linalg.norm(texts, axis=-1, keepdims=True)
        r_norm = np.linalg.norm(reps, axis=-1, keepdims=True)
        if np.any(t_norm == 0) or np.any(r_norm == 0):
            raise NormalizationError("cannot normalize a zero vector")
        texts, reps = texts / t_norm, reps / r_norm
    scores = np.einsum("qd,qvd->qv", texts, reps)
    if LOGIT_SCALE in params.names():
        return scores * np.exp(params.array(LOGIT_SCALE)[0])
    if temperature != 1.0:
        return scores * (1.0 / temperature)
    return scores


def score_matrix(captions: Sequence[TextEmbedding], videos: Sequence[FrameEmbeddings],
                 params: DcmParams, branch: Optional[Union[Branch, str]] = None,
                 normalize: bool = False, temperature: float = 1.0,
                 block_size: int = DEFAULT_BLOCK, workers: int = 1) -> ScoreMatrix:
    """scores[i][j] = <caption i, video j encoded against caption i>"""
    if not captions or not videos:
        raise DatasetError("score matrix needs at least one caption and one video")
    chosen = _branch_for(captions, params, branch)
    texts = np.vstack([c.vector for c in captions])
    groups: Dict[int, List[int]] = {}
    for j, video in enumerate(videos):
        groups.setdefault(video.num_frames, []).append(j)
    stacks = {n: (cols, np.stack([videos[j].matrix for j in cols])) for n, cols in groups.items()}
    scores = np.zeros((len(captions), len(videos)))

    def score_block(start: int) -> None:
        block = texts[start:start + block_size]
        for cols, stack in stacks.values():
            reps = encode_pairs(block, stack, params, chosen)
            scores[start:start + len(block), cols] = _similarity(block, reps, params, normalize,
                                                                 temperature)

    starts = list(range(0, len(captions), block_size))
    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(score_block, starts))
    else:
        for start in starts:
            score_block(start)
    return ScoreMatrix(scores, [c.caption_id for c in captions], [v.video_id for v in videos], chosen)


def naive_score_matrix(captions: Sequence[TextEmbedding], videos: Sequence[FrameEmbeddings],
                       params: DcmParams, branch: Optional[Union[Branch, str]] = None,
                       normalize: bool = False, temperature: float = 1.0) -> ScoreMatrix:
    """Per-pair loop over dcm_forward; reference for score_matrix"""
    chosen = _branch_for(captions, params, branch)
    scores = np.zeros((len(captions), len(videos)))
    for i, caption in enumerate(captions):
        for j, video in enumerate(videos):
            rep = dcm_forward(caption, video, params, chosen).data.reshape(1, 1, -1)
            scores[i, j] = _similarity(caption.vector.reshape(1, -1), rep, params, normalize,
                                       temperature)[0, 0]
    return ScoreMatrix(scores, [c.caption_id for c in captions], [v.video_id for v in videos], chosen)


def ranks_of_ground_truth(s: ScoreMatrix, gt: Mapping[str, str], direction: str = T2V) -> List[int]:
    """Optimistic ranks: 1 + number of strictly higher scores

    t2v gives one rank per caption row. v2t gives one rank per video
    column, the best over that video's ground-truth captions.
    """
    col_of = {vid: j for j, vid in enumerate(s.col_ids)}
    pairs = []
    missing = []
    for i, cid in enumerate(s.row_ids):
        vid = gt.get(cid)
        if vid is None or vid not in col_of:
            missing.append(cid)
        else:
            pairs.append((i, col_of[vid]))
    if missing:
        raise DatasetError("captions without a ground-truth video", missing)

    if direction == T2V:
        return [1 + int(np.sum(s.scores[i] > s.scores[i, j])) for i, j in pairs]
    if direction == V2T:
        best: Dict[int, int] = {}
        for i, j in pairs:
            rank = 1 + int(np.sum(s.scores[:, j] > s.scores[i, j]))
            best[j] = min(rank, best.get(j, rank))
        lonely = [vid for j, vid in enumerate(s.col_ids) if j not in best]
        if lonely:
            raise DatasetError("videos without a ground-truth caption", lonely)
        return [best[j] for j in range(len(s.col_ids))]
    raise ContractError(f"unknown direction {direction!r}")


def metrics_from_ranks(ranks: Sequence[int]) -> Dict[str, float]:
    """R@1/5/10 as fractions, median and mean rank"""
    if len(ranks) == 0:
        raise ContractError("cannot summarise an empty rank list")
    values = np.asarray(ranks, dtype=np.int64)
    if np.any(values < 1):
        raise ContractError("ranks start at 1")
    n = values.size
    return {
        "r1": int(np.sum(values <= 1)) / n,
        "r5": int(np.sum(values <= 5)) / n,
        "r10": int(np.sum(values <= 10)) / n,
        "medr": float(np.median(values)),
        "mnr": float(np.mean(values)),
        "n": n,
    }


def rsum(report: RetrievalReport) -> float:
    """R@1 + R@5 + R@10"""
    return report.r1 + report.r5 + report.r10


def _split_pairs(dataset: Dataset, split: str,
                 language: str) -> Tuple[List[TextEmbedding], List[FrameEmbeddings], Dict[str, str]]:
    items = dataset.items(split)
    if not items:
        raise DatasetError(f"split {split!r} is empty")
    dataset.require_languages(split, [language])
    captions = [dataset.caption(item, language) for item in items]
    video_ids: List[str] = []
    for item in items:
        if item.video_id not in video_ids:
            video_ids.append(item.video_id)
    videos = [dataset.frames(vid) for vid in video_ids]
    gt = {item.captions[language]: item.video_id for item in items}
    return captions, videos, gt


def evaluate_directions(dataset: Dataset, split: str, params: DcmParams,
                        branch: Optional[Union[Branch, str]] = None, language: str = "en",
                        directions: Sequence[str] = (T2V, V2T), normalize: bool = False,
                        temperature: float = 1.0, block_size: int = DEFAULT_BLOCK, workers: int = 1,
                        seed: Optional[int] = None, config_hash: str = "") -> List[RetrievalReport]:
    """Score a split once and report every requested direction"""
    captions, videos, gt = _split_pairs(dataset, split, language)
    s = score_matrix(captions, videos, params, branch, normalize, temperature, block_size, workers)
    reports = []
    for direction in directions:
        metrics = metrics_from_ranks(ranks_of_ground_truth(s, gt, direction))
        get_logger().verbose("%s %s/%s on %s: R@1 %.4f MnR %.2f", direction, s.branch.value,
                             language, split, metrics["r1"], metrics["mnr"])
        reports.append(RetrievalReport(direction=direction, branch=s.branch.value, language=language,
                                       seed=seed, config_hash=config_hash, **metrics))
    return reports


def evaluate_split(dataset: Dataset, split: str, params: DcmParams,
                   branch: Optional[Union[Branch, str]] = None, language: str = "en",
                   direction: str = T2V, **options) -> RetrievalReport:
    """Score one split in one language and summarise the ground-truth ranks"""
    return evaluate_directions(dataset, split, params, branch, language, [direction], **options)[0]


def retrieve_top_k(queries: Sequence[TextEmbedding], dataset: Dataset, split: str, params: DcmParams,
                   k: int = 10, normalize: bool = False, temperature: float = 1.0,
                   block_size: int = DEFAULT_BLOCK, workers: int = 1) -> List[List[Tuple[str, float]]]:
    """Best k videos of a split for each ad-hoc query, highest score first"""
    if k < 1:
        raise ContractError("k must be at least 1")
    video_ids: List[str] = []
    for item in dataset.items(split):
        if item.video_id not in video_ids:
            video_ids.append(item.video_id)
    if not video_ids:
        raise DatasetError(f"split {split!r} is empty")
    videos = [dataset.frames(vid) for vid in video_ids]
    s = score_matrix(queries, videos, params, None, normalize, temperature, block_size, workers)
    results = []
    for row in s.scores:
        order = np.argsort(-row, kind="stable")[:k]
        results.append([(s.col_ids[j], float(row[j])) for j in order])
    return results
