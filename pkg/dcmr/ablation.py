"""
Ablation presets and multi-seed runs

A preset is a transform of the flat run settings, never a separate code
path, so every ablation can be diffed against the full model as config.
"""

import dataclasses
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .config import RunConfig
from .dataset import Dataset
from .evaluate import T2V, V2T, evaluate_directions
from .exceptions import ConfigError
from .logger import get_logger
from .models import RetrievalReport
from .trainer import train_run

PRESETS = ("full", "no-multilingual", "shared-text-encoder", "no-dcm")
LANGUAGES_PREFIX = "languages="
METRICS = ("r1", "r5", "r10", "medr", "mnr")


def apply_preset(values: Mapping[str, Any], preset: str) -> Dict[str, Any]:
    """Return a copy of the settings with the preset's changes applied"""
    out = dict(values)
    out["preset"] = preset
    if preset == "full":
        return out
    if preset == "no-multilingual":
        out["weight_m"] = 0.0
    elif preset == "shared-text-encoder":
        out["english_branch"] = "M"
    elif preset == "no-dcm":
        out["encoder"] = "mean_pool"
    elif preset.startswith(LANGUAGES_PREFIX):
        languages = [code.strip() for code in preset[len(LANGUAGES_PREFIX):].split("+") if code.strip()]
        if not languages:
            raise ConfigError(f"preset {preset!r} names no language")
        out["languages"] = languages
        out["language_mode"] = "sum-all"
    else:
        raise ConfigError(f"unknown preset {preset!r}; expected one of "
                          f"{', '.join(PRESETS)} or {LANGUAGES_PREFIX}a+b")
    return out


def preset_config(run: RunConfig, preset: str) -> RunConfig:
    return RunConfig(apply_preset(run.to_dict(), preset))


def directions_of(direction: str) -> List[str]:
    return [T2V, V2T] if direction == "both" else [direction]


def mean_reports(reports: Sequence[RetrievalReport]) -> Dict[str, float]:
    """Metric-wise mean of reports for one direction"""
    return {name: float(np.mean([getattr(r, name) for r in reports])) for name in METRICS}


def run_seeds(dataset: Dataset, run: RunConfig, seeds: Optional[Sequence[int]] = None) -> Dict[str, Any]:
    """Train and evaluate once per seed; report every run plus the per-direction mean"""
    seeds = list(seeds if seeds is not None else run["seeds"])
    if not seeds:
        raise ConfigError("at least one seed is required")
    logger = get_logger()
    settings = run.eval
    directions = directions_of(settings.direction)
    runs = []
    by_direction: Dict[str, List[RetrievalReport]] = {d: [] for d in directions}

    for seed in seeds:
        logger.info("preset %s: seed %d", run["preset"], seed)
        train = dataclasses.replace(run.train, seed=seed)
        checkpoint, records = train_run(dataset, run.dcm, train, loss=run.loss)
        reports = evaluate_directions(
            dataset, settings.split, checkpoint.params, language=settings.language,
            directions=directions, normalize=checkpoint.loss.normalize,
            temperature=checkpoint.loss.temperature, block_size=settings.block_size,
            workers=settings.workers, seed=seed, config_hash=run.config_hash,
        )
        for report in reports:
            by_direction[report.direction].append(report)
        runs.append({
            "seed": seed,
            "final_loss": records[-1].mean_loss if records else None,
            "reports": [r.to_dict() for r in reports],
        })

    return {
        "preset": run["preset"],
        "language": settings.language,
        "split": settings.split,
        "config_hash": run.config_hash,
        "seeds": seeds,
        "runs": runs,
        "mean": {d: mean_reports(rs) for d, rs in by_direction.items()},
    }
