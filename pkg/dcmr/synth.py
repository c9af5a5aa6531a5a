"""
Synthetic correlated triplets

Every item draws a latent z ~ N(0, I). Its video frames are A_v·z plus
noise, and its caption in language ℓ is A_ℓ·z plus noise, so a video and
all of its captions share the same content by construction. Non-English
maps scatter around one multilingual map (A_ℓ = A_multi + spread·G_ℓ);
the English and video maps are independent of it.

A_v, A_en and A_multi are random orthogonal maps, scaled so A·z has
unit-variance entries and the latent lands isotropically in the
embedding space. With unit_norm every frame and caption row is
L2-normalized before storage, the way CLIP outputs arrive.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from .archive import EmbeddingArchive, write_archive, write_bytes_atomic
from .config import SynthConfig
from .dataset import Dataset, DatasetManifest
from .logger import get_logger
from .models import ManifestItem
from .rng import STREAM_SYNTH, counter_rng

# Sub-streams under STREAM_SYNTH.
_MAPS = 0
_LANGUAGE_MAP = 1
_LATENTS = 2
_FRAMES = 3
_CAPTIONS = 4
_TEXTS = 5

VIDEO_ARCHIVE = "videos.emb"

_SUBJECTS = ["a man", "a woman", "a child", "a dog", "a chef", "a band", "two players", "a crowd"]
_ACTIONS = ["is cooking", "is running", "is singing", "is talking", "is dancing", "is driving",
            "is painting", "is swimming"]
_PLACES = ["in a kitchen", "on a beach", "in a studio", "on a street", "in a park", "on stage",
           "in a car", "at a market"]


def language_key(code: str) -> int:
    """Stable integer per language code, independent of list order"""
    return int.from_bytes(hashlib.sha256(code.encode("utf-8")).digest()[:4], "little")


def text_archive_name(language: str) -> str:
    return f"text_{language}.emb"


def video_id(index: int) -> str:
    return f"video{index:05d}"


def caption_id(language: str, index: int) -> str:
    return f"{language}-{index:05d}"


@dataclass
class LinearMaps:
    """Latent-to-embedding maps, each model_dim × latent_dim"""
    video: np.ndarray
    english: np.ndarray
    languages: Dict[str, np.ndarray]
    multilingual: np.ndarray

    def for_language(self, code: str) -> np.ndarray:
        return self.english if code == "en" else self.languages[code]


def _gaussian_map(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    return rng.normal(0.0, 1.0 / np.sqrt(config.latent_dim),
                      size=(config.model_dim, config.latent_dim))


def _orthogonal_map(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    """Haar-random map with orthonormal columns (or rows when model_dim < latent_dim)"""
    d, latent = config.model_dim, config.latent_dim
    q, r = np.linalg.qr(rng.standard_normal((max(d, latent), min(d, latent))))
    q = q * np.sign(np.diag(r))
    if d < latent:
        q = q.T
    return q * np.sqrt(max(d / latent, 1.0))


def make_maps(config: SynthConfig) -> LinearMaps:
    config.validate()
    rng = counter_rng(config.seed, STREAM_SYNTH, _MAPS)
    a_video = _orthogonal_map(rng, config)
    a_english = _orthogonal_map(rng, config)
    a_multi = _orthogonal_map(rng, config)
    languages = {}
    for code in config.caption_languages:
        offset = _gaussian_map(counter_rng(config.seed, STREAM_SYNTH, _LANGUAGE_MAP, language_key(code)),
                               config)
        languages[code] = a_multi + config.language_spread * offset
    if config.shared_maps:
        a_english = a_video
        languages = {code: a_video for code in languages}
    return LinearMaps(a_video, a_english, languages, a_multi)


def _split_of(index: int, config: SynthConfig) -> str:
    if index < config.n_items:
        return "train"
    if index < config.n_items + config.n_val:
        return "val"
    return "test"


def _as_stored(values: np.ndarray) -> np.ndarray:
    """Round to the 32-bit precision archives keep on disk"""
    return values.astype(np.float32).astype(np.float64)


def _unit_rows(values: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(values, axis=-1, keepdims=True)
    return values / np.where(norms > 0, norms, 1.0)


def caption_text(seed: int, index: int) -> str:
    """Pseudo English caption, unique per item"""
    rng = counter_rng(seed, STREAM_SYNTH, _TEXTS, index)
    subject = _SUBJECTS[int(rng.integers(len(_SUBJECTS)))]
    action = _ACTIONS[int(rng.integers(len(_ACTIONS)))]
    place = _PLACES[int(rng.integers(len(_PLACES)))]
    return f"clip {index}: {subject} {action} {place}"


def synth_generate(config: SynthConfig) -> Dataset:
    """Build an in-memory dataset of correlated video/caption embeddings"""
    maps = make_maps(config)
    total = config.n_items + config.n_val + config.n_test
    latents = counter_rng(config.seed, STREAM_SYNTH, _LATENTS).standard_normal((total, config.latent_dim))
    languages = ["en"] + list(config.caption_languages)

    video_records = []
    text_records: Dict[str, List] = {code: [] for code in languages}
    items = []
    texts = {}
    for i in range(total):
        z = latents[i]
        noise = counter_rng(config.seed, STREAM_SYNTH, _FRAMES, i).standard_normal(
            (config.frames_per_video, config.model_dim))
        frames = np.tile(maps.video @ z, (config.frames_per_video, 1)) + config.noise_scale * noise
        if config.unit_norm:
            frames = _unit_rows(frames)
        video_records.append((video_id(i), _as_stored(frames)))

        captions = {}
        for code in languages:
            eps = counter_rng(config.seed, STREAM_SYNTH, _CAPTIONS, language_key(code), i).standard_normal(
                config.model_dim)
            vector = maps.for_language(code) @ z + config.noise_scale * eps
            if config.unit_norm:
                vector = _unit_rows(vector)
            cid = caption_id(code, i)
            text_records[code].append((cid, _as_stored(vector.reshape(1, -1))))
            captions[code] = cid
        texts[caption_id("en", i)] = caption_text(config.seed, i)
        items.append(ManifestItem(video_id(i), _split_of(i, config), captions))

    manifest = DatasetManifest(
        dim=config.model_dim,
        video_archive=VIDEO_ARCHIVE,
        text_archives={code: text_archive_name(code) for code in languages},
        items=items,
        caption_texts=texts,
        metadata={"generator": "synth", "synth": config.to_dict(), "caption_max_tokens": 32},
    )
    archives = {code: EmbeddingArchive(config.model_dim, records) for code, records in text_records.items()}
    get_logger().verbose("generated %d synthetic items in %d languages", total, len(languages))
    return Dataset(manifest, EmbeddingArchive(config.model_dim, video_records), archives)


def write_dataset(dataset: Dataset, out_dir: Union[str, Path]) -> Path:
    """Write archives first, then the manifest that references them"""
    root = Path(out_dir)
    manifest = dataset.manifest
    write_archive(dataset.videos, root / manifest.video_archive)
    for code, name in sorted(manifest.text_archives.items()):
        write_archive(dataset.texts[code], root / name)
    manifest_path = root / "manifest.json"
    write_bytes_atomic(manifest_path, manifest.to_json().encode("utf-8"))
    get_logger().info("wrote dataset with %d items to %s", len(manifest.items), root)
    return manifest_path
