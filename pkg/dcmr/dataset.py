"""
Dataset manifests and seeded batch iteration

A manifest pairs every video with one caption id per language and names
the archives holding the vectors. Archive paths are resolved relative to
the manifest's directory.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Union

from .archive import EmbeddingArchive, read_archive, read_bytes
from .config import LANGUAGE_MODES, SPLITS
from .exceptions import ConfigError, DatasetError
from .logger import get_logger
from .models import FrameEmbeddings, ManifestItem, TextEmbedding, Triplet
from .rng import STREAM_LANGUAGE, STREAM_SHUFFLE, counter_rng

MIN_BATCH = 2


@dataclass
class DatasetManifest:
    """Split assignment and caption pairing for a set of videos"""
    dim: int
    video_archive: str
    text_archives: Dict[str, str]
    items: List[ManifestItem]
    caption_texts: Dict[str, str] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "dim": self.dim,
            "video_archive": self.video_archive,
            "text_archives": dict(sorted(self.text_archives.items())),
            "items": [item.to_dict() for item in self.items],
        }
        if self.caption_texts:
            data["caption_texts"] = dict(sorted(self.caption_texts.items()))
        if self.metadata:
            data["metadata"] = self.metadata
        return data

    def to_json(self) -> str:
        """Canonical serialization, so equal manifests give equal bytes"""
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DatasetManifest":
        try:
            items = [
                ManifestItem(str(raw["video_id"]), str(raw["split"]),
                             {str(k): str(v) for k, v in raw["captions"].items()})
                for raw in data["items"]
            ]
            return cls(
                dim=int(data["dim"]),
                video_archive=str(data["video_archive"]),
                text_archives={str(k): str(v) for k, v in data["text_archives"].items()},
                items=items,
                caption_texts={str(k): str(v) for k, v in data.get("caption_texts", {}).items()},
                metadata=dict(data.get("metadata", {})),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise DatasetError(f"malformed manifest: {e!r}")

    def languages(self) -> List[str]:
        return sorted(self.text_archives)

    def split_items(self, split: str) -> List[ManifestItem]:
        return [item for item in self.items if item.split == split]


def parse_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Read manifest JSON without touching the archives"""
    raw = read_bytes(path)
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DatasetError(f"{path}: manifest is not valid JSON ({e})")
    if not isinstance(data, dict):
        raise DatasetError(f"{path}: manifest must be a JSON object")
    return DatasetManifest.from_dict(data)


class Dataset:
    """A manifest cross-checked against its loaded archives"""

    def __init__(self, manifest: DatasetManifest, videos: EmbeddingArchive,
                 texts: Mapping[str, EmbeddingArchive], root: Optional[Path] = None):
        self.manifest = manifest
        self.videos = videos
        self.texts = dict(texts)
        self.root = root
        self._validate()

    def _validate(self) -> None:
        m = self.manifest
        if "en" not in m.text_archives:
            raise DatasetError("manifest has no en text archive")
        for name, archive in [("video", self.videos)] + sorted(self.texts.items()):
            if archive.dim != m.dim:
                raise DatasetError(f"{name} archive has dim {archive.dim}, manifest says {m.dim}")
        missing_archives = sorted(set(m.text_archives) - set(self.texts))
        if missing_archives:
            raise DatasetError("text archives not loaded", missing_archives)

        bad_split = [item.video_id for item in m.items if item.split not in SPLITS]
        if bad_split:
            raise DatasetError("items with unknown split", bad_split)

        no_english = [item.video_id for item in m.items if "en" not in item.captions]
        if no_english:
            raise DatasetError("items without an en caption", no_english)

        dangling_videos = sorted({item.video_id for item in m.items} - set(self.videos.ids()))
        if dangling_videos:
            raise DatasetError("video ids missing from the video archive", dangling_videos)

        split_of: Dict[str, str] = {}
        crossing = []
        for item in m.items:
            previous = split_of.setdefault(item.video_id, item.split)
            if previous != item.split:
                crossing.append(item.video_id)
        if crossing:
            raise DatasetError("videos assigned to more than one split", crossing)

        seen: Dict[str, set] = {}
        duplicates, dangling, unknown_lang, multi_vector = [], [], [], []
        for item in m.items:
            for lang, caption_id in sorted(item.captions.items()):
                archive = self.texts.get(lang)
                if archive is None:
                    unknown_lang.append(f"{caption_id} ({lang})")
                    continue
                ids = seen.setdefault(lang, set())
                if caption_id in ids:
                    duplicates.append(caption_id)
                ids.add(caption_id)
                if caption_id not in archive:
                    dangling.append(caption_id)
                elif archive.get(caption_id).shape[0] != 1:
                    multi_vector.append(caption_id)
        if unknown_lang:
            raise DatasetError("captions in languages without an archive", unknown_lang)
        if duplicates:
            raise DatasetError("duplicate caption ids", duplicates)
        if dangling:
            raise DatasetError("caption ids missing from their archive", dangling)
        if multi_vector:
            raise DatasetError("caption records must hold exactly one vector", multi_vector)

    def items(self, split: str) -> List[ManifestItem]:
        return self.manifest.split_items(split)

    def languages(self) -> List[str]:
        return self.manifest.languages()

    def frames(self, video_id: str) -> FrameEmbeddings:
        return FrameEmbeddings(video_id, self.videos.get(video_id))

    def caption(self, item: ManifestItem, language: str) -> TextEmbedding:
        caption_id = item.captions.get(language)
        if caption_id is None:
            raise DatasetError(f"video {item.video_id} has no {language} caption")
        return TextEmbedding(caption_id, language, self.texts[language].get(caption_id)[0])

    def require_languages(self, split: str, languages: Sequence[str]) -> None:
        """Every item of the split must carry each language"""
        items = self.items(split)
        for lang in languages:
            missing = [item.video_id for item in items if lang not in item.captions]
            if missing:
                raise DatasetError(f"{split} items without a {lang} caption", missing)

    def triplet(self, item: ManifestItem, languages: Sequence[str]) -> Triplet:
        return Triplet(
            frames=self.frames(item.video_id),
            english=self.caption(item, "en"),
            multilingual=[self.caption(item, lang) for lang in languages],
        )


def load_manifest(path: Union[str, Path]) -> Dataset:
    """Parse a manifest and load every archive it names"""
    manifest_path = Path(path)
    manifest = parse_manifest(manifest_path)
    root = manifest_path.parent

    def resolve(name: str) -> Path:
        candidate = Path(name)
        return candidate if candidate.is_absolute() else root / candidate

    videos = read_archive(resolve(manifest.video_archive))
    texts = {lang: read_archive(resolve(p)) for lang, p in sorted(manifest.text_archives.items())}
    dataset = Dataset(manifest, videos, texts, root)
    get_logger().verbose("loaded %d items in %d languages from %s",
                         len(manifest.items), len(texts), manifest_path)
    return dataset


class LanguageSampler:
    """Picks the multilingual caption language(s) for each batch slot"""

    def __init__(self, languages: Sequence[str], mode: str = "sample"):
        if mode not in LANGUAGE_MODES:
            raise ConfigError(f"language mode must be one of {LANGUAGE_MODES}")
        if "en" in languages:
            raise ConfigError("multilingual languages must not include en")
        self.languages = list(languages)
        self.mode = mode

    def choose(self, seed: int, epoch: int, batch: int, size: int) -> List[List[str]]:
        if not self.languages:
            return [[] for _ in range(size)]
        if self.mode == "sum-all":
            return [list(self.languages) for _ in range(size)]
        rng = counter_rng(seed, STREAM_LANGUAGE, epoch, batch)
        picks = rng.integers(0, len(self.languages), size=size)
        return [[self.languages[int(k)]] for k in picks]


def batch_count(n_items: int, batch_size: int) -> int:
    """Batches per epoch after dropping a remainder smaller than two"""
    full, rest = divmod(n_items, batch_size)
    return full + (1 if rest >= MIN_BATCH else 0)


def batch_indices(n_items: int, batch_size: int, seed: int, epoch: int) -> List[List[int]]:
    if n_items < MIN_BATCH:
        raise DatasetError(f"split has {n_items} item(s); contrastive batches need at least {MIN_BATCH}")
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    order = counter_rng(seed, STREAM_SHUFFLE, epoch).permutation(n_items)
    batches = [order[i:i + batch_size].tolist() for i in range(0, n_items, batch_size)]
    if len(batches[-1]) < min(MIN_BATCH, batch_size):
        batches.pop()
    return batches


def batch_iter(dataset: Dataset, split: str, batch_size: int, sampler: LanguageSampler,
               seed: int, epoch: int) -> Iterator[List[Triplet]]:
    """Seeded, epoch-dependent batches of aligned triplets"""
    items = dataset.items(split)
    dataset.require_languages(split, sampler.languages)
    for b, indices in enumerate(batch_indices(len(items), batch_size, seed, epoch)):
        chosen = sampler.choose(seed, epoch, b, len(indices))
        yield [dataset.triplet(items[i], langs) for i, langs in zip(indices, chosen)]
