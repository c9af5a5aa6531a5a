"""
Caption translation and multilingual augmentation

Translators turn English captions into another language. Results are
cached on disk, one file per SHA-256 of (source, target, text), so a
repeated job never reaches the backend. augment_dataset translates every
English caption of a manifest, embeds the translations and writes new
text archives plus an extended manifest.
"""

import hashlib
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .archive import EmbeddingArchive, encode_archive, write_bytes_atomic
from .config import Config
from .dataset import DatasetManifest, load_manifest
from .exceptions import ConfigError, ContractError, DatasetError, ProtocolError
from .http import HTTPClient
from .logger import get_logger
from .models import ManifestItem
from .rng import counter_rng

SOURCE_LANGUAGE = "en"
CHUNK_SIZE = 16
DEFAULT_WORKERS = 4

PathLike = Union[str, Path]


@dataclass
class TranslationJob:
    """English texts to translate into one target language"""
    target: str
    texts: List[str]
    source: str = SOURCE_LANGUAGE
    backend: str = "mock"
    cache_dir: Optional[PathLike] = None

    def validate(self) -> None:
        if self.source != SOURCE_LANGUAGE:
            raise ContractError(f"translations start from {SOURCE_LANGUAGE}, not {self.source}")
        if self.target == self.source:
            raise ContractError("target language must differ from the source")
        if any(not isinstance(t, str) or not t for t in self.texts):
            raise ContractError("texts must be non-empty strings")


class TranslationCache:
    """Translated text stored one file per hex digest"""

    def __init__(self, cache_dir: PathLike):
        self.cache_dir = Path(cache_dir)

    @staticmethod
    def key(source: str, target: str, text: str) -> str:
        return hashlib.sha256(f"{source}\0{target}\0{text}".encode("utf-8")).hexdigest()

    def get(self, source: str, target: str, text: str) -> Optional[str]:
        path = self.cache_dir / self.key(source, target, text)
        try:
            return path.read_bytes().decode("utf-8")
        except FileNotFoundError:
            return None
        except (OSError, UnicodeDecodeError):
            get_logger().warning("ignoring unreadable cache entry %s", path)
            return None

    def put(self, source: str, target: str, text: str, translated: str) -> None:
        write_bytes_atomic(self.cache_dir / self.key(source, target, text), translated.encode("utf-8"))


class MockTranslator:
    """Deterministic, reversible letter substitution per target language"""

    name = "mock"

    def __init__(self):
        self.calls = 0

    @staticmethod
    def _alphabet(language: str) -> str:
        digest = hashlib.sha256(f"mock-translate\0{language}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        letters = string.ascii_lowercase
        return "".join(letters[i] for i in rng.permutation(len(letters)))

    def _table(self, language: str, reverse: bool = False) -> Dict[int, int]:
        plain, mapped = string.ascii_lowercase, self._alphabet(language)
        if reverse:
            plain, mapped = mapped, plain
        return str.maketrans(plain + plain.upper(), mapped + mapped.upper())

    def translate(self, text: str, language: str) -> str:
        table = self._table(language)
        return " ".join(token.translate(table) for token in text.split(" "))

    def reverse(self, text: str, language: str) -> str:
        """Undo translate() for the same language"""
        table = self._table(language, reverse=True)
        return " ".join(token.translate(table) for token in text.split(" "))

    def translate_batch(self, texts: Sequence[str], source: str, target: str) -> List[str]:
        self.calls += 1
        return [self.translate(text, target) for text in texts]


class HttpTranslator:
    """Generic JSON translation service: POST /translate {src, tgt, texts}"""

    name = "http"

    def __init__(self, client: HTTPClient, chunk_size: int = CHUNK_SIZE, workers: int = DEFAULT_WORKERS):
        if chunk_size < 1 or workers < 1:
            raise ConfigError("chunk_size and workers must be at least 1")
        self.client = client
        self.chunk_size = chunk_size
        self.workers = workers

    def _post_chunk(self, source: str, target: str, texts: List[str]) -> List[str]:
        data = self.client.post_json("/translate", {"src": source, "tgt": target, "texts": texts})
        translated = data.get("texts")
        if not isinstance(translated, list) or len(translated) != len(texts):
            raise ProtocolError(f"expected {len(texts)} translated texts in the response")
        if not all(isinstance(t, str) for t in translated):
            raise ProtocolError("translated texts must be strings")
        return translated

    def translate_batch(self, texts: Sequence[str], source: str, target: str) -> List[str]:
        chunks = [list(texts[i:i + self.chunk_size]) for i in range(0, len(texts), self.chunk_size)]
        if len(chunks) <= 1 or self.workers == 1:
            results = [self._post_chunk(source, target, chunk) for chunk in chunks]
        else:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                results = list(pool.map(lambda chunk: self._post_chunk(source, target, chunk), chunks))
        return [text for chunk in results for text in chunk]


def make_translator(backend: str, workers: int = DEFAULT_WORKERS):
    if backend == "mock":
        return MockTranslator()
    if backend == "http":
        client = HTTPClient(Config.get_mt_endpoint() or "", Config.get_mt_token())
        return HttpTranslator(client, workers=workers)
    raise ConfigError(f"unknown translation backend {backend!r}")


def translate(job: TranslationJob, translator=None, cache: Optional[TranslationCache] = None) -> List[str]:
    """Translate a job's texts, consulting the cache first"""
    job.validate()
    if translator is None:
        translator = make_translator(job.backend)
    if cache is None and job.cache_dir is not None:
        cache = TranslationCache(job.cache_dir)

    known: Dict[str, str] = {}
    pending: List[str] = []
    queued = set()
    for text in job.texts:
        if text in known or text in queued:
            continue
        hit = cache.get(job.source, job.target, text) if cache is not None else None
        if hit is None:
            pending.append(text)
            queued.add(text)
        else:
            known[text] = hit

    if pending:
        get_logger().verbose("translating %d text(s) to %s (%d cached)", len(pending), job.target,
                             len(known))
        for text, translated in zip(pending, translator.translate_batch(pending, job.source, job.target)):
            known[text] = translated
            if cache is not None:
                cache.put(job.source, job.target, text, translated)
    return [known[text] for text in job.texts]


@dataclass(frozen=True)
class MockEmbedder:
    """Stand-in multilingual text encoder"""
    dim: int
    seed: int = 0


def mock_embed(text: str, embedder: MockEmbedder) -> np.ndarray:
    """Unit-norm pseudo-random vector determined by (text, seed)"""
    if not text:
        raise ContractError("cannot embed an empty text")
    if embedder.dim < 1:
        raise ContractError("embedding dim must be positive")
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, len(digest), 4)]
    vector = counter_rng(embedder.seed, *words).standard_normal(embedder.dim)
    return vector / np.linalg.norm(vector)


def translated_caption_id(english_id: str, language: str) -> str:
    return f"{english_id}.{language}"


def augmented_archive_name(language: str) -> str:
    return f"text_{language}.mt.emb"


def augment_dataset(manifest_path: PathLike, languages: Sequence[str], translator=None,
                    embedder: Optional[MockEmbedder] = None,
                    cache: Optional[TranslationCache] = None,
                    embed: Optional[Callable[[str], np.ndarray]] = None,
                    out_dir: Optional[PathLike] = None) -> Path:
    """Add machine-translated captions in each language and return the new manifest path

    Archives are written before the manifest, each via temp file and rename,
    so an interrupted run leaves the previous manifest valid.
    """
    source = Path(manifest_path)
    if not languages:
        return source
    if SOURCE_LANGUAGE in languages:
        raise ConfigError("augmentation languages must not include en")
    dataset = load_manifest(source)
    manifest = dataset.manifest
    translator = translator or MockTranslator()
    embedder = embedder or MockEmbedder(manifest.dim)
    if embed is None:
        def embed(text: str) -> np.ndarray:
            return mock_embed(text, embedder)

    english_ids = [item.captions[SOURCE_LANGUAGE] for item in manifest.items]
    missing = [cid for cid in english_ids if cid not in manifest.caption_texts]
    if missing:
        raise DatasetError("english captions without text", missing)
    english_texts = [manifest.caption_texts[cid] for cid in english_ids]

    target_dir = Path(out_dir) if out_dir else source.parent
    text_archives = dict(manifest.text_archives)
    caption_texts = dict(manifest.caption_texts)
    new_captions: List[Dict[str, str]] = [dict(item.captions) for item in manifest.items]

    for language in languages:
        translated = translate(TranslationJob(language, english_texts), translator, cache)
        records = []
        for i, (english_id, text) in enumerate(zip(english_ids, translated)):
            caption = translated_caption_id(english_id, language)
            records.append((caption, np.asarray(embed(text), dtype=np.float64).reshape(1, -1)))
            caption_texts[caption] = text
            new_captions[i][language] = caption
        name = augmented_archive_name(language)
        write_bytes_atomic(target_dir / name, encode_archive(EmbeddingArchive(manifest.dim, records)))
        text_archives[language] = name

    if target_dir != source.parent:
        # Untouched archives keep resolving from the new location.
        text_archives = {lang: name if lang in languages else str((source.parent / name).resolve())
                         for lang, name in text_archives.items()}
        video_archive = str((source.parent / manifest.video_archive).resolve())
    else:
        video_archive = manifest.video_archive

    extended = DatasetManifest(
        dim=manifest.dim,
        video_archive=video_archive,
        text_archives=text_archives,
        items=[ManifestItem(item.video_id, item.split, captions)
               for item, captions in zip(manifest.items, new_captions)],
        caption_texts=caption_texts,
        metadata=manifest.metadata,
    )
    out_path = target_dir / "manifest.json"
    write_bytes_atomic(out_path, extended.to_json().encode("utf-8"))
    get_logger().info("augmented %d captions into %s", len(english_ids), ", ".join(languages))
    return out_path
