"""
Tests for dcmr.dataset module
"""

import json

import numpy as np
import pytest

from dcmr.archive import EmbeddingArchive
from dcmr.dataset import (
    Dataset, DatasetManifest, LanguageSampler, batch_count, batch_indices, batch_iter,
    load_manifest, parse_manifest,
)
from dcmr.exceptions import ConfigError, DatasetError, StorageError
from dcmr.models import ManifestItem


def build(items, texts=None, dim=2, videos=None):
    """Dataset with one-vector captions for every id the items mention"""
    if videos is None:
        videos = EmbeddingArchive(dim, [(item.video_id, np.ones((2, dim))) for item in items])
    if texts is None:
        texts = {}
        for item in items:
            for lang, cid in item.captions.items():
                texts.setdefault(lang, []).append((cid, np.ones((1, dim))))
        texts = {lang: EmbeddingArchive(dim, records) for lang, records in texts.items()}
    manifest = DatasetManifest(dim, "videos.emb", {lang: f"text_{lang}.emb" for lang in texts}, items)
    return Dataset(manifest, videos, texts)


def item(index, split="train", languages=("en",)):
    return ManifestItem(f"v{index}", split, {lang: f"{lang}-{index}" for lang in languages})


@pytest.mark.unit
class TestManifest:
    """Test manifest parsing and serialization"""

    def test_dict_round_trip(self):
        """Test from_dict inverts to_dict"""
        manifest = DatasetManifest(2, "videos.emb", {"en": "t.emb"}, [item(0)],
                                   caption_texts={"en-0": "a dog"}, metadata={"generator": "x"})
        assert DatasetManifest.from_dict(manifest.to_dict()) == manifest

    def test_canonical_json(self):
        """Test equal manifests serialise to equal text"""
        a = DatasetManifest(2, "v.emb", {"fr": "f", "en": "e"}, [item(0)])
        b = DatasetManifest(2, "v.emb", {"en": "e", "fr": "f"}, [item(0)])
        assert a.to_json() == b.to_json()

    def test_languages_sorted(self):
        """Test languages come from the text archives"""
        manifest = DatasetManifest(2, "v.emb", {"fr": "f", "en": "e", "de": "d"}, [])
        assert manifest.languages() == ["de", "en", "fr"]

    def test_malformed(self):
        """Test missing keys raise DatasetError"""
        with pytest.raises(DatasetError, match="malformed"):
            DatasetManifest.from_dict({"dim": 2})

    def test_parse_invalid_json(self, tmp_path):
        """Test a manifest that is not JSON"""
        path = tmp_path / "manifest.json"
        path.write_text("{not json")
        with pytest.raises(DatasetError):
            parse_manifest(path)

    def test_parse_non_object(self, tmp_path):
        """Test the top level must be an object"""
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps([1, 2]))
        with pytest.raises(DatasetError, match="object"):
            parse_manifest(path)

    def test_parse_missing(self, tmp_path):
        """Test a missing manifest is a storage failure"""
        with pytest.raises(StorageError):
            parse_manifest(tmp_path / "absent.json")


@pytest.mark.unit
class TestDatasetValidation:
    """Test cross-checks between manifest and archives"""

    def test_valid(self):
        """Test a consistent dataset loads"""
        dataset = build([item(0), item(1, "test")])
        assert [i.video_id for i in dataset.items("train")] == ["v0"]
        assert dataset.frames("v0").num_frames == 2
        assert dataset.caption(dataset.items("test")[0], "en").caption_id == "en-1"

    def test_requires_english_archive(self):
        """Test an en archive is mandatory"""
        with pytest.raises(DatasetError, match="no en text archive"):
            build([item(0, languages=("fr",))])

    def test_dim_mismatch(self):
        """Test archives must match the manifest dim"""
        items = [item(0)]
        videos = EmbeddingArchive(3, [("v0", np.ones((1, 3)))])
        with pytest.raises(DatasetError, match="dim"):
            build(items, videos=videos)

    def test_unknown_split(self):
        """Test split names are checked"""
        with pytest.raises(DatasetError, match="unknown split"):
            build([item(0, split="dev")])

    def test_dangling_video(self):
        """Test every video id must be in the video archive"""
        videos = EmbeddingArchive(2, [("v0", np.ones((1, 2)))])
        with pytest.raises(DatasetError) as exc:
            build([item(0), item(1)], videos=videos)
        assert exc.value.offenders == ["v1"]

    def test_video_in_two_splits(self):
        """Test a video may appear in only one split"""
        items = [item(0), ManifestItem("v0", "test", {"en": "en-x"})]
        videos = EmbeddingArchive(2, [("v0", np.ones((1, 2)))])
        with pytest.raises(DatasetError, match="more than one split"):
            build(items, videos=videos)

    def test_duplicate_caption_id(self):
        """Test caption ids are unique per language"""
        items = [ManifestItem("v0", "train", {"en": "c"}), ManifestItem("v1", "train", {"en": "c"})]
        texts = {"en": EmbeddingArchive(2, [("c", np.ones((1, 2)))])}
        with pytest.raises(DatasetError, match="duplicate caption ids"):
            build(items, texts=texts)

    def test_dangling_caption(self):
        """Test caption ids must exist in their archive"""
        texts = {"en": EmbeddingArchive(2, [])}
        with pytest.raises(DatasetError, match="missing from their archive"):
            build([item(0)], texts=texts)

    def test_multi_vector_caption(self):
        """Test caption records hold one vector"""
        texts = {"en": EmbeddingArchive(2, [("en-0", np.ones((2, 2)))])}
        with pytest.raises(DatasetError, match="exactly one vector"):
            build([item(0)], texts=texts)

    def test_missing_caption_language(self):
        """Test asking for an absent language"""
        dataset = build([item(0, languages=("en", "fr")), item(1)])
        with pytest.raises(DatasetError) as exc:
            dataset.require_languages("train", ["fr"])
        assert exc.value.offenders == ["v1"]
        with pytest.raises(DatasetError):
            dataset.caption(dataset.items("train")[1], "fr")


@pytest.mark.unit
class TestLoadManifest:
    """Test reading a dataset from disk"""

    def test_load_written_dataset(self, synth_manifest, synth_dataset):
        """Test archives resolve relative to the manifest"""
        dataset = load_manifest(synth_manifest)
        assert dataset.root == synth_manifest.parent
        assert dataset.languages() == ["de", "en", "fr"]
        assert dataset.manifest.to_json() == synth_dataset.manifest.to_json()
        assert dataset.videos == synth_dataset.videos

    def test_missing_archive(self, synth_manifest):
        """Test a manifest pointing at a deleted archive"""
        (synth_manifest.parent / "text_fr.emb").unlink()
        with pytest.raises(StorageError):
            load_manifest(synth_manifest)


@pytest.mark.unit
class TestLanguageSampler:
    """Test per-slot language choice"""

    def test_sample_is_seeded(self):
        """Test the same coordinates give the same picks"""
        sampler = LanguageSampler(["fr", "de", "es"])
        first = sampler.choose(1, 0, 0, 16)
        assert first == sampler.choose(1, 0, 0, 16)
        assert all(len(langs) == 1 and langs[0] in ("fr", "de", "es") for langs in first)
        assert first != sampler.choose(1, 1, 0, 16)

    def test_sum_all(self):
        """Test every slot gets every language"""
        sampler = LanguageSampler(["fr", "de"], mode="sum-all")
        assert sampler.choose(0, 0, 0, 2) == [["fr", "de"], ["fr", "de"]]

    def test_no_languages(self):
        """Test English-only training"""
        assert LanguageSampler([]).choose(0, 0, 0, 3) == [[], [], []]

    def test_rejects_english(self):
        """Test en is not a multilingual language"""
        with pytest.raises(ConfigError):
            LanguageSampler(["en", "fr"])

    def test_unknown_mode(self):
        """Test mode names are checked"""
        with pytest.raises(ConfigError):
            LanguageSampler(["fr"], mode="random")


@pytest.mark.unit
class TestBatching:
    """Test seeded batch iteration"""

    def test_partition(self):
        """Test batches cover every item once"""
        batches = batch_indices(10, 4, seed=0, epoch=0)
        assert [len(b) for b in batches] == [4, 4, 2]
        assert sorted(i for b in batches for i in b) == list(range(10))

    def test_drops_single_remainder(self):
        """Test a last batch of one is dropped"""
        batches = batch_indices(9, 4, seed=0, epoch=0)
        assert [len(b) for b in batches] == [4, 4]
        assert batch_count(9, 4) == 2
        assert batch_count(10, 4) == 3

    def test_deterministic_per_epoch(self):
        """Test order depends on seed and epoch only"""
        assert batch_indices(12, 4, 3, 1) == batch_indices(12, 4, 3, 1)
        assert batch_indices(12, 4, 3, 1) != batch_indices(12, 4, 3, 2)

    def test_too_few_items(self):
        """Test a split of one item cannot form a contrastive batch"""
        with pytest.raises(DatasetError):
            batch_indices(1, 4, 0, 0)

    def test_bad_batch_size(self):
        """Test batch size must be positive"""
        with pytest.raises(ConfigError):
            batch_indices(4, 0, 0, 0)

    def test_batch_iter(self, synth_dataset):
        """Test triplets carry aligned frames and captions"""
        sampler = LanguageSampler(["fr", "de"])
        batches = list(batch_iter(synth_dataset, "train", 4, sampler, seed=2, epoch=0))
        assert len(batches) == 3
        for batch in batches:
            for triplet in batch:
                index = triplet.frames.video_id[len("video"):]
                assert triplet.english.caption_id == f"en-{index}"
                assert len(triplet.multilingual) == 1
                assert triplet.multilingual[0].caption_id.endswith(index)
