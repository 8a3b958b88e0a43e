"""Feature-file format, manifest loading, and corpus validation."""

import json

import numpy as np
import pytest

from groundmine.corpus import (
    Corpus,
    Sample,
    load_corpus,
    read_feature_matrix,
    write_corpus,
    write_feature_matrix,
)
from groundmine.errors import FormatError, ValidationError

from conftest import make_corpus, make_sample


class TestFeatureFileWrite:
    """The binary feature format has a fixed 16-byte header plus float32 payload."""

    def test_single_zero_is_twenty_bytes(self, tmp_path):
        """A 1x1 matrix [0.0] writes exactly 20 bytes ending in a zero float."""
        path = tmp_path / "one.psmf"
        write_feature_matrix(path, np.array([[0.0]]))
        raw = path.read_bytes()
        assert len(raw) == 20
        assert raw[:4] == b"PSMF"
        assert raw[-4:] == b"\x00\x00\x00\x00"

    def test_round_trip_bit_exact(self, tmp_path):
        """A 2x3 float32 matrix survives write + read without any bit changing."""
        path = tmp_path / "m.psmf"
        m = np.array([[1.5, -2.25, 3.0], [0.1, 0.2, 0.3]], dtype=np.float32)
        write_feature_matrix(path, m)
        back = read_feature_matrix(path)
        assert back.dtype == np.float32
        assert np.array_equal(back.view(np.uint32), m.view(np.uint32))

    def test_nan_rejected(self, tmp_path):
        """Non-finite values are refused at write time."""
        m = np.array([[1.0, np.nan]])
        with pytest.raises(ValidationError):
            write_feature_matrix(tmp_path / "bad.psmf", m)

    def test_writes_are_deterministic(self, tmp_path):
        """Writing the same matrix twice yields identical bytes."""
        m = np.random.default_rng(42).standard_normal((4, 7)).astype(np.float32)
        write_feature_matrix(tmp_path / "a.psmf", m)
        write_feature_matrix(tmp_path / "b.psmf", m)
        assert (tmp_path / "a.psmf").read_bytes() == (tmp_path / "b.psmf").read_bytes()


class TestFeatureFileRead:
    """Corrupt feature files fail loudly, never silently."""

    def test_wrong_magic_rejected(self, tmp_path):
        """A file with magic XXXX is rejected."""
        path = tmp_path / "m.psmf"
        write_feature_matrix(path, np.ones((2, 2), dtype=np.float32))
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            read_feature_matrix(path)

    def test_truncated_payload_rejected(self, tmp_path):
        """A file missing its last 4 bytes is rejected."""
        path = tmp_path / "m.psmf"
        write_feature_matrix(path, np.ones((2, 2), dtype=np.float32))
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(FormatError):
            read_feature_matrix(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        """Extra bytes after the payload are rejected."""
        path = tmp_path / "m.psmf"
        write_feature_matrix(path, np.ones((2, 2), dtype=np.float32))
        path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
        with pytest.raises(FormatError):
            read_feature_matrix(path)

    def test_missing_file_rejected(self, tmp_path):
        """A nonexistent path raises a format error, not FileNotFoundError."""
        with pytest.raises(FormatError):
            read_feature_matrix(tmp_path / "nope.psmf")


class TestManifestRoundTrip:
    """Corpora written to disk load back equal."""

    def test_two_sample_manifest(self, tmp_path):
        """A 2-sample manifest loads as a corpus with n=2 and ids {0, 1}."""
        corpus = make_corpus(n=2)
        manifest = write_corpus(corpus, tmp_path)
        back = load_corpus(manifest)
        assert len(back) == 2
        assert back.ids == [0, 1]

    def test_features_survive_round_trip(self, tmp_path):
        """Feature matrices, gt, and flags are preserved exactly."""
        corpus = make_corpus(n=3, with_answer=True)
        manifest = write_corpus(corpus, tmp_path)
        back = load_corpus(manifest)
        for orig, loaded in zip(corpus.samples, back.samples):
            np.testing.assert_array_equal(orig.word_feats, loaded.word_feats)
            np.testing.assert_array_equal(orig.video_feats, loaded.video_feats)
            assert loaded.gt_interval == orig.gt_interval
            assert loaded.answer_correct == orig.answer_correct
            assert loaded.query_text == orig.query_text

    def test_manifest_bytes_deterministic(self, tmp_path):
        """Two writes of the same corpus produce identical manifest bytes."""
        corpus = make_corpus(n=3)
        m1 = write_corpus(corpus, tmp_path / "a")
        m2 = write_corpus(corpus, tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()

    def test_missing_keys_rejected(self, tmp_path):
        """A manifest line without required keys names the file and line."""
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(json.dumps({"id": 0, "query": "hi"}) + "\n")
        with pytest.raises(FormatError, match="manifest.jsonl:1"):
            load_corpus(manifest)


class TestSampleValidation:
    """Per-sample invariants are enforced at the boundary."""

    def test_gt_beyond_duration_rejected(self, rng):
        """A gt interval ending after the video's duration is invalid."""
        sample = make_sample(rng, 0)
        sample.gt_interval = (0.0, sample.duration + 1.0)
        with pytest.raises(ValidationError):
            sample.validate()

    def test_gt_reversed_rejected(self, rng):
        """A gt interval with start > end is invalid."""
        sample = make_sample(rng, 0)
        sample.gt_interval = (5.0, 2.0)
        with pytest.raises(ValidationError):
            sample.validate()

    def test_word_cap_enforced(self, rng):
        """Queries longer than the word cap are rejected, not truncated."""
        sample = make_sample(rng, 0, n_words=21)
        with pytest.raises(ValidationError, match="cap"):
            sample.validate()

    def test_empty_query_rejected(self, rng):
        """Whitespace-only query text is invalid."""
        sample = make_sample(rng, 0)
        sample.query_text = "   "
        with pytest.raises(ValidationError):
            sample.validate()


class TestCorpusValidation:
    """Corpus-level invariants: non-empty, unique ids, homogeneous dims."""

    def test_mixed_video_dims_rejected(self, rng):
        """Samples with video dims 8 and 4 cannot share a corpus."""
        a = make_sample(rng, 0, video_dim=8)
        b = make_sample(rng, 1, video_dim=4)
        with pytest.raises(ValidationError):
            Corpus([a, b]).validate()

    def test_duplicate_ids_rejected(self, rng):
        """Two samples with the same id are rejected."""
        a = make_sample(rng, 3)
        b = make_sample(rng, 3)
        with pytest.raises(ValidationError):
            Corpus([a, b]).validate()

    def test_empty_corpus_rejected(self):
        """A corpus with no samples is invalid."""
        with pytest.raises(ValidationError):
            Corpus([]).validate()

    def test_lookup_by_id(self):
        """Indexing a corpus by sample id returns that sample."""
        corpus = make_corpus(n=4)
        assert corpus[2].sample_id == 2
