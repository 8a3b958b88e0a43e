"""Corpus data model: per-sample features, manifest loading, feature files.

A corpus is a JSONL manifest plus one feature file per modality per sample.
Feature files are a flat binary matrix container (magic ``PSMF``): little
endian, float32, C order, with explicit row/column counts in the header so a
reader never has to infer shape from file size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from . import fileio

FEATURE_MAGIC = b"PSMF"
FEATURE_VERSION = 1

# Hard caps on per-sample sequence lengths. Loaders reject larger inputs
# instead of truncating; silent truncation would desynchronize the query text
# used for mining from the features used for grounding.
MAX_QUERY_WORDS = 20
MAX_VIDEO_SEGMENTS = 200


def write_feature_matrix(path: str | Path, matrix: np.ndarray) -> None:
    """Write a 2-D float array as a PSMF file. Output bytes are deterministic."""
    arr = np.asarray(matrix)
    if arr.ndim != 2:
        raise ValidationError(f"feature matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValidationError(f"feature matrix must be non-empty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("feature matrix contains non-finite values")
    with open(path, "wb") as fh:
        fileio.write_magic(fh, FEATURE_MAGIC, FEATURE_VERSION)
        fileio.write_u32(fh, arr.shape[0])
        fileio.write_u32(fh, arr.shape[1])
        fileio.write_f32_array(fh, arr)


def read_feature_matrix(path: str | Path) -> np.ndarray:
    """Read a PSMF file back as float32. Rejects bad magic, truncation, NaN."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing feature file: {path}")
    with open(path, "rb") as fh:
        fileio.check_magic(fh, FEATURE_MAGIC, FEATURE_VERSION)
        rows = fileio.read_u32(fh, "row count")
        cols = fileio.read_u32(fh, "column count")
        if rows == 0 or cols == 0:
            raise FormatError(f"empty feature matrix ({rows}x{cols}) in {path}")
        arr = fileio.read_f32_array(fh, (rows, cols), "feature payload")
        fileio.expect_eof(fh, "feature payload")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite values in feature file {path}")
    return arr


@dataclass
class Sample:
    """One query-video training or evaluation item.

    ``gt_interval`` (seconds) and ``answer_correct`` are optional: training
    needs neither, grounding metrics need the former, QA accuracy the latter.
    """

    sample_id: int
    query_text: str
    word_feats: np.ndarray
    video_feats: np.ndarray
    duration: float
    gt_interval: tuple[float, float] | None = None
    answer_correct: bool | None = None

    def validate(self) -> None:
        if self.sample_id < 0:
            raise ValidationError(f"sample id must be non-negative, got {self.sample_id}")
        if not self.query_text.strip():
            raise ValidationError(f"sample {self.sample_id}: empty query text")
        for name, arr in (("word", self.word_feats), ("video", self.video_feats)):
            if arr.ndim != 2 or arr.shape[0] == 0:
                raise ValidationError(
                    f"sample {self.sample_id}: {name} features must be non-empty 2-D, "
                    f"got shape {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"sample {self.sample_id}: non-finite {name} features")
        if self.word_feats.shape[0] > MAX_QUERY_WORDS:
            raise ValidationError(
                f"sample {self.sample_id}: query has {self.word_feats.shape[0]} words, "
                f"cap is {MAX_QUERY_WORDS}"
            )
        if self.video_feats.shape[0] > MAX_VIDEO_SEGMENTS:
            raise ValidationError(
                f"sample {self.sample_id}: video has {self.video_feats.shape[0]} segments, "
                f"cap is {MAX_VIDEO_SEGMENTS}"
            )
        if not (np.isfinite(self.duration) and self.duration > 0):
            raise ValidationError(f"sample {self.sample_id}: duration must be positive")
        if self.gt_interval is not None:
            s, e = self.gt_interval
            if not (0.0 <= s <= e <= self.duration):
                raise ValidationError(
                    f"sample {self.sample_id}: gt interval ({s}, {e}) outside "
                    f"[0, {self.duration}]"
                )

    @property
    def n_segments(self) -> int:
        return self.video_feats.shape[0]


@dataclass
class Corpus:
    """An ordered collection of samples with homogeneous feature widths."""

    samples: list[Sample]
    split_name: str = "train"
    manifest_path: Path | None = None
    _by_id: dict[int, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._by_id = {s.sample_id: i for i, s in enumerate(self.samples)}

    def validate(self) -> None:
        if not self.samples:
            raise ValidationError("corpus has no samples")
        if len(self._by_id) != len(self.samples):
            raise ValidationError("duplicate sample ids in corpus")
        d_w, d_v = self.word_dim, self.video_dim
        for s in self.samples:
            s.validate()
            if s.word_feats.shape[1] != d_w:
                raise ValidationError(
                    f"sample {s.sample_id}: word feature width {s.word_feats.shape[1]} "
                    f"!= corpus width {d_w}"
                )
            if s.video_feats.shape[1] != d_v:
                raise ValidationError(
                    f"sample {s.sample_id}: video feature width {s.video_feats.shape[1]} "
                    f"!= corpus width {d_v}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, sample_id: int) -> Sample:
        try:
            return self.samples[self._by_id[sample_id]]
        except KeyError:
            raise ValidationError(f"unknown sample id {sample_id}") from None

    @property
    def ids(self) -> list[int]:
        return [s.sample_id for s in self.samples]

    @property
    def word_dim(self) -> int:
        return self.samples[0].word_feats.shape[1]

    @property
    def video_dim(self) -> int:
        return self.samples[0].video_feats.shape[1]

    def has_gt(self) -> bool:
        return all(s.gt_interval is not None for s in self.samples)

    def has_answers(self) -> bool:
        return all(s.answer_correct is not None for s in self.samples)


def load_corpus(manifest_path: str | Path, split_name: str = "train") -> Corpus:
    """Load a corpus from a JSONL manifest.

    Each line is one JSON object: ``id`` (int), ``query`` (str), ``word_feats``
    and ``video_feats`` (PSMF paths relative to the manifest), ``duration``
    (seconds), optional ``gt`` ([start, end] seconds), optional
    ``answer_correct`` (bool). Blank lines are skipped. The returned corpus is
    fully validated.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FormatError(f"missing manifest: {manifest_path}")
    base = manifest_path.parent
    samples = []
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{manifest_path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise FormatError(f"{manifest_path}:{lineno}: expected an object")
            missing = {"id", "query", "word_feats", "video_feats", "duration"} - rec.keys()
            if missing:
                raise FormatError(
                    f"{manifest_path}:{lineno}: missing keys {sorted(missing)}"
                )
            gt = rec.get("gt")
            if gt is not None:
                if not (isinstance(gt, (list, tuple)) and len(gt) == 2):
                    raise FormatError(f"{manifest_path}:{lineno}: gt must be [start, end]")
                gt = (float(gt[0]), float(gt[1]))
            flag = rec.get("answer_correct")
            if flag is not None and not isinstance(flag, bool):
                raise FormatError(f"{manifest_path}:{lineno}: answer_correct must be a bool")
            samples.append(
                Sample(
                    sample_id=int(rec["id"]),
                    query_text=str(rec["query"]),
                    word_feats=read_feature_matrix(base / rec["word_feats"]),
                    video_feats=read_feature_matrix(base / rec["video_feats"]),
                    duration=float(rec["duration"]),
                    gt_interval=gt,
                    answer_correct=flag,
                )
            )
    corpus = Corpus(samples, split_name=split_name, manifest_path=manifest_path)
    corpus.validate()
    return corpus


def write_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Write manifest + feature files under out_dir; returns the manifest path.

    Feature paths inside the manifest are relative, so the manifest bytes do
    not depend on out_dir (determinism across working directories).
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for s in corpus.samples:
            word_rel = f"features/{s.sample_id:06d}_words.psmf"
            video_rel = f"features/{s.sample_id:06d}_video.psmf"
            write_feature_matrix(out_dir / word_rel, s.word_feats)
            write_feature_matrix(out_dir / video_rel, s.video_feats)
            rec = {
                "id": s.sample_id,
                "query": s.query_text,
                "word_feats": word_rel,
                "video_feats": video_rel,
                "duration": s.duration,
            }
            if s.gt_interval is not None:
                rec["gt"] = [s.gt_interval[0], s.gt_interval[1]]
            if s.answer_correct is not None:
                rec["answer_correct"] = s.answer_correct
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest
