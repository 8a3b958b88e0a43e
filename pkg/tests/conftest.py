"""Shared builders for small deterministic test corpora and models."""

import numpy as np
import pytest

from groundmine.corpus import Corpus, Sample
from groundmine.model import ModelConfig, init_params


def make_sample(
    rng: np.random.Generator,
    sample_id: int,
    n_words: int = 3,
    n_segments: int = 5,
    word_dim: int = 3,
    video_dim: int = 3,
    duration: float = 10.0,
    with_gt: bool = True,
    with_answer: bool = False,
) -> Sample:
    """One random sample with optional gt and answer flag."""
    gt = None
    if with_gt:
        start = float(rng.uniform(0.0, duration / 2))
        end = float(rng.uniform(start + 0.5, duration))
        gt = (start, end)
    answer = bool(rng.random() < 0.5) if with_answer else None
    return Sample(
        sample_id=sample_id,
        query_text=f"query {sample_id} token{sample_id % 4}",
        word_feats=rng.standard_normal((n_words, word_dim)).astype(np.float32),
        video_feats=rng.standard_normal((n_segments, video_dim)).astype(np.float32),
        duration=duration,
        gt_interval=gt,
        answer_correct=answer,
    )


def make_corpus(n: int = 6, seed: int = 42, **kwargs) -> Corpus:
    """A small validated corpus of random samples."""
    rng = np.random.default_rng(seed)
    corpus = Corpus([make_sample(rng, i, **kwargs) for i in range(n)])
    corpus.validate()
    return corpus


def unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture
def small_params():
    """Params for a tiny model: word/video dim 3, hidden 4, feat 4, 2 heads."""
    config = ModelConfig(
        word_dim=3, video_dim=3, hidden=4, feat_dim=4, n_heads=2,
        r_min=0.02, r_max=0.45,
    )
    return init_params(config, np.random.default_rng(42))
