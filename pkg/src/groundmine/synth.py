"""Synthetic planted-topic corpora.

Each sample belongs to one of K topics. Its words hover around the topic's
word prototype, its mining embedding around the topic's embedding prototype
(so mined neighbours are overwhelmingly same-topic), and its video is noise
except inside the ground-truth interval, where the topic's video prototype is
added. Topic prototypes are unit vectors, so ``video_noise`` is the inverse
per-segment SNR: the only way to tell topics apart from the video is to look
inside the ground-truth span, which is what grounding must learn.

Each topic also has a home region: the ground-truth interval is centred near
(topic + 0.5) / K of the video, jittered by ``loc_jitter``. The proposal
heads predict mask geometry from pooled (position-free) features, so interval
positions are learnable only insofar as they correlate with what pooling
preserves; tying position to topic makes localization quality a direct probe
of how well training identifies the topic structure.

Most videos additionally carry a distractor event: a different topic's video
prototype planted in a shorter interval disjoint from the ground truth. The
region outside the true span is then describable content rather than pure
noise, which is what makes the negative (outside-mask) proposal feature a
meaningful contrast target, and over-wide masks pay a price for swallowing
the distractor.

Topic prototypes are drawn from ``proto_seed`` alone, while samples come from
``seed``: corpora generated with one ``proto_seed`` but different ``seed``
values share the same topic world, which is how disjoint train and test
splits are made. Each stream is order-fixed, so a config maps to exactly one
corpus, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, Sample
from .errors import ValidationError
from .miner import EmbeddingMatrix

# rng stream ids (second element after the seed)
STREAM_PROTO = 0
STREAM_SAMPLES = 1


@dataclass
class SynthConfig:
    seed: int = 0
    proto_seed: int = 0
    n_samples: int = 400
    n_topics: int = 4
    n_segments: int = 24
    n_words: int = 8
    word_dim: int = 16
    video_dim: int = 24
    embed_dim: int = 64
    video_noise: float = 3.2
    query_noise: float = 0.8
    gt_min_frac: float = 0.2
    gt_max_frac: float = 0.45
    loc_jitter: float = 0.08
    distractor_rate: float = 0.9

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.n_topics < 2:
            raise ValidationError(f"need at least 2 topics, got {self.n_topics}")
        if self.n_segments < 2:
            raise ValidationError(f"need >= 2 segments for a non-degenerate gt span")
        if self.n_words < 1:
            raise ValidationError(f"n_words must be >= 1, got {self.n_words}")
        for name in ("word_dim", "video_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        for name in ("video_noise", "query_noise"):
            if not (np.isfinite(getattr(self, name)) and getattr(self, name) >= 0.0):
                raise ValidationError(f"{name} must be finite and >= 0")
        if not 0.0 < self.gt_min_frac <= self.gt_max_frac <= 1.0:
            raise ValidationError(
                f"need 0 < gt_min_frac <= gt_max_frac <= 1, got "
                f"({self.gt_min_frac}, {self.gt_max_frac})"
            )
        if not (np.isfinite(self.loc_jitter) and self.loc_jitter >= 0.0):
            raise ValidationError(f"loc_jitter must be finite and >= 0")
        if not (np.isfinite(self.distractor_rate) and 0.0 <= self.distractor_rate <= 1.0):
            raise ValidationError(
                f"distractor_rate must be in [0, 1], got {self.distractor_rate}"
            )


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.standard_normal((n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def generate(config: SynthConfig) -> tuple[Corpus, EmbeddingMatrix]:
    """Build a corpus and its mining embeddings (world stream + sample stream)."""
    config.validate()
    world = np.random.default_rng([config.proto_seed, STREAM_PROTO])
    rng = np.random.default_rng([config.seed, STREAM_SAMPLES])
    k, t = config.n_topics, config.n_segments
    proto_word = _unit_rows(world, k, config.word_dim)
    proto_video = _unit_rows(world, k, config.video_dim)
    proto_embed = _unit_rows(world, k, config.embed_dim)

    samples: list[Sample] = []
    embeddings = np.empty((config.n_samples, config.embed_dim), dtype=np.float64)
    duration = float(t)  # one second per segment
    for i in range(config.n_samples):
        topic = int(rng.integers(k))
        frac = rng.uniform(config.gt_min_frac, config.gt_max_frac)
        width = min(t, max(2, int(round(frac * t))))
        home = (topic + 0.5) / k + rng.uniform(-config.loc_jitter, config.loc_jitter)
        start = int(round(home * t - width / 2.0))
        start = min(max(start, 0), t - width)

        words = proto_word[topic] + config.query_noise * rng.standard_normal(
            (config.n_words, config.word_dim)
        ) / np.sqrt(config.word_dim)
        video = config.video_noise * rng.standard_normal(
            (t, config.video_dim)
        ) / np.sqrt(config.video_dim)
        video[start : start + width] += proto_video[topic]

        # Distractor event: another topic's prototype, disjoint from the gt.
        # All four values are drawn every sample so the stream layout does not
        # depend on which samples end up with a distractor.
        use_distractor = rng.random() < config.distractor_rate
        d_topic = (topic + 1 + int(rng.integers(k - 1))) % k
        d_frac = rng.uniform(0.5 * config.gt_min_frac, 0.5 * config.gt_max_frac)
        u_pos = rng.random()
        d_width = max(2, int(round(d_frac * t)))
        allowed = [
            s
            for s in range(t - d_width + 1)
            if s + d_width <= start or s >= start + width
        ]
        if use_distractor and allowed:
            d_start = allowed[int(u_pos * len(allowed))]
            video[d_start : d_start + d_width] += proto_video[d_topic]

        emb = proto_embed[topic] + config.query_noise * rng.standard_normal(
            config.embed_dim
        ) / np.sqrt(config.embed_dim)
        embeddings[i] = emb / np.linalg.norm(emb)

        # answer correctness rate varies by topic so acc_qa and acc_gqa differ
        p_correct = 0.3 + 0.5 * topic / (k - 1)
        flag = bool(rng.random() < p_correct)

        samples.append(
            Sample(
                sample_id=i,
                query_text=f"topic {topic} clip {i} span {start} {start + width}",
                word_feats=words.astype(np.float32),
                video_feats=video.astype(np.float32),
                duration=duration,
                gt_interval=(float(start), float(start + width)),
                answer_correct=flag,
            )
        )

    corpus = Corpus(samples, split_name="synth")
    corpus.validate()
    matrix = EmbeddingMatrix(embeddings.astype(np.float32))
    matrix.validate()
    return corpus, matrix


def topic_of(sample: Sample) -> int:
    """Recover the planted topic from the query text (for diagnostics/tests)."""
    parts = sample.query_text.split()
    if len(parts) < 2 or parts[0] != "topic":
        raise ValidationError(f"sample {sample.sample_id} is not a synthetic sample")
    return int(parts[1])
