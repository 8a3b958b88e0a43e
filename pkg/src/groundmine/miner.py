"""Similarity mining over query embeddings.

Builds, stores, and samples from a top-k cosine neighbour index. The index
partitions the corpus, per anchor, into a small mined-similar set and the
complement; training draws one positive from the former and one negative from
the latter.

Determinism contract: scores are float32 and every anchor row is produced by
the same blocked matrix product family. ``cosine_topk`` computes the score
block that contains its anchor (same slice boundaries as ``build_index``)
instead of a single-row product, because single-row BLAS kernels are not
bitwise identical to the blocked ones. Ties are broken by ascending id, so
the index for a given embedding matrix is unique.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import FormatError, ValidationError
from . import fileio

INDEX_MAGIC = b"PSMI"
INDEX_VERSION = 1

DEFAULT_EMBED_DIM = 384
DEFAULT_BLOCK_SIZE = 1024
UNIT_NORM_TOL = 1e-6


@dataclass
class EmbeddingMatrix:
    """Float32 unit-norm query embeddings, one row per sample in corpus order."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)

    def validate(self) -> None:
        v = self.vectors
        if v.ndim != 2 or v.shape[0] == 0 or v.shape[1] == 0:
            raise ValidationError(f"embedding matrix must be non-empty 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("non-finite embedding values")
        norms = np.linalg.norm(v.astype(np.float64), axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > UNIT_NORM_TOL:
            raise ValidationError(f"embedding rows not unit-norm (max deviation {worst:.3g})")

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def _hash_bucket(token: str, dim: int) -> int:
    # blake2b, not hash(): the builtin is salted per process and this mapping
    # must be stable across processes and platforms.
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def embed_queries_reference(corpus: Corpus, dim: int = DEFAULT_EMBED_DIM) -> EmbeddingMatrix:
    """Hashed bag-of-words reference embedding.

    Lowercased whitespace tokens are counted into ``dim`` hash buckets and the
    count vector is L2-normalized. Crude but deterministic and dependency-free;
    any stronger sentence encoder can replace it by writing the same PSMF file.
    """
    if dim < 1:
        raise ValidationError(f"embedding dim must be >= 1, got {dim}")
    out = np.zeros((len(corpus), dim), dtype=np.float64)
    for row, sample in enumerate(corpus.samples):
        tokens = sample.query_text.lower().split()
        if not tokens:
            raise ValidationError(f"sample {sample.sample_id}: no tokens to embed")
        for tok in tokens:
            out[row, _hash_bucket(tok, dim)] += 1.0
        out[row] /= np.linalg.norm(out[row])
    emb = EmbeddingMatrix(out.astype(np.float32))
    emb.validate()
    return emb


def _topk_row(row: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact top-k of one score row (self already masked to -inf).

    Selection is score-descending with ascending-index tie-break, without a
    full sort: partition for the k-th value, gather the candidates at or above
    it, then order just those with a lexsort.
    """
    n = row.shape[0]
    thr = np.partition(row, n - k)[n - k]
    cand = np.flatnonzero(row >= thr)
    order = np.lexsort((cand, -row[cand]))[:k]
    sel = cand[order]
    return sel.astype(np.uint32), row[sel]


@dataclass
class MiningIndex:
    """Per-anchor mined neighbours: ids and cosine scores, best first."""

    k: int
    sim_indices: np.ndarray  # (n, k) uint32
    sim_scores: np.ndarray  # (n, k) float32

    @property
    def n(self) -> int:
        return self.sim_indices.shape[0]

    def validate(self) -> None:
        idx, sc = self.sim_indices, self.sim_scores
        if idx.shape != sc.shape or idx.ndim != 2:
            raise ValidationError(f"index/score shape mismatch: {idx.shape} vs {sc.shape}")
        n, k = idx.shape
        if k != self.k:
            raise ValidationError(f"declared k={self.k} but rows have {k} entries")
        if not 1 <= k <= n - 1:
            raise ValidationError(f"need 1 <= k <= n-1, got k={k}, n={n}")
        if not np.all(np.isfinite(sc)):
            raise ValidationError("non-finite similarity scores")
        if idx.max() >= n:
            raise ValidationError("neighbour id out of range")
        anchors = np.arange(n, dtype=np.uint32)[:, None]
        if np.any(idx == anchors):
            raise ValidationError("anchor appears in its own neighbour list")
        for i in range(n):
            if len(set(idx[i].tolist())) != k:
                raise ValidationError(f"duplicate neighbour ids for anchor {i}")
        if np.any(sc[:, 1:] > sc[:, :-1]):
            raise ValidationError("scores not sorted non-increasing")
        tied = sc[:, 1:] == sc[:, :-1]
        if np.any(tied & (idx[:, 1:] <= idx[:, :-1])):
            raise ValidationError("tied scores not ordered by ascending id")

    def neighbours(self, anchor: int) -> np.ndarray:
        return self.sim_indices[anchor]


def _check_anchor_k(n: int, anchor: int | None, k: int) -> None:
    if anchor is not None and not 0 <= anchor < n:
        raise ValidationError(f"anchor {anchor} out of range for n={n}")
    if not 1 <= k <= n - 1:
        raise ValidationError(
            f"k must satisfy 1 <= k <= n-1 (k={k}, n={n}); use a smaller k for this corpus"
        )


def cosine_topk(
    emb: EmbeddingMatrix, anchor: int, k: int, block_size: int = DEFAULT_BLOCK_SIZE
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k neighbours of one anchor; bitwise equal to the build_index row."""
    v = emb.vectors
    n = v.shape[0]
    _check_anchor_k(n, anchor, k)
    a = (anchor // block_size) * block_size
    b = min(a + block_size, n)
    et = np.ascontiguousarray(v.T)
    scores = np.empty((b - a, n), dtype=np.float32)
    np.matmul(v[a:b], et, out=scores)
    row = scores[anchor - a]
    row[anchor] = -np.inf
    return _topk_row(row, k)


def build_index(
    emb: EmbeddingMatrix, k: int, block_size: int = DEFAULT_BLOCK_SIZE
) -> MiningIndex:
    """Mine top-k cosine neighbours for every anchor.

    O(n^2 d) via blocked GEMM; the per-block score matrix is reused, so peak
    extra memory is block_size * n floats.
    """
    v = emb.vectors
    n = v.shape[0]
    _check_anchor_k(n, None, k)
    if block_size < 1:
        raise ValidationError(f"block_size must be >= 1, got {block_size}")
    et = np.ascontiguousarray(v.T)
    indices = np.empty((n, k), dtype=np.uint32)
    scores = np.empty((n, k), dtype=np.float32)
    buf = np.empty((min(block_size, n), n), dtype=np.float32)
    for a in range(0, n, block_size):
        b = min(a + block_size, n)
        m = b - a
        s = np.matmul(v[a:b], et, out=buf[:m])
        s[np.arange(m), np.arange(a, b)] = -np.inf
        for r in range(m):
            indices[a + r], scores[a + r] = _topk_row(s[r], k)
    return MiningIndex(k=k, sim_indices=indices, sim_scores=scores)


def draw_training_pair(
    index: MiningIndex, anchor: int, rng: np.random.Generator
) -> tuple[int, int]:
    """Draw (similar, dissimilar) ids for one anchor.

    Similar: uniform over the anchor's k mined neighbours. Dissimilar:
    uniform over everything else (excluding the anchor itself), by rejection.
    Requires n >= k + 2 so the complement is non-empty.
    """
    n, k = index.n, index.k
    if not 0 <= anchor < n:
        raise ValidationError(f"anchor {anchor} out of range for n={n}")
    if n < k + 2:
        raise ValidationError(f"need n >= k+2 to draw a dissimilar sample (n={n}, k={k})")
    row = index.sim_indices[anchor]
    sim_id = int(row[int(rng.integers(k))])
    excluded = set(row.tolist())
    excluded.add(anchor)
    while True:
        cand = int(rng.integers(n))
        if cand not in excluded:
            return sim_id, cand


def save_index(path: str | Path, index: MiningIndex) -> None:
    index.validate()
    with open(path, "wb") as fh:
        fileio.write_magic(fh, INDEX_MAGIC, INDEX_VERSION)
        fileio.write_u32(fh, index.n)
        fileio.write_u32(fh, index.k)
        fileio.write_u32_array(fh, index.sim_indices)
        fileio.write_f32_array(fh, index.sim_scores)


def load_index(path: str | Path) -> MiningIndex:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing index file: {path}")
    with open(path, "rb") as fh:
        fileio.check_magic(fh, INDEX_MAGIC, INDEX_VERSION)
        n = fileio.read_u32(fh, "sample count")
        k = fileio.read_u32(fh, "neighbour count")
        if n == 0 or k == 0:
            raise FormatError(f"degenerate index header (n={n}, k={k}) in {path}")
        indices = fileio.read_u32_array(fh, (n, k), "neighbour ids")
        scores = fileio.read_f32_array(fh, (n, k), "neighbour scores")
        fileio.expect_eof(fh, "index payload")
    index = MiningIndex(k=k, sim_indices=indices, sim_scores=scores)
    index.validate()
    return index
