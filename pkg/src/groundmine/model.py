"""Grounding model: shared-space encoders and Gaussian proposal heads.

The query path is tanh(mean(words) @ W_query + b_query) @ W_out + b_out,
L2-normalized. The video path pools segment features with a temporal weight
vector, applies its own affine map, then the shared output map, and
normalizes. Each of m heads predicts a (center, half-width) pair from the
concatenated mean-pooled video state and query hidden state; the head's
Gaussian mask yields a positive (inside) proposal feature and a complementary
negative (outside) one.

All arithmetic here is float64; checkpoints round to float32 on disk (see
``save_checkpoint``). Forward functions retain the intermediates needed by
the analytic backward pass in the loss module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import DegenerateFeatureError, FormatError, ValidationError
from . import fileio

CHECKPOINT_MAGIC = b"PSMC"
CHECKPOINT_VERSION = 1

# Pre-normalization vectors below this norm have no usable direction.
NORM_FLOOR = 1e-12

PARAM_NAMES = (
    "w_query",
    "b_query",
    "w_video",
    "b_video",
    "w_out",
    "b_out",
    "w_center",
    "b_center",
    "w_width",
    "b_width",
)


@dataclass
class ModelConfig:
    """Architecture hyperparameters. r_min/r_max bound the mask half-width."""

    word_dim: int
    video_dim: int
    hidden: int = 64
    feat_dim: int = 256
    n_heads: int = 3
    r_min: float = 0.02
    r_max: float = 0.45

    def validate(self) -> None:
        for name in ("word_dim", "video_dim", "hidden", "feat_dim", "n_heads"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.r_min < self.r_max < 1.0:
            raise ValidationError(
                f"need 0 < r_min < r_max < 1, got ({self.r_min}, {self.r_max})"
            )


@dataclass
class ModelParams:
    config: ModelConfig
    w_query: np.ndarray
    b_query: np.ndarray
    w_video: np.ndarray
    b_video: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    w_center: np.ndarray
    b_center: np.ndarray
    w_width: np.ndarray
    b_width: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, **{n: getattr(self, n).copy() for n in PARAM_NAMES})

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        c = self.config
        return _expected_shapes(c)


def _expected_shapes(c: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {
        "w_query": (c.word_dim, c.hidden),
        "b_query": (c.hidden,),
        "w_video": (c.video_dim, c.hidden),
        "b_video": (c.hidden,),
        "w_out": (c.hidden, c.feat_dim),
        "b_out": (c.feat_dim,),
        "w_center": (c.n_heads, 2 * c.hidden),
        "b_center": (c.n_heads,),
        "w_width": (c.n_heads, 2 * c.hidden),
        "b_width": (c.n_heads,),
    }


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_in, fan_out = shape
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases. Head rows are fan-in 2h, fan-out 1."""
    config.validate()
    c = config
    a_head = np.sqrt(6.0 / (2 * c.hidden + 1))
    return ModelParams(
        config=c,
        w_query=_glorot(rng, (c.word_dim, c.hidden)),
        b_query=np.zeros(c.hidden),
        w_video=_glorot(rng, (c.video_dim, c.hidden)),
        b_video=np.zeros(c.hidden),
        w_out=_glorot(rng, (c.hidden, c.feat_dim)),
        b_out=np.zeros(c.feat_dim),
        w_center=rng.uniform(-a_head, a_head, size=(c.n_heads, 2 * c.hidden)),
        b_center=np.zeros(c.n_heads),
        w_width=rng.uniform(-a_head, a_head, size=(c.n_heads, 2 * c.hidden)),
        b_width=np.zeros(c.n_heads),
    )


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def _normalize(z: np.ndarray, what: str) -> tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(z))
    if norm < NORM_FLOOR:
        raise DegenerateFeatureError(f"zero-norm {what} vector, cannot normalize")
    return z / norm, norm


@dataclass
class QueryEncoding:
    """L2-normalized query feature plus the hidden state feeding the heads."""

    q: np.ndarray
    hidden: np.ndarray
    # cached intermediates for the backward pass
    word_mean: np.ndarray = field(repr=False, default=None)
    z: np.ndarray = field(repr=False, default=None)
    z_norm: float = field(repr=False, default=0.0)


def encode_query(params: ModelParams, word_feats: np.ndarray) -> QueryEncoding:
    u = np.asarray(word_feats, dtype=np.float64).mean(axis=0)
    hidden = np.tanh(u @ params.w_query + params.b_query)
    z = hidden @ params.w_out + params.b_out
    q, z_norm = _normalize(z, "query feature")
    return QueryEncoding(q=q, hidden=hidden, word_mean=u, z=z, z_norm=z_norm)


def _gaussian_parts(
    center: float, half_width: float, n_segments: int
) -> tuple[np.ndarray, np.ndarray, float, np.ndarray]:
    if n_segments < 1:
        raise ValidationError(f"need at least one segment, got {n_segments}")
    if not half_width > 0.0:
        raise ValidationError(f"half_width must be positive, got {half_width}")
    tau = (np.arange(n_segments, dtype=np.float64) + 0.5) / n_segments
    sigma = half_width / 3.0
    u = np.exp(-((tau - center) ** 2) / (2.0 * sigma * sigma))
    total = float(u.sum())
    if total == 0.0:
        raise ValidationError("Gaussian mask underflowed to zero everywhere")
    return tau, u, total, u / total


def gaussian_weights(center: float, half_width: float, n_segments: int) -> np.ndarray:
    """Normalized Gaussian temporal mask on segment midpoints; sums to 1."""
    return _gaussian_parts(center, half_width, n_segments)[3]


def _negative_parts(g: np.ndarray) -> tuple[np.ndarray, int, float, bool]:
    peak = int(np.argmax(g))
    d = g[peak] - g
    total = float(d.sum())
    if total == 0.0:
        # perfectly flat mask: no outside region, fall back to uniform
        t = g.shape[0]
        return np.full(t, 1.0 / t), peak, 0.0, True
    return d / total, peak, total, False


def negative_weights(g: np.ndarray) -> np.ndarray:
    """Complementary mask: peak-relative deficit, normalized; uniform if flat."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1 or g.shape[0] == 0:
        raise ValidationError(f"mask must be non-empty 1-D, got shape {g.shape}")
    return _negative_parts(g)[0]


@dataclass
class Proposal:
    """One head's output: mask geometry, weights, pooled shared-space features."""

    center: float
    half_width: float
    pos_weights: np.ndarray
    neg_weights: np.ndarray
    pos_feat: np.ndarray
    neg_feat: np.ndarray


@dataclass
class _HeadCache:
    a_center: float
    a_width: float
    s_width: float
    tau: np.ndarray
    u: np.ndarray
    u_sum: float
    neg_peak: int
    neg_sum: float
    neg_flat: bool
    x_pos: np.ndarray
    y_pos: np.ndarray
    pos_norm: float
    x_neg: np.ndarray
    y_neg: np.ndarray
    neg_norm: float


@dataclass
class _ProposeCache:
    video: np.ndarray  # float64 copy of segment features
    video_mean: np.ndarray
    vbar: np.ndarray
    cat: np.ndarray
    heads: list[_HeadCache]


def _pool_project(
    params: ModelParams, video: np.ndarray, weights: np.ndarray, what: str
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    x = video.T @ weights
    y = x @ params.w_video + params.b_video
    z = y @ params.w_out + params.b_out
    feat, norm = _normalize(z, what)
    return x, y, feat, norm


def _propose_cached(
    params: ModelParams, video_feats: np.ndarray, hidden: np.ndarray
) -> tuple[list[Proposal], _ProposeCache]:
    c = params.config
    video = np.asarray(video_feats, dtype=np.float64)
    t = video.shape[0]
    video_mean = video.mean(axis=0)
    vbar = video_mean @ params.w_video + params.b_video
    cat = np.concatenate([vbar, hidden])
    proposals: list[Proposal] = []
    heads: list[_HeadCache] = []
    for j in range(c.n_heads):
        a_c = float(params.w_center[j] @ cat + params.b_center[j])
        center = _sigmoid(a_c)
        a_w = float(params.w_width[j] @ cat + params.b_width[j])
        s_w = _sigmoid(a_w)
        half_width = c.r_min + (c.r_max - c.r_min) * s_w
        tau, u, u_sum, g = _gaussian_parts(center, half_width, t)
        h, peak, neg_sum, flat = _negative_parts(g)
        x_pos, y_pos, pos_feat, pos_norm = _pool_project(params, video, g, "proposal feature")
        x_neg, y_neg, neg_feat, neg_norm = _pool_project(params, video, h, "negative feature")
        proposals.append(
            Proposal(
                center=center,
                half_width=half_width,
                pos_weights=g,
                neg_weights=h,
                pos_feat=pos_feat,
                neg_feat=neg_feat,
            )
        )
        heads.append(
            _HeadCache(
                a_center=a_c,
                a_width=a_w,
                s_width=s_w,
                tau=tau,
                u=u,
                u_sum=u_sum,
                neg_peak=peak,
                neg_sum=neg_sum,
                neg_flat=flat,
                x_pos=x_pos,
                y_pos=y_pos,
                pos_norm=pos_norm,
                x_neg=x_neg,
                y_neg=y_neg,
                neg_norm=neg_norm,
            )
        )
    return proposals, _ProposeCache(
        video=video, video_mean=video_mean, vbar=vbar, cat=cat, heads=heads
    )


def propose(
    params: ModelParams, video_feats: np.ndarray, hidden: np.ndarray
) -> list[Proposal]:
    """Run all heads over one video conditioned on a query hidden state."""
    return _propose_cached(params, video_feats, hidden)[0]


def interval_of(proposal: Proposal, duration: float) -> tuple[float, float]:
    """Mask geometry as a clamped interval in seconds."""
    if not duration > 0:
        raise ValidationError(f"duration must be positive, got {duration}")
    start = max(0.0, proposal.center - proposal.half_width) * duration
    end = min(1.0, proposal.center + proposal.half_width) * duration
    return start, end


@dataclass
class _BranchCache:
    """Forward state of one sample's pass (query encoding + proposal cache)."""

    enc: QueryEncoding
    prop: _ProposeCache


@dataclass
class FeatureBundle:
    """All features entering the loss for one (anchor, similar, dissimilar) triple.

    ``p_sim``/``p_dis`` follow the first-head convention: mined samples
    contribute the positive feature of head 0.
    """

    q: np.ndarray
    q_sim: np.ndarray
    q_dis: np.ndarray
    proposals: list[Proposal]
    p_sim: np.ndarray
    p_dis: np.ndarray
    stop_gradient_branches: bool = False
    anchor_cache: _BranchCache = field(repr=False, default=None)
    sim_cache: _BranchCache = field(repr=False, default=None)
    dis_cache: _BranchCache = field(repr=False, default=None)


def forward_bundle(
    params: ModelParams,
    anchor_words: np.ndarray,
    anchor_video: np.ndarray,
    sim_words: np.ndarray,
    sim_video: np.ndarray,
    dis_words: np.ndarray,
    dis_video: np.ndarray,
    stop_gradient_branches: bool = False,
) -> FeatureBundle:
    enc_a = encode_query(params, anchor_words)
    props_a, cache_a = _propose_cached(params, anchor_video, enc_a.hidden)
    enc_s = encode_query(params, sim_words)
    props_s, cache_s = _propose_cached(params, sim_video, enc_s.hidden)
    enc_d = encode_query(params, dis_words)
    props_d, cache_d = _propose_cached(params, dis_video, enc_d.hidden)
    return FeatureBundle(
        q=enc_a.q,
        q_sim=enc_s.q,
        q_dis=enc_d.q,
        proposals=props_a,
        p_sim=props_s[0].pos_feat,
        p_dis=props_d[0].pos_feat,
        stop_gradient_branches=stop_gradient_branches,
        anchor_cache=_BranchCache(enc_a, cache_a),
        sim_cache=_BranchCache(enc_s, cache_s),
        dis_cache=_BranchCache(enc_d, cache_d),
    )


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(getattr(params, name)) for name in PARAM_NAMES}


# ---------------------------------------------------------------------------
# checkpoint container


def _write_block(fh, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    fileio.write_u32(fh, len(raw))
    fh.write(raw)
    fileio.write_u32(fh, arr.ndim)
    for dim in arr.shape:
        fileio.write_u32(fh, dim)
    fileio.write_f32_array(fh, arr)


def _read_block(fh) -> tuple[str, np.ndarray]:
    name_len = fileio.read_u32(fh, "block name length")
    name = fileio.read_exact(fh, name_len, "block name").decode("utf-8")
    ndim = fileio.read_u32(fh, "block rank")
    if ndim > 8:
        raise FormatError(f"implausible block rank {ndim} for {name!r}")
    shape = tuple(fileio.read_u32(fh, "block dim") for _ in range(ndim))
    arr = fileio.read_f32_array(fh, shape, f"block {name!r}")
    return name, arr.astype(np.float64)


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    step: int = 0,
    epoch: int = 0,
    extra_arrays: dict[str, np.ndarray] | None = None,
    extra_meta: dict | None = None,
) -> None:
    """Write params (+ optional named arrays, e.g. optimizer state) as float32.

    Output is byte-deterministic: sorted meta JSON, fixed block order. Loading
    a checkpoint recovers exactly the float32-rounded values.
    """
    extra_arrays = extra_arrays or {}
    meta = {
        "config": asdict(params.config),
        "step": int(step),
        "epoch": int(epoch),
        "extra_meta": extra_meta or {},
    }
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    blocks = [(name, getattr(params, name)) for name in PARAM_NAMES]
    blocks += [(name, extra_arrays[name]) for name in sorted(extra_arrays)]
    with open(path, "wb") as fh:
        fileio.write_magic(fh, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        fileio.write_u32(fh, len(meta_raw))
        fh.write(meta_raw)
        fileio.write_u32(fh, len(blocks))
        for name, arr in blocks:
            _write_block(fh, name, np.asarray(arr))


@dataclass
class Checkpoint:
    params: ModelParams
    step: int
    epoch: int
    extra_arrays: dict[str, np.ndarray]
    extra_meta: dict


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing checkpoint: {path}")
    with open(path, "rb") as fh:
        fileio.check_magic(fh, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
        meta_len = fileio.read_u32(fh, "meta length")
        try:
            meta = json.loads(fileio.read_exact(fh, meta_len, "meta").decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"corrupt checkpoint meta in {path}: {exc}") from exc
        n_blocks = fileio.read_u32(fh, "block count")
        blocks: dict[str, np.ndarray] = {}
        for _ in range(n_blocks):
            name, arr = _read_block(fh)
            if name in blocks:
                raise FormatError(f"duplicate block {name!r} in {path}")
            blocks[name] = arr
        fileio.expect_eof(fh, "checkpoint payload")
    try:
        config = ModelConfig(**meta["config"])
        step = int(meta["step"])
        epoch = int(meta["epoch"])
        extra_meta = meta.get("extra_meta", {})
    except (KeyError, TypeError) as exc:
        raise FormatError(f"incomplete checkpoint meta in {path}: {exc}") from exc
    config.validate()
    shapes = _expected_shapes(config)
    param_arrays = {}
    for name in PARAM_NAMES:
        if name not in blocks:
            raise FormatError(f"checkpoint {path} missing parameter block {name!r}")
        arr = blocks.pop(name)
        if arr.shape != shapes[name]:
            raise FormatError(
                f"checkpoint block {name!r} has shape {arr.shape}, expected {shapes[name]}"
            )
        param_arrays[name] = arr
    params = ModelParams(config=config, **param_arrays)
    return Checkpoint(
        params=params, step=step, epoch=epoch, extra_arrays=blocks, extra_meta=extra_meta
    )
