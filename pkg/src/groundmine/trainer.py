"""Training loop: mined-pair sampling, Adam, deterministic execution.

Determinism contract. Every random draw comes from a generator seeded by
(seed, stream, epoch[, anchor]) rather than from one shared generator, so
results do not depend on worker count or batch partitioning. Batch gradients
are reduced in ascending anchor order. After every optimizer update (and at
init), parameters and Adam moments are rounded through float32: float32 is
the checkpoint dtype, so a checkpoint captures the exact training state and
an interrupted-then-resumed run is byte-identical to an uninterrupted one.
``adam_update`` itself is plain float64; the rounding is loop policy.

By default the mined similar/dissimilar branches are treated as fixed
targets (``stop_gradient_branches=True``): the mining-guided losses adjust
the anchor's features toward the branch encodings without also dragging
other samples' encodings around, which keeps each loss term non-harmful
even when enabled alone. ``--backprop-branches`` restores the full
gradient.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .errors import DegenerateFeatureError, ValidationError
from .losses import LossToggles, Margins, grad_total
from .miner import MiningIndex, draw_training_pair
from .model import (
    Checkpoint,
    ModelConfig,
    ModelParams,
    PARAM_NAMES,
    init_params,
    load_checkpoint,
    save_checkpoint,
    zero_grads,
)

# rng stream ids (first element after the seed)
STREAM_INIT = 0
STREAM_SHUFFLE = 1
STREAM_PAIR = 2


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 4e-4
    hidden: int = 64
    feat_dim: int = 256
    n_heads: int = 3
    r_min: float = 0.02
    r_max: float = 0.45
    margins: Margins = field(default_factory=Margins)
    toggles: LossToggles = field(default_factory=LossToggles)
    stop_gradient_branches: bool = True
    workers: int = 1
    checkpoint_every: int = 1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValidationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate >= 0.0):
            raise ValidationError(f"learning_rate must be finite and >= 0")
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.checkpoint_every < 1:
            raise ValidationError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        self.margins.validate()

    def model_config(self, corpus: Corpus) -> ModelConfig:
        return ModelConfig(
            word_dim=corpus.word_dim,
            video_dim=corpus.video_dim,
            hidden=self.hidden,
            feat_dim=self.feat_dim,
            n_heads=self.n_heads,
            r_min=self.r_min,
            r_max=self.r_max,
        )


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: ModelParams) -> AdamState:
    return AdamState(m=zero_grads(params), v=zero_grads(params))


def adam_update(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    learning_rate: float,
) -> None:
    """One bias-corrected Adam step, in place, float64 throughout."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name, theta in arrays.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        theta -= learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


def _round_f32(arrays: dict[str, np.ndarray]) -> None:
    for arr in arrays.values():
        arr[...] = arr.astype(np.float32).astype(np.float64)


def round_state_f32(params: ModelParams, adam: AdamState | None = None) -> None:
    """Snap params (and moments) to float32-representable values, in place."""
    _round_f32(params.as_dict())
    if adam is not None:
        _round_f32(adam.m)
        _round_f32(adam.v)


def _anchor_task(
    params: ModelParams,
    corpus: Corpus,
    index: MiningIndex,
    config: TrainConfig,
    epoch: int,
    row: int,
):
    rng = np.random.default_rng([config.seed, STREAM_PAIR, epoch, row])
    sim_row, dis_row = draw_training_pair(index, row, rng)
    anchor = corpus.samples[row]
    sim = corpus.samples[sim_row]
    dis = corpus.samples[dis_row]
    try:
        breakdown, grads = grad_total(
            params,
            anchor.word_feats,
            anchor.video_feats,
            sim.word_feats,
            sim.video_feats,
            dis.word_feats,
            dis.video_feats,
            config.margins,
            toggles=config.toggles,
            stop_gradient_branches=config.stop_gradient_branches,
        )
    except DegenerateFeatureError as exc:
        raise DegenerateFeatureError(
            f"sample {anchor.sample_id} (triple {anchor.sample_id}/"
            f"{sim.sample_id}/{dis.sample_id}): {exc}"
        ) from exc
    return breakdown, grads


def train_step(
    params: ModelParams,
    adam: AdamState,
    anchor_rows,
    corpus: Corpus,
    index: MiningIndex,
    config: TrainConfig,
    epoch: int,
    pool: ThreadPoolExecutor | None = None,
) -> dict[str, float]:
    """One optimizer step over a batch of anchor rows; returns mean losses.

    Anchor order within the batch does not affect the update: pair draws are
    keyed by (seed, epoch, anchor) and the reduction runs in ascending row
    order.
    """
    rows = sorted(int(r) for r in anchor_rows)
    if not rows:
        raise ValidationError("empty batch")
    if pool is not None:
        results = list(pool.map(
            lambda r: _anchor_task(params, corpus, index, config, epoch, r), rows
        ))
    else:
        results = [_anchor_task(params, corpus, index, config, epoch, r) for r in rows]

    total = zero_grads(params)
    sums: dict[str, float] = {}
    for breakdown, grads in results:
        for name in PARAM_NAMES:
            total[name] += grads[name]
        for key, val in breakdown.as_dict().items():
            sums[key] = sums.get(key, 0.0) + val
    scale = 1.0 / len(rows)
    for name in PARAM_NAMES:
        total[name] *= scale
    adam_update(params.as_dict(), total, adam, config.learning_rate)
    round_state_f32(params, adam)
    stats = {key: val * scale for key, val in sums.items()}
    stats["n"] = float(len(rows))
    return stats


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    history: list[dict]
    final_checkpoint: Path | None = None


def _adam_extras(adam: AdamState) -> dict[str, np.ndarray]:
    extras = {f"adam_m.{n}": adam.m[n] for n in PARAM_NAMES}
    extras.update({f"adam_v.{n}": adam.v[n] for n in PARAM_NAMES})
    return extras


def _save_state(path: Path, params: ModelParams, adam: AdamState, epoch: int,
                config: TrainConfig) -> None:
    save_checkpoint(
        path,
        params,
        step=adam.step,
        epoch=epoch,
        extra_arrays=_adam_extras(adam),
        extra_meta={"train_config": _config_meta(config)},
    )


def _config_meta(config: TrainConfig) -> dict:
    meta = asdict(config)
    meta.pop("workers")  # execution detail, not part of the training state
    return meta


def _restore(checkpoint: Checkpoint, expected: ModelConfig) -> tuple[ModelParams, AdamState, int]:
    if checkpoint.params.config != expected:
        raise ValidationError(
            f"checkpoint model config {checkpoint.params.config} does not match "
            f"requested config {expected}"
        )
    params = checkpoint.params
    adam = init_adam(params)
    adam.step = checkpoint.step
    for name in PARAM_NAMES:
        for prefix, store in (("adam_m.", adam.m), ("adam_v.", adam.v)):
            key = prefix + name
            if key not in checkpoint.extra_arrays:
                raise ValidationError(f"checkpoint missing optimizer block {key!r}")
            if checkpoint.extra_arrays[key].shape != store[name].shape:
                raise ValidationError(f"optimizer block {key!r} has the wrong shape")
            store[name] = checkpoint.extra_arrays[key]
    return params, adam, checkpoint.epoch


def train(
    corpus: Corpus,
    index: MiningIndex,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> TrainResult:
    """Run the full loop: seeded shuffles, mined pairs, Adam, checkpoints.

    With ``out_dir`` set, writes ``train_log.jsonl`` (one JSON object per
    step), periodic ``checkpoint_epoch_NNNN.psmc`` files, and
    ``checkpoint_final.psmc``. All outputs are byte-deterministic for a given
    corpus, index, and config.
    """
    config.validate()
    n = len(corpus)
    if index.n != n:
        raise ValidationError(f"index covers {index.n} samples but corpus has {n}")
    if n < index.k + 2:
        raise ValidationError(f"corpus too small for mining k={index.k} (n={n})")
    model_config = config.model_config(corpus)

    if resume_from is not None:
        params, adam, start_epoch = _restore(load_checkpoint(resume_from), model_config)
        if start_epoch > config.epochs:
            raise ValidationError(
                f"checkpoint is at epoch {start_epoch}, beyond configured {config.epochs}"
            )
    else:
        params = init_params(model_config, np.random.default_rng([config.seed, STREAM_INIT]))
        round_state_f32(params)
        adam = init_adam(params)
        start_epoch = 0

    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        # append so a resumed run extends the original log
        log_fh = open(out_path / "train_log.jsonl", "a", encoding="utf-8")

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    history: list[dict] = []
    try:
        for epoch in range(start_epoch, config.epochs):
            order = np.random.default_rng(
                [config.seed, STREAM_SHUFFLE, epoch]
            ).permutation(n)
            for start in range(0, n, config.batch_size):
                batch = order[start : start + config.batch_size]
                stats = train_step(params, adam, batch, corpus, index, config, epoch, pool)
                record = {"epoch": epoch, "step": adam.step, **stats}
                history.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            if out_path is not None and (epoch + 1) % config.checkpoint_every == 0:
                _save_state(
                    out_path / f"checkpoint_epoch_{epoch + 1:04d}.psmc",
                    params, adam, epoch + 1, config,
                )
    finally:
        if pool is not None:
            pool.shutdown()
        if log_fh is not None:
            log_fh.close()

    final_path = None
    if out_path is not None:
        final_path = out_path / "checkpoint_final.psmc"
        _save_state(final_path, params, adam, config.epochs, config)
    return TrainResult(params=params, adam=adam, history=history, final_checkpoint=final_path)
