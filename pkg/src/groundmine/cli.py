"""Command-line pipeline: synth -> mine -> train -> eval, plus diagnostics.

Every option resolves as: dataclass default < ``--config`` JSON file < explicit
flag. Each command echoes its resolved configuration to stdout as one JSON
line before running, so logged invocations are reproducible. Exit codes:
0 success, 1 runtime failure (bad data, missing file), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from itertools import product
from pathlib import Path

import numpy as np
import psutil

from . import evaluation, miner, synth, trainer
from .corpus import load_corpus, read_feature_matrix, write_corpus, write_feature_matrix
from .errors import GroundmineError, ValidationError
from .losses import LossToggles, Margins, fd_check_report
from .model import ModelConfig, init_params, load_checkpoint
from .synth import SynthConfig
from .trainer import TrainConfig


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated number list: {text!r}")


def _resolve(command: str, defaults: dict, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags. Unknown file keys are errors."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ValidationError(f"missing config file: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ValidationError(f"config file {path} must hold a JSON object")
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValidationError(
                f"unknown config keys for {command}: {sorted(unknown)}"
            )
        merged.update(file_cfg)
    for key in defaults:
        cli_val = getattr(args, key, None)
        if cli_val is not None:
            merged[key] = cli_val
    print(f"config {command} {json.dumps(merged, sort_keys=True)}")
    return merged


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option overrides (flags still win)")


# ---------------------------------------------------------------------------
# synth


def _add_synth(sub) -> None:
    p = sub.add_parser("synth", help="generate a planted-topic corpus")
    _add_config_flag(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--proto-seed", type=_nonneg_int, dest="proto_seed")
    p.add_argument("--n-samples", type=_positive_int, dest="n_samples")
    p.add_argument("--n-topics", type=_positive_int, dest="n_topics")
    p.add_argument("--segments", type=_positive_int, dest="n_segments")
    p.add_argument("--words", type=_positive_int, dest="n_words")
    p.add_argument("--word-dim", type=_positive_int, dest="word_dim")
    p.add_argument("--video-dim", type=_positive_int, dest="video_dim")
    p.add_argument("--embed-dim", type=_positive_int, dest="embed_dim")
    p.add_argument("--video-noise", type=float, dest="video_noise")
    p.add_argument("--query-noise", type=float, dest="query_noise")
    p.add_argument("--gt-min-frac", type=_positive_float, dest="gt_min_frac")
    p.add_argument("--gt-max-frac", type=_positive_float, dest="gt_max_frac")
    p.add_argument("--loc-jitter", type=float, dest="loc_jitter")
    p.add_argument("--distractor-rate", type=float, dest="distractor_rate")
    p.set_defaults(func=_run_synth)


def _run_synth(args: argparse.Namespace) -> int:
    flat = _resolve("synth", asdict(SynthConfig()), args)
    config = SynthConfig(**flat)
    corpus, embeddings = synth.generate(config)
    out_dir = Path(args.out_dir)
    manifest = write_corpus(corpus, out_dir)
    emb_path = out_dir / "embeddings.psmf"
    write_feature_matrix(emb_path, embeddings.vectors)
    print(f"wrote {len(corpus)} samples to {manifest}")
    print(f"wrote embeddings to {emb_path}")
    return 0


# ---------------------------------------------------------------------------
# mine


def _add_mine(sub) -> None:
    p = sub.add_parser("mine", help="build the top-k similarity index")
    _add_config_flag(p)
    p.add_argument("--embeddings", required=True, help="PSMF file of unit-norm embeddings")
    p.add_argument("--out", required=True, help="output index path (.psmi)")
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--block-size", type=_positive_int, dest="block_size")
    p.set_defaults(func=_run_mine)


def _run_mine(args: argparse.Namespace) -> int:
    flat = _resolve("mine", {"k": 20, "block_size": miner.DEFAULT_BLOCK_SIZE}, args)
    emb = miner.EmbeddingMatrix(read_feature_matrix(args.embeddings))
    emb.validate()
    index = miner.build_index(emb, k=flat["k"], block_size=flat["block_size"])
    miner.save_index(args.out, index)
    print(f"wrote index for {index.n} samples (k={index.k}) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _flat_train_defaults() -> dict:
    cfg = TrainConfig()
    flat = {
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "hidden": cfg.hidden,
        "feat_dim": cfg.feat_dim,
        "n_heads": cfg.n_heads,
        "r_min": cfg.r_min,
        "r_max": cfg.r_max,
        # results are worker-count invariant, so defaulting to the machine is safe
        "workers": psutil.cpu_count(logical=False) or 1,
        "checkpoint_every": cfg.checkpoint_every,
        "stop_gradient_branches": cfg.stop_gradient_branches,
    }
    flat.update({k: v for k, v in asdict(cfg.margins).items()})
    flat.update({k: v for k, v in asdict(cfg.toggles).items()})
    return flat


def _train_config_from_flat(flat: dict) -> TrainConfig:
    margins = Margins(**{k: flat[k] for k in asdict(Margins())})
    toggles = LossToggles(**{k: bool(flat[k]) for k in asdict(LossToggles())})
    return TrainConfig(
        seed=flat["seed"],
        epochs=flat["epochs"],
        batch_size=flat["batch_size"],
        learning_rate=flat["learning_rate"],
        hidden=flat["hidden"],
        feat_dim=flat["feat_dim"],
        n_heads=flat["n_heads"],
        r_min=flat["r_min"],
        r_max=flat["r_max"],
        margins=margins,
        toggles=toggles,
        stop_gradient_branches=bool(flat["stop_gradient_branches"]),
        workers=flat["workers"],
        checkpoint_every=flat["checkpoint_every"],
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--epochs", type=_nonneg_int)
    p.add_argument("--batch-size", type=_positive_int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--hidden", type=_positive_int)
    p.add_argument("--feat-dim", type=_positive_int, dest="feat_dim")
    p.add_argument("--heads", type=_positive_int, dest="n_heads")
    p.add_argument("--r-min", type=_positive_float, dest="r_min")
    p.add_argument("--r-max", type=_positive_float, dest="r_max")
    p.add_argument("--workers", type=_positive_int)
    p.add_argument("--checkpoint-every", type=_positive_int, dest="checkpoint_every")
    for i in range(1, 7):
        p.add_argument(f"--gamma{i}", type=float, dest=f"gamma{i}")
    p.add_argument("--gamma-base", type=float, dest="gamma_base")
    p.add_argument(
        "--stop-gradient-branches", action="store_const", const=True,
        dest="stop_gradient_branches", default=None,
        help="treat mined-branch encodings as fixed targets (default)",
    )
    p.add_argument(
        "--backprop-branches", action="store_const", const=False,
        dest="stop_gradient_branches", default=None,
        help="also backpropagate into the mined-branch encoders",
    )
    for flag, dest in (
        ("--disable-l-query", "use_l_query"),
        ("--disable-l-prop", "use_l_prop"),
        ("--disable-rank-query", "use_l_rank_query"),
        ("--disable-rank-prop", "use_l_rank_prop"),
    ):
        p.add_argument(flag, action="store_const", const=False, dest=dest, default=None)


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="train from a corpus and mining index")
    _add_config_flag(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_train_flags(p)
    p.set_defaults(func=_run_train)


def _run_train(args: argparse.Namespace) -> int:
    flat = _resolve("train", _flat_train_defaults(), args)
    config = _train_config_from_flat(flat)
    corpus = load_corpus(args.manifest)
    index = miner.load_index(args.index)
    result = trainer.train(
        corpus, index, config, out_dir=args.out_dir, resume_from=args.resume
    )
    if result.history:
        last = result.history[-1]
        print(
            f"trained {last['step']} steps, final mean total loss "
            f"{last['total']:.4f}"
        )
    print(f"wrote {result.final_checkpoint}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="score a checkpoint (or a predictions file)")
    _add_config_flag(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--report", required=True, help="output JSON path")
    p.add_argument("--predictions-out", dest="predictions_out")
    p.add_argument("--predictions", dest="predictions_in",
                   help="score these ranked intervals instead of a checkpoint")
    p.add_argument("--recall-ns", type=_int_list, dest="recall_ns")
    p.add_argument("--iou-thresholds", type=_float_list, dest="iou_thresholds")
    p.add_argument("--iop-thresholds", type=_float_list, dest="iop_thresholds")
    p.add_argument("--gamma-base", type=float, dest="gamma_base")
    p.set_defaults(func=_run_eval)


def _run_eval(args: argparse.Namespace) -> int:
    defaults = {
        "recall_ns": list(evaluation.EvalConfig().recall_ns),
        "iou_thresholds": list(evaluation.EvalConfig().iou_thresholds),
        "iop_thresholds": list(evaluation.EvalConfig().iop_thresholds),
        "gamma_base": Margins().gamma_base,
    }
    flat = _resolve("eval", defaults, args)
    eval_config = evaluation.EvalConfig(
        recall_ns=tuple(flat["recall_ns"]),
        iou_thresholds=tuple(flat["iou_thresholds"]),
        iop_thresholds=tuple(flat["iop_thresholds"]),
    )
    corpus = load_corpus(args.manifest)
    if args.predictions_in is not None:
        if args.checkpoint is not None or args.predictions_out is not None:
            raise ValidationError(
                "--predictions replaces the checkpoint; drop --checkpoint/--predictions-out"
            )
        ranked = evaluation.load_predictions(args.predictions_in, corpus)
        report = evaluation.evaluate_rankings(ranked, corpus, eval_config)
    else:
        if args.checkpoint is None:
            raise ValidationError("need --checkpoint (or --predictions)")
        params = load_checkpoint(args.checkpoint).params
        base = evaluation.HingeAlignmentBase(flat["gamma_base"])
        predictions = evaluation.predict_corpus(params, corpus, base)
        report = evaluation.evaluate_rankings([p[0] for p in predictions], corpus, eval_config)
        if args.predictions_out is not None:
            evaluation.write_predictions(args.predictions_out, corpus, predictions)
            print(f"wrote predictions to {args.predictions_out}")
    Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(evaluation.format_report(report))
    print(f"wrote report to {args.report}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def _add_gradcheck(sub) -> None:
    p = sub.add_parser("gradcheck", help="finite-difference check of the gradients")
    _add_config_flag(p)
    p.add_argument("--trials", type=_positive_int)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--eps", type=_positive_float)
    p.add_argument("--tol", type=_positive_float)
    p.add_argument("--hidden", type=_positive_int)
    p.add_argument("--feat-dim", type=_positive_int, dest="feat_dim")
    p.add_argument("--word-dim", type=_positive_int, dest="word_dim")
    p.add_argument("--video-dim", type=_positive_int, dest="video_dim")
    p.add_argument("--segments", type=_positive_int, dest="segments")
    p.add_argument("--words", type=_positive_int, dest="words")
    p.add_argument("--heads", type=_positive_int, dest="heads")
    p.set_defaults(func=_run_gradcheck)


GRADCHECK_DEFAULTS = {
    "trials": 120,
    "seed": 0,
    "eps": 1e-4,
    "tol": 1e-4,
    "hidden": 4,
    "feat_dim": 4,
    "word_dim": 3,
    "video_dim": 3,
    "segments": 5,
    "words": 3,
    "heads": 2,
}


def run_gradcheck_trials(
    trials: int,
    seed: int,
    eps: float,
    model_config: ModelConfig,
    n_segments: int,
    n_words: int,
) -> tuple[float, int, int, int]:
    """Random-configuration fd sweep; returns (max_rel, checked, excluded, skipped)."""
    margins = Margins()
    max_rel = 0.0
    checked = excluded = skipped = 0
    for trial in range(trials):
        rng = np.random.default_rng([seed, 7, trial])
        params = init_params(model_config, rng)
        for arr in params.as_dict().values():
            arr += rng.uniform(-0.3, 0.3, size=arr.shape)
        feats = []
        for _ in range(3):
            feats.append(rng.standard_normal((n_words, model_config.word_dim)))
            feats.append(rng.standard_normal((n_segments, model_config.video_dim)))
        report = fd_check_report(params, *feats, margins, eps=eps)
        checked += report.n_checked
        excluded += report.n_excluded
        if report.all_excluded:
            skipped += 1
            continue
        max_rel = max(max_rel, report.max_rel_error)
    return max_rel, checked, excluded, skipped


def _run_gradcheck(args: argparse.Namespace) -> int:
    flat = _resolve("gradcheck", dict(GRADCHECK_DEFAULTS), args)
    model_config = ModelConfig(
        word_dim=flat["word_dim"],
        video_dim=flat["video_dim"],
        hidden=flat["hidden"],
        feat_dim=flat["feat_dim"],
        n_heads=flat["heads"],
    )
    start = time.perf_counter()
    max_rel, checked, excluded, skipped = run_gradcheck_trials(
        flat["trials"], flat["seed"], flat["eps"], model_config,
        flat["segments"], flat["words"],
    )
    elapsed = time.perf_counter() - start
    ok = max_rel < flat["tol"]
    print(
        f"gradcheck: {flat['trials']} trials, {checked} coordinates checked, "
        f"{excluded} kink-adjacent excluded, {skipped} trials fully excluded"
    )
    print(f"max relative error {max_rel:.3e} (tol {flat['tol']:g}) in {elapsed:.1f}s")
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# ablate


def _combo_name(bits: tuple[bool, bool, bool, bool]) -> str:
    if all(bits):
        return "full"
    labels = ("query", "prop", "rank-query", "rank-prop")
    parts = [label for label, on in zip(labels, bits) if on]
    return "+".join(parts) if parts else "base-only"


# all 16 toggle combinations, ordered by how many losses are enabled
ABLATION_ROWS = {
    _combo_name(bits): LossToggles(*bits)
    for bits in sorted(
        product([False, True], repeat=4),
        key=lambda b: (sum(b), tuple(not x for x in b)),
    )
}

ABLATION_GRIDS = {
    # single-toggle rows plus the endpoints
    "singles": [
        "base-only", "query", "prop", "rank-query", "rank-prop", "full",
    ],
    # the component-study layout: endpoints, all singles, the four pairings
    "table": [
        "base-only", "query", "prop", "rank-query", "rank-prop",
        "query+prop", "rank-query+rank-prop", "query+rank-query",
        "prop+rank-prop", "full",
    ],
    "pair": ["base-only", "full"],
    "combos": list(ABLATION_ROWS),
}


def _add_ablate(sub) -> None:
    p = sub.add_parser("ablate", help="train/evaluate a grid of loss toggles")
    _add_config_flag(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument(
        "--test-manifest",
        help="held-out corpus to evaluate on (default: the training corpus)",
    )
    p.add_argument("--seeds", type=_int_list)
    p.add_argument("--grid", choices=sorted(ABLATION_GRIDS))
    _add_train_flags(p)
    p.set_defaults(func=_run_ablate)


# Grid runs use a smaller, faster model than the single-run train defaults
# so a multi-row, multi-seed ablation finishes in minutes on a laptop.
ABLATE_TRAIN_OVERRIDES = {
    "learning_rate": 2e-3,
    "hidden": 32,
    "feat_dim": 32,
    "r_min": 0.15,
    "r_max": 0.7,
}


def _run_ablate(args: argparse.Namespace) -> int:
    defaults = _flat_train_defaults()
    defaults.update(ABLATE_TRAIN_OVERRIDES)
    defaults.update({"seeds": [0, 1, 2, 3, 4], "grid": "singles"})
    flat = _resolve("ablate", defaults, args)
    corpus = load_corpus(args.manifest)
    index = miner.load_index(args.index)
    eval_corpus = load_corpus(args.test_manifest) if args.test_manifest else corpus
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for name in ABLATION_GRIDS[flat["grid"]]:
        toggles = ABLATION_ROWS[name]
        runs = []
        for seed in flat["seeds"]:
            row_flat = dict(flat)
            row_flat["seed"] = seed
            config = _train_config_from_flat(row_flat)
            config.toggles = LossToggles(**asdict(toggles))
            result = trainer.train(corpus, index, config)
            report = evaluation.evaluate(eval_corpus, result.params)
            runs.append(
                {
                    "seed": seed,
                    "miou_1": report.miou["1"],
                    "recall_1": report.recall_tiou["1"],
                }
            )
        mean_miou = float(np.mean([r["miou_1"] for r in runs]))
        rows.append(
            {
                "name": name,
                "toggles": asdict(toggles),
                "runs": runs,
                "mean_miou_1": mean_miou,
            }
        )
        print(f"{name:>20}: mean top-1 mIoU {100 * mean_miou:.2f}")

    base_rows = [r for r in rows if r["name"] == "base-only"]
    summary = {
        "grid": flat["grid"],
        "seeds": flat["seeds"],
        "epochs": flat["epochs"],
        "rows": rows,
    }
    if base_rows and len(rows) > 1:
        base_mean = base_rows[0]["mean_miou_1"]
        for row in rows:
            row["delta_vs_base"] = row["mean_miou_1"] - base_mean
    out_path = out_dir / "ablation.json"
    out_path.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {out_path}")
    return 0


# ---------------------------------------------------------------------------
# bench-mine


def _add_bench(sub) -> None:
    p = sub.add_parser("bench-mine", help="time the similarity index build")
    _add_config_flag(p)
    p.add_argument("--embeddings", help="PSMF file; omitted -> random unit vectors")
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--dim", type=_positive_int)
    p.add_argument("--k", type=_positive_int)
    p.add_argument("--seed", type=_nonneg_int)
    p.add_argument("--repeats", type=_positive_int)
    p.add_argument("--block-size", type=_positive_int, dest="block_size")
    p.set_defaults(func=_run_bench)


def _run_bench(args: argparse.Namespace) -> int:
    defaults = {
        "n": 10647, "dim": 384, "k": 20, "seed": 0, "repeats": 2,
        "block_size": miner.DEFAULT_BLOCK_SIZE,
    }
    flat = _resolve("bench-mine", defaults, args)
    if args.embeddings is not None:
        emb = miner.EmbeddingMatrix(read_feature_matrix(args.embeddings))
    else:
        rng = np.random.default_rng(flat["seed"])
        m = rng.standard_normal((flat["n"], flat["dim"]))
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        emb = miner.EmbeddingMatrix(m.astype(np.float32))
    emb.validate()
    times = []
    for run in range(flat["repeats"]):
        start = time.perf_counter()
        index = miner.build_index(emb, k=flat["k"], block_size=flat["block_size"])
        times.append(time.perf_counter() - start)
        print(f"run {run}: {times[-1]:.3f}s (n={emb.n}, dim={emb.dim}, k={index.k})")
    print(f"best: {min(times):.3f}s")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundmine",
        description="similarity-mined contrastive grounding pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_mine(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_gradcheck(sub)
    _add_ablate(sub)
    _add_bench(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GroundmineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    _entry()
