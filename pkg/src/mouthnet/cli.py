"""Command-line entry point.

Subcommands: synth, preprocess, train, eval, corrupt, occlude, gradcheck,
params. Every run prints its fully resolved configuration to stderr. Exit
codes: 0 ok, 2 config error, 3 data error, 4 check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint, evaluation, gradcheck, synthetic
from .corruptions import KINDS, CorruptionSpec, apply_corruption
from .model import Model, ModelConfig, count_trainable, desk_config, load_model, save_model
from .preprocess import (
    DataError,
    load_frames,
    load_landmark_file,
    load_manifest,
    make_clips,
    preprocess_video,
    save_frames,
    save_landmark_file,
    save_manifest,
    ManifestEntry,
)
from .training import (
    ForgerySample,
    LipreadingSample,
    TrainConfig,
    finetune_forgery,
    pretrain_lipreading,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECK = 4


class ConfigError(ValueError):
    pass


class CheckFailure(RuntimeError):
    pass


def _load_run_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(cfg) - {"seed", "model", "train", "threads"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _resolve_model_cfg(args, file_cfg: dict) -> ModelConfig:
    if getattr(args, "preset", None) == "full":
        base = ModelConfig().to_dict()
    else:
        base = desk_config().to_dict()
    base.update(file_cfg.get("model", {}))
    for flag, key in (("clip_len", "clip_len"), ("vocab", "lipread_classes")):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    try:
        return ModelConfig.from_dict(base)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _resolve_train_cfg(args, file_cfg: dict) -> TrainConfig:
    base = TrainConfig().to_dict()
    base.update(file_cfg.get("train", {}))
    for flag, key in (
        ("batch_size", "batch_size"),
        ("lr", "learning_rate"),
        ("epochs", "max_epochs"),
        ("patience", "patience"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            base[key] = value
    if getattr(args, "augment", None) is not None:
        base["augment"] = args.augment
    try:
        return TrainConfig.from_dict(base)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _log_resolved(command: str, resolved: dict) -> None:
    print(f"[mouthnet {command}] config: " + json.dumps(resolved, sort_keys=True),
          file=sys.stderr)


def _write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    cfg = synthetic.SynthConfig(
        num_videos=args.num_videos,
        frames_per_video=args.frames,
        vocab=args.vocab,
        artefact_family=args.family,
        artefact_strength=args.strength,
        seed=args.seed,
        clip_len=args.clip_len,
    )
    _log_resolved("synth", {"mode": args.mode, **cfg.__dict__,
                            "train_frac": args.train_frac, "val_frac": args.val_frac})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    videos = synthetic.render_raw_corpus(cfg, args.mode)
    n = len(videos)
    n_train = int(np.floor(args.train_frac * n))
    n_val = int(np.floor(args.val_frac * n))
    entries = []
    for i, v in enumerate(videos):
        vid = v["video_id"]
        vdir = out / "videos" / vid
        save_frames(vdir / "frames", v["frames"])
        save_landmark_file(vdir / "landmarks.json", v["landmarks"])
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        entries.append(ManifestEntry(
            video_id=vid,
            frames_path=f"videos/{vid}/frames",
            landmarks_path=f"videos/{vid}/landmarks.json",
            label=v["label"],
            method_tag=v["method_tag"],
            dataset_tag=f"synth-{args.mode}",
            split=split,
            word_label=v["word_label"],
        ))
    save_manifest(out / "manifest.jsonl", entries)
    print(f"wrote {n} videos under {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# preprocess

def cmd_preprocess(args) -> int:
    _log_resolved("preprocess", {"manifest": args.manifest, "out": args.out,
                                 "clip_len": args.clip_len, "stride": args.stride})
    entries = load_manifest(args.manifest)
    root = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for e in entries:
        frames = load_frames(root / e.frames_path)
        landmarks = load_landmark_file(root / e.landmarks_path)
        mouth = preprocess_video(frames, landmarks)
        clips = make_clips(mouth, args.clip_len, args.stride)
        checkpoint.save_tensors(out / f"{e.video_id}.lfw", {"clips": clips})
    print(f"cached {len(entries)} videos under {out}")
    return EXIT_OK


def _load_samples(manifest_path, cache_dir, splits) -> tuple:
    """Manifest entries + clip caches -> (forgery samples, lipreading samples)."""
    entries = [e for e in load_manifest(manifest_path) if e.split in splits]
    forgery, lipread = [], []
    for e in entries:
        cache = Path(cache_dir) / f"{e.video_id}.lfw"
        if not cache.exists():
            raise DataError(f"no clip cache for video {e.video_id!r} under {cache_dir}")
        windows = checkpoint.load_tensors(cache)["clips"]
        if len(windows) == 0:
            continue
        if e.word_label is not None:
            lipread.append(LipreadingSample(e.video_id, windows, int(e.word_label)))
        forgery.append(ForgerySample(e.video_id, windows, 1 if e.label == "fake" else 0,
                                     e.method_tag or "real"))
    return forgery, lipread


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    file_cfg = _load_run_config(args.config) if args.config else {}
    model_cfg = _resolve_model_cfg(args, file_cfg)
    train_cfg = _resolve_train_cfg(args, file_cfg)
    resolved = {"phase": args.phase, "mode": args.mode, "seed": args.seed,
                "model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    _log_resolved("train", resolved)

    forgery, lipread = _load_samples(args.manifest, args.cache, ("train", "val"))
    if args.phase == "pretrain":
        if not lipread:
            raise DataError("manifest has no word-labelled videos for pretraining")
        model, snapshot, log = pretrain_lipreading(lipread, model_cfg, train_cfg, args.seed)
    else:
        pretrained = None
        if args.mode in ("frozen", "ft_whole"):
            if not args.pretrained:
                raise ConfigError(f"--pretrained is required for mode {args.mode!r}")
            pretrained = checkpoint.load_tensors(args.pretrained)
        model, snapshot, log = finetune_forgery(forgery, pretrained, args.mode,
                                                model_cfg, train_cfg, args.seed)
    save_model(args.out, model)
    if args.log:
        Path(args.log).write_text(
            "\n".join(json.dumps(row, sort_keys=True) for row in log) + "\n")
    print(f"trained {len(log)} epochs; checkpoint at {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def _raw_test_videos(manifest_path) -> list:
    entries = [e for e in load_manifest(manifest_path) if e.split == "test"]
    root = Path(manifest_path).parent
    videos = []
    for e in entries:
        videos.append(evaluation.RawVideo(
            e.video_id,
            load_frames(root / e.frames_path),
            load_landmark_file(root / e.landmarks_path),
            1 if e.label == "fake" else 0,
        ))
    return videos


def cmd_eval(args) -> int:
    file_cfg = _load_run_config(args.config) if args.config else {}
    train_cfg = _resolve_train_cfg(args, file_cfg)
    _log_resolved("eval", {"protocol": args.protocol, "checkpoint": args.checkpoint,
                           "manifest": args.manifest, "seed": args.seed})
    model = load_model(args.checkpoint)

    if args.protocol == "plain":
        samples, _ = _load_samples(args.manifest, args.cache, ("test",))
        if not samples:
            raise DataError("no test videos in manifest")
        report = evaluation.protocol_plain(model, samples)
    elif args.protocol == "robustness":
        videos = _raw_test_videos(args.manifest)
        if not videos:
            raise DataError("no test videos in manifest")
        report = evaluation.protocol_robustness(model, videos, args.seed, model.cfg.clip_len)
    elif args.protocol == "cross-manipulation":
        if not args.pretrained:
            raise ConfigError("cross-manipulation needs --pretrained for its training cycles")
        train_samples, _ = _load_samples(args.manifest, args.cache, ("train", "val"))
        test_samples, _ = _load_samples(args.manifest, args.cache, ("test",))
        methods = args.methods.split(",") if args.methods else sorted(
            {s.method_tag for s in train_samples if s.label == 1})
        pretrained = checkpoint.load_tensors(args.pretrained)
        report = evaluation.protocol_cross_manipulation(
            train_samples, test_samples, methods, pretrained, model.cfg, train_cfg, args.seed)
    else:  # clip-sweep
        if not args.pretrained:
            raise ConfigError("clip-sweep needs --pretrained for its training cycles")
        entries = load_manifest(args.manifest)
        root = Path(args.manifest).parent
        tr, te = [], []
        for e in entries:
            seq = preprocess_video(load_frames(root / e.frames_path),
                                   load_landmark_file(root / e.landmarks_path))
            row = (e.video_id, 1 if e.label == "fake" else 0, seq)
            (te if e.split == "test" else tr).append(row)
        lengths = tuple(int(x) for x in args.clip_lengths.split(","))
        pretrained = checkpoint.load_tensors(args.pretrained)
        report = evaluation.protocol_clip_sweep(tr, te, pretrained, model.cfg,
                                                train_cfg, args.seed, lengths)
    report["seed"] = args.seed
    _write_json(args.out, report)
    print(f"report written to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# corrupt

def cmd_corrupt(args) -> int:
    _log_resolved("corrupt", {"kind": args.kind, "severity": args.severity,
                              "seed": args.seed, "in": getattr(args, "in"),
                              "out": args.out})
    try:
        spec = CorruptionSpec(args.kind, args.severity, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    frames = load_frames(getattr(args, "in"))
    save_frames(args.out, apply_corruption(frames, spec))
    print(f"corrupted {len(frames)} frames -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# occlude

def write_pgm(path, heatmap: np.ndarray) -> None:
    gray = np.clip(np.round(heatmap * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + gray.tobytes())


def write_overlay_png(path, first_frame_gray: np.ndarray, heatmap: np.ndarray) -> None:
    """Heatmap rendered in red over the (grayscale) first frame."""
    base = np.clip(first_frame_gray, 0, 255).astype(np.float64)
    alpha = heatmap[..., None] * 0.6
    rgb = np.stack([base, base, base], axis=-1)
    red = np.zeros_like(rgb)
    red[..., 0] = 255.0
    blended = rgb * (1 - alpha) + red * alpha
    Image.fromarray(np.clip(np.round(blended), 0, 255).astype(np.uint8)).save(path)


def cmd_occlude(args) -> int:
    from .training import augment
    from .rng import Rng

    _log_resolved("occlude", {"checkpoint": args.checkpoint, "clip": args.clip,
                              "index": args.index, "block": args.block,
                              "label": args.label})
    model = load_model(args.checkpoint)
    windows = checkpoint.load_tensors(args.clip)["clips"]
    if args.index >= len(windows):
        raise DataError(f"clip index {args.index} out of range ({len(windows)} clips)")
    clip96 = windows[args.index]
    clip = augment(clip96, Rng(0), train=False)
    omap = evaluation.occlusion_map(evaluation.model_prob_fn(model), clip, args.label,
                                    args.block)
    write_pgm(args.out, omap.heatmap)
    overlay = Path(args.out).with_suffix(".png")
    margin = (clip96.shape[1] - clip.shape[1]) // 2
    first = clip96[0, margin : margin + clip.shape[1], margin : margin + clip.shape[2], 0]
    write_overlay_png(overlay, first, omap.heatmap)
    print(f"{omap.forwards} occluded forwards; heatmap at {args.out}, overlay at {overlay}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck / params

def cmd_gradcheck(args) -> int:
    _log_resolved("gradcheck", {"reps": args.reps})
    results = gradcheck.run_all(args.reps)
    width = max(len(k) for k, _, _ in results)
    failed = False
    for kind, worst, ok in results:
        print(f"{kind:<{width}}  max rel err {worst:.3e}  {'ok' if ok else 'FAIL'}")
        failed |= not ok
    if failed:
        raise CheckFailure("finite-difference check failed")
    return EXIT_OK


def cmd_params(args) -> int:
    file_cfg = _load_run_config(args.config) if args.config else {}
    model_cfg = _resolve_model_cfg(args, file_cfg)
    _log_resolved("params", {"model": model_cfg.to_dict()})
    model = Model(model_cfg, seed=0)
    counts = count_trainable(model)
    for name in ("featureExtractor", "temporalNet", "lipreadHead", "forgeryHead", "total"):
        print(f"{name:<18} {counts[name]}")
    if args.json:
        _write_json(args.json, counts)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mouthnet",
                                     description="mouth-motion face-forgery detection pipeline")
    parser.add_argument("--threads", type=int, default=None,
                        help="bound BLAS parallelism for the parallel-safe stages")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--mode", choices=("lipreading", "forgery"), default="forgery")
    p.add_argument("--num-videos", type=int, dest="num_videos", default=100)
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--vocab", type=int, default=4)
    p.add_argument("--family", choices=synthetic.ARTEFACT_FAMILIES, default="jitter")
    p.add_argument("--strength", type=float, default=1.5)
    p.add_argument("--clip-len", type=int, dest="clip_len", default=25)
    p.add_argument("--train-frac", type=float, dest="train_frac", default=0.8)
    p.add_argument("--val-frac", type=float, dest="val_frac", default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="build aligned mouth-clip caches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clip-len", type=int, dest="clip_len", default=25)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="pretrain or finetune a detector")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--phase", choices=("pretrain", "finetune"), default="finetune")
    p.add_argument("--mode", choices=("frozen", "ft_whole", "scratch"), default="frozen")
    p.add_argument("--pretrained", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--log", default=None)
    p.add_argument("--batch-size", type=int, dest="batch_size", default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--clip-len", type=int, dest="clip_len", default=None)
    p.add_argument("--vocab", type=int, default=None)
    aug = p.add_mutually_exclusive_group()
    aug.add_argument("--augment", dest="augment", action="store_true", default=None)
    aug.add_argument("--no-augment", dest="augment", action="store_false")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--protocol", choices=("plain", "cross-manipulation", "robustness",
                                          "clip-sweep"), default="plain")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pretrained", default=None)
    p.add_argument("--methods", default=None)
    p.add_argument("--clip-lengths", dest="clip_lengths", default="5,10,15,20,25,30")
    p.add_argument("--config", default=None)
    p.add_argument("--batch-size", type=int, dest="batch_size", default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    aug = p.add_mutually_exclusive_group()
    aug.add_argument("--augment", dest="augment", action="store_true", default=None)
    aug.add_argument("--no-augment", dest="augment", action="store_false")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corrupt", help="apply one corruption to a frame directory")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--severity", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--in", dest="in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("occlude", help="occlusion-sensitivity heatmap for one clip")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--clip", required=True, help="clip cache (.lfw) file")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--label", type=int, choices=(0, 1), default=1)
    p.add_argument("--block", type=int, default=40)
    p.add_argument("--out", required=True, help="heatmap .pgm path")
    p.set_defaults(func=cmd_occlude)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    p.add_argument("--reps", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="trainable parameter counts per partition")
    p.add_argument("--config", default=None)
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--json", default=None)
    p.set_defaults(func=cmd_params)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(args.threads)
        except ImportError:
            print("threadpoolctl not installed; --threads ignored", file=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckFailure as exc:
        print(f"check failure: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
