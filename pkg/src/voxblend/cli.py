"""``voxblend`` command line: features, synth, train, infer, eval, bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from . import __version__
from .config import BlinkConfig, FeatureConfig, LossConfig, ModelConfig, TrainConfig
from .dataset import AnimTrack, load_manifest, load_track, prepare_data, save_track
from .errors import ShapeError, VoxblendError
from .frontend import feature_windows, save_feature_dump
from .inference import (
    Animator,
    bench,
    blink_inject,
    evaluate_models,
    infer_track,
    load_rigmap,
    retarget,
    save_retargeted,
    stream_infer,
)
from .objectives import jitter, rmse
from .synth import synth_corpus
from .tracing import make_trace
from .trainer import EpochRecord, train
from .wav import load_wav

_trace = make_trace("cli")


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def _feature_config(lpc: bool) -> FeatureConfig:
    return FeatureConfig(feature_kind="lpc" if lpc else "mfcc")


def cmd_features(args: argparse.Namespace) -> int:
    clip = load_wav(args.wav)
    windows = feature_windows(clip, _feature_config(args.lpc), workers=args.workers)
    save_feature_dump(args.out, windows)
    print(f"wrote {windows.shape[0]} windows of {windows.shape[1]}x{windows.shape[2]} to {args.out}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    manifest = synth_corpus(args.seed, args.minutes, args.out, clips=args.clips)
    print(f"wrote {len(manifest)} clip(s), oracle.csv and manifest.txt to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    feature_cfg = _feature_config(args.lpc)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        sequence_chunk=args.chunk,
        loss=LossConfig(w1=args.w1, w2=args.w2, delta=args.delta, target_kind=args.target_loss),
        model=ModelConfig(
            hidden_size=args.nodes,
            bidirectional=not args.unidirectional,
            use_attention=not args.no_attention,
            input_cols=feature_cfg.n_columns,
        ),
    )
    data = prepare_data(load_manifest(args.data), feature_cfg, args.val_ratio, args.seed, args.workers)
    _err(f"train: {len(data.train)} train frames ({len(data.train_clips)} clips), "
         f"{0 if data.val is None else len(data.val)} val frames ({len(data.val_clips)} clips)")

    def progress(record: EpochRecord) -> None:
        val = "" if record.val_loss is None else f" val_loss={record.val_loss:.6f} val_rmse={record.val_rmse:.4f}"
        _err(f"epoch {record.epoch}/{cfg.epochs} train_loss={record.train_loss:.6f}{val}")

    result = train(data.train, data.val, cfg, args.out, feature_cfg, data.normalizer, on_epoch=progress)
    print(f"wrote {Path(args.out) / 'final.a2fm'} and best.a2fm (epoch {result.best.epoch})")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    animator = Animator.load(args.model)
    clip = load_wav(args.wav)
    track = stream_infer(clip, animator).track() if args.stream else infer_track(clip, animator)
    if args.blink:
        track = blink_inject(track, BlinkConfig(), args.seed)
    if args.rigmap:
        save_retargeted(args.out, retarget(track, load_rigmap(args.rigmap)))
    else:
        save_track(args.out, track)
    print(f"wrote {len(track)} frames to {args.out}")
    return 0


def _jitter_text(track: AnimTrack) -> str:
    return f"{jitter(track):.4f}" if len(track) >= 2 else "n/a"

def cmd_eval(args: argparse.Namespace) -> int:
    if args.model:
        if not args.data:
            raise VoxblendError("eval --model needs --data")
        table = evaluate_models({Path(m).stem: m for m in args.model}, load_manifest(args.data), args.split)
        print(table.format())
        return 0
    if not (args.pred and args.ref):
        raise VoxblendError("eval needs --pred and --ref, or --model and --data")
    pred, ref = load_track(args.pred), load_track(args.ref)
    if len(pred) < len(ref):
        raise ShapeError(f"prediction has {len(pred)} frames, reference {len(ref)}")
    print(f"rmse={rmse(pred.frames[: len(ref)], ref.frames):.4f}")
    print(f"jitter_pred={_jitter_text(pred)}")
    print(f"jitter_ref={_jitter_text(ref)}")
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    report = bench(Animator.load(args.model), args.windows, args.seed)
    print(report.format_table())
    if args.csv:
        report.to_csv(args.csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxblend", description="Audio-driven blendshape animation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="dump per-frame feature windows (A2FF)")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lpc", action="store_true", help="LPC instead of MFCC")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("synth", help="generate a synthetic corpus with its oracle")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--minutes", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model from a manifest")
    p.add_argument("--data", required=True, help="manifest file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--nodes", type=int, choices=(128, 256, 512), default=256)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--w1", type=float, default=1.0)
    p.add_argument("--w2", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--unidirectional", action="store_true")
    p.add_argument("--lpc", action="store_true")
    p.add_argument("--chunk", type=int, default=8, help="frames per contiguous chunk")
    p.add_argument("--target-loss", choices=("huber", "mse", "mae"), default="huber")
    p.add_argument("--val-ratio", type=float, default=0.2)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="animate a WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--blink", action="store_true")
    p.add_argument("--rigmap", metavar="FILE")
    p.add_argument("--stream", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compare tracks, or models on a manifest")
    p.add_argument("--pred")
    p.add_argument("--ref")
    p.add_argument("--model", action="append", help="checkpoint; repeat for a comparison table")
    p.add_argument("--data", help="manifest for --model")
    p.add_argument("--split", choices=("train", "val"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time features and forward per window")
    p.add_argument("--model", required=True)
    p.add_argument("--windows", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", metavar="FILE", help="write window,feat_ms,forward_ms")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "eval" and args.model and (args.pred or args.ref):
            parser.error("eval: --model/--data cannot be combined with --pred/--ref")
    except SystemExit as exc:
        return int(exc.code or 0)
    _trace(f"run {args.command}")
    try:
        return args.func(args)
    except (VoxblendError, ValidationError, OSError) as exc:
        message = " ".join(str(exc).split())
        _err(f"error: {type(exc).__name__}: {message}")
        return 1
