"""``smolder`` command-line entry point.

Commands: label-ir, synth, build-dataset, train, infer, eval, report.
Outputs go to ``<runs>/<run_id>/`` where ``<runs>`` is ``$SMOLDER_RUNS_DIR``
or ``paths.runs_dir`` (default ``runs``).  Every run also writes its resolved
``config.yaml`` and a ``run_manifest.json``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, imageio
from .config import RunConfig, parse_config
from .errors import CheckpointError, ConfigError, IngestionError, SmolderError

log = logging.getLogger("smolder")

COMMANDS = ("label-ir", "synth", "build-dataset", "train", "infer", "eval", "report")


# -- run bookkeeping ----------------------------------------------------------


def _hash_path(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for p in sorted(q for q in path.rglob("*") if q.is_file()):
            h.update(str(p.relative_to(path)).encode())
            h.update(p.read_bytes())
    elif path.is_file():
        h.update(path.read_bytes())
    else:
        return "missing"
    return h.hexdigest()


def _versions() -> dict:
    import cv2
    import scipy
    import torch
    import torchvision

    return {
        "smolder": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "torchvision": torchvision.__version__,
        "opencv": cv2.__version__,
    }


def _seed_for(command: str, cfg: RunConfig, args) -> int:
    if command == "synth":
        return args.seed
    if command == "build-dataset":
        return cfg.dataset.seed
    return cfg.train.seed


class Run:
    def __init__(self, command: str, cfg: RunConfig, args):
        self.command = command
        self.cfg = cfg
        self.config_hash = cfg.hash()
        run_id = args.run_id or cfg.run_id or f"{command}-{self.config_hash[:8]}"
        self.dir = cfg.runs_root() / run_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id
        self.inputs: dict[str, str] = {}
        self.seed = _seed_for(command, cfg, args)
        cfg.dump(self.dir / "config.yaml")

    def add_input(self, name: str, path) -> Path:
        path = Path(path)
        self.inputs[name] = _hash_path(path)
        return path

    def write_manifest(self, **extra) -> None:
        manifest = {
            "command": self.command,
            "run_id": self.run_id,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "versions": _versions(),
            "inputs": self.inputs,
            "backbone_variant": self.cfg.backbone_spec().variant,
            **extra,
        }
        with open(self.dir / "run_manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


# -- commands -------------------------------------------------------------------


def cmd_label_ir(run: Run, args) -> None:
    from .ir_labeling import label_ir_frame, majority_vote, normalize_ir

    frames_dir = run.add_input("frames", args.frames)
    paths = imageio.list_frames(frames_dir)
    if not paths:
        raise IngestionError(f"no frames in {frames_dir}")
    out = Path(args.out) if args.out else run.dir / "labels"
    cfg = run.cfg.labeling
    masks = []
    for i, p in enumerate(paths):
        try:
            frame = normalize_ir(imageio.read_gray(p))
        except SmolderError as exc:
            raise IngestionError(f"frame {i} ({p.name}): {exc}") from exc
        mask = label_ir_frame(frame, cfg)
        imageio.write_mask(out / f"{p.stem}_mask.png", mask)
        masks.append(mask)
    clip_id = args.clip_id or frames_dir.resolve().name
    imageio.write_mask(out / f"{clip_id}_gt.png", majority_vote(masks, tie_to_fire=cfg.tie_to_fire))
    print(f"labeled {len(masks)} frames -> {out}")
    run.write_manifest(outputs=str(out))


def cmd_synth(run: Run, args) -> None:
    from .synth import generate_synthetic_scene, random_scene_config

    out = Path(args.out) if args.out else run.dir / "synth"
    n_frames = args.n_frames or run.cfg.dataset.seq_len
    scenes = []
    for i in range(args.n_scenes):
        scfg = random_scene_config(
            args.seed * 1000 + i, height=args.height, width=args.width, n_frames=n_frames,
            seq_len=run.cfg.dataset.seq_len,
        )
        rgb, ir = generate_synthetic_scene(scfg)
        scene = out / f"scene_{i:03d}"
        for t, (frame, heat) in enumerate(zip(rgb, ir)):
            imageio.write_rgb(scene / "rgb" / f"frame_{t:05d}.png", frame)
            imageio.write_gray(scene / "ir" / f"frame_{t:05d}.png", heat)
        scenes.append({"scene": scene.name, **{k: v for k, v in asdict(scfg).items()}})
    with open(out / "synth.json", "w", encoding="utf-8") as fh:
        json.dump({"seed": args.seed, "scenes": scenes}, fh, indent=2)
    print(f"wrote {args.n_scenes} synthetic scenes -> {out}")
    run.write_manifest(outputs=str(out))


def cmd_build_dataset(run: Run, args) -> None:
    from .clips import IngestConfig, build_clips, ingest_video, iter_scene_dirs, split_dataset, write_dataset

    data = run.add_input("data", args.data)
    cfg = run.cfg
    source = "synthetic" if (data / "synth.json").exists() else "real"
    clips = []
    for scene in iter_scene_dirs(data):
        pairs, paths = ingest_video(scene / "rgb", scene / "ir", IngestConfig(policy=cfg.dataset.policy))
        clips += build_clips(pairs, cfg.dataset.seq_len, cfg.labeling, prefix=scene.name, source=source,
                             frame_paths=paths)
    if not clips:
        raise IngestionError(f"no clips of {cfg.dataset.seq_len} frames found under {data}")
    split = split_dataset(clips, cfg.dataset.test_fraction, cfg.dataset.seed)
    out = Path(args.out) if args.out else run.dir / "dataset"
    manifest = write_dataset(clips, split, out, policy=cfg.dataset.policy)
    print(f"{len(clips)} clips ({manifest.counts}) -> {out / 'manifest.csv'}")
    run.write_manifest(outputs=str(out / "manifest.csv"), counts=manifest.counts,
                       labeling_hash=cfg.labeling.digest())


def _load_model(run: Run, checkpoint: str):
    from .training import load_checkpoint

    cfg = run.cfg
    path = run.add_input("checkpoint", checkpoint)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    backbone = cfg.model.backbone if "model.backbone" in cfg.explicit else None
    labeling = cfg.labeling.digest() if any(k.startswith("labeling.") for k in cfg.explicit) else None
    model, _ = load_checkpoint(path, backbone=backbone, labeling_hash=labeling, device=cfg.infer.device)
    return model


def cmd_train(run: Run, args) -> None:
    import torch

    from .clips import load_manifest, load_split
    from .models import FireSegNet
    from .training import train_model

    cfg = run.cfg
    manifest = load_manifest(run.add_input("manifest", args.manifest))
    if manifest.seq_len != cfg.seq_len:
        raise ConfigError(f"manifest seq_len {manifest.seq_len} != configured seq_len {cfg.seq_len}")
    train_clips = load_split(manifest, "train")
    test_clips = load_split(manifest, "test")
    torch.manual_seed(cfg.train.seed)
    model = FireSegNet(cfg.backbone_spec(), cfg.decoder_config())
    result = train_model(
        model, train_clips, cfg.train, test_clips=test_clips, run_dir=run.dir,
        labeling_hash=cfg.labeling.digest(), device=cfg.infer.device,
    )
    final = [r for r in result.history if r["epoch"] == result.state.epoch]
    for row in final:
        print(f"epoch {row['epoch']} {row['split']}: dice {row['dice']:.4f} loss {row['loss']:.4f}")
    print(f"checkpoints -> {result.best_path}, {result.last_path}")
    run.write_manifest(outputs=str(run.dir), steps=result.state.global_step)


def _read_video_frames(path: Path) -> list[np.ndarray]:
    from .clips import fit_to_multiple

    if path.is_dir():
        frames = [imageio.read_rgb(p) for p in imageio.list_frames(path)]
    else:
        frames = imageio.read_video(path)
    return [fit_to_multiple(f) for f in frames]


def cmd_infer(run: Run, args) -> None:
    from .inference import sliding_window_infer, write_maps

    model = _load_model(run, args.checkpoint)
    src = run.add_input("frames", args.frames)
    frames = _read_video_frames(src)
    icfg = run.cfg.inference_config(model.seq_len)
    maps = sliding_window_infer(model, np.stack(frames), icfg)
    out = run.dir / "predictions"
    overlay = args.overlay or run.cfg.infer.overlay
    write_maps(maps, out, icfg.binarize_threshold, frames if overlay else None)
    print(f"{len(maps)} maps for frames {maps[0].frame_index}..{maps[-1].frame_index} -> {out}")
    run.write_manifest(outputs=str(out), n_maps=len(maps))


def cmd_eval(run: Run, args) -> None:
    from .clips import load_manifest, load_split
    from .evaluation import evaluate_masks
    from .inference import overlay, predict_clip

    model = _load_model(run, args.checkpoint)
    manifest = load_manifest(run.add_input("manifest", args.manifest))
    split = args.split or run.cfg.eval.split
    clips = load_split(manifest, split)
    if not clips:
        raise IngestionError(f"split {split!r} of {args.manifest} is empty")
    icfg = run.cfg.inference_config(model.seq_len)
    do_overlay = args.overlay or run.cfg.eval.overlay
    items = []
    for clip in clips:
        mask = predict_clip(model, clip.frames, icfg).mask(icfg.binarize_threshold)
        items.append((clip.clip_id, mask, clip.gt_mask))
        if do_overlay:
            img = overlay(clip.frames[-1], mask, clip.gt_mask)
            imageio.write_rgb(run.dir / "overlays" / f"{clip.clip_id}.png", img)
    report = evaluate_masks(items, run.cfg.eval_config())
    report.write_jsonl(run.dir / "report.jsonl")
    table = report.table()
    (run.dir / "report.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    run.write_manifest(outputs=str(run.dir / "report.jsonl"), split=split)


def cmd_report(run: Run, args) -> None:
    from .evaluation import MetricsReport

    target = Path(args.path)
    report_file = target / "report.jsonl" if target.is_dir() else target
    metrics_file = target / "metrics.jsonl" if target.is_dir() else None
    shown = False
    if report_file.is_file():
        run.add_input("report", report_file)
        print(MetricsReport.read_jsonl(report_file).table())
        shown = True
    if metrics_file is not None and metrics_file.is_file():
        run.add_input("metrics", metrics_file)
        print(f"{'epoch':>5} {'split':<6} {'dice':>7} {'loss':>7} {'lr':>9}")
        for line in metrics_file.read_text().splitlines():
            r = json.loads(line)
            print(f"{r['epoch']:>5} {r['split']:<6} {r['dice']:>7.4f} {r['loss']:>7.4f} {r['lr']:>9.2e}")
        shown = True
    if not shown:
        raise IngestionError(f"no report.jsonl or metrics.jsonl at {target}")
    run.write_manifest()


HANDLERS = {
    "label-ir": cmd_label_ir,
    "synth": cmd_synth,
    "build-dataset": cmd_build_dataset,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    common.add_argument("--run-id", help="output directory name under the runs root")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="smolder", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("label-ir", parents=[common], help="IR frames -> per-frame masks + fused clip mask")
    p.add_argument("--frames", required=True, help="directory of IR frames")
    p.add_argument("--clip-id", help="name of the fused mask (default: directory name)")
    p.add_argument("--out", help="output directory (default: <run>/labels)")

    p = sub.add_parser("synth", parents=[common], help="generate synthetic RGB/IR scenes")
    p.add_argument("--out", help="output directory (default: <run>/synth)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-scenes", type=int, default=8)
    p.add_argument("--n-frames", type=int, help="frames per scene (default: dataset.seq_len)")
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)

    p = sub.add_parser("build-dataset", parents=[common], help="scenes -> clips, gt masks and manifest")
    p.add_argument("--data", required=True, help="directory of scene folders with rgb/ and ir/")
    p.add_argument("--out", help="output directory (default: <run>/dataset)")

    p = sub.add_parser("train", parents=[common], help="train on a dataset manifest")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("infer", parents=[common], help="sliding-window inference over a video")
    p.add_argument("--frames", required=True, help="RGB frame directory or video file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--overlay", action="store_true", help="also write red prediction-contour overlays")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--overlay", action="store_true", help="write gt (green) / prediction (red) overlays")

    p = sub.add_parser("report", parents=[common], help="print a stored report or training history")
    p.add_argument("path", help="run directory or report.jsonl")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config, args.overrides)
        run = Run(args.command, cfg, args)
        HANDLERS[args.command](run, args)
    except SmolderError as exc:
        print(f"smolder {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
