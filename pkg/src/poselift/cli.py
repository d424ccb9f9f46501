"""Command line entry points: generate, train, predict, eval, gradcheck."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import Sample, read_pose_file, split_dataset, write_pose_file
from .depth import save_depth
from .gradcheck import run_all
from .metrics import MATCH_THRESHOLD_MM, PCK_THRESHOLD_MM, evaluate
from .pipeline import TrainConfig, load_bundle, predict_frames, save_bundle, train
from .skeleton import default_skeleton, height_normalize, load_skeleton
from .synth import SceneConfig, generate_dataset


def _load_config_section(path: str | None, section: str) -> dict:
    """Read a JSON config; a file may be flat or hold per-command sections."""
    if path is None:
        return {}
    blob = json.loads(Path(path).read_text())
    if section in blob:
        return dict(blob[section])
    return dict(blob)


def _cmd_generate(args: argparse.Namespace) -> int:
    section = _load_config_section(args.config, "scene")
    n_annotated = int(section.pop("n_annotated", 200))
    n_weak = int(section.pop("n_weak", 400))
    if args.n_annotated is not None:
        n_annotated = args.n_annotated
    if args.n_weak is not None:
        n_weak = args.n_weak
    config = SceneConfig.from_dict(section)

    out = Path(args.out)
    depth_dir = out / "depth"
    depth_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.Generator(np.random.Philox(args.seed))
    dataset = generate_dataset(rng, config, n_annotated, n_weak)

    written: dict[str, str] = {}
    for sample in dataset.all_samples():
        if sample.frame_id not in written:
            rel = f"depth/{sample.frame_id}.dmap"
            save_depth(out / rel, sample.depth)
            written[sample.frame_id] = rel
        sample.depth_path = written[sample.frame_id]
    write_pose_file(out / "samples.jsonl", dataset.all_samples())
    write_pose_file(out / "gt_poses.jsonl", dataset.all_samples(), use_eval_pose=True)
    print(
        f"wrote {len(dataset.annotated)} annotated + {len(dataset.weak)} weak samples "
        f"({len(written)} depth maps) to {out}"
    )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    section = _load_config_section(args.config, "train")
    for f in TrainConfig.__dataclass_fields__:
        value = getattr(args, f, None)
        if value is not None:
            section[f] = value
    config = TrainConfig.from_dict(section)

    dataset = split_dataset(read_pose_file(Path(args.data) / "samples.jsonl"))
    spec = load_skeleton(args.skeleton) if args.skeleton else default_skeleton()
    bundle, logs = train(config, dataset, spec)
    save_bundle(args.out, bundle)
    if args.log_file:
        with open(args.log_file, "w") as fh:
            for entry in logs:
                fh.write(json.dumps(entry) + "\n")
    for entry in logs:
        print(json.dumps(entry))
    print(f"saved model to {args.out}")
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.model)
    samples = read_pose_file(Path(args.data) / "samples.jsonl")
    frame_ids, pred_frames = predict_frames(bundle, samples)

    by_frame = {}
    for sample in samples:
        by_frame.setdefault(sample.frame_id, []).append(sample)
    out_samples = []
    for fid, poses in zip(frame_ids, pred_frames):
        for src, pose in zip(by_frame[fid], poses):
            out_samples.append(
                Sample(
                    frame_id=fid,
                    camera=src.camera,
                    width=src.width,
                    height=src.height,
                    joints_2d=src.joints_2d,
                    joints_3d=pose,
                )
            )
    write_pose_file(args.out, out_samples)
    print(f"wrote {len(out_samples)} predicted poses to {args.out}")
    return 0


def _frames_from_file(path: str) -> dict[str, list[np.ndarray]]:
    frames: dict[str, list[np.ndarray]] = {}
    for sample in read_pose_file(path):
        if sample.joints_3d is None:
            raise ValueError(f"{path}: record for frame {sample.frame_id} has no joints_3d")
        frames.setdefault(sample.frame_id, []).append(sample.joints_3d)
    return frames


def _cmd_eval(args: argparse.Namespace) -> int:
    spec = load_skeleton(args.skeleton) if args.skeleton else default_skeleton()
    gt = _frames_from_file(args.gt)
    pred = _frames_from_file(args.pred)
    if args.normalized_skeletons:
        gt = {k: [height_normalize(p, spec) for p in v] for k, v in gt.items()}
        pred = {k: [height_normalize(p, spec) for p in v] for k, v in pred.items()}
    gt_frames = [gt[fid] for fid in gt]
    pred_frames = [pred.get(fid, []) for fid in gt]

    report = evaluate(
        gt_frames,
        pred_frames,
        root_index=spec.root,
        match_threshold=args.match_threshold,
        pck_threshold=args.pck_threshold,
        detected_only=args.detected_only,
    )
    print(report.format_table())
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    results = run_all(args.seed)
    failed = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {r.name:<16s} max_rel_err={r.max_rel_err:.3e} tol={r.tolerance:.0e}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} gradient check(s) failed")
        return 1
    print(f"all {len(results)} gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poselift")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic RGB-D dataset")
    p.add_argument("--config", help="JSON config (SceneConfig fields, or under a 'scene' key)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-annotated", type=int, dest="n_annotated")
    p.add_argument("--n-weak", type=int, dest="n_weak")
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("train", help="train on a generated dataset")
    p.add_argument("--config", help="JSON config (TrainConfig fields, or under a 'train' key)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--skeleton", help="skeleton spec JSON (defaults to the built-in layout)")
    p.add_argument("--log-file", dest="log_file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--base-lr", type=float, dest="base_lr")
    p.add_argument("--lr-decay", type=float, dest="lr_decay")
    p.add_argument("--lr-decay-every", type=int, dest="lr_decay_every")
    p.add_argument("--lambda-weight", type=float, dest="lambda_weight")
    p.add_argument("--alpha", type=float)
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument("--num-blocks", type=int, dest="num_blocks")
    p.add_argument("--dropout", type=float)
    p.add_argument("--depth-hidden-dim", type=int, dest="depth_hidden_dim")
    p.add_argument("--depth-num-blocks", type=int, dest="depth_num_blocks")
    p.add_argument("--zoom-min", type=float, dest="zoom_min")
    p.add_argument("--zoom-max", type=float, dest="zoom_max")
    p.add_argument("--seed", type=int)
    p.add_argument("--stop-weak-pose-gradient", action="store_const", const=True, dest="stop_weak_pose_gradient")
    p.add_argument("--track-weak-grad-stats", action="store_const", const=True, dest="track_weak_grad_stats")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict 3D poses for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="compare predicted against ground-truth poses")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.add_argument("--skeleton")
    p.add_argument("--detected-only", action="store_true", dest="detected_only")
    p.add_argument("--normalized-skeletons", action="store_true", dest="normalized_skeletons")
    p.add_argument("--match-threshold", type=float, default=MATCH_THRESHOLD_MM, dest="match_threshold")
    p.add_argument("--pck-threshold", type=float, default=PCK_THRESHOLD_MM, dest="pck_threshold")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
