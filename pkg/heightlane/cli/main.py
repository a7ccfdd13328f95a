"""
Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error (message on stderr).
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from heightlane.bev.io import write_heightmap
from heightlane.config import configure_logging, seed_override
from heightlane.diffcore.checkpoint import load_checkpoint, load_into
from heightlane.exceptions import HeightLaneError
from heightlane.groundtruth.service import build_gt_heightmap, load_manifest, write_qa
from heightlane.metrics.service import evaluate_lane_sets, format_report_table, read_lanes, write_lanes
from heightlane.model.network import build_model
from heightlane.synth.cloud import generate_ground_cloud, write_profile
from heightlane.synth.dataset import build_samples, load_scene, write_dataset
from heightlane.synth.schemas import CloudRegion, HeightProfile
from heightlane.trainer.schemas import TrainConfig
from heightlane.trainer.service import (
    ablate_anchors,
    evaluate,
    format_ablation_table,
    load_train_config,
    parse_anchor_sets,
    predict,
    train,
)
from heightlane.viz.schemas import RenderJob
from heightlane.viz.service import run_render_job

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(path: Optional[str]) -> TrainConfig:
    if path:
        return load_train_config(Path(path))
    cfg = TrainConfig()
    seed = seed_override()
    return cfg.model_copy(update={"seed": seed}) if seed is not None else cfg


def _hole(text: str) -> CloudRegion:
    try:
        x0, x1, y0, y1 = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("hole must be x0,x1,y0,y1") from exc
    return CloudRegion(x_range=(x0, x1), y_range=(y0, y1))


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    seed = args.seed if args.seed is not None else cfg.data.seed
    data = cfg.data.model_copy(update={"count": args.count, "seed": seed, "sloped_only": args.sloped_only})
    manifest = write_dataset(data, Path(args.out), cfg.model.grid)
    print(f"wrote {len(manifest['scenes'])} scenes to {args.out}")
    return EXIT_OK


def cmd_synth_cloud(args) -> int:
    profile = HeightProfile(
        kind=args.profile,
        theta=args.theta,
        theta2=args.theta2,
        x0=args.x0,
        amplitude=args.amplitude,
        wavelength=args.wavelength,
    )
    cfg = _config(args.config)
    out = Path(args.out)
    manifest = generate_ground_cloud(
        profile,
        cfg.model.grid,
        out,
        sweeps=args.sweeps,
        noise_sigma=args.noise,
        dropout=args.dropout,
        seed=args.seed,
        holes=args.hole or (),
    )
    write_profile(profile, out / "profile.json", cfg.model.grid)
    print(f"wrote {len(manifest.sweeps)} sweeps to {out}")
    return EXIT_OK


def cmd_gen_gt(args) -> int:
    cfg = _config(args.config)
    manifest = load_manifest(Path(args.manifest))
    heightmap, qa = build_gt_heightmap(manifest, cfg.model.grid, workers=args.workers, z_band=args.z_band)
    out = Path(args.out)
    write_heightmap(heightmap, out)
    write_qa(qa, Path(args.qa) if args.qa else out.with_suffix(".qa.json"), {"manifest": str(args.manifest)})
    print(f"wrote {out} ({100.0 * qa.occupied_fraction:.1f}% cells observed)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args.config)
    train_samples = build_samples(cfg.data, "train", cfg.model.grid)
    val_samples = build_samples(cfg.data, "val", cfg.model.grid)
    result = train(cfg, train_samples, val_samples, Path(args.out) if args.out else None)
    summary = {"checkpoint": str(result.checkpoint), "run_id": result.run_id, "final_loss": result.log.totals()[-1]}
    print(json.dumps(summary))
    return EXIT_OK


def _print_result(as_dict: dict, reports: dict, extra: dict, json_out: Optional[str]) -> None:
    print(json.dumps(as_dict, indent=2, sort_keys=True))
    print(format_report_table(reports, extra))
    if json_out:
        Path(json_out).write_text(json.dumps(as_dict, indent=2, sort_keys=True), encoding="utf-8")


def cmd_eval(args) -> int:
    if args.pred or args.gt:
        if not (args.pred and args.gt):
            raise UsageError("eval: --pred and --gt go together")
        cfg = _config(args.config)
        report = evaluate_lane_sets(read_lanes(Path(args.pred)), read_lanes(Path(args.gt)), cfg.protocol)
        _print_result(report.model_dump(), {"all": report}, {}, args.json)
        return EXIT_OK
    if not (args.ckpt and args.data):
        raise UsageError("eval: give --pred/--gt or --ckpt/--data")
    ckpt, data = Path(args.ckpt), Path(args.data)
    for path in (ckpt, data):
        if not path.exists():
            raise FileNotFoundError(f"{path}: no such file or directory")
    cfg = _config(args.config)
    cfg = cfg.model_copy(update={"data": cfg.data.model_copy(update={"root": str(data)})})
    samples = build_samples(cfg.data, args.split, cfg.model.grid)
    result = evaluate(ckpt, cfg, samples, use_gt_heightmap=args.gt_height)
    reports = {"all": result.report, **result.scenarios}
    _print_result(result.as_dict(), reports, {"height-MAE": result.height_mae}, args.json)
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _config(args.config)
    model = build_model(cfg.model)
    load_into(model, load_checkpoint(Path(args.ckpt)))
    sample = load_scene(Path(args.scene), cfg.model.grid)
    ((lanes, predicted),) = predict(model, [sample], args.gt_height, cfg.conf_thresh, cfg.embed_margin)
    out = Path(args.out)
    write_lanes(lanes, out)
    height_out = Path(args.height_out) if args.height_out else out.with_suffix(".bevh")
    write_heightmap(predicted, height_out)
    print(f"wrote {len(lanes)} lanes to {out} and the heightmap to {height_out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    anchor_sets = parse_anchor_sets(args.anchors)
    train_samples = build_samples(cfg.data, "train", cfg.model.grid)
    val_samples = build_samples(cfg.data, "val", cfg.model.grid)
    rows = ablate_anchors(cfg, anchor_sets, train_samples, val_samples, Path(args.out or cfg.checkpoint_dir))
    table = format_ablation_table(rows)
    print(table)
    if args.table:
        Path(args.table).write_text(table, encoding="utf-8")
    return EXIT_OK


def cmd_viz(args) -> int:
    out = Path(args.out)
    inputs = {"scene": args.scene}
    for key, value in (("checkpoint", args.ckpt), ("config", args.config), ("pred_lanes", args.pred)):
        if value:
            inputs[key] = value
    if args.ckpt and not args.config:
        raise UsageError("viz: --ckpt needs --config")
    job = RenderJob(
        inputs=inputs,
        outputs={
            "heightmap": str(out / "heightmap.png"),
            "profile": str(out / "profile.png"),
            "overlay": str(out / "overlay.png"),
        },
        value_range=tuple(args.range),
        use_gt_heightmap=args.gt_height,
    )
    for path in run_render_job(job):
        print(path)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("heightlane.main:app", host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="heightlane", description="HeightLane 3D lane detection pipeline")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--sloped-only", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synth-cloud", help="generate accumulated ground sweeps for gen-gt")
    p.add_argument("--out", required=True)
    p.add_argument("--profile", choices=["flat", "constant_slope", "transition", "sinusoidal"], default="constant_slope")
    p.add_argument("--theta", type=float, default=5.0)
    p.add_argument("--theta2", type=float, default=0.0)
    p.add_argument("--x0", type=float, default=40.0)
    p.add_argument("--amplitude", type=float, default=0.0)
    p.add_argument("--wavelength", type=float, default=50.0)
    p.add_argument("--sweeps", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--hole", type=_hole, action="append", help="dropped box x0,x1,y0,y1 (repeatable)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.set_defaults(func=cmd_synth_cloud)

    p = sub.add_parser("gen-gt", help="build a GT heightmap from a sweep manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--qa")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--z-band", type=float, help="drop points this far above their sweep sensor (default: manifest)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_gt)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate lane files or a checkpoint")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--ckpt")
    p.add_argument("--data")
    p.add_argument("--config")
    p.add_argument("--split", choices=["train", "val"], default="val")
    p.add_argument("--gt-height", action="store_true")
    p.add_argument("--json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="decode lanes of one scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--height-out")
    p.add_argument("--gt-height", action="store_true")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train and compare anchor sets")
    p.add_argument("--config", required=True)
    p.add_argument("--anchors", required=True, help='e.g. "0;0,±3;0,±5;0,±3,±5"')
    p.add_argument("--out")
    p.add_argument("--table")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("viz", help="render heightmaps, profiles and BEV overlays")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt")
    p.add_argument("--config")
    p.add_argument("--pred")
    p.add_argument("--range", type=float, nargs=2, default=[-5.0, 10.0], metavar=("MIN", "MAX"))
    p.add_argument("--gt-height", action="store_true")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8005)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    configure_logging()
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("heightlane: missing subcommand")
        return args.func(args)
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (HeightLaneError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
