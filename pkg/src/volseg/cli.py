"""Command-line interface: gen-data, train, eval, infer, serve."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .evalbench import BenchmarkConfig, load_cases, run_benchmark, run_oracle_eval
from .maskops import rle_decode
from .nn.checkpoint import load_checkpoint, read_checkpoint_extra, save_checkpoint
from .nn.model import ModelConfig
from .nn.train import TrainConfig, TrainingData, run_training
from .phantom import (
    ManifestEntry,
    compose_phantoms,
    nearby_spec,
    random_spec,
    read_manifest,
    write_manifest,
)
from .propagate import Boundaries, NetSegmenter, PerfectOracleSegmenter, propagate_volume
from .prompts import PromptSet
from .report import emit_report, render_report_figures
from .rng import stream
from .service import ServiceConfig, _parse_prompt, create_app
from .volume import LabelVolume, parse_nifti, write_labels_nifti, write_nifti

MODEL_KEYS = {"image_size", "lowres_size", "widths", "block_convs", "seed"}
TRAIN_KEYS = {
    "batch_size", "lr", "steps", "edit_steps", "use_mask_prompt",
    "use_edit_training", "min_fg_pixels", "grad_clip", "seed",
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    data = tomllib.loads(Path(path).read_text())
    for section, allowed in (("model", MODEL_KEYS), ("train", TRAIN_KEYS)):
        unknown = set(data.get(section, {})) - allowed
        if unknown:
            raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    unknown_sections = set(data) - {"model", "train"}
    if unknown_sections:
        raise ValueError(f"unknown config sections: {sorted(unknown_sections)}")
    return data


def _pick(flag, file_value, default):
    if flag is not None:
        return flag
    if file_value is not None:
        return file_value
    return default


def cmd_gen_data(args) -> int:
    dims = tuple(int(v) for v in args.dims.split(","))
    if len(dims) != 3:
        raise ValueError(f"--dims must be Z,Y,X, got {args.dims!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    master = stream(args.seed, "gen-data")
    for i in range(args.volumes):
        specs = [random_spec(dims, int(master.integers(2**63)))]
        if master.uniform() < args.distractor_frac:
            n_extra = 1 + int(master.uniform() < 0.35)
            for _ in range(n_extra):
                try:
                    specs.append(nearby_spec(specs[0], int(master.integers(2**63))))
                except ValueError:
                    pass
        volume, labels = compose_phantoms(specs)
        vol_name, lab_name = f"vol_{i:03d}.nii", f"lab_{i:03d}.nii"
        (out / vol_name).write_bytes(write_nifti(volume))
        (out / lab_name).write_bytes(write_labels_nifti(labels, volume.spacing))
        entries.append(ManifestEntry(vol_name, lab_name, labels.class_ids()))
        print(f"wrote {vol_name} ({len(specs)} object(s))", file=sys.stderr)
    write_manifest(entries, out / "manifest.json")
    print(f"manifest with {len(entries)} volumes at {out / 'manifest.json'}", file=sys.stderr)
    return 0


def _model_config_from(args, file_cfg: dict) -> ModelConfig:
    m = file_cfg.get("model", {})
    widths = m.get("widths")
    return ModelConfig(
        image_size=int(_pick(args.image_size, m.get("image_size"), 128)),
        lowres_size=int(_pick(args.lowres_size, m.get("lowres_size"), 32)),
        widths=tuple(int(w) for w in widths) if widths else (16, 32, 64),
        block_convs=int(m.get("block_convs", 2)),
        seed=int(_pick(args.seed, m.get("seed"), 0)),
    )


def _train_config_from(args, file_cfg: dict) -> TrainConfig:
    t = file_cfg.get("train", {})
    edit_steps = t.get("edit_steps")
    return TrainConfig(
        batch_size=int(_pick(args.batch_size, t.get("batch_size"), 8)),
        lr=float(_pick(args.lr, t.get("lr"), 1e-3)),
        steps=int(_pick(args.steps, t.get("steps"), 2000)),
        edit_steps=tuple(int(v) for v in edit_steps) if edit_steps else (0, 4),
        use_mask_prompt=not args.no_mask_prompt and t.get("use_mask_prompt", True),
        use_edit_training=not args.no_edit_training and t.get("use_edit_training", True),
        min_fg_pixels=int(t.get("min_fg_pixels", 15)),
        grad_clip=float(t.get("grad_clip", 1.0)),
        seed=int(_pick(args.seed, t.get("seed"), 0)),
    )


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    tcfg = _train_config_from(args, file_cfg)
    entries = read_manifest(Path(args.data))
    root = Path(args.data).parent
    data = TrainingData.load(entries, root, tcfg.min_fg_pixels)
    print(f"loaded {len(data.index)} training slices from {len(entries)} volumes",
          file=sys.stderr)
    params = None
    start_step = 0
    if args.resume:
        blob = Path(args.resume).read_bytes()
        params, mcfg = load_checkpoint(blob)
        start_step = int(read_checkpoint_extra(blob).get("step", 0))
        print(f"resumed from {args.resume} at step {start_step}", file=sys.stderr)
    else:
        mcfg = _model_config_from(args, file_cfg)
    metrics_path = Path(args.metrics) if args.metrics else Path(args.out).with_suffix(".metrics.jsonl")
    t0 = time.time()
    with open(metrics_path, "w") as metrics_out:
        params, last = run_training(
            data, mcfg, tcfg, metrics_out=metrics_out,
            params=params, start_step=start_step,
        )
    blob = save_checkpoint(params, mcfg, extra={"step": start_step + tcfg.steps})
    Path(args.out).write_bytes(blob)
    print(
        f"trained {tcfg.steps} steps in {time.time() - t0:.0f}s; "
        f"final dice_step0={last.dice_step0:.3f}; checkpoint at {args.out}",
        file=sys.stderr,
    )
    return 0


def _load_segmenter_factory(args):
    if args.oracle:
        def factory(volume, labels, class_id):
            if labels is None or class_id is None:
                raise ValueError("perfect-oracle backend needs labels")
            return PerfectOracleSegmenter(labels.labels, class_id, lowres_size=32)

        return factory
    if not args.ckpt:
        raise ValueError("--ckpt is required unless --oracle is given")
    params, mcfg = load_checkpoint(Path(args.ckpt).read_bytes())

    def factory(volume, labels, class_id):
        return NetSegmenter(params, mcfg)

    return factory


def cmd_eval(args) -> int:
    if args.mode == "bbox" and args.protocol != "volume":
        print("error: bbox forwarding requires --protocol volume", file=sys.stderr)
        return 2
    factory = _load_segmenter_factory(args)
    entries = read_manifest(Path(args.data))
    cases = load_cases(entries, Path(args.data).parent)
    config = BenchmarkConfig(
        protocol=args.protocol,
        prompt_type=args.prompt,
        edit_budget=args.edits,
        mode=args.mode,
        seed=args.seed if args.seed is not None else 0,
    )
    t0 = time.time()
    if args.oracle_select:
        report = run_oracle_eval(factory, cases, config)
    else:
        report = run_benchmark(factory, cases, config)
    report.runtime_seconds = time.time() - t0
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(emit_report(report, "json"))
    out.with_suffix(".csv").write_bytes(emit_report(report, "csv"))
    if not args.no_figures:
        figures = render_report_figures(report, out.parent / (out.stem + "_figures"))
        print(f"figures: {', '.join(str(p) for p in figures)}", file=sys.stderr)
    print(
        f"mean dice {report.mean_dice:.4f} over {len(report.rows)} rows "
        f"({report.skipped} skipped) in {report.runtime_seconds:.0f}s -> {out}",
        file=sys.stderr,
    )
    if args.min_dice is not None and not report.mean_dice >= args.min_dice:
        print(f"FAIL: mean dice {report.mean_dice:.4f} < --min-dice {args.min_dice}",
              file=sys.stderr)
        return 1
    return 0


def cmd_infer(args) -> int:
    params, mcfg = load_checkpoint(Path(args.ckpt).read_bytes())
    volume, _ = parse_nifti(Path(args.volume).read_bytes())
    bounds = Boundaries(*(int(v) for v in args.boundaries.split(",")))
    bounds.check_within(volume.dims[0])
    prompt_data = json.loads(Path(args.prompt_json).read_text())
    prompt = _parse_prompt(prompt_data, mcfg.lowres_size)
    segmenter = NetSegmenter(params, mcfg)
    masks = propagate_volume(segmenter, volume, (args.slice, prompt), bounds, args.mode)
    out_bytes = write_labels_nifti(LabelVolume(masks.astype(np.int32)), volume.spacing)
    Path(args.out).write_bytes(out_bytes)
    print(f"wrote {masks.sum()} foreground voxels to {args.out}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    import socket

    import uvicorn

    params, mcfg = load_checkpoint(Path(args.ckpt).read_bytes())

    def factory(volume, labels, class_id):
        return NetSegmenter(params, mcfg)

    app = create_app(factory, ServiceConfig(
        max_upload_bytes=args.max_upload, cors_origin=args.cors,
    ))
    host, port_str = args.addr.rsplit(":", 1)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, int(port_str)))
    except OSError as exc:
        print(f"error: cannot bind {args.addr}: {exc}", file=sys.stderr)
        return 1
    bound_port = sock.getsockname()[1]
    print(f"serving on {host}:{bound_port}", flush=True)
    server = uvicorn.Server(uvicorn.Config(app, log_level="warning"))
    server.run(sockets=[sock])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="volseg",
        description="Promptable 2D segmentation with 3D propagation for CT volumes",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate labeled phantom volumes + manifest")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--volumes", type=int, default=10, help="number of volumes")
    g.add_argument("--dims", default="32,64,64", help="volume dims Z,Y,X")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--distractor-frac", type=float, default=0.75,
                   help="fraction of volumes with adjacent distractor objects")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train the promptable segmentation model")
    t.add_argument("--data", required=True, help="dataset manifest.json")
    t.add_argument("--config", help="TOML config file ([model]/[train] sections)")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--metrics", help="metrics JSONL path (default: <out>.metrics.jsonl)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--image-size", type=int)
    t.add_argument("--lowres-size", type=int)
    t.add_argument("--no-mask-prompt", action="store_true",
                   help="drop the noisy-mask initial prompt during training")
    t.add_argument("--no-edit-training", action="store_true",
                   help="drop correction-point edit steps during training")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="run a benchmark and write reports + figures")
    e.add_argument("--ckpt", help="model checkpoint")
    e.add_argument("--data", required=True, help="dataset manifest.json")
    e.add_argument("--protocol", choices=["volume", "slice"], default="volume")
    e.add_argument("--prompt", choices=["point", "box"], default="box")
    e.add_argument("--edits", type=int, default=0,
                   help="edit budget (total for volume, per-slice for slice)")
    e.add_argument("--mode", choices=["mask", "bbox"], default="mask",
                   help="forwarding mode for the volume protocol")
    e.add_argument("--report", required=True, help="report JSON path")
    e.add_argument("--seed", type=int)
    e.add_argument("--oracle", action="store_true",
                   help="replace the model with a perfect-oracle test backend")
    e.add_argument("--oracle-select", action="store_true",
                   help="also score best-of-secondaries picks (slice protocol)")
    e.add_argument("--no-figures", action="store_true")
    e.add_argument("--min-dice", type=float,
                   help="exit nonzero if mean dice falls below this")
    e.set_defaults(fn=cmd_eval)

    i = sub.add_parser("infer", help="segment one volume from a single prompt")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--volume", required=True, help="input NIfTI volume")
    i.add_argument("--slice", type=int, required=True, help="prompted slice index")
    i.add_argument("--prompt-json", required=True, help="prompt descriptor JSON file")
    i.add_argument("--boundaries", required=True, help="bottom,top slice indices")
    i.add_argument("--mode", choices=["mask", "bbox"], default="mask")
    i.add_argument("--out", required=True, help="output mask NIfTI path")
    i.set_defaults(fn=cmd_infer)

    s = sub.add_parser("serve", help="start the interactive session service")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--addr", default="127.0.0.1:8000", help="HOST:PORT (port 0 = ephemeral)")
    s.add_argument("--cors", help="allowed CORS origin for the browser UI")
    s.add_argument("--max-upload", type=int, default=256 * 1024 * 1024)
    s.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
