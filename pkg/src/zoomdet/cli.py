"""Command line front end wiring the pipeline stages together.

Each subcommand reads and writes only documented file formats (PGM images,
JSONL annotations, CSV tables, PNG figures, versioned binary models) and is
deterministic for a fixed config and seed. Exit code 0 on success; on
failure, one diagnostic line goes to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import figures
from .config import RunConfig, format_config, load_config
from .cost_model import (
    network_to_specs,
    parse_layer_specs,
    strategy_cost,
    write_cost_csv,
)
from .detector import (
    build_detector,
    detect_with_plan,
    train_detector,
    write_detections_csv,
)
from .errors import ConfigError, ZoomdetError
from .evalkit import (
    average_precision,
    missrate_by_size,
    plan_recall,
    recall_curve,
    write_ap_csv,
    write_missrate_csv,
    write_recall_curve_csv,
)
from .histogram import write_histogram_csv
from .images import read_image
from .nn import Conv2d, GlobalMaxPool, MaxPool2, Network, ReLU, grad_check, load_model, save_model
from .proposal import plan_from_histogram, write_proposals_csv
from .spn import export_heatmap, infer_histogram, train_spn, write_training_log
from .synthgen import glyph_offsets, load_dataset, sample_dataset, save_dataset

MANIFEST = "annotations.jsonl"


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_scenes(data_dir: str):
    manifest = Path(data_dir) / MANIFEST
    if not manifest.is_file():
        raise ConfigError(f"no {MANIFEST} under {data_dir}")
    return load_dataset(manifest)


def _spn_model(path: str, cfg: RunConfig):
    net = load_model(path)
    head = net.layers[-2]
    if head.weight.shape[0] != cfg.hist_spec.n:
        raise ConfigError(
            f"model head has {head.weight.shape[0]} channels, config expects "
            f"{cfg.hist_spec.n} histogram bins"
        )
    return net


def cmd_synth_gen(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    seed = cfg.seeds.dataset if args.seed is None else args.seed
    train, test = sample_dataset(cfg.dataset, seed=seed)
    save_dataset(train, out / "train", MANIFEST)
    save_dataset(test, out / "test", MANIFEST)
    print(f"wrote {len(train)} train / {len(test)} test images under {out}")
    return 0


def cmd_train_spn(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    scenes = _load_scenes(args.data)
    seed = cfg.seeds.spn if args.seed is None else args.seed
    net, losses = train_spn(cfg.spn, scenes, seed=seed)
    save_model(out / "spn.model", net)
    write_training_log(out / "spn_training_log.csv", losses)
    figures.save_training_loss(out / "spn_training_loss.png", losses)
    tail = losses[-200:]
    print(f"trained spn: {len(losses)} iterations, final loss {sum(tail)/len(tail):.4f}")
    return 0


def cmd_train_det(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    scenes = _load_scenes(args.data)
    seed = cfg.seeds.detector if args.seed is None else args.seed
    net, losses = train_detector(scenes, cfg.det, seed=seed)
    save_model(out / "det.model", net)
    write_training_log(out / "det_training_log.csv", losses)
    figures.save_training_loss(out / "det_training_loss.png", losses)
    tail = losses[-200:]
    print(f"trained detector: {len(losses)} iterations, final loss {sum(tail)/len(tail):.4f}")
    return 0


def _propose_one(image_path: str, spn_path: str, cfg: RunConfig, params):
    image = read_image(image_path)
    net = _spn_model(spn_path, cfg)
    hist, heatmap = infer_histogram(net, image, cfg.spn)
    selected, plan = plan_from_histogram(hist, params, cfg.drange)
    return image, hist, heatmap, selected, plan


def _override_params(cfg: RunConfig, args):
    params = cfg.proposal
    if getattr(args, "threshold", None) is not None:
        params = replace(params, threshold=args.threshold)
    if getattr(args, "max_proposals", None) is not None:
        params = replace(params, max_proposals=args.max_proposals)
    return params


def cmd_propose(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    params = _override_params(cfg, args)
    _, hist, heatmap, selected, plan = _propose_one(args.image, args.spn_model, cfg, params)
    stem = Path(args.image).stem
    write_histogram_csv(out / f"{stem}_histogram.csv", hist)
    write_proposals_csv(out / f"{stem}_proposals.csv", plan)
    if args.heatmap:
        export_heatmap(heatmap, out, stem)
    print(f"{len(plan)} proposals for {args.image}")
    return 0


def cmd_detect(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    params = _override_params(cfg, args)
    image, _, _, _, plan = _propose_one(args.image, args.spn_model, cfg, params)
    det_net = load_model(args.det_model)
    dets = detect_with_plan(
        det_net, image, plan, cfg.det.anchor, cfg.det.score_threshold
    )
    stem = Path(args.image).stem
    write_detections_csv(out / f"{stem}_detections.csv", [(stem, d) for d in dets])
    print(f"{len(dets)} detections for {args.image}")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    scenes = _load_scenes(args.data)
    if not scenes:
        raise ConfigError(f"no images under {args.data}")
    spn_net = _spn_model(args.spn_model, cfg)
    det_net = load_model(args.det_model)
    off = glyph_offsets()

    hists, size_lists, det_rows, gt_boxes = [], [], [], {}
    for i, sc in enumerate(scenes):
        image_id = Path(sc.annotation.image_path).stem or f"image_{i:05d}"
        hist, _ = infer_histogram(spn_net, sc.image, cfg.spn)
        hists.append(hist)
        boxes = sc.annotation.face_boxes(off)
        gt_boxes[image_id] = boxes
        size_lists.append([b.side for b in boxes])
        _, plan = plan_from_histogram(hist, cfg.proposal, cfg.drange)
        for d in detect_with_plan(det_net, sc.image, plan, cfg.det.anchor,
                                  cfg.det.score_threshold):
            det_rows.append((image_id, d))

    points = recall_curve(hists, size_lists, cfg.drange, cfg.eval_thresholds, cfg.proposal)
    write_recall_curve_csv(out / "recall_curve.csv", points)
    figures.save_recall_curve(out / "recall_curve.png", points)

    flags, avg_props = plan_recall(hists, size_lists, cfg.drange, cfg.proposal)
    step = cfg.missrate_bin_octaves
    edges = list(np.arange(cfg.hist_spec.s0, cfg.hist_spec.sn, step)) + [cfg.hist_spec.sn]
    bins = missrate_by_size(flags, edges)
    write_missrate_csv(out / "missrate_by_size.csv", bins)
    figures.save_missrate(out / "missrate_by_size.png", bins)

    write_detections_csv(out / "detections.csv", det_rows)
    ap = average_precision(det_rows, gt_boxes, iou_threshold=0.5)
    write_ap_csv(out / "ap.csv", ap)

    recall = sum(ok for _, ok in flags) / len(flags) if flags else 0.0
    print(
        f"scale recall {recall:.4f} at {avg_props:.3f} proposals/image "
        f"(threshold {cfg.proposal.threshold}); detection AP {ap:.4f} "
        f"over {len(scenes)} images"
    )
    return 0


def cmd_cost_report(args, cfg: RunConfig) -> int:
    out = _out_dir(args)
    scenes = _load_scenes(args.data)
    if not scenes:
        raise ConfigError(f"no images under {args.data}")
    spn_net = _spn_model(args.spn_model, cfg)
    if cfg.spn_chain_file:
        spn_specs = parse_layer_specs(Path(cfg.spn_chain_file).read_text())
    else:
        spn_specs = network_to_specs(spn_net)
    if cfg.det_chain_file:
        det_specs = parse_layer_specs(Path(cfg.det_chain_file).read_text())
    else:
        det_specs = network_to_specs(build_detector(cfg.det, seed=0))

    totals = {name: 0 for name in ("scale-aware", "multi-scale-testing", "single-shot")}
    first_reports = []
    for i, sc in enumerate(scenes):
        hist, _ = infer_histogram(spn_net, sc.image, cfg.spn)
        _, plan = plan_from_histogram(hist, cfg.proposal, cfg.drange)
        h, w = sc.image.shape
        for name in totals:
            rep = strategy_cost(
                name, h, w, plan, spn_specs, det_specs, spn_long_side=cfg.spn_long_side
            )
            totals[name] += rep.total_flops
            if i == 0:
                first_reports.append(rep)
    means = {name: t / len(scenes) for name, t in totals.items()}
    write_cost_csv(out / "cost_report.csv", first_reports)
    with open(out / "cost_summary.csv", "w", newline="") as f:
        f.write("strategy,mean_flops,mean_mflops\n")
        for name, v in means.items():
            f.write(f"{name},{v},{v/1e6}\n")
    figures.save_cost_comparison(out / "cost_comparison.png", means)
    ratio = means["multi-scale-testing"] / means["scale-aware"]
    print(
        f"mean cost per image: scale-aware {means['scale-aware']/1e6:.1f} MFLOPs, "
        f"multi-scale-testing {means['multi-scale-testing']/1e6:.1f} MFLOPs, "
        f"single-shot {means['single-shot']/1e6:.1f} MFLOPs; "
        f"multi-scale-testing / scale-aware = {ratio:.2f}x"
    )
    return 0


def _check_net(seed: int):
    """Small randomized net plus input and target, in double precision."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6C)))
    net = Network([
        Conv2d.create(rng, 1, 4, 3, 3, dtype=np.float64),
        ReLU(),
        MaxPool2(),
        Conv2d.create(rng, 4, 6, 3, 3, dtype=np.float64),
        ReLU(),
        GlobalMaxPool(),
    ])
    x = rng.uniform(0.0, 1.0, size=(1, 12, 12))
    target = rng.uniform(0.05, 0.95, size=6)
    return net, x, target


def cmd_grad_check(args, cfg: RunConfig) -> int:
    seed = 0 if args.seed is None else args.seed
    worst = 0.0
    for case in range(args.cases):
        net, x, target = _check_net(seed + case)
        worst = max(worst, grad_check(net, x, target))
    print(f"max relative gradient error over {args.cases} nets: {worst:.3e}")
    if worst >= args.tolerance:
        print(f"error: gradient check failed tolerance {args.tolerance}", file=sys.stderr)
        return 1
    return 0


def cmd_print_config(args, cfg: RunConfig) -> int:
    sys.stdout.write(format_config(cfg))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="zoomdet",
        description="scale-aware face detection pipeline on synthetic imagery",
    )
    p.add_argument("--config", default=None, help="INI config file (defaults apply if omitted)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out=True):
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        if out:
            sp.add_argument("--out-dir", default=".", help="output directory")

    sp = sub.add_parser("synth-gen", help="generate the synthetic corpus")
    common(sp)
    sp.set_defaults(fn=cmd_synth_gen)

    sp = sub.add_parser("train-spn", help="train the scale proposal network")
    sp.add_argument("--data", required=True, help="dataset directory (train split)")
    common(sp)
    sp.set_defaults(fn=cmd_train_spn)

    sp = sub.add_parser("train-det", help="train the single-scale detector")
    sp.add_argument("--data", required=True, help="dataset directory (train split)")
    common(sp)
    sp.set_defaults(fn=cmd_train_det)

    sp = sub.add_parser("propose", help="scale proposals and zoom plan for one image")
    sp.add_argument("--spn-model", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--max-proposals", type=int, default=None)
    sp.add_argument("--heatmap", action="store_true", help="also export response heatmaps")
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_propose)

    sp = sub.add_parser("detect", help="full pipeline on one image")
    sp.add_argument("--spn-model", required=True)
    sp.add_argument("--det-model", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--max-proposals", type=int, default=None)
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_detect)

    sp = sub.add_parser("evaluate", help="recall curve, miss rates and AP on a dataset")
    sp.add_argument("--data", required=True, help="dataset directory (test split)")
    sp.add_argument("--spn-model", required=True)
    sp.add_argument("--det-model", required=True)
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("cost-report", help="strategy cost comparison on a dataset")
    sp.add_argument("--data", required=True, help="dataset directory (test split)")
    sp.add_argument("--spn-model", required=True)
    common(sp, seed=False)
    sp.set_defaults(fn=cmd_cost_report)

    sp = sub.add_parser("grad-check", help="finite-difference check of the layer gradients")
    sp.add_argument("--cases", type=int, default=3, help="number of randomized nets")
    sp.add_argument("--tolerance", type=float, default=1e-5)
    common(sp, out=False)
    sp.set_defaults(fn=cmd_grad_check)

    sp = sub.add_parser("print-config", help="dump the effective configuration")
    sp.set_defaults(fn=cmd_print_config)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        return args.fn(args, cfg)
    except ZoomdetError as e:
        print(f"error[{type(e).__name__}]: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error[FileNotFound]: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
