"""Command line entry point: ``jointflow {estimate,evaluate,visualize,synth}``.

Exit codes: 0 success, 1 usage error, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as jio
from .metrics import MetricsReport, evaluate_flow, evaluate_iou, occlusion_f1
from .model import InputError, NumericalError, SemanticClassTable, validate_config
from .pipeline import estimate
from .superpixels import compute_superpixels
from .testkit import TEMPLATES, scene_label_maps, template_scene
from .viz import flow_to_color, labels_to_color, mask_to_color

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("jointflow")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def trace_line(it: int, e) -> str:
    return " ".join([str(it)] + [repr(float(v)) for v in e.as_tuple()])


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate(args) -> int:
    cfg = jio.read_config(args.config) if args.config else jio.EnergyConfig()
    it, colour0 = jio.read_image(args.frame0)
    it1, _ = jio.read_image(args.frame1)
    if it.shape != it1.shape:
        raise InputError(f"frame sizes differ: {it.shape} vs {it1.shape}")
    l_prev = jio.read_labelprob(args.labels_prev)
    l_hat = jio.read_labelprob(args.labels_evidence)
    if l_prev.probs.shape != l_hat.probs.shape:
        raise InputError("--labels-prev and --labels-evidence disagree in size or class count")
    if l_prev.probs.shape[:2] != it.shape:
        raise InputError("label maps do not match the frame size")
    table = SemanticClassTable.from_static(l_prev.classes, cfg.static_classes)
    report = validate_config(cfg, table)
    if not report:
        raise InputError("invalid configuration: " + "; ".join(report.messages))
    if args.superpixels:
        seg = jio.read_id_map(args.superpixels)
        if seg.shape != it.shape:
            raise InputError("superpixel map does not match the frame size")
    else:
        seg = compute_superpixels(colour0, args.superpixel_count, args.compactness, cfg.rng_seed)
    init = jio.read_flow_kitti(args.init_flow) if args.init_flow else None
    if init is not None and init.shape != it.shape:
        raise InputError("initial flow does not match the frame size")
    matches = jio.read_matches(args.matches) if args.matches else None

    lines = []

    def progress(m, e):
        lines.append(trace_line(m, e))
        log.info("iteration %d: total %.6f", m, e.total)

    res = estimate(it, it1, seg, l_prev, l_hat, table, cfg, init=init, matches=matches,
                   threads=args.threads, callback=progress)
    jio.write_flow_kitti(res.flow, args.out_flow)
    jio.write_labelprob(res.labels, args.out_labels)
    jio.write_mask(args.out_occlusion, res.occlusion.mask)
    Path(args.out_trace).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if not (args.flow or args.labels):
        raise UsageError("evaluate needs --flow and/or --labels")
    lines = []
    if args.flow:
        if not args.gt_flow:
            raise UsageError("--flow needs --gt-flow")
        est = jio.read_flow_kitti(args.flow)
        gt = jio.read_flow_kitti(args.gt_flow)
        fg = jio.read_mask(args.fg_mask) if args.fg_mask else None
        occ = jio.read_mask(args.occ_mask) if args.occ_mask else None
        lines += evaluate_flow(est, gt, fg, occ).lines("flow.")
        if args.occlusion and args.occ_mask:
            lines.append(f"occlusion.f1 = {occlusion_f1(jio.read_mask(args.occlusion), occ):.6f}")
    if args.labels:
        if not args.gt_labels:
            raise UsageError("--labels needs --gt-labels")
        est = jio.read_labelprob(args.labels)
        gt = jio.read_class_map(args.gt_labels)
        lines += evaluate_iou(est, gt).lines("labels.")
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_visualize(args) -> int:
    if not (args.flow or args.labels or args.occlusion):
        raise UsageError("visualize needs at least one of --flow, --labels, --occlusion")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.flow:
        jio.write_image(out / "flow.png", flow_to_color(jio.read_flow_kitti(args.flow), args.max_mag))
    if args.labels:
        jio.write_image(out / "labels.png", labels_to_color(jio.read_labelprob(args.labels)))
    if args.occlusion:
        jio.write_image(out / "occlusion.png", mask_to_color(jio.read_mask(args.occlusion)))
    return EXIT_OK


def write_scene(scene, out: Path, seed: int, template: str, confidence: float, noise: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    jio.write_image(out / "frame0.png", scene.color_frames[0], bits=16)
    jio.write_image(out / "frame1.png", scene.color_frames[1], bits=16)
    l_prev, l_hat = scene_label_maps(scene, seed, confidence, noise)
    jio.write_labelprob(l_prev, out / "labels_prev.lpm")
    jio.write_labelprob(l_hat, out / "labels_evidence.lpm")
    jio.write_flow_kitti(scene.gt_flow, out / "gt_flow.png")
    jio.write_mask(out / "gt_occlusion.png", scene.gt_occlusion)
    jio.write_mask(out / "fg_mask.png", scene.foreground)
    jio.write_class_map(out / "gt_labels0.png", scene.gt_labels[0])
    jio.write_class_map(out / "gt_labels1.png", scene.gt_labels[1])
    jio.write_matches(out / "matches.txt", scene.correspondences(static_only=True))
    with open(out / "manifest.txt", "w", encoding="utf-8") as fh:
        fh.write(f"template = {template}\nseed = {seed}\n")
        fh.write(f"width = {scene.spec.width}\nheight = {scene.spec.height}\n")
        fh.write(f"static_classes = {' '.join(str(c) for c in scene.spec.static_classes)}\n")
        for k, h in enumerate(scene.gt_homographies):
            h = np.asarray(h) / np.asarray(h)[2, 2]
            fh.write(f"region{k}.label = {scene.spec.regions[k].label}\n")
            fh.write(f"region{k}.static = {int(scene.spec.regions[k].static)}\n")
            fh.write(f"region{k}.homography = {' '.join(repr(float(v)) for v in h.ravel())}\n")
        if scene.F is not None:
            fh.write(f"F = {' '.join(repr(float(v)) for v in scene.F.m.ravel())}\n")


def cmd_synth(args) -> int:
    scene = template_scene(args.template, args.seed, args.size)
    write_scene(scene, Path(args.out_dir), args.seed, args.template, args.confidence, args.evidence_noise)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="jointflow", description="Joint piecewise-homography flow and label estimation.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    e = sub.add_parser("estimate", help="estimate flow, labels and occlusion for one frame pair")
    e.add_argument("--frame0", required=True)
    e.add_argument("--frame1", required=True)
    e.add_argument("--labels-prev", required=True, help="LPM1 label map for frame t")
    e.add_argument("--labels-evidence", required=True, help="LPM1 bottom-up evidence for frame t+1")
    e.add_argument("--init-flow", help="KITTI flow PNG used to seed the solver")
    e.add_argument("--matches", help="text file of 'x1 y1 x2 y2' correspondences for the fundamental matrix")
    e.add_argument("--superpixels", help="16-bit PNG of superpixel ids")
    e.add_argument("--superpixel-count", type=int, default=400)
    e.add_argument("--compactness", type=float, default=0.3)
    e.add_argument("--config", help="'key = value' file of EnergyConfig fields")
    e.add_argument("--threads", type=int, default=1)
    e.add_argument("--out-flow", required=True)
    e.add_argument("--out-labels", required=True)
    e.add_argument("--out-occlusion", required=True)
    e.add_argument("--out-trace", required=True)
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("evaluate", help="score flow and/or labels against ground truth")
    v.add_argument("--flow")
    v.add_argument("--gt-flow")
    v.add_argument("--fg-mask")
    v.add_argument("--occ-mask", help="ground-truth occlusion mask; adds non-occluded scores")
    v.add_argument("--occlusion", help="estimated occlusion mask; scored against --occ-mask")
    v.add_argument("--labels")
    v.add_argument("--gt-labels", help="PNG of ground-truth class ids")
    v.add_argument("--out")
    v.set_defaults(func=cmd_evaluate)

    z = sub.add_parser("visualize", help="render flow, labels and occlusion as PNGs")
    z.add_argument("--flow")
    z.add_argument("--labels")
    z.add_argument("--occlusion")
    z.add_argument("--max-mag", type=float)
    z.add_argument("--out-dir", required=True)
    z.set_defaults(func=cmd_visualize)

    s = sub.add_parser("synth", help="write a synthetic scene with ground truth")
    s.add_argument("--template", choices=sorted(TEMPLATES), default="two-plane")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int)
    s.add_argument("--confidence", type=float, default=0.8)
    s.add_argument("--evidence-noise", type=float, default=0.0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)
    return ap


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "jointflow: error: a subcommand is required")
        if getattr(args, "threads", 1) < 1:
            raise UsageError("--threads must be at least 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"jointflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, OSError, ValueError) as exc:
        print(f"jointflow: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
