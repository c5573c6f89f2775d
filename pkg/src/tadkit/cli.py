"""``tadkit`` command line: one binary, one subcommand per pipeline stage.

Exit status: 0 on success, 1 on bad input, 2 on an internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback
from collections import namedtuple

import numpy as np

from . import __version__
from .annotations import (
    PredictionSet, expand_label_space, fold_class_scores, load_class_scores, load_ground_truth,
    load_label_space, load_predictions, predictions_to_json, write_label_space, write_predictions,
)
from .cmap import DEFAULT_TOP_K, extract_top_k, fuse_maps, read_map, write_map
from .ensemble import NmsConfig, load_ensemble_spec, merge_detections, soft_nms_predictions
from .errors import TadError
from .evaluation import DEFAULT_TOP_M, EvalConfig, evaluate, parse_thresholds, select_top_m
from .losses import CircleParams, SimilarityBatch, TripletParams, circle_loss, circle_weights, triplet_loss_batch
from .segments import DEFAULT_OFFSETS, Segment, generate_fake_proposals

logger = logging.getLogger("tadkit")

FD_STEP = 1e-6


class UsageError(TadError):
    pass


_Probe = namedtuple("_Probe", "s_p s_n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _sig(x, digits=9):
    return float(f"{x:.{digits}g}")


def _floats(text, what):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse {what} {text!r}") from None


def _emit_text(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(obj, out):
    _emit_text(json.dumps(obj, indent=1, allow_nan=False) + "\n", out)


def _emit_predictions(preds: PredictionSet, out):
    if out:
        write_predictions(preds, preds.labels, out)
    else:
        _emit_json(predictions_to_json(preds), None)


def cmd_evaluate(args):
    labels = load_label_space(args.labels)
    gt = load_ground_truth(args.gt, labels)
    preds = load_predictions(args.pred, labels)
    cfg = EvalConfig(parse_thresholds(args.thresholds), args.top_m)
    report = evaluate(preds, gt, cfg)
    payload = report.to_json()
    _emit_json(payload, None)
    print(report.table(), file=sys.stderr)
    if args.out:
        from .plotting import write_report_figures

        os.makedirs(args.out, exist_ok=True)
        _emit_json(payload, os.path.join(args.out, "report.json"))
        with open(os.path.join(args.out, "map.csv"), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["tiou", "map"])
            for t, m in zip(report.thresholds, report.map_per_threshold):
                w.writerow([f"{t:.9g}", f"{m:.9g}"])
            w.writerow(["average", f"{report.average_map:.9g}"])
        with open(os.path.join(args.out, "per_class_ap.csv"), "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["label", "num_gt"] + [f"{t:.9g}" for t in report.thresholds])
            for c, name in enumerate(labels.names):
                w.writerow([name, int(report.num_gt[c])] + [f"{x:.9g}" for x in report.per_class_ap[c]])
        write_report_figures(report, args.out)
    return 0


def _nms_config(args):
    return NmsConfig(args.sigma, args.score_floor, args.method, args.iou_threshold)


def cmd_nms(args):
    labels = load_label_space(args.labels) if args.labels else None
    preds = soft_nms_predictions(load_predictions(args.pred, labels), _nms_config(args))
    if args.top_m:
        preds = select_top_m(preds, args.top_m)
    _emit_predictions(preds, args.out)
    return 0


def cmd_ensemble(args):
    labels = load_label_space(args.labels) if args.labels else None
    if args.spec:
        spec = load_ensemble_spec(args.spec, labels)
        paths, weights, nms = spec.predictions, spec.weights, spec.nms
    elif args.pred:
        paths = args.pred
        weights = _floats(args.weights, "weights") if args.weights else [1.0] * len(paths)
        nms = _nms_config(args)
    else:
        raise UsageError("ensemble needs --spec or --pred")
    sets = [load_predictions(p, labels) for p in paths]
    if labels is None and len({s.labels for s in sets}) > 1:
        raise UsageError("prediction files use different label sets; pass --labels")
    merged = soft_nms_predictions(merge_detections(sets, weights), nms)
    if args.top_m:
        merged = select_top_m(merged, args.top_m)
    _emit_predictions(merged, args.out)
    return 0


def cmd_fuse_maps(args):
    maps = [read_map(p) for p in args.maps]
    weights = _floats(args.weights, "weights") if args.weights else [1.0] * len(maps)
    fused = fuse_maps(maps, weights)
    write_map(fused, args.out)
    if args.proposals:
        duration = args.duration if args.duration is not None else fused.shape[1] * fused.stride
        props = extract_top_k(fused, args.top_k, duration)
        _emit_json([{"segment": p.segment.as_list(), "score": p.score} for p in props], args.proposals)
    if args.figure:
        from .plotting import plot_confidence_map

        plot_confidence_map(fused, args.figure)
    return 0


def cmd_fake_proposals(args):
    start, end = _floats(args.segment, "segment")
    offsets = _floats(args.offsets, "offsets") if args.offsets else DEFAULT_OFFSETS
    props = generate_fake_proposals(Segment(start, end), offsets)
    _emit_json([{"segment": p.segment.as_list(), "target": list(p.target)} for p in props], args.out)
    return 0


def _central_difference(fn, x):
    x = np.array(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(len(x)):
        hi, lo = x.copy(), x.copy()
        hi[i] += FD_STEP
        lo[i] -= FD_STEP
        grad[i] = (fn(hi) - fn(lo)) / (2 * FD_STEP)
    return grad


def cmd_loss_check(args):
    if args.batch:
        with open(args.batch, encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict) or "s_p" not in data or "s_n" not in data:
            raise UsageError(f"{args.batch}: batch needs 's_p' and 's_n' lists")
        s_p, s_n = data["s_p"], data["s_n"]
        params = dict(data.get("params", {}))
    else:
        rng = np.random.default_rng(args.seed)
        s_p, s_n = rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4)
        params = {}
    loss = args.loss or params.get("loss", "circle")
    params.pop("loss", None)
    batch = SimilarityBatch(s_p, s_n)
    n_p = len(batch.s_p)
    # the probe may step past +-1, so it skips SimilarityBatch validation
    split = lambda x: _Probe(x[:n_p], x[n_p:])
    try:
        if loss == "circle":
            p = CircleParams(**params)
            alphas = circle_weights(batch, p)
            value, gp, gn = circle_loss(batch, p)
            fn = lambda x: circle_loss(split(x), p, alphas)[0]
        elif loss == "triplet":
            p = TripletParams(**params)
            value, gp, gn = triplet_loss_batch(batch, p)
            fn = lambda x: triplet_loss_batch(split(x), p)[0]
        else:
            raise UsageError(f"unknown loss {loss!r}")
    except TypeError as e:
        raise UsageError(f"bad loss parameters {params}: {e}") from None
    numeric = _central_difference(fn, np.concatenate([batch.s_p, batch.s_n]))
    analytic = np.concatenate([gp, gn])
    _emit_json({
        "loss": loss,
        "value": _sig(value),
        "grad_s_p": [_sig(g) for g in gp],
        "grad_s_n": [_sig(g) for g in gn],
        "max_fd_discrepancy": _sig(float(np.max(np.abs(analytic - numeric)))),
    }, args.out)
    return 0


def cmd_fold_labels(args):
    if args.scores:
        scores = load_class_scores(args.scores)
        folded = {vid: [_sig(x) for x in fold_class_scores(scores[vid])] for vid in sorted(scores)}
        _emit_json(folded, args.out)
    elif args.labels:
        expanded = expand_label_space(load_label_space(args.labels))
        if args.out:
            write_label_space(expanded, args.out)
        else:
            _emit_json(list(expanded.names), None)
    else:
        raise UsageError("fold-labels needs --scores (fold) or --labels (expand)")
    return 0


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for any randomness (default 0)")
    common.add_argument("--out", help="output path (default: standard output)")

    def nms_flags(p):
        p.add_argument("--sigma", type=float, default=0.5)
        p.add_argument("--score-floor", type=float, default=1e-4)
        p.add_argument("--method", choices=("gaussian", "linear", "hard"), default="gaussian")
        p.add_argument("--iou-threshold", type=float, default=0.0, help="linear/hard methods only")
        p.add_argument("--top-m", type=int, default=None, help="keep the top M detections per video")

    parser = _Parser(prog="tadkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("evaluate", parents=[common], help="mAP at tIoU thresholds; --out DIR adds CSV + figures")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--top-m", type=int, default=DEFAULT_TOP_M)
    p.add_argument("--thresholds", default="0.5:0.05:0.95")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("nms", parents=[common], help="per-category soft-NMS of a prediction file")
    p.add_argument("--pred", required=True)
    p.add_argument("--labels")
    nms_flags(p)
    p.set_defaults(func=cmd_nms)

    p = sub.add_parser("ensemble", parents=[common], help="merge several prediction files then soft-NMS")
    p.add_argument("--spec", help="ensemble spec JSON")
    p.add_argument("--pred", nargs="+")
    p.add_argument("--weights")
    p.add_argument("--labels")
    nms_flags(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("fuse-maps", parents=[common], help="weighted mean of confidence maps")
    p.add_argument("--maps", nargs="+", required=True)
    p.add_argument("--weights")
    p.add_argument("--proposals", help="also write the top-K proposals of the fused map here")
    p.add_argument("--top-k", type=int, default=DEFAULT_TOP_K)
    p.add_argument("--duration", type=float, help="video duration in seconds (default: map extent)")
    p.add_argument("--figure", help="render the fused map to this image path")
    p.set_defaults(func=cmd_fuse_maps)

    p = sub.add_parser("fake-proposals", parents=[common], help="offset a ground-truth segment")
    p.add_argument("--segment", required=True, help="START,END in seconds")
    p.add_argument("--offsets", help="comma-separated duration fractions; write --offsets=-0.1,0,0.1")
    p.set_defaults(func=cmd_fake_proposals)

    p = sub.add_parser("loss-check", parents=[common], help="loss value and finite-difference gradient check")
    p.add_argument("--batch", help='JSON {"s_p": [...], "s_n": [...], "params": {...}}')
    p.add_argument("--loss", choices=("circle", "triplet"))
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("fold-labels", parents=[common], help="fold 2N-way scores to N, or expand a label file")
    p.add_argument("--scores", help='JSON {"<video_id>": [p_0, ..., p_2N-1]}')
    p.add_argument("--labels", help="base label file to expand (when --scores is absent)")
    p.set_defaults(func=cmd_fold_labels)
    return parser


def run(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (TadError, OSError, json.JSONDecodeError) as e:
        msg = str(e)
        if isinstance(e, OSError) and e.filename and str(e.filename) not in msg:
            msg = f"{e.filename}: {msg}"
        print(f"tadkit: error: {msg}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main():
    sys.exit(run())
