"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numerical
failure.  Set ``HFCN_LOG_LEVEL`` (e.g. ``INFO``) for progress output.
"""
import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset, detector, fileio, metrics, pipeline, render
from .flow import FlowFormatError
from .model import hybrid_fuse, multiscale_estimate
from .netspec import SpecError, load_spec
from .proposals import generate_proposals
from .synth import NUM_CLASSES

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _config(args):
    cfg = pipeline.PipelineConfig.load(args.config) if args.config else pipeline.PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} contains NaN or infinite values")


def _networks(args, cfg, streams):
    specs = dict(zip(pipeline.STREAMS, (cfg.appearance_spec, cfg.motion_spec,
                                        cfg.spatial_spec, cfg.temporal_spec)))
    out = {}
    for s in streams:
        path = Path(args.weights) / f"{s}.weights"
        if not path.is_file():
            raise FileNotFoundError(f"weights file not found: {path}")
        out[s] = fileio.load_network(path, load_spec(specs[s]))
    return out


# -- subcommands ---------------------------------------------------------------

def cmd_synth(args):
    cfg = _config(args)
    if args.scenes is not None:
        setattr(cfg, f"{args.split}_scenes", args.scenes)
    videos = pipeline.make_videos(cfg, args.split)
    ids = [pipeline.video_id(args.split, i) for i in range(len(videos))]
    dataset.write_dataset(args.out, videos, ids, cfg.provenance())
    print(f"wrote {len(videos)} videos to {args.out}")


def cmd_train_toy(args):
    cfg = _config(args)
    cfg.weights_dir = None
    nets = pipeline.load_or_train(cfg, pipeline.make_videos(cfg, "train"))
    for s, net in nets.items():
        if net.loss_history:
            _check_finite(f"{s} loss", np.asarray(net.loss_history))
        fileio.write_weights(Path(args.out) / f"{s}.weights", net, cfg.provenance())
    print(f"wrote weights to {args.out}")


def cmd_estimate(args):
    cfg = _config(args)
    if args.single_scale:
        cfg.scales = (1.0,)
    nets = _networks(args, cfg, ("appearance", "motion"))
    ids, videos = dataset.read_dataset(args.data)
    prov = cfg.provenance()
    out = Path(args.out)
    for vid, v in zip(ids, videos):
        for t in range(len(v.frames)):
            maps = {}
            if args.stream in ("appearance", "hybrid"):
                maps["appearance"] = multiscale_estimate(
                    nets["appearance"], pipeline.stream_input(v, t, "appearance"), cfg.scales)
            if args.stream in ("motion", "hybrid"):
                maps["motion"] = multiscale_estimate(
                    nets["motion"], pipeline.stream_input(v, t, "motion", cfg.flow_bound), cfg.scales)
            amap = maps[args.stream] if args.stream != "hybrid" else hybrid_fuse(
                maps["appearance"], maps["motion"])
            _check_finite("actionness map", amap)
            fileio.write_amap(out / f"{vid}_{t:03d}.amap", amap, prov)
    print(f"wrote maps to {out}")


def _map_key(path):
    stem = Path(path).stem
    vid, _, frame = stem.rpartition("_")
    if not vid or not frame.isdigit():
        raise fileio.FormatError(path, "name", "expected <video>_<frame>.amap")
    return vid, int(frame)


def cmd_propose(args):
    cfg = _config(args)
    n = args.n if args.n is not None else cfg.proposals
    thr = args.suppress_iou if args.suppress_iou is not None else cfg.suppress_iou
    paths = sorted(Path(args.maps).glob("*.amap")) if Path(args.maps).is_dir() else [Path(args.maps)]
    if not paths:
        raise FileNotFoundError(f"no .amap files in {args.maps}")
    records = []
    for p in paths:
        amap = fileio.read_amap(p)
        size = (args.image_height, args.image_width) if args.image_height else None
        records.append((*_map_key(p), generate_proposals(amap, n, thr, image_size=size)))
    fileio.write_proposals(args.out, records, cfg.provenance())
    print(f"wrote {sum(len(r[2]) for r in records)} proposals to {args.out}")


def cmd_detect(args):
    cfg = _config(args)
    nets = _networks(args, cfg, ("spatial", "temporal"))
    ids, videos = dataset.read_dataset(args.data)
    by_id = dict(zip(ids, videos))
    records, _ = fileio.read_proposals(args.proposals)
    per_video = {}
    for vid, frame, props in records:
        if vid not in by_id:
            raise fileio.FormatError(args.proposals, vid, "video not in dataset")
        per_video.setdefault(vid, {})[frame] = props
    dets = []
    for vid in sorted(per_video):
        v = by_id[vid]
        props = [per_video[vid].get(t, []) for t in range(len(v.frames))]
        dets.extend(pipeline.detect_video(cfg, nets["spatial"], nets["temporal"], v, vid, props))
    _check_finite("detection scores", np.array([d.score for d in dets]))
    fileio.write_detections(args.out, dets, cfg.provenance())
    print(f"wrote {len(dets)} detections to {args.out}")


def cmd_link(args):
    cfg = _config(args)
    link_cfg = detector.LinkConfig(
        args.overlap_weight if args.overlap_weight is not None else cfg.link_overlap_weight,
        args.score_mode or cfg.link_score_mode,
        args.max_tubes if args.max_tubes is not None else cfg.link_max_tubes)
    dets, _ = fileio.read_detections(args.detections)
    by_video = {}
    for d in dets:
        by_video.setdefault(d.video, []).append(d)
    tubes = []
    for vid in sorted(by_video):
        vd = by_video[vid]
        n_frames = max(d.frame for d in vd) + 1
        tubes.extend(detector.link_video(vd, n_frames, NUM_CLASSES, link_cfg, vid))
    fileio.write_tubes(args.out, tubes, cfg.provenance())
    print(f"wrote {len(tubes)} tubes to {args.out}")


def _annotation_index(path):
    records, _ = fileio.read_annotations(path)
    return records


def cmd_evaluate(args):
    cfg = _config(args)
    prov = cfg.provenance()
    ann = _annotation_index(args.annotations)
    out = Path(args.out)
    results, curves = {}, {}
    if args.protocol == "grid":
        gcfg = metrics.GridProtocolConfig(criterion=args.criterion or cfg.grid_criterion)
        by_video = {}
        for vid, t, items in ann:
            by_video.setdefault(vid, {})[t] = [b for b, _ in items]
        samples = []
        for vid in sorted(by_video):
            frames = by_video[vid]
            maps = [fileio.read_amap(Path(args.predictions) / f"{vid}_{t:03d}.amap")
                    for t in range(len(frames))]
            samples.append((np.stack(maps), [frames[t] for t in range(len(frames))]))
        results["grid_map"], _, results["grid_skipped"] = metrics.mean_grid_ap(samples, gcfg)
    elif args.protocol == "recall":
        records, _ = fileio.read_proposals(args.predictions)
        props = {(v, f): [b for b, _ in p] for v, f, p in records}
        plist = [props.get((vid, t), []) for vid, t, _ in ann]
        glist = [[b for b, _ in items] for _, _, items in ann]
        results["recall_iou0.5"] = metrics.proposal_recall(plist, glist, 0.5)
        n = max((len(p) for p in plist), default=1)
        curves["recall_vs_count"] = metrics.recall_vs_count(plist, glist, 0.5, range(1, n + 1))
        curves["recall_vs_iou"] = metrics.recall_vs_iou(plist, glist, n)
    elif args.protocol == "frame-ap":
        dets, _ = fileio.read_detections(args.predictions)
        gt = [((vid, t), b, c) for vid, t, items in ann for b, c in items]
        r = metrics.frame_ap(dets, gt)
        results["frame_ap"] = r.mean
        results.update({f"frame_ap_class{k}": v for k, v in sorted(r.per_class.items())})
    else:
        tubes, _ = fileio.read_tubes(args.predictions)
        by_video = {}
        for vid, t, items in ann:
            by_video.setdefault(vid, {})[t] = items
        gtt = []
        for vid in sorted(by_video):
            frames = by_video[vid]
            for i, (_, label) in enumerate(frames[0]):
                gtt.append(detector.Tube(label, 0, [frames[t][i][0] for t in range(len(frames))], 1.0, vid))
        r = metrics.video_ap(tubes, gtt)
        results["video_ap"] = r.mean
        results.update({f"video_ap_class{k}": v for k, v in sorted(r.per_class.items())})
    fileio.write_metrics(out / "metrics.txt", results, prov)
    for name, pts in curves.items():
        fileio.write_curve(out / f"{name}.txt", pts, prov)
    for k, v in results.items():
        print(f"{k} {v}")


def cmd_render(args):
    prov = fileio.Provenance()
    if args.map:
        amap, prov = fileio.read_amap(args.map, with_provenance=True)
        img = render.false_colour(amap) if args.colour else render.grayscale(amap)
        if args.frame:
            img = render.overlay_heatmap(fileio.read_pnm(args.frame), amap)
    elif args.frame:
        img = fileio.read_pnm(args.frame)
    else:
        raise UsageError("render: give --map and/or --frame")
    if args.boxes:
        if not args.frame:
            raise UsageError("render: --boxes needs --frame")
        if args.video is None or args.index is None:
            raise UsageError("render: --boxes needs --video and --index")
        records, _ = fileio.read_proposals(args.boxes)
        boxes = [b for v, f, p in records if v == args.video and f == args.index for b, _ in p]
        img = render.draw_boxes(img, boxes[:args.limit])
    fileio.write_pnm(args.out, img, prov)
    print(f"wrote {args.out}")


def cmd_pipeline(args):
    cfg = _config(args)
    cfg.output_dir = args.out
    if args.weights:
        cfg.weights_dir = args.weights
        cfg.__post_init__()
    result = pipeline.run_pipeline(cfg)
    for k, v in result.metrics.items():
        print(f"{k} {v}")
    _check_finite("metrics", np.array([v for v in result.metrics.values()], dtype=float))


def cmd_init_config(args):
    pipeline.PipelineConfig().save(args.out)
    print(f"wrote {args.out}")


# -- argument parsing ----------------------------------------------------------

def build_parser():
    p = _Parser(prog="hfcn", description="Hybrid FCN actionness estimation and action detection.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text, config=True):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=fn)
        if config:
            sp.add_argument("--config", help="pipeline configuration (JSON)")
            sp.add_argument("--seed", type=int, help="override the configured seed")
        return sp

    sp = add("init-config", cmd_init_config, "write the default pipeline configuration", config=False)
    sp.add_argument("--out", required=True)

    sp = add("synth", cmd_synth, "generate a synthetic video dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--split", choices=("train", "test"), default="test")
    sp.add_argument("--scenes", type=int)

    sp = add("train-toy", cmd_train_toy, "train the toy actionness and classifier networks")
    sp.add_argument("--out", required=True, help="weights directory")

    sp = add("estimate", cmd_estimate, "write actionness maps for a dataset")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stream", choices=("appearance", "motion", "hybrid"), default="hybrid")
    sp.add_argument("--single-scale", action="store_true")

    sp = add("propose", cmd_propose, "generate proposals from actionness maps")
    sp.add_argument("--maps", required=True, help=".amap file or directory")
    sp.add_argument("--out", required=True)
    sp.add_argument("-n", type=int)
    sp.add_argument("--suppress-iou", type=float)
    sp.add_argument("--image-height", type=int)
    sp.add_argument("--image-width", type=int)

    sp = add("detect", cmd_detect, "classify proposals into per-frame detections")
    sp.add_argument("--weights", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--proposals", required=True)
    sp.add_argument("--out", required=True)

    sp = add("link", cmd_link, "link detections into tubes")
    sp.add_argument("--detections", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--overlap-weight", type=float)
    sp.add_argument("--score-mode", choices=("mean", "sum"))
    sp.add_argument("--max-tubes", type=int)

    sp = add("evaluate", cmd_evaluate, "score predictions against annotations")
    sp.add_argument("--protocol", choices=("grid", "recall", "frame-ap", "video-ap"), required=True)
    sp.add_argument("--predictions", required=True, help="map directory or record file")
    sp.add_argument("--annotations", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--criterion", choices=("coverage", "literal-iou"))

    sp = add("render", cmd_render, "render a heatmap or box overlay", config=False)
    sp.add_argument("--map")
    sp.add_argument("--frame")
    sp.add_argument("--boxes", help="proposal file")
    sp.add_argument("--video")
    sp.add_argument("--index", type=int)
    sp.add_argument("--limit", type=int, default=None)
    sp.add_argument("--colour", action="store_true")
    sp.add_argument("--out", required=True)

    sp = add("pipeline", cmd_pipeline, "run the full synthetic pipeline")
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", help="use trained weights instead of training")
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("HFCN_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (fileio.FormatError, FlowFormatError, SpecError, pipeline.ConfigError,
            FileNotFoundError, metrics.UndefinedAPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
